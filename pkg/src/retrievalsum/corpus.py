"""Corpus ingestion, tokenization, vocabularies and sentence spans."""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

SPLITS = ("train", "valid", "test")

PAD, UNK, CLS, SEP, BOS, EOS = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[BOS]", "[EOS]"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP, BOS, EOS)
PAD_ID, UNK_ID, CLS_ID, SEP_ID, BOS_ID, EOS_ID = range(6)
SPECIAL_IDS = frozenset(range(len(SPECIAL_TOKENS)))

# one token per word-character run or per punctuation character
_TOKEN_RE = re.compile(r"\w+|[^\w\s]")
_SENTENCE_END = frozenset(".!?")


class CorpusError(ValueError):
    """Malformed corpus input (bad JSON, missing fields, duplicate ids)."""


@dataclass(frozen=True)
class DocumentRecord:
    id: str
    split: str
    document: str
    summary: str

    def __post_init__(self):
        if self.split not in SPLITS:
            raise CorpusError(f"record {self.id!r}: unknown split {self.split!r}")
        if not self.document.strip():
            raise CorpusError(f"record {self.id!r}: empty document")
        if self.split != "test" and not self.summary.strip():
            raise CorpusError(f"record {self.id!r}: empty summary in {self.split} split")


Corpus = list  # list[DocumentRecord], in file order


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple[int, ...]
    sentence_spans: tuple[tuple[int, int], ...] = ()

    def __len__(self):
        return len(self.ids)

    def sentences(self) -> list[tuple[int, ...]]:
        return [self.ids[a:b] for a, b in self.sentence_spans]

    def truncate(self, max_len: int) -> "TokenSequence":
        return TokenSequence(self.ids[:max_len], clip_spans(self.sentence_spans, max_len))


def split_words(text: str) -> list[str]:
    return [m.group(0) for m in _TOKEN_RE.finditer(text.lower())]


def _words_and_spans(text: str) -> tuple[list[str], list[tuple[int, int]]]:
    text = text.lower()
    words: list[str] = []
    spans: list[tuple[int, int]] = []
    start = 0
    for m in _TOKEN_RE.finditer(text):
        tok = m.group(0)
        words.append(tok)
        end = m.end()
        if tok in _SENTENCE_END and (end == len(text) or text[end].isspace()):
            spans.append((start, len(words)))
            start = len(words)
    if start < len(words):
        spans.append((start, len(words)))
    return words, spans


def split_sentences(text: str) -> list[list[str]]:
    words, spans = _words_and_spans(text)
    return [words[a:b] for a, b in spans]


def clip_spans(spans: Iterable[tuple[int, int]], n: int) -> tuple[tuple[int, int], ...]:
    return tuple((a, min(b, n)) for a, b in spans if a < n)


class Vocabulary:
    """Bidirectional token/id map with the six reserved ids in front."""

    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise CorpusError("vocabulary must start with the reserved tokens")
        if len(set(tokens)) != len(tokens):
            raise CorpusError("vocabulary has duplicate tokens")
        self.itos = list(tokens)
        self.stoi = {t: i for i, t in enumerate(self.itos)}

    def __len__(self):
        return len(self.itos)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def __contains__(self, token):
        return token in self.stoi

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK_ID)

    def token(self, idx: int) -> str:
        return self.itos[idx]

    def to_text(self) -> str:
        return "".join(f"{t}\t{i}\n" for i, t in enumerate(self.itos))

    @classmethod
    def from_text(cls, text: str) -> "Vocabulary":
        rows = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line:
                continue
            tok, _, idx = line.rpartition("\t")
            if not _ or not idx.isdigit():
                raise CorpusError(f"vocabulary line {lineno}: expected 'token<TAB>id'")
            rows.append((int(idx), tok))
        rows.sort()
        if [i for i, _ in rows] != list(range(len(rows))):
            raise CorpusError("vocabulary ids are not contiguous from 0")
        return cls([t for _, t in rows])

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def build_vocab(corpus: Sequence[DocumentRecord], cap: int) -> Vocabulary:
    """Keep the ``cap - 6`` most frequent tokens; ties go to the lexicographically smaller."""
    if cap <= len(SPECIAL_TOKENS):
        raise CorpusError(f"vocabulary cap {cap} leaves no room beyond {len(SPECIAL_TOKENS)} reserved ids")
    if not corpus:
        raise CorpusError("cannot build a vocabulary from an empty corpus")
    counts: Counter = Counter()
    for rec in corpus:
        counts.update(split_words(rec.document))
        counts.update(split_words(rec.summary))
    for tok in SPECIAL_TOKENS:
        counts.pop(tok, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [tok for tok, _ in ranked[: cap - len(SPECIAL_TOKENS)]]
    return Vocabulary(list(SPECIAL_TOKENS) + kept)


def tokenize(text: str, vocab: Vocabulary, max_len: int | None = None) -> TokenSequence:
    """Lowercase, split words and punctuation, map to ids, then truncate.

    Sentence spans are computed on the full text and clipped to the kept tokens.
    """
    if max_len is not None and max_len < 1:
        raise ValueError("max_len must be >= 1")
    words, spans = _words_and_spans(text)
    ids = tuple(vocab.id(w) for w in words)
    seq = TokenSequence(ids, tuple(spans))
    return seq if max_len is None else seq.truncate(max_len)


def decode(ids: Iterable[int], vocab: Vocabulary, skip_special: bool = False) -> list[str]:
    return [vocab.token(i) for i in ids if not (skip_special and i in SPECIAL_IDS and i != UNK_ID)]


def detokenize(ids: Iterable[int], vocab: Vocabulary) -> str:
    """Render ids as text; [SEP] becomes a sentence break, other specials are dropped."""
    out: list[str] = []
    for i in ids:
        if i == SEP_ID:
            out.append("\n")
        elif i in SPECIAL_IDS and i != UNK_ID:
            continue
        else:
            out.append(vocab.token(i))
    return " ".join(out).replace(" \n ", "\n").strip()


def ingest(path, format: str = "jsonl") -> list[DocumentRecord]:
    if format != "jsonl":
        raise CorpusError(f"unsupported corpus format {format!r}")
    records: list[DocumentRecord] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                rec = DocumentRecord(
                    id=str(obj["id"]),
                    split=obj["split"],
                    document=obj["document"],
                    summary=obj.get("summary", ""),
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise CorpusError(f"{path}:{lineno}: cannot parse record ({exc})") from exc
            except CorpusError as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from exc
            if rec.id in seen:
                raise CorpusError(f"{path}:{lineno}: duplicate id {rec.id!r}")
            seen.add(rec.id)
            records.append(rec)
    return records


def save_corpus(corpus: Sequence[DocumentRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in corpus:
            fh.write(json.dumps(asdict(rec), sort_keys=True, ensure_ascii=False) + "\n")


def by_split(corpus: Sequence[DocumentRecord], split: str) -> list[DocumentRecord]:
    return [r for r in corpus if r.split == split]


@dataclass
class EncodedCorpus:
    """Tokenized view of a corpus keyed by record id."""

    vocab: Vocabulary
    documents: dict[str, TokenSequence] = field(default_factory=dict)
    summaries: dict[str, TokenSequence] = field(default_factory=dict)

    @classmethod
    def build(cls, corpus, vocab, doc_len=1024, summary_len=None):
        enc = cls(vocab)
        for rec in corpus:
            enc.documents[rec.id] = tokenize(rec.document, vocab, doc_len)
            enc.summaries[rec.id] = tokenize(rec.summary, vocab, summary_len)
        return enc
