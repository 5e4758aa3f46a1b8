"""Exemplar retrieval: coarse ROUGE pooling, multi-head contrastive dense retriever, baselines."""

from __future__ import annotations

import json
import logging
import math
import random
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Sequence

import torch
from torch import nn

from . import tensor as T
from .corpus import CLS_ID, PAD_ID, DocumentRecord, TokenSequence, Vocabulary, tokenize
from .metrics import RougeIndex, rouge_avg

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- TF-IDF


class TfIdf:
    """Smoothed TF-IDF over token lists: idf = ln((1 + N) / (1 + df)) + 1."""

    def __init__(self, docs: Sequence[Sequence[int]]):
        df: Counter = Counter()
        for d in docs:
            df.update(set(d))
        n = len(docs)
        self.idf = {t: math.log((1 + n) / (1 + c)) + 1.0 for t, c in df.items()}
        self.default_idf = math.log(1 + n) + 1.0

    def vector(self, tokens: Sequence[int]) -> dict:
        tf = Counter(tokens)
        return {t: c * self.idf.get(t, self.default_idf) for t, c in tf.items()}

    @staticmethod
    def cosine(a: dict, b: dict) -> float:
        if len(a) > len(b):
            a, b = b, a
        dot = sum(w * b[t] for t, w in a.items() if t in b)
        if dot == 0.0:
            return 0.0
        na = math.sqrt(sum(w * w for w in a.values()))
        nb = math.sqrt(sum(w * w for w in b.values()))
        return dot / (na * nb)


def salient_extract(doc: TokenSequence, m: int, tfidf: TfIdf) -> TokenSequence:
    """Keep the ``m`` sentences whose TF-IDF vector is closest to the whole document's, in document order."""
    if m < 1:
        raise ValueError("m must be >= 1")
    spans = list(doc.sentence_spans)
    if len(spans) <= m:
        return doc
    doc_vec = tfidf.vector(doc.ids)
    scored = []
    for i, (a, b) in enumerate(spans):
        scored.append((-TfIdf.cosine(tfidf.vector(doc.ids[a:b]), doc_vec), i))
    keep = sorted(i for _, i in sorted(scored)[:m])
    ids: list[int] = []
    new_spans = []
    for i in keep:
        a, b = spans[i]
        new_spans.append((len(ids), len(ids) + b - a))
        ids.extend(doc.ids[a:b])
    return TokenSequence(tuple(ids), tuple(new_spans))


# ---------------------------------------------------------------- knowledge base


class KnowledgeBase:
    """Train-split records with their tokenized summaries; the pool exemplars come from."""

    def __init__(self, records: Sequence[DocumentRecord], vocab: Vocabulary, doc_len: int = 1024,
                 exemplar_len: int = 64):
        self.records = [r for r in records if r.split == "train"]
        if not self.records:
            raise ValueError("knowledge base is empty (no train-split records)")
        self.vocab = vocab
        self.doc_len = doc_len
        self.exemplar_len = exemplar_len
        self.ids = [r.id for r in self.records]
        self.index = {rid: i for i, rid in enumerate(self.ids)}
        self.summaries = [tokenize(r.summary, vocab) for r in self.records]
        self.rouge = RougeIndex(self.summaries)
        self.tfidf = TfIdf([tokenize(r.document, vocab).ids for r in self.records]
                           + [s.ids for s in self.summaries])
        self._summary_vecs = [self.tfidf.vector(s.ids) for s in self.summaries]
        self._docs: dict[str, TokenSequence] = {}

    def __len__(self):
        return len(self.records)

    def summary(self, rid: str) -> TokenSequence:
        return self.summaries[self.index[rid]]

    def exemplar(self, rid: str) -> TokenSequence:
        return self.summary(rid).truncate(self.exemplar_len)

    def document(self, rec: DocumentRecord) -> TokenSequence:
        doc = self._docs.get(rec.id)
        if doc is None:
            doc = self._docs[rec.id] = tokenize(rec.document, self.vocab, self.doc_len)
        return doc

    def candidates_for(self, query: DocumentRecord) -> list[int]:
        return [i for i, rid in enumerate(self.ids) if rid != query.id]


# ---------------------------------------------------------------- pools


@dataclass
class CandidatePool:
    query_id: str
    candidate_ids: list[str]
    coarse_scores: list[float]
    label_scores: list[float] | None = None
    positive: list[bool] | None = None

    @property
    def positives(self) -> list[str]:
        return [c for c, p in zip(self.candidate_ids, self.positive or ()) if p]

    @property
    def negatives(self) -> list[str]:
        return [c for c, p in zip(self.candidate_ids, self.positive or ()) if not p]

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "CandidatePool":
        return cls(**json.loads(line))


def coarse_rank(query: DocumentRecord, kb: KnowledgeBase, cap: int = 100, n_pos: int = 8,
                salient_sentences: int = 3) -> CandidatePool:
    """Shortlist ``cap`` train summaries by ROUGE against the query's salient sentences.

    When the query carries a summary, every pooled candidate also gets its ROUGE
    against that gold summary and the top ``n_pos`` are flagged positive.
    """
    if cap < 1:
        raise ValueError("pool cap must be >= 1")
    doc = kb.document(query)
    key = salient_extract(doc, salient_sentences, kb.tfidf).ids
    cands = kb.candidates_for(query)
    scores = kb.rouge.avg_all(key)
    order = sorted(cands, key=lambda i: (-scores[i], kb.ids[i]))[:cap]
    pool = CandidatePool(query.id, [kb.ids[i] for i in order], [scores[i] for i in order])
    if query.summary.strip():
        gold = tokenize(query.summary, kb.vocab)
        labels = [rouge_avg(kb.summaries[i], gold) for i in order]
        ranked = sorted(range(len(order)), key=lambda j: (-labels[j], j))[:n_pos]
        top = set(ranked)
        pool.label_scores = labels
        pool.positive = [j in top for j in range(len(order))]
    return pool


# ---------------------------------------------------------------- model


def _with_cls(seqs: Sequence[Sequence[int]], max_len: int):
    rows = [[CLS_ID] + list(s)[: max_len - 1] for s in seqs]
    width = max(len(r) for r in rows)
    ids = torch.full((len(rows), width), PAD_ID, dtype=torch.long)
    for i, r in enumerate(rows):
        ids[i, : len(r)] = torch.tensor(r, dtype=torch.long)
    return ids, T.padding_mask([len(r) for r in rows], width)


class ProjectionStack(nn.Module):
    """Three affine layers with residual connections and dropout between them."""

    def __init__(self, d: int, dropout: float):
        super().__init__()
        self.l1, self.l2, self.l3 = T.Linear(d, d), T.Linear(d, d), T.Linear(d, d)
        self.p = dropout

    def forward(self, x, generator=None):
        x = x + T.dropout(T.gelu(self.l1(x)), self.p, self.training, generator)
        x = x + T.dropout(T.gelu(self.l2(x)), self.p, self.training, generator)
        return self.l3(x)


@dataclass
class RetrieverConfig:
    vocab_size: int
    d: int = 64
    layers: int = 2
    attn_heads: int = 4
    d_ff: int = 128
    heads: int = 16
    dropout: float = 0.1
    max_len: int = 1024


class RetrieverModel(nn.Module):
    """Siamese encoder: shared transformer, separate query/candidate projections, [CLS] pooling."""

    def __init__(self, cfg: RetrieverConfig, seed: int = 0):
        super().__init__()
        if cfg.d % cfg.heads:
            raise ValueError(f"d={cfg.d} is not divisible by H={cfg.heads}")
        self.cfg = cfg
        torch.manual_seed(seed)
        self.tok = T.Embedding(cfg.vocab_size, cfg.d)
        self.pos = T.Embedding(cfg.max_len, cfg.d)
        self.layers = nn.ModuleList(
            T.EncoderLayer(cfg.d, cfg.attn_heads, cfg.d_ff, cfg.dropout) for _ in range(cfg.layers))
        self.query_proj = ProjectionStack(cfg.d, cfg.dropout)
        self.cand_proj = ProjectionStack(cfg.d, cfg.dropout)
        self.generator = torch.Generator().manual_seed(seed + 1)

    def encode(self, seqs: Sequence[Sequence[int]], side: str) -> torch.Tensor:
        ids, mask = _with_cls(seqs, self.cfg.max_len)
        x = self.tok(ids) + self.pos(torch.arange(ids.shape[1]))[None]
        attn_mask = mask[:, None, :]
        for layer in self.layers:
            x = layer(x, attn_mask, self.generator)
        h = x[:, 0]
        proj = self.query_proj if side == "query" else self.cand_proj
        return proj(h, self.generator)


def head_similarities(query_repr: torch.Tensor, cand_repr: torch.Tensor, heads: int) -> torch.Tensor:
    """Per-head cosine between contiguous d/H slices; zero-norm slices score 0. Shape (..., H)."""
    if query_repr.shape[-1] != cand_repr.shape[-1] or query_repr.shape[-1] % heads:
        raise T.ShapeError(f"head_similarities: {tuple(query_repr.shape)} vs {tuple(cand_repr.shape)}, H={heads}")
    q = query_repr.reshape(*query_repr.shape[:-1], heads, -1)
    c = cand_repr.reshape(*cand_repr.shape[:-1], heads, -1)
    dot = (q * c).sum(-1)
    denom = q.norm(dim=-1) * c.norm(dim=-1)
    zero = denom == 0
    if bool(zero.any()):
        log.debug("zero-norm head slice; cosine set to 0")
    return torch.where(zero, torch.zeros_like(dot), dot / torch.where(zero, torch.ones_like(denom), denom))


def contrastive_loss(pos_scores, neg_scores, tau: float = 0.1) -> torch.Tensor:
    """Multi-head contrastive loss, summed over heads and positives.

    pos_scores: (H, P) per-head similarities of positives; neg_scores: (H, N).
    Each positive contributes logsumexp([s+, s-_1..s-_N] / tau) - s+ / tau.
    """
    if tau <= 0:
        raise ValueError("temperature must be positive")
    pos = torch.as_tensor(pos_scores, dtype=T.DTYPE)
    neg = torch.as_tensor(neg_scores, dtype=T.DTYPE)
    if pos.dim() == 1:
        pos, neg = pos[None], neg.reshape(1, -1)
    H, P = pos.shape
    if neg.shape[0] != H:
        raise T.ShapeError(f"contrastive_loss: pos {tuple(pos.shape)} vs neg {tuple(neg.shape)}")
    logits = torch.cat([pos.unsqueeze(-1), neg.unsqueeze(1).expand(H, P, neg.shape[1])], dim=-1) / tau
    return (torch.logsumexp(logits, dim=-1) - pos / tau).sum()


# ---------------------------------------------------------------- training


@dataclass
class RetrieverTrainConfig:
    epochs: int = 2
    batch_size: int = 16
    n_neg: int = 16
    tau: float = 0.1
    lr_max: float = 1e-4
    warmup: int = 100
    fraction: float = 1.0
    seed: int = 0


@dataclass
class TrainResult:
    losses: list[float] = field(default_factory=list)  # per step
    epoch_losses: list[float] = field(default_factory=list)


def train_retriever(model: RetrieverModel, pools: Sequence[CandidatePool], kb: KnowledgeBase,
                    queries: dict[str, DocumentRecord], cfg: RetrieverTrainConfig) -> TrainResult:
    """Optimize the summed multi-head contrastive loss with Adam + warmup.

    ``queries`` maps pool query ids to their records (for the document text).
    """
    usable = [p for p in pools if p.positive and any(p.positive)]
    if not usable:
        raise ValueError("no candidate pool has positives; cannot train the retriever")
    rng = random.Random(cfg.seed)
    if cfg.fraction < 1.0:
        usable = rng.sample(usable, max(1, round(cfg.fraction * len(usable))))
    state = T.AdamState(lr_max=cfg.lr_max, warmup=cfg.warmup)
    H = model.cfg.heads
    model.generator.manual_seed(cfg.seed + 1)
    model.train()
    result = TrainResult()
    for _ in range(cfg.epochs):
        order = list(usable)
        rng.shuffle(order)
        epoch = []
        for b in range(0, len(order), cfg.batch_size):
            batch = order[b : b + cfg.batch_size]
            docs, cand_ids, layout = [], [], []
            for pool in batch:
                pos = pool.positives
                neg = pool.negatives
                if len(neg) > cfg.n_neg:
                    neg = rng.sample(neg, cfg.n_neg)
                docs.append(kb.document(queries[pool.query_id]).ids)
                layout.append((len(cand_ids), len(pos), len(neg)))
                cand_ids.extend(pos)
                cand_ids.extend(neg)
            q = model.encode(docs, "query")
            c = model.encode([kb.exemplar(cid).ids for cid in cand_ids], "candidate")
            total = 0.0
            for i, (start, n_p, n_n) in enumerate(layout):
                sims = head_similarities(q[i : i + 1], c[start : start + n_p + n_n], H)  # (P+N, H)
                total = total + contrastive_loss(sims[:n_p].T, sims[n_p:].T, cfg.tau)
            loss = total / len(batch)
            T.backward(loss)
            T.adam_step(state, T.trainable(model))
            result.losses.append(loss.item())
            epoch.append(result.losses[-1])
        result.epoch_losses.append(sum(epoch) / len(epoch))
    model.eval()
    return result


# ---------------------------------------------------------------- retrieval


@dataclass
class ExemplarSet:
    query_id: str
    exemplar_ids: list[str]
    votes: list[int]
    scores: list[float]
    source: str = "dense"

    def __len__(self):
        return len(self.exemplar_ids)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "ExemplarSet":
        return cls(**json.loads(line))


def vote(pool_ids: Sequence[str], sims: torch.Tensor, e: int) -> tuple[list[str], list[int], list[float]]:
    """Head voting: each head nominates its top ``e``; rank by (votes, mean cosine, id).

    ``sims`` has shape (len(pool_ids), H).
    """
    n, H = sims.shape
    votes = [0] * n
    for h in range(H):
        col = sims[:, h].tolist()
        for j in sorted(range(n), key=lambda j: (-col[j], pool_ids[j]))[:e]:
            votes[j] += 1
    mean = sims.mean(dim=1).tolist()
    order = sorted(range(n), key=lambda j: (-votes[j], -mean[j], pool_ids[j]))[:e]
    return [pool_ids[j] for j in order], [votes[j] for j in order], [mean[j] for j in order]


class DenseRetriever:
    """Frozen retriever with cached candidate representations for the whole knowledge base."""

    def __init__(self, model: RetrieverModel, kb: KnowledgeBase, cap: int = 100, salient_sentences: int = 3,
                 batch: int = 256):
        self.model, self.kb, self.cap, self.salient_sentences = model, kb, cap, salient_sentences
        model.eval()
        reps = []
        with torch.no_grad():
            for b in range(0, len(kb), batch):
                reps.append(model.encode([kb.exemplar(r).ids for r in kb.ids[b : b + batch]], "candidate"))
        self.cand_reprs = torch.cat(reps)

    def scores(self, query: DocumentRecord, pool: CandidatePool) -> torch.Tensor:
        with torch.no_grad():
            q = self.model.encode([self.kb.document(query).ids], "query")
            idx = torch.tensor([self.kb.index[c] for c in pool.candidate_ids], dtype=torch.long)
            return head_similarities(q, self.cand_reprs[idx], self.model.cfg.heads)

    def retrieve(self, query: DocumentRecord, e: int, pool: CandidatePool | None = None) -> ExemplarSet:
        if e < 1:
            raise ValueError("e must be >= 1")
        pool = pool or coarse_rank(query, self.kb, self.cap, salient_sentences=self.salient_sentences)
        if not pool.candidate_ids:
            return ExemplarSet(query.id, [], [], [], "dense")
        ids, votes, mean = vote(pool.candidate_ids, self.scores(query, pool), e)
        return ExemplarSet(query.id, ids, votes, mean, "dense")


def retrieve(model: RetrieverModel, query: DocumentRecord, kb: KnowledgeBase, e: int, cap: int = 100) -> ExemplarSet:
    return DenseRetriever(model, kb, cap).retrieve(query, e)


def retrieve_random(query: DocumentRecord, kb: KnowledgeBase, e: int, seed: int = 0) -> ExemplarSet:
    rng = random.Random(f"{seed}:{query.id}")
    cands = [kb.ids[i] for i in kb.candidates_for(query)]
    picked = rng.sample(cands, min(e, len(cands)))
    return ExemplarSet(query.id, picked, [0] * len(picked), [0.0] * len(picked), "random")


def retrieve_tfidf(query: DocumentRecord, kb: KnowledgeBase, e: int) -> ExemplarSet:
    qv = kb.tfidf.vector(kb.document(query).ids)
    scored = [(-TfIdf.cosine(qv, kb._summary_vecs[i]), kb.ids[i]) for i in kb.candidates_for(query)]
    top = sorted(scored)[:e]
    return ExemplarSet(query.id, [c for _, c in top], [0] * len(top), [-s for s, _ in top], "tfidf")


def retrieve_oracle(query: DocumentRecord, kb: KnowledgeBase, e: int) -> ExemplarSet:
    """Top-e candidates by ROUGE against the query's own gold summary (evaluation only)."""
    gold = tokenize(query.summary, kb.vocab)
    scored = [(-rouge_avg(kb.summaries[i], gold), kb.ids[i]) for i in kb.candidates_for(query)]
    top = sorted(scored)[:e]
    return ExemplarSet(query.id, [c for _, c in top], [0] * len(top), [-s for s, _ in top], "oracle")


def save_jsonl(items, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for it in items:
            fh.write(it.to_json() + "\n")


def load_jsonl(cls, path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [cls.from_json(line) for line in fh if line.strip()]


def save_retriever(model: RetrieverModel, path, meta: dict | None = None) -> None:
    T.save_checkpoint(path, model, {"config": asdict(model.cfg), **(meta or {})})


def load_retriever(path) -> RetrieverModel:
    doc = T.read_checkpoint(path)
    model = RetrieverModel(RetrieverConfig(**doc["meta"]["config"]))
    T.load_params(model, doc["params"])
    model.eval()
    return model
