"""Evaluation protocols: exemplar quality, end-to-end ROUGE, ablation arms."""

from __future__ import annotations

import json
import logging
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .config import RunConfig
from .corpus import DocumentRecord, TokenSequence, by_split, decode, split_words, tokenize
from .decoder import CreditConfig, beam_search, content_tokens
from .metrics import RougeScores, rouge, rouge_avg, write_report_csv
from .retriever import (
    DenseRetriever,
    ExemplarSet,
    KnowledgeBase,
    RetrieverConfig,
    RetrieverModel,
    RetrieverTrainConfig,
    coarse_rank,
    retrieve_oracle,
    retrieve_random,
    retrieve_tfidf,
    train_retriever,
)
from .summarizer import (
    AssembledInput,
    SummarizerConfig,
    SummarizerModel,
    SummarizerTrainConfig,
    TaggedTarget,
    assemble,
    make_target,
    train_summarizer,
)

log = logging.getLogger(__name__)

MODES = ("dense", "tfidf", "random", "oracle", "none")


@dataclass
class EvalReport:
    label: str
    rows: list[tuple[str, RougeScores]] = field(default_factory=list)
    fingerprint: dict = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)

    def means(self) -> dict[str, float]:
        """Arithmetic means over queries, x100."""
        if not self.rows:
            return {"r1": 0.0, "r2": 0.0, "rl": 0.0, "avg": 0.0}
        per = [s.as_row() for _, s in self.rows]
        return {k: statistics.fmean(r[k] for r in per) for k in ("r1", "r2", "rl", "avg")}

    def write(self, directory, stem: str | None = None) -> tuple[Path, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        stem = stem or self.label
        csv_path = directory / f"{stem}.csv"
        json_path = directory / f"{stem}.json"
        write_report_csv(csv_path, self.rows)
        summary = {"label": self.label, "n": len(self.rows), "fingerprint": self.fingerprint,
                   "means": {k: round(v, 2) for k, v in self.means().items()}}
        json_path.write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        return csv_path, json_path


# ---------------------------------------------------------------- retrieval


def build_retriever(cfg: RunConfig, vocab_size: int) -> RetrieverModel:
    return RetrieverModel(RetrieverConfig(
        vocab_size=vocab_size, d=cfg.retriever_d, layers=cfg.retriever_layers,
        attn_heads=cfg.retriever_attn_heads, d_ff=2 * cfg.retriever_d, heads=cfg.heads,
        dropout=cfg.retriever_dropout, max_len=cfg.doc_len + 1), seed=cfg.seed)


def retriever_train_config(cfg: RunConfig) -> RetrieverTrainConfig:
    return RetrieverTrainConfig(epochs=cfg.retriever_epochs, batch_size=cfg.retriever_batch, n_neg=cfg.n_neg,
                                tau=cfg.tau, lr_max=cfg.retriever_lr, warmup=cfg.retriever_warmup,
                                fraction=cfg.retriever_fraction, seed=cfg.seed)


def fit_retriever(kb: KnowledgeBase, corpus: Sequence[DocumentRecord], cfg: RunConfig):
    """Coarse-rank every train query, then train the dense retriever on the pools."""
    train = by_split(corpus, "train")
    pools = [coarse_rank(q, kb, cfg.pool_cap, cfg.n_pos, cfg.salient_sentences) for q in train]
    model = build_retriever(cfg, len(kb.vocab))
    result = train_retriever(model, pools, kb, {q.id: q for q in train}, retriever_train_config(cfg))
    return model, pools, result


def retrieve_all(records: Sequence[DocumentRecord], kb: KnowledgeBase, mode: str, e: int,
                 dense: DenseRetriever | None = None, seed: int = 0) -> dict[str, ExemplarSet]:
    if mode not in MODES:
        raise ValueError(f"unknown retrieval mode {mode!r}")
    out = {}
    for q in records:
        if mode == "dense":
            if dense is None:
                raise ValueError("dense mode needs a trained retriever")
            out[q.id] = dense.retrieve(q, e)
        elif mode == "tfidf":
            out[q.id] = retrieve_tfidf(q, kb, e)
        elif mode == "random":
            out[q.id] = retrieve_random(q, kb, e, seed)
        elif mode == "oracle":
            out[q.id] = retrieve_oracle(q, kb, e)
        else:
            out[q.id] = ExemplarSet(q.id, [], [], [], "none")
    return out


def top1_quality(kb: KnowledgeBase, query: DocumentRecord, es: ExemplarSet) -> float:
    if not es.exemplar_ids:
        return 0.0
    return rouge_avg(kb.summary(es.exemplar_ids[0]), tokenize(query.summary, kb.vocab))


def exemplar_quality(kb: KnowledgeBase, queries: Sequence[DocumentRecord],
                     retrievers: Mapping[str, Callable[[DocumentRecord], ExemplarSet]]):
    """Mean R~ (x100) between each retriever's top-1 exemplar and the gold summary.

    Returns (means, per_query) where per_query[name] lists scores in query order.
    """
    per_query = {name: [top1_quality(kb, q, fn(q)) for q in queries] for name, fn in retrievers.items()}
    means = {name: 100 * statistics.fmean(v) if v else 0.0 for name, v in per_query.items()}
    return means, per_query


# ---------------------------------------------------------------- summarization


def build_summarizer(cfg: RunConfig, vocab_size: int, use_tags: bool | None = None) -> SummarizerModel:
    return SummarizerModel(SummarizerConfig(
        vocab_size=vocab_size, d=cfg.summarizer_d, enc_layers=cfg.enc_layers, dec_layers=cfg.dec_layers,
        attn_heads=cfg.summarizer_attn_heads, d_ff=2 * cfg.summarizer_d, n_tags=cfg.n_tags,
        dropout=cfg.summarizer_dropout, max_src=cfg.doc_len + cfg.exemplar_budget + 2 * cfg.e + 2,
        max_tgt=cfg.max_target, tag_position=cfg.tag_position,
        use_tags=cfg.use_tags if use_tags is None else use_tags), seed=cfg.seed)


def summarizer_train_config(cfg: RunConfig) -> SummarizerTrainConfig:
    return SummarizerTrainConfig(epochs=cfg.summarizer_epochs, batch_size=cfg.summarizer_batch,
                                 lr_max=cfg.summarizer_lr, warmup=cfg.summarizer_warmup, seed=cfg.seed)


def credit_config(cfg: RunConfig, lam: float | None = None) -> CreditConfig:
    return CreditConfig(beam=cfg.beam, l_s=cfg.l_s, interval=cfg.interval, lam=cfg.lam if lam is None else lam,
                        variant=cfg.credit_variant, attention=cfg.credit_attention, max_len=cfg.decode_max_len)


def assemble_for(rec: DocumentRecord, kb: KnowledgeBase, es: ExemplarSet | None, cfg: RunConfig) -> AssembledInput:
    exemplars = [kb.exemplar(rid) for rid in es.exemplar_ids] if es else []
    return assemble(kb.document(rec), exemplars, cfg.n_tags, cfg.doc_len, cfg.exemplar_budget)


def make_examples(records: Sequence[DocumentRecord], kb: KnowledgeBase,
                  exemplar_sets: Mapping[str, ExemplarSet] | None, cfg: RunConfig):
    """(input, target) pairs; ``exemplar_sets=None`` is the retrieval-ablated mode."""
    out: list[tuple[AssembledInput, TaggedTarget]] = []
    for rec in records:
        if exemplar_sets is None:
            es = None
        elif rec.id in exemplar_sets:
            es = exemplar_sets[rec.id]
        else:
            raise KeyError(f"no exemplar set for train record {rec.id!r}")
        target = make_target(tokenize(rec.summary, kb.vocab), cfg.n_tags, cfg.max_target)
        out.append((assemble_for(rec, kb, es, cfg), target))
    return out


def fit_summarizer(train: Sequence[DocumentRecord], kb: KnowledgeBase,
                   exemplar_sets: Mapping[str, ExemplarSet] | None, cfg: RunConfig,
                   use_tags: bool | None = None, on_epoch=None):
    model = build_summarizer(cfg, len(kb.vocab), use_tags)
    result = train_summarizer(model, make_examples(train, kb, exemplar_sets, cfg), summarizer_train_config(cfg),
                              on_epoch)
    return model, result


def generated_words(tokens: Sequence[int], kb: KnowledgeBase) -> list[str]:
    return decode(content_tokens(tokens), kb.vocab)


def end_to_end_eval(model: SummarizerModel, credit: CreditConfig, records: Sequence[DocumentRecord],
                    kb: KnowledgeBase, exemplar_sets: Mapping[str, ExemplarSet] | None, cfg: RunConfig,
                    label: str, trace_path=None) -> EvalReport:
    """Decode each record and score its words against the gold summary's words."""
    report = EvalReport(label, fingerprint={"config": cfg.to_dict(), "fingerprint": cfg.fingerprint(),
                                            "lam": credit.lam, "label": label})
    for rec in records:
        es = exemplar_sets.get(rec.id) if exemplar_sets is not None else None
        inp = assemble_for(rec, kb, es, cfg)
        res = beam_search(model, inp, credit, trace=trace_path is not None)
        if trace_path is not None:
            from .decoder import write_trace
            write_trace(res, trace_path, rec.id)
        words = generated_words(res.tokens, kb)
        report.rows.append((rec.id, rouge(words, split_words(rec.summary))))
        report.outputs[rec.id] = " ".join(words)
    return report


ARMS = ("full", "no_group_alignment", "no_rouge_credit", "no_retrieval", "tfidf_retriever", "concatenate")


def ablation_suite(corpus: Sequence[DocumentRecord], kb: KnowledgeBase, cfg: RunConfig,
                   dense: DenseRetriever | None, arms: Sequence[str] = ARMS,
                   split: str = "test") -> dict[str, EvalReport]:
    """One report per arm, all with the same seed.

    full / no_rouge_credit share a checkpoint; no_group_alignment / concatenate share a
    tag-free checkpoint; no_retrieval and tfidf_retriever train their own.
    """
    train = by_split(corpus, "train")
    test = by_split(corpus, split)
    needed = set(arms)
    sets: dict[str, dict] = {}
    if needed & {"full", "no_rouge_credit", "no_group_alignment", "concatenate"}:
        sets["dense"] = retrieve_all(train + test, kb, "dense", cfg.e, dense)
    if "tfidf_retriever" in needed:
        sets["tfidf"] = retrieve_all(train + test, kb, "tfidf", cfg.e)
    models: dict[str, SummarizerModel] = {}

    def model_for(key: str) -> SummarizerModel:
        if key not in models:
            log.info("training summarizer for %s", key)
            if key == "tags":
                models[key] = fit_summarizer(train, kb, sets["dense"], cfg, use_tags=True)[0]
            elif key == "notags":
                models[key] = fit_summarizer(train, kb, sets["dense"], cfg, use_tags=False)[0]
            elif key == "noretrieval":
                models[key] = fit_summarizer(train, kb, None, cfg)[0]
            elif key == "tfidf":
                models[key] = fit_summarizer(train, kb, sets["tfidf"], cfg, use_tags=True)[0]
        return models[key]

    plan = {
        "full": ("tags", "dense", cfg.lam),
        "no_rouge_credit": ("tags", "dense", 0.0),
        "no_group_alignment": ("notags", "dense", cfg.lam),
        "concatenate": ("notags", "dense", 0.0),
        "no_retrieval": ("noretrieval", None, cfg.lam),
        "tfidf_retriever": ("tfidf", "tfidf", cfg.lam),
    }
    reports = {}
    for arm in arms:
        key, source, lam = plan[arm]
        ex = sets[source] if source else None
        reports[arm] = end_to_end_eval(model_for(key), credit_config(cfg, lam), test, kb, ex, cfg, arm)
    return reports
