"""Beam search with ROUGE Credit toward the most-attended exemplar."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import torch

from . import tensor as T
from .corpus import BOS_ID, EOS_ID, SPECIAL_IDS, UNK_ID
from .metrics import rouge_avg, rouge_n
from .summarizer import AssembledInput, Batch, SummarizerModel, sentence_groups


@dataclass
class CreditConfig:
    beam: int = 4
    l_s: int = 4
    interval: int = 6
    lam: float = 1.0
    variant: str = "r1"  # "r1" (ROUGE-1 F1) or "avg" (mean of R-1/R-2/R-L F1)
    attention: str = "current"  # "current" step or "all" steps so far when picking E_best
    max_len: int = 128

    def __post_init__(self):
        if self.l_s < 0 or self.interval < 1 or self.lam < 0 or self.beam < 1:
            raise ValueError(f"invalid credit config {self}")
        if self.variant not in ("r1", "avg") or self.attention not in ("current", "all"):
            raise ValueError(f"invalid credit config {self}")


@dataclass
class BeamHypothesis:
    tokens: tuple[int, ...]  # generated tokens, [BOS] excluded
    logprob: float = 0.0
    credit: float = 0.0
    finished: bool = False
    e_best: int | None = None

    def __len__(self):
        return len(self.tokens)

    @property
    def avg_logprob(self) -> float:
        return self.logprob / max(len(self.tokens), 1)


def g_weight(k: int, l_s: int) -> float:
    """0 up to step l_s, then exp(1 - l_s / k)."""
    if k < 1:
        raise ValueError("decoding steps count from 1")
    return 0.0 if k <= l_s else math.exp(1.0 - l_s / k)


def content_tokens(ids: Sequence[int]) -> list[int]:
    return [t for t in ids if t not in SPECIAL_IDS or t == UNK_ID]


def rouge_credit(hyp, exemplar: Sequence[int], k: int, cfg: CreditConfig) -> float:
    tokens = hyp.tokens if isinstance(hyp, BeamHypothesis) else hyp
    g = g_weight(k, cfg.l_s)
    if g == 0.0:
        return 0.0
    h, e = content_tokens(tokens), content_tokens(exemplar)
    r = rouge_n(h, e, 1).f1 if cfg.variant == "r1" else rouge_avg(h, e)
    return r * g


def best_exemplar(cross_attn: torch.Tensor, cls_positions: Sequence[int], mode: str = "current") -> int:
    """Argmax over exemplar [CLS] positions of head-averaged cross-attention; ties go to the lowest index.

    cross_attn: (heads, Lt, Ls) for one sequence.
    """
    if not cls_positions:
        raise ValueError("no exemplars to choose from")
    rows = cross_attn[:, -1] if mode == "current" else cross_attn.mean(dim=1)
    mass = rows.mean(dim=0)[list(cls_positions)].tolist()
    return max(range(len(mass)), key=lambda i: (mass[i], -i))


def select_best_exemplar(model: SummarizerModel, memory: torch.Tensor, inp: AssembledInput,
                         prefixes: Sequence[Sequence[int]], mode: str = "current") -> list[int]:
    """E_best for each prefix (each starting with [BOS]) by running the decoder over it."""
    out = _run_decoder(model, memory, prefixes)[1]
    return [best_exemplar(out[i, :, : len(p)], inp.exemplar_cls_positions, mode) for i, p in enumerate(prefixes)]


def _run_decoder(model, memory, prefixes):
    """Batched decoder pass over equal-length prefixes sharing one source. memory: (1, Ls, d)."""
    n = len(prefixes)
    tgt = torch.tensor([list(p) for p in prefixes], dtype=torch.long)
    groups = torch.tensor([sentence_groups(p, model.cfg.n_tags) for p in prefixes], dtype=torch.long)
    mem = memory.expand(n, -1, -1)
    mask = torch.ones(n, memory.shape[1], dtype=torch.bool)
    return model.decode(mem, mask, tgt, groups)


@dataclass
class DecodeResult:
    tokens: tuple[int, ...]
    finished: list[BeamHypothesis]
    trace: list[dict] = field(default_factory=list)


@torch.no_grad()
def beam_search(model: SummarizerModel, inp: AssembledInput, cfg: CreditConfig = CreditConfig(),
                trace: bool = False) -> DecodeResult:
    """Length-normalized beam search; every ``interval`` steps and at the end, beams are
    re-ranked by avg log-likelihood + lam * ROUGE credit against their own E_best."""
    model.eval()
    b = Batch.make([inp])
    memory = model.encode(b.src, b.src_tags, b.src_mask)
    use_credit = cfg.lam > 0 and len(inp.exemplar_cls_positions) > 0
    max_len = min(cfg.max_len, model.cfg.max_tgt - 1)
    live = [BeamHypothesis(())]
    finished: list[BeamHypothesis] = []
    steps: list[dict] = []

    def apply_credit(hyps: list[BeamHypothesis]) -> None:
        # decoder passes need equal-length prefixes
        by_len: dict[int, list[BeamHypothesis]] = {}
        for h in hyps:
            by_len.setdefault(len(h), []).append(h)
        for group in by_len.values():
            best = select_best_exemplar(model, memory, inp, [(BOS_ID,) + h.tokens for h in group], cfg.attention)
            for h, e in zip(group, best):
                h.e_best = e
                h.credit = rouge_credit(h, inp.exemplars[e], len(h), cfg)

    for k in range(1, max_len + 1):
        logits, _ = _run_decoder(model, memory, [(BOS_ID,) + h.tokens for h in live])
        logp = T.log_softmax(logits[:, -1], dim=-1)
        cands: list[BeamHypothesis] = []
        for h, row in zip(live, logp):
            vals, ids = torch.topk(row, cfg.beam)
            for v, t in zip(vals.tolist(), ids.tolist()):
                cands.append(BeamHypothesis(h.tokens + (t,), h.logprob + v))
        apply = use_credit and k % cfg.interval == 0
        if apply:
            apply_credit(cands)
            cands.sort(key=lambda c: (-(c.avg_logprob + cfg.lam * c.credit), c.tokens))
        else:
            cands.sort(key=lambda c: (-c.avg_logprob, c.tokens))
        chosen = cands[: cfg.beam]
        live = []
        for c in chosen:
            if c.tokens[-1] == EOS_ID:
                c.finished = True
                finished.append(c)
            else:
                live.append(c)
        if trace:
            steps.append({
                "step": k,
                "credit_applied": apply,
                "beams": [{"tokens": list(c.tokens), "avg_logprob": c.avg_logprob, "credit": c.credit,
                           "e_best": c.e_best, "finished": c.finished} for c in chosen],
            })
        if not live or len(finished) >= cfg.beam:
            break
    finished.extend(live)
    if use_credit:
        apply_credit(finished)
        key = lambda h: (-(h.avg_logprob + cfg.lam * h.credit), h.tokens)
    else:
        key = lambda h: (-h.avg_logprob, h.tokens)
    finished.sort(key=key)
    if trace:
        steps.append({"step": "final", "beams": [
            {"tokens": list(h.tokens), "avg_logprob": h.avg_logprob, "credit": h.credit, "e_best": h.e_best}
            for h in finished]})
    return DecodeResult(finished[0].tokens, finished, steps)


def write_trace(result: DecodeResult, path, query_id: str = "") -> None:
    with open(path, "a", encoding="utf-8") as fh:
        for step in result.trace:
            fh.write(json.dumps({"id": query_id, **step}, sort_keys=True) + "\n")
