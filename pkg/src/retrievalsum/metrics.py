"""ROUGE-1/2/L over token sequences and their average."""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass
from typing import Hashable, NamedTuple, Sequence

import numpy as np
from scipy import sparse

from .corpus import TokenSequence


class Score(NamedTuple):
    precision: float
    recall: float
    f1: float

    def get(self, measure: str = "f1") -> float:
        return getattr(self, measure)


ZERO = Score(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class RougeScores:
    r1: Score
    r2: Score
    rl: Score
    measure: str = "f1"

    @property
    def avg(self) -> float:
        return (self.r1.get(self.measure) + self.r2.get(self.measure) + self.rl.get(self.measure)) / 3.0

    def as_row(self, scale: float = 100.0) -> dict:
        m = self.measure
        return {
            "r1": self.r1.get(m) * scale,
            "r2": self.r2.get(m) * scale,
            "rl": self.rl.get(m) * scale,
            "avg": self.avg * scale,
        }


def _tokens(seq) -> Sequence[Hashable]:
    return seq.ids if isinstance(seq, TokenSequence) else seq


def _prf(overlap: int, n_hyp: int, n_ref: int) -> Score:
    if n_hyp == 0 or n_ref == 0 or overlap == 0:
        return ZERO
    p = overlap / n_hyp
    r = overlap / n_ref
    return Score(p, r, 2 * p * r / (p + r))


def ngrams(tokens: Sequence[Hashable], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(hyp, ref, n: int = 1) -> Score:
    if n not in (1, 2):
        raise ValueError(f"rouge_n supports n in {{1, 2}}, got {n}")
    h, r = ngrams(_tokens(hyp), n), ngrams(_tokens(ref), n)
    overlap = sum((h & r).values())
    return _prf(overlap, sum(h.values()), sum(r.values()))


def lcs_length(a: Sequence[Hashable], b: Sequence[Hashable]) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(hyp, ref) -> Score:
    h, r = _tokens(hyp), _tokens(ref)
    return _prf(lcs_length(h, r), len(h), len(r))


def rouge(hyp, ref, measure: str = "f1") -> RougeScores:
    return RougeScores(rouge_n(hyp, ref, 1), rouge_n(hyp, ref, 2), rouge_l(hyp, ref), measure)


def rouge_avg(hyp, ref, measure: str = "f1") -> float:
    """Mean of the ROUGE-1, ROUGE-2 and ROUGE-L scores (F1 by default)."""
    return rouge(hyp, ref, measure).avg


class RougeIndex:
    """Scores one hypothesis against many fixed references at once.

    Counts live in sparse reference-by-ngram matrices and the LCS table is filled
    for all references in parallel, so :meth:`avg_all` gives exactly the numbers
    :func:`rouge_avg` gives pairwise, only faster.
    """

    def __init__(self, refs: Sequence, measure: str = "f1"):
        self.measure = measure
        self.refs = [tuple(_tokens(r)) for r in refs]
        self.n = len(self.refs)
        self.uni_ids: dict = {}
        self.bi_ids: dict = {}
        self._uni = self._count_matrix(1, self.uni_ids)
        self._bi = self._count_matrix(2, self.bi_ids)
        self.lengths = np.array([len(r) for r in self.refs], dtype=np.int64)
        width = max(self.lengths.max(initial=0), 1)
        self._padded = np.full((self.n, width), -1, dtype=np.int64)
        for i, r in enumerate(self.refs):
            self._padded[i, : len(r)] = [self.uni_ids[(t,)] for t in r]

    def _count_matrix(self, n: int, ids: dict):
        rows, cols, vals = [], [], []
        for i, ref in enumerate(self.refs):
            for g, c in ngrams(ref, n).items():
                rows.append(i)
                cols.append(ids.setdefault(g, len(ids)))
                vals.append(c)
        return sparse.csc_matrix((vals, (rows, cols)), shape=(self.n, max(len(ids), 1)), dtype=np.int64)

    def _overlap(self, hyp_counts: Counter, ids: dict, mat) -> np.ndarray:
        cols, hv = [], []
        for g, c in hyp_counts.items():
            j = ids.get(g)
            if j is not None:
                cols.append(j)
                hv.append(c)
        if not cols:
            return np.zeros(self.n, dtype=np.int64)
        sub = mat[:, cols].toarray()
        return np.minimum(sub, np.array(hv, dtype=np.int64)[None, :]).sum(axis=1)

    def _lcs_all(self, h: Sequence[Hashable]) -> np.ndarray:
        codes = [self.uni_ids.get((t,), -2) for t in h]
        width = self._padded.shape[1]
        prev = np.zeros((self.n, width + 1), dtype=np.int64)
        for code in codes:
            match = self._padded == code
            cur = np.zeros_like(prev)
            for j in range(width):
                cur[:, j + 1] = np.where(match[:, j], prev[:, j] + 1, np.maximum(prev[:, j + 1], cur[:, j]))
            prev = cur
        return prev[np.arange(self.n), self.lengths]

    @staticmethod
    def _prf_vec(overlap, n_hyp, n_ref):
        overlap = overlap.astype(np.float64)
        n_ref = np.asarray(n_ref, dtype=np.float64)
        ok = (overlap > 0) & (n_ref > 0) & (n_hyp > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            p = np.where(ok, overlap / max(n_hyp, 1), 0.0)
            r = np.where(ok, overlap / np.where(n_ref > 0, n_ref, 1.0), 0.0)
            f = np.where(ok, 2 * p * r / np.where(ok, p + r, 1.0), 0.0)
        return p, r, f

    def avg_all(self, hyp) -> list[float]:
        h = tuple(_tokens(hyp))
        nh = len(h)
        o1 = self._overlap(ngrams(h, 1), self.uni_ids, self._uni)
        o2 = self._overlap(ngrams(h, 2), self.bi_ids, self._bi)
        ol = self._lcs_all(h) if nh else np.zeros(self.n, dtype=np.int64)
        k = {"precision": 0, "recall": 1, "f1": 2}[self.measure]
        s1 = self._prf_vec(o1, nh, self.lengths)[k]
        s2 = self._prf_vec(o2, max(nh - 1, 0), np.maximum(self.lengths - 1, 0))[k]
        sl = self._prf_vec(ol, nh, self.lengths)[k]
        return ((s1 + s2 + sl) / 3.0).tolist()

    def avg(self, hyp, i: int) -> float:
        return rouge(hyp, self.refs[i], self.measure).avg


def write_report_csv(path, rows: Sequence[tuple[str, RougeScores]]) -> None:
    """One line per id: id, r1, r2, rl, avg (x100, two decimals)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "r1", "r2", "rl", "avg"])
        for rid, sc in rows:
            row = sc.as_row()
            w.writerow([rid] + [f"{row[k]:.2f}" for k in ("r1", "r2", "rl", "avg")])
