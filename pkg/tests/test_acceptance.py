"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the lines are repeated in the
terminal summary under "acceptance criteria". Tolerances are fixed here and never
relaxed per run. The heavy fixtures (the 10-cluster corpus and its trained
retriever) are built once per module.
"""

import math
import random
import statistics
import time

import pytest
import torch

from oracles import brute_rouge_l, brute_rouge_n, plain_seq2seq_next_logits, vanilla_beam
from retrievalsum import evalharness as H
from retrievalsum import tensor as T
from retrievalsum.cli import main as cli_main
from retrievalsum.config import RunConfig
from retrievalsum.corpus import build_vocab, by_split, split_words
from retrievalsum.decoder import CreditConfig, beam_search, g_weight
from retrievalsum.metrics import rouge_l, rouge_n
from retrievalsum.retriever import (
    DenseRetriever,
    KnowledgeBase,
    RetrieverConfig,
    RetrieverModel,
    contrastive_loss,
    head_similarities,
    retrieve_oracle,
    retrieve_random,
    retrieve_tfidf,
)
from retrievalsum.summarizer import SummarizerConfig, SummarizerModel, assemble, decode_step, encode, nll_loss
from retrievalsum.synth import ParaphraseConfig, SynthConfig, clustered_corpus, paraphrase_corpus

pytestmark = pytest.mark.acceptance

# Desk-scale training settings shared by the retrieval and end-to-end criteria.
# Learning rates are above the published 1e-4 because a few hundred Adam steps at
# 1e-4 leave both models near initialization on one CPU core.
DESK = RunConfig(
    retriever_lr=2e-3,
    retriever_epochs=4,
    retriever_warmup=50,
    summarizer_lr=1e-3,
    summarizer_warmup=50,
    decode_max_len=24,
)

FD_TOL = 1e-4


@pytest.fixture(scope="module")
def clustered():
    corpus, labels = clustered_corpus(SynthConfig())
    kb = KnowledgeBase(corpus, build_vocab(by_split(corpus, "train"), DESK.vocab_cap), DESK.doc_len,
                       DESK.exemplar_len)
    start = time.perf_counter()
    model, pools, _ = H.fit_retriever(kb, corpus, DESK)
    seconds = time.perf_counter() - start
    dense = DenseRetriever(model, kb, DESK.pool_cap, DESK.salient_sentences)
    return dict(corpus=corpus, labels=labels, kb=kb, dense=dense, train_seconds=seconds)


@pytest.fixture(scope="module")
def dense_sets(clustered):
    corpus = clustered["corpus"]
    return H.retrieve_all(by_split(corpus, "train") + by_split(corpus, "test"), clustered["kb"], "dense", DESK.e,
                          clustered["dense"])


# ---------------------------------------------------------------- 1


def test_c1_rouge_oracle_equivalence(criterion):
    rng = random.Random(2024)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        hyp = [rng.randrange(8) for _ in range(rng.randint(0, 20))]
        ref = [rng.randrange(8) for _ in range(rng.randint(0, 20))]
        for n in (1, 2):
            worst = max(worst, max(abs(a - b) for a, b in zip(rouge_n(hyp, ref, n), brute_rouge_n(hyp, ref, n))))
        worst = max(worst, max(abs(a - b) for a, b in zip(rouge_l(hyp, ref), brute_rouge_l(hyp, ref))))
    seconds = time.perf_counter() - start
    ok = worst <= 1e-9 and seconds < 5
    assert criterion(1, ok, f"max |diff| {worst:.1e} over 200 pairs, {seconds:.2f}s")


# ---------------------------------------------------------------- 2


def _rand(*shape, seed):
    g = torch.Generator().manual_seed(seed)
    return torch.randn(*shape, generator=g, dtype=T.DTYPE).requires_grad_(True)


def _op_cases(rng):
    r, c = rng.randint(2, 4), rng.randint(3, 6)
    a, b = _rand(r, c, seed=1), _rand(c, c, seed=2)
    q, k, v = _rand(1, 3, 4, seed=3), _rand(1, 5, 4, seed=4), _rand(1, 5, 4, seed=5)
    mask = T.padding_mask([4], 5)[:, None, :]
    targets = torch.tensor([rng.randrange(1, c) for _ in range(r)])

    def drop():
        return (T.dropout(a, 0.3, True, torch.Generator().manual_seed(7)) ** 2).sum()

    return {
        "matmul": (lambda: T.matmul(a, b).sum(), [a, b]),
        "add": (lambda: (T.add(a, b[0]) ** 2).sum(), [a, b]),
        "softmax": (lambda: (T.softmax(a) * b[:r]).sum(), [a, b]),
        "log_softmax": (lambda: (T.log_softmax(a) * b[:r]).sum(), [a, b]),
        "layer_norm": (lambda: (T.layer_norm(a, b[0], b[1]) * b[2 % c]).sum(), [a, b]),
        "embedding_lookup": (lambda: (T.embedding_lookup(b, [0, 2, 2, 1]) ** 3).sum(), [b]),
        "gelu": (lambda: T.gelu(3 * a).sum(), [a]),
        "dropout": (drop, [a]),
        "attention": (lambda: (T.attention(q, k, v, mask)[0] ** 2).sum(), [q, k, v]),
        "multi_head_attention": (lambda: (T.multi_head_attention(q, k, v, mask, 2)[0] ** 2).sum(), [q, k, v]),
        "cross_entropy": (lambda: T.cross_entropy(a, targets, pad_id=0), [a]),
    }


def test_c2_gradient_integrity(criterion):
    start = time.perf_counter()
    errors = {}
    for name, (fn, params) in _op_cases(random.Random(5)).items():
        errors[name] = T.finite_difference_check(fn, params)

    g = torch.Generator().manual_seed(0)
    ret = RetrieverModel(RetrieverConfig(vocab_size=30, d=8, layers=1, attn_heads=2, d_ff=16, heads=4, dropout=0.0,
                                         max_len=16))
    qs, cs = [[7, 8, 9, 10]], [[11, 12], [7, 9, 13], [14, 15, 16]]

    def retriever_loss():
        sims = head_similarities(ret.encode(qs, "query"), ret.encode(cs, "candidate"), 4)
        return contrastive_loss(sims[:1].T, sims[1:].T, 0.1)

    errors["retriever_model"] = T.finite_difference_check(retriever_loss, [p for _, p in T.trainable(ret)],
                                                          max_coords=4, generator=g)

    summ = SummarizerModel(SummarizerConfig(vocab_size=30, d=8, enc_layers=1, dec_layers=1, attn_heads=2, d_ff=16,
                                            n_tags=4, max_src=32, max_tgt=12))
    from retrievalsum.corpus import TokenSequence
    from retrievalsum.summarizer import make_target
    inp = assemble(TokenSequence((7, 8, 9, 10), ((0, 2), (2, 4))), [TokenSequence((11, 12, 13), ((0, 1), (1, 3)))], 4)
    tgt = make_target(TokenSequence((7, 12, 13), ((0, 1), (1, 3))), 4, 12)
    errors["summarizer_model"] = T.finite_difference_check(lambda: nll_loss(summ, inp, tgt),
                                                           [p for _, p in T.trainable(summ)], max_coords=4,
                                                           generator=g)
    seconds = time.perf_counter() - start
    worst = max(errors, key=errors.get)
    ok = all(e < FD_TOL for e in errors.values()) and seconds < 60
    assert criterion(2, ok, f"{len(errors)} checks, worst {worst} rel err {errors[worst]:.1e}, {seconds:.1f}s")


# ---------------------------------------------------------------- 3


def test_c3_contrastive_closed_forms(criterion):
    rng = random.Random(3)
    devs = []
    for _ in range(50):
        s, tau = rng.uniform(-1, 1), rng.uniform(0.05, 2.0)
        devs.append(abs(contrastive_loss([[s]], [[]], tau).item() - 0.0))
        devs.append(abs(contrastive_loss([[s]], [[s]], tau).item() - math.log(2)))
        pos = [[rng.uniform(-1, 1) for _ in range(3)]]
        neg = [[rng.uniform(-1, 1) for _ in range(4)]]
        h = rng.randint(2, 6)
        devs.append(abs(contrastive_loss(pos * h, neg * h, tau).item() - h * contrastive_loss(pos, neg, tau).item()))
    ok = max(devs) <= 1e-12
    assert criterion(3, ok, f"max deviation {max(devs):.1e} over 150 closed-form cases")


# ---------------------------------------------------------------- 4


def test_c4_retrieval_ordering(clustered, criterion):
    kb, dense = clustered["kb"], clustered["dense"]
    queries = by_split(clustered["corpus"], "test")
    means, per = H.exemplar_quality(kb, queries, {
        "random": lambda q: retrieve_random(q, kb, 1, DESK.seed),
        "tfidf": lambda q: retrieve_tfidf(q, kb, 1),
        "dense": lambda q: dense.retrieve(q, 1),
        "oracle": lambda q: retrieve_oracle(q, kb, 1),
    })
    r, t, d, o = (means[k] for k in ("random", "tfidf", "dense", "oracle"))
    per_query = all(per["oracle"][i] >= max(per[k][i] for k in ("random", "tfidf", "dense"))
                    for i in range(len(queries)))
    seconds = clustered["train_seconds"]
    ok = r < t <= d <= o and d - r >= 5.0 and per_query and seconds < 600
    assert criterion(4, ok, f"top-1 R~ random {r:.2f} < tfidf {t:.2f} <= dense {d:.2f} <= oracle {o:.2f}; "
                            f"dense-random {d - r:.2f}; oracle per-query {per_query}; train {seconds:.0f}s")


# ---------------------------------------------------------------- 5


def test_c5_dense_beats_lexical_on_paraphrases(criterion):
    corpus, labels = paraphrase_corpus(ParaphraseConfig())
    train, test = by_split(corpus, "train"), by_split(corpus, "test")
    # The coarse stage is lexical too, so the pool spans the whole knowledge base here.
    # Documents and summaries share no content words, and a from-scratch encoder sits on
    # the uniform-score plateau at tau=0.1; a softer temperature without dropout escapes it.
    cfg = DESK.update(pool_cap=len(train), tau=1.0, retriever_dropout=0.0, retriever_epochs=15)
    kb = KnowledgeBase(corpus, build_vocab(train, cfg.vocab_cap))
    model, _, _ = H.fit_retriever(kb, corpus, cfg)
    dense = DenseRetriever(model, kb, cfg.pool_cap, cfg.salient_sentences)

    def recall(fn):
        return statistics.fmean(sum(labels[x] == labels[q.id] for x in fn(q).exemplar_ids) / 3 for q in test)

    d = recall(lambda q: dense.retrieve(q, 3))
    t = recall(lambda q: retrieve_tfidf(q, kb, 3))
    ok = d - t >= 0.15
    assert criterion(5, ok, f"top-3 same-cluster recall dense {d:.3f} vs tfidf {t:.3f} (gap {d - t:.3f})")


# ---------------------------------------------------------------- 6


def test_c6_g_schedule(criterion):
    checks = []
    for l_s in range(1, 13):
        checks.append(all(g_weight(k, l_s) == 0.0 for k in range(1, l_s + 1)))
        vals = [g_weight(k, l_s) for k in range(1, 2000)]
        checks.append(all(a <= b for a, b in zip(vals, vals[1:])))
        checks.append(max(vals) < math.e)
        checks.append(abs(g_weight(2 * l_s, l_s) - math.exp(0.5)) <= 1e-12)
    # l_s = 0 has no threshold and exp(1 - 0/k) is exactly e at every step
    checks.append(all(g_weight(k, 0) == math.e for k in range(1, 50)))
    ok = all(checks)
    assert criterion(6, ok, f"{sum(checks)}/{len(checks)} schedule checks for l_s in 1..12 plus the l_s=0 case")


# ---------------------------------------------------------------- 7


def _toy_model(seed, use_tags=True):
    m = SummarizerModel(SummarizerConfig(vocab_size=30, d=16, enc_layers=1, dec_layers=1, attn_heads=2, d_ff=32,
                                         n_tags=8, max_src=64, max_tgt=20, use_tags=use_tags), seed=seed)
    with torch.no_grad():
        m.tok.weight.mul_(40)
    return m.eval()


def test_c7_ablation_identities(clustered, criterion):
    from retrievalsum.corpus import TokenSequence

    def seq(*sents):
        ids, spans = [], []
        for s in sents:
            spans.append((len(ids), len(ids) + len(s)))
            ids.extend(s)
        return TokenSequence(tuple(ids), tuple(spans))

    inputs = [
        assemble(seq([10, 11, 12], [13, 14]), [seq([20, 21, 22], [23, 24]), seq([25, 26, 27])], 8),
        assemble(seq([15, 16, 17, 18]), [seq([19, 20], [21]), seq([22, 23]), seq([24, 25, 26])], 8),
    ]
    lam0 = True
    for seed in range(3):
        m = _toy_model(seed)
        for inp in inputs:
            h = encode(m, inp).detach()
            ref = vanilla_beam(lambda p: decode_step(m, h, p), 3, 14)
            lam0 &= beam_search(m, inp, CreditConfig(beam=3, lam=0.0, max_len=14)).tokens == ref

    concat = True
    for seed in range(3):
        m = _toy_model(seed, use_tags=False)
        for inp in inputs:
            ref = vanilla_beam(plain_seq2seq_next_logits(m, inp.ids), 3, 14)
            concat &= beam_search(m, inp, CreditConfig(beam=3, lam=0.0, max_len=14)).tokens == ref

    corpus, kb = clustered["corpus"], clustered["kb"]
    cfg = DESK.update(summarizer_d=16, enc_layers=1, dec_layers=1, summarizer_attn_heads=2, summarizer_epochs=1,
                      decode_max_len=8)
    train, test = by_split(corpus, "train")[:16], by_split(corpus, "test")[:4]
    model, _ = H.fit_summarizer(train, kb, None, cfg)
    report = H.end_to_end_eval(model, H.credit_config(cfg), test, kb, None, cfg, "no_retrieval")
    zero_ok = len(report.rows) == len(test)

    ok = lam0 and concat and zero_ok
    assert criterion(7, ok, f"lambda=0 equals vanilla beam {lam0}; zeroed tags + lambda=0 equals plain "
                            f"seq2seq {concat}; zero-exemplar run {zero_ok}")


# ---------------------------------------------------------------- 8


def _train_r1(model, pairs, records, kb):
    scores = []
    for inp, rec in zip(pairs, records):
        tokens = beam_search(model, inp, CreditConfig(beam=DESK.beam, lam=0.0, max_len=DESK.decode_max_len)).tokens
        scores.append(rouge_n(H.generated_words(tokens, kb), split_words(rec.summary), 1).f1)
    return statistics.fmean(scores)


def test_c8_overfit_and_guidance(clustered, dense_sets, criterion):
    start = time.perf_counter()
    corpus, kb = clustered["corpus"], clustered["kb"]
    train, test = by_split(corpus, "train"), by_split(corpus, "test")

    # (a) memorize 20 pairs
    toy = train[:20]
    cfg = DESK.update(summarizer_dropout=0.0, summarizer_epochs=200, summarizer_batch=4)
    inputs = [inp for inp, _ in H.make_examples(toy, kb, dense_sets, cfg)]
    reached = {}

    def check(epoch, model):
        if (epoch + 1) % 10:
            return False
        r1 = _train_r1(model, inputs, toy, kb)
        reached["r1"], reached["epoch"] = r1, epoch + 1
        return r1 >= 0.95

    H.fit_summarizer(toy, kb, dense_sets, cfg, on_epoch=check)
    overfit = reached.get("r1", 0.0) >= 0.95

    # (b) full system vs. the retrieval-ablated arm on the 10-cluster corpus
    reports = H.ablation_suite(corpus, kb, DESK, clustered["dense"], arms=("full", "no_retrieval"))
    full, noret = reports["full"].means()["avg"], reports["no_retrieval"].means()["avg"]
    seconds = time.perf_counter() - start
    ok = overfit and full - noret >= 1.0
    assert criterion(8, ok, f"20-pair train R-1 {reached.get('r1', 0):.3f} at epoch {reached.get('epoch')}; "
                            f"R~ full {full:.2f} vs no_retrieval {noret:.2f} (margin {full - noret:.2f}); "
                            f"{seconds:.0f}s")


# ---------------------------------------------------------------- 9


TINY = ["--retriever-d", "16", "--heads", "4", "--retriever-layers", "1", "--retriever-attn-heads", "2",
        "--retriever-epochs", "1", "--retriever-warmup", "5", "--pool-cap", "20", "--n-neg", "4",
        "--summarizer-d", "16", "--enc-layers", "1", "--dec-layers", "1", "--summarizer-attn-heads", "2",
        "--summarizer-epochs", "1", "--summarizer-warmup", "5", "--decode-max-len", "10", "--beam", "2", "--e", "3"]

STAGES = [
    ["synth-corpus", "--train", "40", "--test", "4"],
    ["train-retriever"],
    ["retrieve", "--mode", "dense"],
    ["retrieve", "--mode", "tfidf"],
    ["train-summarizer"],
    ["summarize", "--label", "run", "--trace"],
    ["evaluate", "--summaries", "run"],
    ["evaluate", "--exemplar-quality", "dense", "tfidf"],
]


def _snapshot(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_c9_determinism(tmp_path, criterion):
    roots = [tmp_path / "a", tmp_path / "b"]
    codes = []
    for root in roots:
        for stage in STAGES:
            codes.append(cli_main([stage[0], "--workdir", str(root), *TINY, *stage[1:]]))
    first = _snapshot(roots[0])
    # rerun every stage in place as well
    for stage in STAGES:
        codes.append(cli_main([stage[0], "--workdir", str(roots[0]), *TINY, *stage[1:]]))
    a, b, again = first, _snapshot(roots[1]), _snapshot(roots[0])
    differing = sorted(k for k in set(a) | set(b) | set(again) if not (a.get(k) == b.get(k) == again.get(k)))
    ok = all(c == 0 for c in codes) and not differing and len(a) > 10
    assert criterion(9, ok, f"{len(a)} artifacts across {len(STAGES)} stages, differing: {differing or 'none'}")
