"""Top-1 exemplar quality (mean R~ x100) for Random / TF-IDF / Dense / Oracle on a synthetic corpus."""

import argparse
import logging
import time

from retrievalsum import evalharness as H
from retrievalsum.config import RunConfig
from retrievalsum.corpus import build_vocab, by_split
from retrievalsum.retriever import DenseRetriever, KnowledgeBase, retrieve_oracle, retrieve_random, retrieve_tfidf
from retrievalsum.synth import SynthConfig, clustered_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", help="key = value RunConfig file")
    ap.add_argument("--families", type=int, default=1)
    ap.add_argument("--corpus-seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=4)
    ap.add_argument("--lr", type=float, default=2e-3)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    base = RunConfig.from_file(args.config) if args.config else RunConfig()
    cfg = base.update(retriever_epochs=args.epochs, retriever_lr=args.lr, retriever_warmup=50)
    corpus, _ = clustered_corpus(SynthConfig(families=args.families, seed=args.corpus_seed))
    kb = KnowledgeBase(corpus, build_vocab(by_split(corpus, "train"), cfg.vocab_cap), cfg.doc_len, cfg.exemplar_len)

    t0 = time.perf_counter()
    model, _, result = H.fit_retriever(kb, corpus, cfg)
    logging.info("retriever trained in %.0fs, epoch losses %s", time.perf_counter() - t0,
                 [round(x, 2) for x in result.epoch_losses])
    dense = DenseRetriever(model, kb, cfg.pool_cap, cfg.salient_sentences)

    means, _ = H.exemplar_quality(kb, by_split(corpus, "test"), {
        "Random": lambda q: retrieve_random(q, kb, 1, cfg.seed),
        "TF-IDF": lambda q: retrieve_tfidf(q, kb, 1),
        "Dense": lambda q: dense.retrieve(q, 1),
        "Oracle": lambda q: retrieve_oracle(q, kb, 1),
    })
    print(" | ".join(f"{k:>7s}" for k in means))
    print(" | ".join(f"{v:7.2f}" for v in means.values()))


if __name__ == "__main__":
    main()
