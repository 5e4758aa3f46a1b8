"""Train the retriever once, then every requested ablation arm; prints mean R-1/R-2/R-L/R~ per arm."""

import argparse
import json
import logging

from retrievalsum import evalharness as H
from retrievalsum.config import RunConfig
from retrievalsum.corpus import build_vocab, by_split
from retrievalsum.retriever import DenseRetriever, KnowledgeBase
from retrievalsum.synth import SynthConfig, clustered_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", help="key = value RunConfig file")
    ap.add_argument("--arms", nargs="+", choices=H.ARMS, default=list(H.ARMS))
    ap.add_argument("--families", type=int, default=1)
    ap.add_argument("--summarizer-epochs", type=int, default=5)
    ap.add_argument("--out", help="write the table as JSON here")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")

    base = RunConfig.from_file(args.config) if args.config else RunConfig()
    cfg = base.update(retriever_lr=2e-3, retriever_epochs=4, retriever_warmup=50, summarizer_lr=1e-3,
                      summarizer_warmup=50, summarizer_epochs=args.summarizer_epochs, decode_max_len=24)
    corpus, _ = clustered_corpus(SynthConfig(families=args.families))
    kb = KnowledgeBase(corpus, build_vocab(by_split(corpus, "train"), cfg.vocab_cap), cfg.doc_len, cfg.exemplar_len)
    model, _, _ = H.fit_retriever(kb, corpus, cfg)
    reports = H.ablation_suite(corpus, kb, cfg, DenseRetriever(model, kb, cfg.pool_cap), args.arms)

    table = {arm: {k: round(v, 2) for k, v in rep.means().items()} for arm, rep in reports.items()}
    print(f"{'arm':>20s}   R-1    R-2    R-L    R~")
    for arm, row in table.items():
        print(f"{arm:>20s} {row['r1']:6.2f} {row['r2']:6.2f} {row['rl']:6.2f} {row['avg']:6.2f}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump({"fingerprint": cfg.fingerprint(), "arms": table}, fh, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()
