"""Command line entry point.

Every stage reads and writes under ``--workdir``::

    corpus/      corpus.jsonl, vocab.txt
    retriever/   model.json, pools.jsonl, train.json
    exemplars/   <mode>.jsonl
    summarizer/  <exemplars>[-notags].json, train.json
    reports/     summaries, per-query CSVs, JSON summaries

Each artifact gets a ``<name>.meta.json`` sidecar holding the run config, its
fingerprint and the sha256 of the inputs it was built from.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from . import evalharness as H
from .config import ConfigError, RunConfig
from .corpus import CorpusError, Vocabulary, build_vocab, by_split, ingest, save_corpus, split_words
from .decoder import beam_search, write_trace
from .metrics import rouge
from .retriever import (
    DenseRetriever,
    ExemplarSet,
    KnowledgeBase,
    load_jsonl,
    load_retriever,
    save_jsonl,
    save_retriever,
)
from .summarizer import load_model, save_model
from .synth import ParaphraseConfig, SynthConfig, clustered_corpus, paraphrase_corpus
from .tensor import NumericError

log = logging.getLogger("retrievalsum")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
SUBDIRS = ("corpus", "retriever", "exemplars", "summarizer", "reports")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class MissingArtifact(DataError):
    def __init__(self, path: Path, producer: str):
        super().__init__(f"missing {path}; run `retrievalsum {producer}` first")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- workdir helpers


class Workdir:
    def __init__(self, root, cfg: RunConfig):
        self.root = Path(root)
        self.cfg = cfg

    def path(self, sub: str, name: str) -> Path:
        p = self.root / sub / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def need(self, sub: str, name: str, producer: str) -> Path:
        p = self.root / sub / name
        if not p.exists():
            raise MissingArtifact(p, producer)
        return p

    def stamp(self, artifact: Path, inputs=(), **extra) -> None:
        meta = {
            "artifact": artifact.name,
            "fingerprint": self.cfg.fingerprint(),
            "config": self.cfg.to_dict(),
            "inputs": {str(p.relative_to(self.root)): _sha256(p) for p in inputs},
            **extra,
        }
        artifact.with_name(artifact.name + ".meta.json").write_text(
            json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8")

    # common loads
    def corpus(self):
        path = self.need("corpus", "corpus.jsonl", "ingest` or `retrievalsum synth-corpus")
        vocab_path = self.need("corpus", "vocab.txt", "ingest` or `retrievalsum synth-corpus")
        return ingest(path), Vocabulary.load(vocab_path)

    def kb(self):
        corpus, vocab = self.corpus()
        kb = KnowledgeBase(corpus, vocab, self.cfg.doc_len, self.cfg.exemplar_len)
        return corpus, kb

    def exemplars(self, mode: str) -> dict[str, ExemplarSet] | None:
        if mode == "none":
            return None
        path = self.need("exemplars", f"{mode}.jsonl", f"retrieve --mode {mode}")
        return {s.query_id: s for s in load_jsonl(ExemplarSet, path)}

    def dense(self, kb) -> DenseRetriever:
        model = load_retriever(self.need("retriever", "model.json", "train-retriever"))
        return DenseRetriever(model, kb, self.cfg.pool_cap, self.cfg.salient_sentences)


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _summarizer_name(exemplars: str, tags: bool) -> str:
    return f"{exemplars}{'' if tags else '-notags'}.json"


def _split(corpus, split: str):
    return list(corpus) if split == "all" else by_split(corpus, split)


# ---------------------------------------------------------------- subcommands


def _store_corpus(wd: Workdir, records) -> None:
    path = wd.path("corpus", "corpus.jsonl")
    save_corpus(records, path)
    vocab = build_vocab(by_split(records, "train") or records, wd.cfg.vocab_cap)
    vpath = wd.path("corpus", "vocab.txt")
    vocab.save(vpath)
    wd.stamp(path, n=len(records))
    wd.stamp(vpath, [path], size=len(vocab))
    print(f"wrote {len(records)} records and a {len(vocab)}-token vocabulary to {path.parent}")


def cmd_ingest(args, wd: Workdir) -> None:
    if not Path(args.input).exists():
        raise DataError(f"no such corpus file: {args.input}")
    _store_corpus(wd, ingest(args.input))


def cmd_synth_corpus(args, wd: Workdir) -> None:
    if args.kind == "clustered":
        records, labels = clustered_corpus(SynthConfig(clusters=args.clusters, train=args.train, test=args.test,
                                                       seed=args.corpus_seed))
    else:
        records, labels = paraphrase_corpus(ParaphraseConfig(clusters=args.clusters, train=args.train,
                                                             test=args.test, seed=args.corpus_seed))
    _store_corpus(wd, records)
    _write_json(wd.path("corpus", "labels.json"), labels)


def cmd_train_retriever(args, wd: Workdir) -> None:
    corpus, kb = wd.kb()
    model, pools, result = H.fit_retriever(kb, corpus, wd.cfg)
    src = wd.root / "corpus" / "corpus.jsonl"
    path = wd.path("retriever", "model.json")
    save_retriever(model, path, {"fingerprint": wd.cfg.fingerprint()})
    wd.stamp(path, [src])
    pool_path = wd.path("retriever", "pools.jsonl")
    save_jsonl(pools, pool_path)
    wd.stamp(pool_path, [src])
    _write_json(wd.path("retriever", "train.json"),
                {"fingerprint": wd.cfg.fingerprint(), "epoch_losses": result.epoch_losses})
    print(f"retriever trained on {len(pools)} pools; epoch losses "
          + " ".join(f"{x:.4f}" for x in result.epoch_losses))


def cmd_retrieve(args, wd: Workdir) -> None:
    corpus, kb = wd.kb()
    dense = wd.dense(kb) if args.mode == "dense" else None
    records = _split(corpus, args.split)
    sets = H.retrieve_all(records, kb, args.mode, wd.cfg.e, dense, wd.cfg.seed)
    path = wd.path("exemplars", f"{args.mode}.jsonl")
    save_jsonl(list(sets.values()), path)
    inputs = [wd.root / "corpus" / "corpus.jsonl"]
    if dense is not None:
        inputs.append(wd.root / "retriever" / "model.json")
    wd.stamp(path, inputs, mode=args.mode, split=args.split)
    print(f"wrote {len(sets)} exemplar sets to {path}")


def cmd_train_summarizer(args, wd: Workdir) -> None:
    corpus, kb = wd.kb()
    sets = wd.exemplars(args.exemplars)
    train = by_split(corpus, "train")
    tags = wd.cfg.use_tags and not args.no_tags
    model, result = H.fit_summarizer(train, kb, sets, wd.cfg, use_tags=tags)
    path = wd.path("summarizer", _summarizer_name(args.exemplars, tags))
    save_model(model, path, {"fingerprint": wd.cfg.fingerprint(), "exemplars": args.exemplars})
    inputs = [wd.root / "corpus" / "corpus.jsonl"]
    if sets is not None:
        inputs.append(wd.root / "exemplars" / f"{args.exemplars}.jsonl")
    wd.stamp(path, inputs)
    print(f"summarizer saved to {path}; epoch losses " + " ".join(f"{x:.4f}" for x in result.epoch_losses))


def _lam(args, cfg: RunConfig) -> float:
    if args.no_credit:
        return 0.0
    return cfg.lam if args.lam is None else args.lam


def cmd_summarize(args, wd: Workdir) -> None:
    corpus, kb = wd.kb()
    sets = wd.exemplars(args.exemplars)
    model_path = wd.need("summarizer", args.model or _summarizer_name(args.exemplars, True),
                         f"train-summarizer --exemplars {args.exemplars}")
    model = load_model(model_path)
    credit = H.credit_config(wd.cfg, _lam(args, wd.cfg))
    label = args.label or f"{model_path.stem}-lam{credit.lam:g}"
    out = wd.path("reports", f"summaries-{label}.jsonl")
    trace = wd.path("reports", f"trace-{label}.jsonl") if args.trace else None
    dump = wd.path("reports", f"inputs-{label}.jsonl") if args.dump_input else None
    for p in (trace, dump):
        if p is not None:
            p.write_text("", encoding="utf-8")
    with open(out, "w", encoding="utf-8") as fh:
        for rec in _split(corpus, args.split):
            es = sets.get(rec.id) if sets is not None else None
            inp = H.assemble_for(rec, kb, es, wd.cfg)
            if dump is not None:
                with open(dump, "a", encoding="utf-8") as dfh:
                    dfh.write(json.dumps({"id": rec.id, **json.loads(inp.to_json())}, sort_keys=True) + "\n")
            res = beam_search(model, inp, credit, trace=trace is not None)
            if trace is not None:
                write_trace(res, trace, rec.id)
            fh.write(json.dumps({"id": rec.id, "summary": " ".join(H.generated_words(res.tokens, kb))},
                                sort_keys=True) + "\n")
    wd.stamp(out, [model_path], lam=credit.lam, exemplars=args.exemplars, split=args.split)
    print(f"wrote summaries to {out}")


def cmd_evaluate(args, wd: Workdir) -> None:
    corpus, kb = wd.kb()
    gold = {r.id: r for r in corpus}
    if args.exemplar_quality:
        queries = by_split(corpus, args.split)
        retrievers = {}
        for mode in args.exemplar_quality:
            sets = wd.exemplars(mode)
            if sets is None:
                raise UsageError("exemplar quality needs a retrieval mode other than none")
            retrievers[mode] = lambda q, s=sets: s[q.id]
        means, _ = H.exemplar_quality(kb, queries, retrievers)
        path = wd.path("reports", "exemplar_quality.json")
        _write_json(path, {"fingerprint": wd.cfg.fingerprint(), "split": args.split,
                           "top1_avg_rouge": {k: round(v, 2) for k, v in means.items()}})
        for k, v in means.items():
            print(f"{k:>8s} {v:6.2f}")
        return
    if not args.summaries:
        raise UsageError("evaluate needs --summaries LABEL or --exemplar-quality MODE ...")
    src = wd.need("reports", f"summaries-{args.summaries}.jsonl", "summarize")
    report = H.EvalReport(args.summaries, fingerprint={"fingerprint": wd.cfg.fingerprint()})
    with open(src, encoding="utf-8") as fh:
        for line in fh:
            row = json.loads(line)
            if row["id"] not in gold:
                raise DataError(f"{src}: unknown id {row['id']!r}")
            report.rows.append((row["id"], rouge(split_words(row["summary"]), split_words(gold[row["id"]].summary))))
    csv_path, json_path = report.write(wd.root / "reports", f"eval-{args.summaries}")
    wd.stamp(json_path, [src])
    print(" ".join(f"{k}={v:.2f}" for k, v in report.means().items()))


def cmd_ablate(args, wd: Workdir) -> None:
    corpus, kb = wd.kb()
    dense = wd.dense(kb) if set(args.arms) - {"no_retrieval", "tfidf_retriever"} else None
    reports = H.ablation_suite(corpus, kb, wd.cfg, dense, args.arms, args.split)
    table = {}
    for arm, rep in reports.items():
        _, json_path = rep.write(wd.root / "reports", f"ablation-{arm}")
        wd.stamp(json_path, [wd.root / "corpus" / "corpus.jsonl"])
        table[arm] = {k: round(v, 2) for k, v in rep.means().items()}
        print(f"{arm:>20s} " + " ".join(f"{k}={v:6.2f}" for k, v in table[arm].items()))
    _write_json(wd.path("reports", "ablation.json"), {"fingerprint": wd.cfg.fingerprint(), "arms": table})


# ---------------------------------------------------------------- parser


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("run config (overrides --config)")
    for f in fields(RunConfig):
        typ = type(f.default)
        group.add_argument(f"--{f.name.replace('_', '-')}", dest=f"cfg_{f.name}", default=None,
                           type=_bool if typ is bool else typ, metavar=typ.__name__.upper())


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--workdir", default="work", help="artifact tree (default: ./work)")
    common.add_argument("--config", help="key = value file layered under the flags")
    common.add_argument("-v", "--verbose", action="store_true")
    _config_flags(common)

    p = _Parser(prog="retrievalsum", description="Exemplar-guided summarization pipeline.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("ingest", parents=[common], help="load a JSONL corpus")
    s.add_argument("--input", required=True)
    s.set_defaults(fn=cmd_ingest)

    s = sub.add_parser("synth-corpus", parents=[common], help="generate a seeded synthetic corpus")
    s.add_argument("--kind", choices=("clustered", "paraphrase"), default="clustered")
    s.add_argument("--clusters", type=int, default=10)
    s.add_argument("--train", type=int, default=500)
    s.add_argument("--test", type=int, default=50)
    s.add_argument("--corpus-seed", type=int, default=0)
    s.set_defaults(fn=cmd_synth_corpus)

    s = sub.add_parser("train-retriever", parents=[common], help="coarse-rank pools and train the dense retriever")
    s.set_defaults(fn=cmd_train_retriever)

    s = sub.add_parser("retrieve", parents=[common], help="write exemplar sets")
    s.add_argument("--mode", choices=H.MODES, default="dense")
    s.add_argument("--split", choices=("train", "valid", "test", "all"), default="all")
    s.set_defaults(fn=cmd_retrieve)

    s = sub.add_parser("train-summarizer", parents=[common], help="train the exemplar-conditioned summarizer")
    s.add_argument("--exemplars", choices=H.MODES, default="dense")
    s.add_argument("--no-tags", action="store_true", help="zero and freeze the group tag table")
    s.set_defaults(fn=cmd_train_summarizer)

    s = sub.add_parser("summarize", parents=[common], help="decode summaries with beam search")
    s.add_argument("--exemplars", choices=H.MODES, default="dense")
    s.add_argument("--model", help="checkpoint name under summarizer/ (default follows --exemplars)")
    s.add_argument("--split", choices=("train", "valid", "test", "all"), default="test")
    s.add_argument("--lambda", dest="lam", type=float, default=None, help="credit weight (overrides config lam)")
    s.add_argument("--no-credit", action="store_true", help="decode without ROUGE credit")
    s.add_argument("--label", help="output label (default: model name and lambda)")
    s.add_argument("--trace", action="store_true", help="dump per-step beams as JSONL")
    s.add_argument("--dump-input", action="store_true", help="dump assembled inputs as JSONL")
    s.set_defaults(fn=cmd_summarize)

    s = sub.add_parser("evaluate", parents=[common], help="score summaries or exemplar sets")
    s.add_argument("--summaries", help="label given to summarize")
    s.add_argument("--exemplar-quality", nargs="+", choices=[m for m in H.MODES if m != "none"],
                   help="top-1 exemplar R~ for these retrieval modes")
    s.add_argument("--split", choices=("train", "valid", "test"), default="test")
    s.set_defaults(fn=cmd_evaluate)

    s = sub.add_parser("ablate", parents=[common], help="train and evaluate the ablation arms")
    s.add_argument("--arms", nargs="+", choices=H.ARMS, default=list(H.ARMS))
    s.add_argument("--split", choices=("valid", "test"), default="test")
    s.set_defaults(fn=cmd_ablate)
    return p


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_")}
    return cfg.update(**overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        wd = Workdir(args.workdir, cfg)
        args.fn(args, wd)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CorpusError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
