import json

import pytest

from retrievalsum.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from retrievalsum.corpus import Vocabulary, ingest, tokenize
from retrievalsum.metrics import rouge_avg

TINY = ["--retriever-d", "16", "--heads", "4", "--retriever-layers", "1", "--retriever-attn-heads", "2",
        "--retriever-epochs", "1", "--retriever-warmup", "5", "--pool-cap", "20", "--n-neg", "4",
        "--summarizer-d", "16", "--enc-layers", "1", "--dec-layers", "1", "--summarizer-attn-heads", "2",
        "--summarizer-epochs", "1", "--summarizer-warmup", "5", "--decode-max-len", "12", "--beam", "2",
        "--e", "3"]


def run(wd, *args):
    return main([args[0], "--workdir", str(wd), *TINY, *args[1:]])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    wd = tmp_path_factory.mktemp("work")
    assert run(wd, "synth-corpus", "--train", "40", "--test", "4") == EXIT_OK
    assert run(wd, "train-retriever") == EXIT_OK
    for mode in ("dense", "random", "oracle", "none"):
        assert run(wd, "retrieve", "--mode", mode) == EXIT_OK
    assert run(wd, "train-summarizer") == EXIT_OK
    assert run(wd, "train-summarizer", "--exemplars", "none") == EXIT_OK
    return wd


def test_layout_and_fingerprints(pipeline):
    for sub in ("corpus", "retriever", "exemplars", "summarizer"):
        assert (pipeline / sub).is_dir()
    meta = json.loads((pipeline / "retriever" / "model.json.meta.json").read_text())
    assert meta["config"]["heads"] == 4
    assert "corpus/corpus.jsonl" in meta["inputs"]
    assert len(meta["fingerprint"]) == 16


def test_summarize_and_evaluate(pipeline):
    assert run(pipeline, "summarize", "--label", "full", "--trace", "--dump-input") == EXIT_OK
    rows = [json.loads(l) for l in (pipeline / "reports" / "summaries-full.jsonl").read_text().splitlines()]
    assert len(rows) == 4
    dump = [json.loads(l) for l in (pipeline / "reports" / "inputs-full.jsonl").read_text().splitlines()]
    assert set(dump[0]) == {"id", "ids", "tags", "cls_positions"}
    assert (pipeline / "reports" / "trace-full.jsonl").stat().st_size > 0
    assert run(pipeline, "evaluate", "--summaries", "full") == EXIT_OK
    summary = json.loads((pipeline / "reports" / "eval-full.json").read_text())
    assert summary["n"] == 4
    assert (pipeline / "reports" / "eval-full.csv").read_text().startswith("id,r1,r2,rl,avg")


def test_zero_exemplar_mode_end_to_end(pipeline):
    assert run(pipeline, "summarize", "--exemplars", "none", "--label", "noret") == EXIT_OK
    assert run(pipeline, "evaluate", "--summaries", "noret") == EXIT_OK


def test_lambda_zero_equals_no_credit(pipeline):
    assert run(pipeline, "summarize", "--lambda", "0", "--label", "a") == EXIT_OK
    assert run(pipeline, "summarize", "--no-credit", "--label", "b") == EXIT_OK
    reports = pipeline / "reports"
    assert (reports / "summaries-a.jsonl").read_bytes() == (reports / "summaries-b.jsonl").read_bytes()


def test_oracle_dominates_random(pipeline):
    corpus = {r.id: r for r in ingest(pipeline / "corpus" / "corpus.jsonl")}
    vocab = Vocabulary.load(pipeline / "corpus" / "vocab.txt")

    def top1(mode):
        out = {}
        for line in (pipeline / "exemplars" / f"{mode}.jsonl").read_text().splitlines():
            row = json.loads(line)
            q = corpus[row["query_id"]]
            if q.split == "test":
                gold = tokenize(q.summary, vocab)
                out[q.id] = rouge_avg(tokenize(corpus[row["exemplar_ids"][0]].summary, vocab), gold)
        return out

    oracle, rand = top1("oracle"), top1("random")
    assert all(oracle[k] >= rand[k] for k in oracle)
    assert run(pipeline, "evaluate", "--exemplar-quality", "random", "oracle", "dense") == EXIT_OK


def test_rerun_is_byte_identical(pipeline, tmp_path):
    art = pipeline / "exemplars" / "dense.jsonl"
    before = art.read_bytes()
    assert run(pipeline, "retrieve", "--mode", "dense") == EXIT_OK
    assert art.read_bytes() == before


def test_config_file_layers_under_flags(pipeline, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("e = 2\nseed = 4\n")
    assert run(pipeline, "retrieve", "--mode", "random", "--config", str(cfg), "--e", "1") == EXIT_OK
    meta = json.loads((pipeline / "exemplars" / "random.jsonl.meta.json").read_text())
    assert meta["config"]["e"] == 1 and meta["config"]["seed"] == 4
    first = json.loads((pipeline / "exemplars" / "random.jsonl").read_text().splitlines()[0])
    assert len(first["exemplar_ids"]) == 1
    assert run(pipeline, "retrieve", "--mode", "random") == EXIT_OK


def test_missing_artifact_names_producer(tmp_path, capsys):
    assert run(tmp_path, "retrieve", "--mode", "tfidf") == EXIT_DATA
    assert "synth-corpus" in capsys.readouterr().err
    assert run(tmp_path, "synth-corpus", "--train", "12", "--test", "2") == EXIT_OK
    assert run(tmp_path, "retrieve", "--mode", "dense") == EXIT_DATA
    assert "train-retriever" in capsys.readouterr().err
    assert run(tmp_path, "summarize", "--exemplars", "none") == EXIT_DATA
    assert "train-summarizer" in capsys.readouterr().err


def test_usage_errors(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["retrieve", "--mode", "psychic"])
    assert exc.value.code == EXIT_USAGE
    assert main(["retrieve", "--workdir", str(tmp_path), "--heads", "5"]) == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == EXIT_USAGE


def test_bad_corpus_is_data_error(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"id": "a", "split": "train", "document": "x .", "summary": "y ."}\n{"id": 2}\n')
    assert main(["ingest", "--workdir", str(tmp_path / "w"), "--input", str(bad)]) == EXIT_DATA
    assert "bad.jsonl:2" in capsys.readouterr().err


def test_nan_loss_exit_code(tmp_path):
    assert run(tmp_path, "synth-corpus", "--train", "12", "--test", "2") == EXIT_OK
    assert run(tmp_path, "train-retriever", "--retriever-lr", "1e300", "--retriever-warmup", "1",
               "--retriever-epochs", "3") == EXIT_NUMERIC
