import json

import pytest

from attachrec.cli import main
from attachrec.corpus import Corpus, dump_corpus

from conftest import msg

FAST = {
    "format_version": 1,
    "model": {"context_width": 1, "embedding_dim": 8, "hidden_dims": [16, 16]},
    "training": {"epochs": 2, "learning_rate": 1e-3},
    "train": {"variants": ["cnn", "cnn-p"]},
    "formulate": {"methods": ["cnn", "cnn-p", "silver", {"method": "full", "field": "both"},
                              {"method": "tfidf", "field": "both", "k": 3}]},
    "ablate": {"categories": ["pos"]},
}
PIPELINE = ["synth", "ingest", "index", "mine", "silver", "train", "formulate", "evaluate", "export-run", "ablate"]


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(FAST))
    return str(path)


def run(stage, out, config, *extra):
    return main([stage, "--out", str(out), "--config", config, *extra])


def test_evaluate_before_index(tmp_path, config, capsys):
    assert run("evaluate", tmp_path / "w", config) == 1
    assert "run index first" in capsys.readouterr().err


def test_stage_order_is_enforced_after_ingest(tmp_path, config, capsys):
    out = tmp_path / "w"
    assert run("synth", out, config) == 0
    assert run("ingest", out, config) == 0
    assert run("silver", out, config) == 1
    assert "run index first" in capsys.readouterr().err


def test_version_mismatch(tmp_path, capsys):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"format_version": 99}))
    assert main(["synth", "--out", str(tmp_path / "w"), "--config", str(path)]) == 1
    out = tmp_path / "w2"
    assert main(["synth", "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    manifest["format_version"] = 0
    (out / "manifest.json").write_text(json.dumps(manifest))
    assert main(["ingest", "--out", str(out)]) == 1
    assert "format version" in capsys.readouterr().err


def test_missing_corpus(tmp_path, config):
    assert run("ingest", tmp_path / "w", config, "--corpus", str(tmp_path / "absent.jsonl")) == 1


def test_bad_override(tmp_path, config):
    assert run("synth", tmp_path / "w", config, "--set", "nodot=1") == 1


def test_full_pipeline_is_deterministic(tmp_path, config):
    manifests = []
    for name in ("a", "b"):
        out = tmp_path / name
        for stage in PIPELINE:
            assert run(stage, out, config) == 0, stage
        manifests.append((out / "manifest.json").read_bytes())
        for artifact in ("report.jsonl", "runs/cnn.trec", "runs/qrels.txt", "rr_deltas.tsv", "lengths.tsv",
                         "ablation.json", "model-cnn.ckpt", "model-cnn-p.ckpt", "silver.jsonl"):
            assert (out / artifact).exists(), artifact
    assert manifests[0] == manifests[1]
    manifest = json.loads(manifests[0])
    assert set(manifest["stages"]) == set(PIPELINE)
    for entry in manifest["stages"].values():
        assert len(entry["config_hash"]) == 64
    assert manifest["stages"]["evaluate"]["mrr"]["silver"] == 1.0


def test_seed_and_flags_change_config_hash(tmp_path, config):
    out = tmp_path / "w"
    for stage in ("synth", "ingest", "index", "mine"):
        assert run(stage, out, config) == 0
    assert run("silver", out, config, "--k", "2") == 0
    first = json.loads((out / "manifest.json").read_text())["stages"]["silver"]
    assert first["max_scored_candidates"] <= 3
    assert run("silver", out, config, "--set", "silver.k=4") == 0
    second = json.loads((out / "manifest.json").read_text())["stages"]["silver"]
    assert first["config_hash"] != second["config_hash"]
    assert second["max_scored_candidates"] <= 15


def ten_term_corpus(path):
    words = " ".join(f"w{c}ord" for c in "abcdefghij")
    dump_corpus(Corpus([
        msg("m0", "old", 1, sender="w@x", to=("u@x",), subject=words, body="file attached", attachments=["e"]),
        msg("m1", "t", 10, sender="v@x", to=("u@x",), subject=words, body="send it"),
        msg("m2", "t", 11, sender="u@x", to=("v@x",), body="here", attachments=["e"]),
    ]), path)


def test_silver_manifest_counts_full_powerset(tmp_path, config):
    corpus = tmp_path / "tiny.jsonl"
    ten_term_corpus(corpus)
    out = tmp_path / "w"
    assert run("ingest", out, config, "--corpus", str(corpus)) == 0
    for stage in ("index", "mine"):
        assert run(stage, out, config) == 0
    assert run("silver", out, config, "--k", "10") == 0
    entry = json.loads((out / "manifest.json").read_text())["stages"]["silver"]
    assert entry["scored_candidates"] == 1023


def test_runtime_failure_exit_code(tmp_path, config, capsys):
    corpus = tmp_path / "tiny.jsonl"
    ten_term_corpus(corpus)
    out = tmp_path / "w"
    for stage in ("ingest", "index", "mine", "silver"):
        assert run(stage, out, config, *(["--corpus", str(corpus)] if stage == "ingest" else [])) == 0
    # a single instance cannot be split into training and validation data
    assert run("train", out, config) == 2
    assert "train failed" in capsys.readouterr().err


def test_cross_corpus_protocol(tmp_path, config):
    test_ws = tmp_path / "b"
    assert run("synth", test_ws, config, "--seed", "3") == 0
    for stage in ("ingest", "index", "mine", "silver"):
        assert run(stage, test_ws, config) == 0
    train_ws = tmp_path / "a"
    cross = ["--set", f"split.test_workspace={json.dumps(str(test_ws))}"]
    for stage in ("synth", "ingest", "index", "mine", "silver", "train", "formulate", "evaluate"):
        assert run(stage, train_ws, config, *cross) == 0, stage
    manifest = json.loads((train_ws / "manifest.json").read_text())
    n_test = json.loads((test_ws / "manifest.json").read_text())["stages"]["mine"]["instances"]
    n_train = manifest["stages"]["mine"]["instances"]
    assert manifest["stages"]["formulate"]["test_instances"] == n_test
    assert manifest["stages"]["train"]["train_instances"] + manifest["stages"]["train"]["validation_instances"] == n_train
    assert manifest["stages"]["evaluate"]["mrr"]["silver"] == 1.0
    test_ids = {json.loads(line)["instance_id"] for line in (test_ws / "instances.jsonl").read_text().splitlines()}
    report_ids = {json.loads(line)["instance_id"] for line in (train_ws / "report.jsonl").read_text().splitlines()
                  if "instance_id" in json.loads(line)}
    assert report_ids == test_ids


def test_checkpoint_carries_config_hash(tmp_path, config):
    from attachrec.neural import load_model

    out = tmp_path / "w"
    for stage in ("synth", "ingest", "index", "mine", "silver", "train"):
        assert run(stage, out, config) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert load_model(out / "model-cnn.ckpt").metadata["config_hash"] == manifest["stages"]["train"]["config_hash"]


def test_cross_corpus_needs_mined_test_workspace(tmp_path, config, capsys):
    out = tmp_path / "a"
    for stage in ("synth", "ingest", "index", "mine", "silver", "train"):
        assert run(stage, out, config) == 0
    empty = tmp_path / "empty"
    assert run("formulate", out, config, "--set", f"split.test_workspace={json.dumps(str(empty))}") == 1
    assert "run ingest first" in capsys.readouterr().err
