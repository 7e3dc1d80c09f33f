import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from multiview_re import checkpoint
from multiview_re.cli import main


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "data"
    assert main(["synth", "--out", str(out), "--sentences", "40", "--relations", "3", "--seed", "1"]) == 0
    return out


@pytest.fixture(scope="module")
def trained(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["train", "--data", str(corpus), "--epochs", "2", "--hidden", "8", "--out", str(out)]) == 0
    return out


def test_help_lists_flags_with_defaults():
    res = subprocess.run([sys.executable, "-m", "multiview_re", "train", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for flag in ("--data", "--lexicon", "--radical-dict", "--fusion", "--seed", "--epochs", "--lr",
                 "--batch-size", "--hidden", "--views", "--biword", "--gate-topk", "--out"):
        assert flag in res.stdout
    assert "(default: 50)" in res.stdout and "(default: 0.001)" in res.stdout


def test_unknown_flag_is_usage_error(corpus):
    assert main(["train", "--data", str(corpus), "--bogus"]) == 2
    assert main([]) == 2


def test_synth_refuses_non_empty_dir(corpus):
    assert main(["synth", "--out", str(corpus)]) == 2
    before = (corpus / "train.jsonl").read_bytes()
    assert main(["synth", "--out", str(corpus), "--sentences", "40", "--relations", "3", "--seed", "1", "--force"]) == 0
    assert (corpus / "train.jsonl").read_bytes() == before


def test_synth_split_sizes(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "d"), "--sentences", "200", "--relations", "4"]) == 0
    counts = [len((tmp_path / "d" / f"{s}.jsonl").read_text(encoding="utf-8").splitlines()) for s in ("train", "dev", "test")]
    assert counts == [160, 20, 20]


def test_train_artifacts(trained):
    for name in ("manifest.json", "model.ckpt", "final.ckpt", "train_log.csv", "metrics.json"):
        assert (trained / name).exists()
    manifest = json.loads((trained / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["resolved_config"]["model"]["hidden"] == 8
    assert manifest["resolved_config"]["weight_decay"] == 0.01
    assert set(manifest["input_digests"]) >= {"train.jsonl", "dev.jsonl", "lexicon", "radical_dict"}
    rows = list(csv.reader((trained / "train_log.csv").open(encoding="utf-8")))
    assert rows[0] == ["epoch", "step", "lr", "train_loss", "dev_macro_f1"] and len(rows) == 3
    metrics = json.loads((trained / "metrics.json").read_text(encoding="utf-8"))
    assert set(metrics["best"]) == {"train", "dev", "test"}


def test_zero_epochs_writes_checkpoint_and_metrics(corpus, tmp_path):
    assert main(["train", "--data", str(corpus), "--epochs", "0", "--hidden", "4", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "model.ckpt").stat().st_size > 0
    metrics = json.loads((tmp_path / "metrics.json").read_text(encoding="utf-8"))
    assert 0.0 <= metrics["best"]["dev"]["micro"]["f1"] <= 1.0
    assert (tmp_path / "train_log.csv").read_text(encoding="utf-8").count("\n") == 1


def test_views_flag_drops_encoder(corpus, tmp_path):
    assert main(["train", "--data", str(corpus), "--epochs", "0", "--views", "lexicon,radical", "--out", str(tmp_path)]) == 0
    names = checkpoint.manifest_names(tmp_path / "model.ckpt")
    assert not any(n.startswith("semantic.") for n in names)
    assert any(n.startswith("lexicon.") for n in names)


def test_conflicting_flags(corpus, tmp_path, trained):
    assert main(["train", "--data", str(corpus), "--fusion", "concat", "--gate-topk", "1", "--out", str(tmp_path)]) == 2
    assert main(["train", "--data", str(corpus), "--views", "syntax", "--out", str(tmp_path)]) == 2
    assert main(["train", "--data", str(corpus), "--warmup-ratio", "1.5", "--out", str(tmp_path)]) == 2
    assert main(["eval", "--checkpoint", str(trained / "model.ckpt"), "--data", str(corpus), "--gate-topk", "4"]) == 2


def test_exit_codes_for_bad_inputs(corpus, tmp_path):
    bad = tmp_path / "bad"
    bad.mkdir()
    (bad / "train.jsonl").write_text(
        '{"text": "ab", "head": {"start": 0, "end": 1}, "tail": {"start": 5, "end": 9}, "relation": "r"}\n', encoding="utf-8")
    (bad / "dev.jsonl").write_text("", encoding="utf-8")
    assert main(["train", "--data", str(bad), "--views", "semantic", "--out", str(tmp_path / "o")]) == 3
    assert main(["train", "--data", str(tmp_path / "missing"), "--views", "semantic", "--out", str(tmp_path / "o")]) == 5
    assert main(["inspect-gates", "--checkpoint", str(tmp_path / "none.ckpt"), "--data", str(corpus / "dev.jsonl"),
                 "--out", str(tmp_path / "g.csv")]) == 5


def test_divergence_exit_code(corpus, tmp_path):
    with np.errstate(all="ignore"):
        code = main(["train", "--data", str(corpus), "--epochs", "2", "--lr", "1e300", "--hidden", "4",
                     "--out", str(tmp_path)])
    assert code == 4


def test_eval_and_topk_change_count(corpus, trained, tmp_path):
    ckpt = str(trained / "model.ckpt")
    assert main(["eval", "--checkpoint", ckpt, "--data", str(corpus), "--split", "dev", "--out", str(tmp_path / "dense")]) == 0
    assert main(["eval", "--checkpoint", ckpt, "--data", str(corpus), "--split", "dev", "--gate-topk", "1",
                 "--out", str(tmp_path / "top1")]) == 0
    dense = [json.loads(l) for l in (tmp_path / "dense" / "predictions.jsonl").read_text(encoding="utf-8").splitlines()]
    top1 = [json.loads(l) for l in (tmp_path / "top1" / "predictions.jsonl").read_text(encoding="utf-8").splitlines()]
    report = json.loads((tmp_path / "top1" / "report.json").read_text(encoding="utf-8"))
    changed = [i for i, (a, b) in enumerate(zip(dense, top1)) if a["pred"] != b["pred"]]
    assert report["changed_predictions"] == len(changed) and report["changed_indices"] == changed
    full = json.loads((tmp_path / "dense" / "report.json").read_text(encoding="utf-8"))
    assert full["n"] == len(dense) == 4 and "changed_predictions" not in full


def test_inspect_gates_rows_on_simplex(corpus, trained, tmp_path):
    out = tmp_path / "gates.csv"
    assert main(["inspect-gates", "--checkpoint", str(trained / "model.ckpt"), "--data", str(corpus / "dev.jsonl"),
                 "--out", str(out)]) == 0
    rows = list(csv.reader(out.open(encoding="utf-8")))
    assert rows[0] == ["sentence_id", "position", "char", "alpha_semantic", "alpha_lexicon", "alpha_radical"]
    assert rows[-1][0] == "mean"
    for row in rows[1:]:
        assert abs(sum(float(a) for a in row[3:]) - 1.0) <= 1e-9


def test_inspect_gates_rejects_concat(corpus, tmp_path):
    assert main(["train", "--data", str(corpus), "--epochs", "0", "--fusion", "concat", "--out", str(tmp_path)]) == 0
    assert main(["inspect-gates", "--checkpoint", str(tmp_path / "model.ckpt"), "--data", str(corpus / "dev.jsonl"),
                 "--out", str(tmp_path / "g.csv")]) == 2


def test_manifest_rerun_is_bit_identical(corpus, trained, tmp_path):
    assert main(["train", "--manifest", str(trained / "manifest.json"), "--out", str(tmp_path)]) == 0
    for name in ("model.ckpt", "final.ckpt", "train_log.csv"):
        assert (tmp_path / name).read_bytes() == (trained / name).read_bytes()


def test_manifest_rejects_changed_inputs(corpus, trained, tmp_path):
    copy = tmp_path / "data"
    copy.mkdir()
    for f in corpus.iterdir():
        (copy / f.name).write_bytes(f.read_bytes())
    with (copy / "train.jsonl").open("a", encoding="utf-8") as fh:
        fh.write('{"text": "ab", "head": {"start": 0, "end": 1}, "tail": {"start": 1, "end": 2}, "relation": "rel_0"}\n')
    assert main(["train", "--manifest", str(trained / "manifest.json"), "--data", str(copy), "--out", str(tmp_path / "o")]) == 3


def test_config_file(corpus, tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text('epochs = 0\nhidden = 4\nviews = "semantic,lexicon"\n', encoding="utf-8")
    assert main(["train", "--config", str(cfg), "--data", str(corpus), "--out", str(tmp_path / "o")]) == 0
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["resolved_config"]["model"]["views"] == ["semantic", "lexicon"]
    cfg.write_text("learning_speed = 3\n", encoding="utf-8")
    assert main(["train", "--config", str(cfg), "--data", str(corpus), "--out", str(tmp_path / "o")]) == 2
    cfg.write_text("epochs = = 3\n", encoding="utf-8")
    assert main(["train", "--config", str(cfg), "--data", str(corpus), "--out", str(tmp_path / "o")]) == 2


def test_ablate_and_compare_fusion(corpus, tmp_path):
    assert main(["ablate", "--data", str(corpus), "--epochs", "1", "--hidden", "4", "--out", str(tmp_path / "a")]) == 0
    table = (tmp_path / "a" / "ablation.txt").read_text(encoding="utf-8").splitlines()
    assert len(table) == 5 and table[1].startswith("full")
    assert main(["compare-fusion", "--data", str(corpus), "--epochs", "2", "--hidden", "4", "--out", str(tmp_path / "c")]) == 0
    report = json.loads((tmp_path / "c" / "compare_fusion.json").read_text(encoding="utf-8"))
    assert report["seed_audit_passed"]
    assert len((tmp_path / "c" / "loss_curves.csv").read_text(encoding="utf-8").splitlines()) == 1 + 2 * 3
