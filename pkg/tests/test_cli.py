import csv
import json

import numpy as np
import pytest

from tsbn.cli import EXIT_DIVERGED, EXIT_INVALID, EXIT_OK, main
from tsbn.datasets import write_png

SMALL = ["--height", "32", "--width", "16"]
FAST = SMALL + ["--epochs", "1", "--pretrain-epochs", "1"]


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--n", "40", "--seed", "5", "--out", str(out)] + SMALL) == EXIT_OK
    return out


def test_synth_default_fraction(tmp_path, capsys):
    out = tmp_path / "d"
    assert main(["synth", "--n", "100", "--seed", "7", "--out", str(out)] + SMALL) == EXIT_OK
    rows = read_csv(out / "manifest.csv")
    assert len(rows) == 100
    assert sum(int(r["label"]) for r in rows) == 26
    assert len(list((out / "images").glob("*.png"))) == 100
    assert "26 positive" in capsys.readouterr().out
    assert json.loads((out / "runspec.json").read_text())["command"] == "synth"


def test_synth_is_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert main(["synth", "--n", "12", "--seed", "7", "--out", str(tmp_path / name)] + SMALL) == EXIT_OK
    assert (tmp_path / "a/manifest.csv").read_bytes() == (tmp_path / "b/manifest.csv").read_bytes()
    for png in (tmp_path / "a/images").iterdir():
        assert png.read_bytes() == (tmp_path / "b/images" / png.name).read_bytes()


def test_synth_rejects_empty(tmp_path):
    out = tmp_path / "none"
    assert main(["synth", "--n", "0", "--out", str(out)]) == EXIT_INVALID
    assert not out.exists()


def test_synth_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["synth", "--n", "4", "--out", str(blocker / "sub")] + SMALL) == EXIT_INVALID


def _preview(tmp_path, capsys, value, label, d):
    img = tmp_path / "in.png"
    write_png(img, np.full((8, 6), value))
    code = main(["gsim-preview", "--image", str(img), "--label", str(label), "--d", str(d),
                 "--out", str(tmp_path / "prev.png")])
    text = capsys.readouterr().out
    stats = {}
    for line in text.splitlines():
        for tok in line.split():
            if "=" in tok:
                k, v = tok.split("=")
                stats[(line.split()[0].split("=")[0], k)] = float(v)
    return code, stats


def test_gsim_preview_mid_gray(tmp_path, capsys):
    code, stats = _preview(tmp_path, capsys, 0.5, 1, 0.5)
    assert code == EXIT_OK
    assert stats[("target", "max")] == pytest.approx(stats[("input", "max")] + 0.25, abs=1e-6)
    assert 0.75 <= stats[("target", "max")] < 0.76
    assert (tmp_path / "prev.png").exists()


def test_gsim_preview_identity_and_negative(tmp_path, capsys):
    code, stats = _preview(tmp_path, capsys, 0.3, 1, 0.0)
    assert code == EXIT_OK and stats[("max_abs_diff", "max_abs_diff")] == 0.0
    code, stats = _preview(tmp_path, capsys, 0.3, 0, 1.0)
    assert code == EXIT_OK
    assert stats[("target", "min")] == pytest.approx(stats[("input", "min")] - 0.5, abs=1e-6)


def test_gsim_preview_bad_label(tmp_path, capsys):
    code, _ = _preview(tmp_path, capsys, 0.5, 2, 0.5)
    assert code == EXIT_INVALID


def test_gsim_preview_missing_image(tmp_path):
    assert main(["gsim-preview", "--image", str(tmp_path / "nope.png"), "--label", "1",
                 "--out", str(tmp_path / "o.png")]) == EXIT_INVALID


def test_train_outputs(synth_dir, tmp_path):
    out = tmp_path / "tsbn"
    assert main(["train", "--data", str(synth_dir / "manifest.csv"), "--out", str(out)] + FAST) == EXIT_OK
    for name in ("history.csv", "metrics.json", "checkpoint.bin", "arch.json", "runspec.json"):
        assert (out / name).exists(), name
    metrics = json.loads((out / "metrics.json").read_text())
    for key in ("accuracy", "sensitivity", "specificity", "youden", "f1", "auc"):
        assert key in metrics
    assert metrics["n_train"] + metrics["n_test"] == 40
    assert "loss_ct" in read_csv(out / "history.csv")[0]
    runspec = json.loads((out / "runspec.json").read_text())
    assert runspec["config"]["epochs"] == 1 and runspec["args"]["method"] == "tsbn"


def test_train_plain_lacks_transfer_loss(synth_dir, tmp_path):
    out = tmp_path / "plain"
    assert main(["train", "--method", "plain", "--data", str(synth_dir / "manifest.csv"),
                 "--out", str(out)] + FAST) == EXIT_OK
    assert "loss_ct" not in read_csv(out / "history.csv")[0]


def test_train_repeat_is_identical(synth_dir, tmp_path):
    args = ["train", "--method", "multitask", "--data", str(synth_dir / "manifest.csv")] + FAST
    for name in ("a", "b"):
        assert main(args + ["--out", str(tmp_path / name)]) == EXIT_OK
    for name in ("history.csv", "metrics.json", "roc.csv", "checkpoint.bin"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_train_config_file_and_overrides(synth_dir, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"epochs": 3, "alpha": 0.5, "height": 32, "width": 16}))
    out = tmp_path / "o"
    assert main(["train", "--method", "plain", "--config", str(cfg), "--epochs", "1",
                 "--data", str(synth_dir / "manifest.csv"), "--out", str(out)]) == EXIT_OK
    spec = json.loads((out / "runspec.json").read_text())["config"]
    assert spec["epochs"] == 1 and spec["alpha"] == 0.5


def test_train_invalid_inputs(synth_dir, tmp_path):
    data = str(synth_dir / "manifest.csv")
    bad = tmp_path / "bad.json"
    bad.write_text('{"learning_rate": 1}')
    assert main(["train", "--data", data, "--out", str(tmp_path / "x"), "--config", str(bad)] + FAST) == EXIT_INVALID
    assert main(["train", "--data", data, "--out", str(tmp_path / "x"), "--w", "0"] + FAST) == EXIT_INVALID
    assert main(["train", "--data", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "x")] + FAST) == EXIT_INVALID
    assert main(["train", "--method", "simclr", "--data", data, "--out", str(tmp_path / "x")]) == EXIT_INVALID


def test_train_divergence_exit_code(synth_dir, tmp_path, capsys):
    code = main(["train", "--data", str(synth_dir / "manifest.csv"), "--out", str(tmp_path / "div"),
                 "--lr", "1e30", "--epochs", "3"] + SMALL)
    assert code == EXIT_DIVERGED
    assert "epoch=" in capsys.readouterr().err


def test_cv_outputs_and_shared_folds(synth_dir, tmp_path):
    data = str(synth_dir / "manifest.csv")
    for method in ("tsbn", "plain"):
        assert main(["cv", "--method", method, "--data", data, "--folds", "3",
                     "--out", str(tmp_path / method)] + FAST) == EXIT_OK
    root = tmp_path / "tsbn"
    agg = json.loads((root / "metrics.json").read_text())
    per_fold = [json.loads((root / f"fold_{k}" / "metrics.json").read_text()) for k in range(3)]
    assert len(per_fold) == 3 and not (root / "fold_3").exists()
    youden = [m["youden"] for m in per_fold]
    assert agg["mean"]["youden"] == pytest.approx(sum(youden) / 3, abs=1e-12)
    assert (root / "roc.csv").exists()
    assert (root / "folds.csv").read_bytes() == (tmp_path / "plain" / "folds.csv").read_bytes()
    folds = read_csv(root / "folds.csv")
    assert sorted({r["fold"] for r in folds}) == ["0", "1", "2"]


def test_cv_split_failure(tmp_path):
    out = tmp_path / "tiny"
    assert main(["synth", "--n", "6", "--seed", "1", "--out", str(out)] + SMALL) == EXIT_OK
    assert main(["cv", "--data", str(out / "manifest.csv"), "--folds", "5",
                 "--out", str(tmp_path / "cv")] + FAST) == EXIT_INVALID
