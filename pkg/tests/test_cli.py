import json
import shutil

import numpy as np
import pytest

from ir2vis import cli
from ir2vis.autograd.ivt import read_ivt, write_ivt
from ir2vis.imagery import load_manifest, read_image
from ir2vis.plotting import GUTTER

TINY_SPEC = '{"depth": 1, "base_channels": 2}'


def run(capsys, *argv):
    code = cli.main(["--quiet", *argv])
    out, err = capsys.readouterr()
    doc = json.loads(out.strip().splitlines()[-1]) if code == 0 else json.loads(err.strip().splitlines()[-1])
    return code, doc


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    code = cli.main(["--quiet", "synth", "--n", "40", "--size", "32", "--seed", "3", "--format", "ivt",
                     "--night", "0.1", "--dark-patches", "0.2", "--patch", "1",
                     "--split", "2019-11-10,2019-11-15", "--gap", "1", "--out", str(root)])
    assert code == 0
    return root


@pytest.fixture(scope="module")
def trained(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("ckpt")
    code = cli.main(["--quiet", "train", "--manifest", str(corpus / "manifest.json"), "--recipe", "unet",
                     "--spec", TINY_SPEC, "--epochs", "2", "--batch-size", "8", "--dtype", "float64",
                     "--ckpt-every", "1", "--out", str(out)])
    assert code == 0
    return out


def test_synth_writes_split_manifest(corpus):
    m = load_manifest(corpus / "manifest.json")
    assert len(m) <= 40
    assert {r.split for r in m.records} <= {"train", "val", "test"}
    assert m.by_split("train") and m.by_split("test")


def test_banner_on_stderr_unless_quiet(capsys, tmp_path):
    assert cli.main(["synth", "--n", "1", "--size", "16", "--out", str(tmp_path)]) == 0
    err = capsys.readouterr().err
    line = next(l for l in err.splitlines() if l.startswith("reference defaults: "))
    doc = json.loads(line[len("reference defaults: "):])
    assert doc["cgan"]["lr"] == 2e-4 and doc["unetpp"]["epochs"] == [60, 30, 30, 20, 20]
    assert doc["knn_k"] == 3
    cli.main(["--quiet", "synth", "--n", "1", "--size", "16", "--out", str(tmp_path)])
    assert "reference defaults" not in capsys.readouterr().err


@pytest.mark.parametrize("strategy", ["a", "b", "c"])
def test_preprocess_conserves_pairs(capsys, corpus, tmp_path, strategy):
    code, doc = run(capsys, "preprocess", "--manifest", str(corpus / "manifest.json"), "--filter", strategy,
                    "--out", str(tmp_path / "f.json"))
    assert code == 0
    assert doc["kept"] + doc["dropped"] == doc["input"]
    kept = load_manifest(tmp_path / "f.json")
    assert len(kept) == doc["kept"] + doc["passthrough_deploy"]
    if strategy == "c":
        assert doc["masked"] > 0
        masked = [r for r in kept.records if "_masked" in r.visible_path]
        assert read_image(kept.resolve(masked[0].visible_path))[1].invalid_count == 1
    else:
        assert doc["masked"] == 0


def test_train_outputs(trained):
    for name in ("model.json", "trainlog.ndjson", "train_curve.png", "config.json"):
        assert (trained / name).exists()
    assert (trained / "epoch_0001" / "model.json").exists() and (trained / "epoch_0002").is_dir()
    meta = json.loads((trained / "config.json").read_text())
    assert meta["recipe"] == "unet" and meta["filter"] == "b"


def test_flag_beats_config_beats_default(capsys, corpus, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"lr": 0.005, "epochs": 1, "batch_size": 16}')
    code, _ = run(capsys, "train", "--manifest", str(corpus / "manifest.json"), "--recipe", "unet",
                  "--spec", TINY_SPEC, "--config", str(cfg), "--lr", "0.002", "--out", str(tmp_path / "o"))
    assert code == 0
    saved = json.loads((tmp_path / "o" / "config.json").read_text())["config"]
    assert saved["lr"] == 0.002 and saved["batch_size"] == 16 and saved["patience"] == 10


def test_predict_is_idempotent_in_float64(capsys, corpus, trained, tmp_path):
    for d in ("p1", "p2"):
        code, doc = run(capsys, "predict", "--manifest", str(corpus / "manifest.json"), "--ckpt", str(trained),
                        "--split", "test", "--out", str(tmp_path / d))
        assert code == 0
    files = sorted(p.name for p in (tmp_path / "p1").iterdir())
    assert files and len(files) == 2 * doc["predicted"]
    for name in files:
        assert (tmp_path / "p1" / name).read_bytes() == (tmp_path / "p2" / name).read_bytes()


def test_predict_without_ground_truth(capsys, tmp_path, trained):
    src = tmp_path / "c"
    assert cli.main(["--quiet", "synth", "--n", "3", "--size", "16", "--format", "ivt", "--out", str(src)]) == 0
    doc = json.loads((src / "manifest.json").read_text())
    for rec in doc:
        rec.pop("vis")
        rec["split"] = "deploy"
    (src / "manifest.json").write_text(json.dumps(doc))
    capsys.readouterr()
    code, out = run(capsys, "predict", "--manifest", str(src / "manifest.json"), "--ckpt", str(trained),
                    "--out", str(tmp_path / "pred"))
    assert code == 0 and out["predicted"] == 3
    assert read_image(tmp_path / "pred" / "synth-00000.ivt")[0].shape == (1, 3, 16, 16)


def test_evaluate_perfect_predictions(capsys, corpus, tmp_path):
    m = load_manifest(corpus / "manifest.json")
    pred = tmp_path / "copy"
    pred.mkdir()
    for r in m.by_split("test"):
        shutil.copy(m.resolve(r.visible_path), pred / f"{r.id}.ivt")
    code, doc = run(capsys, "evaluate", "--manifest", str(corpus / "manifest.json"), "--pred", str(pred),
                    "--label", "copy", "--filter", "a", "--report", str(tmp_path / "r.json"))
    assert code == 0
    res = doc["methods"]["copy"]
    assert res["ssim"] == pytest.approx(1.0, abs=1e-9) and res["rmse"] == 0.0
    for ext in (".json", ".csv", ".png"):
        assert (tmp_path / f"r{ext}").exists()


def test_evaluate_checkpoint_and_merge_with_baseline(capsys, corpus, trained, tmp_path):
    man = str(corpus / "manifest.json")
    report = str(tmp_path / "t1.json")
    code, _ = run(capsys, "baseline", "--train", man, "--test", man, "--report", report)
    assert code == 0
    code, doc = run(capsys, "evaluate", "--manifest", man, "--ckpt", str(trained), "--filter", "b",
                    "--report", report, "--merge")
    assert code == 0
    assert list(doc["methods"]) == ["Baseline: kNN", "Method 2: U-Net"]
    lines = (tmp_path / "t1.csv").read_text().splitlines()
    assert lines[0] == "Method,SSIM,RSME" and len(lines) == 3


def test_montage_width_and_order(capsys, tmp_path):
    src = tmp_path / "c"
    assert cli.main(["--quiet", "synth", "--n", "2", "--size", "127", "--format", "ivt", "--out", str(src)]) == 0
    m = load_manifest(src / "manifest.json")
    pred = tmp_path / "pred"
    pred.mkdir()
    for r in m.records:
        shutil.copy(m.resolve(r.visible_path), pred / f"{r.id}.ivt")
    capsys.readouterr()
    code, doc = run(capsys, "montage", "--manifest", str(src / "manifest.json"), "--pred", f"unet={pred}",
                    "--out", str(tmp_path / "fig"))
    assert code == 0
    assert doc["panels"] == ["IR input", "Ground truth", "Method 2: U-Net"]
    from PIL import Image

    with Image.open(tmp_path / "fig" / "montage.png") as im:
        assert im.size == (3 * 127 + 2 * GUTTER, 2 * 127 + GUTTER)
    code, doc = run(capsys, "montage", "--manifest", str(src / "manifest.json"), "--pred", f"unetpp={pred}",
                    "--pred", f"knn={pred}", "--pred", f"cgan={pred}", "--ids", "synth-00001",
                    "--out", str(tmp_path / "fig2"))
    assert doc["panels"][2:] == ["Baseline: kNN", "Method 1: cGAN", "Method 3: U-Net++"]


# -- error handling --------------------------------------------------------------------------

def test_usage_error_is_json_exit_2(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["--quiet", "train", "--bogus"])
    assert exc.value.code == 2
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["exit_code"] == 2


def test_missing_manifest_exit_3(capsys, tmp_path):
    code, doc = run(capsys, "preprocess", "--manifest", str(tmp_path / "nope.json"), "--filter", "a",
                    "--out", str(tmp_path / "x.json"))
    assert code == 3 and doc["exit_code"] == 3 and "nope.json" in doc["message"]


def test_incompatible_checkpoint_exit_4(capsys, corpus, trained, tmp_path):
    code, doc = run(capsys, "predict", "--manifest", str(corpus / "manifest.json"), "--ckpt", str(trained),
                    "--spec", '{"base_channels": 4}', "--out", str(tmp_path / "p"))
    assert code == 4 and doc["error"] == "checkpoint"


def test_invalid_config_exit_5(capsys, corpus, tmp_path):
    code, doc = run(capsys, "train", "--manifest", str(corpus / "manifest.json"), "--recipe", "unet",
                    "--lr", "-1", "--out", str(tmp_path / "o"))
    assert code == 5


def test_degenerate_mask_exit_6(capsys, tmp_path):
    src = tmp_path / "c"
    assert cli.main(["--quiet", "synth", "--n", "1", "--size", "16", "--format", "ivt", "--out", str(src)]) == 0
    vis = src / "vis" / "synth-00000.ivt"
    write_ivt(vis, np.full_like(read_ivt(vis), np.nan))
    capsys.readouterr()
    code, doc = run(capsys, "evaluate", "--manifest", str(src / "manifest.json"), "--pred", str(src / "ir"),
                    "--label", "x", "--report", str(tmp_path / "r.json"))
    assert code == 6 and doc["error"] == "DegenerateMaskError"
