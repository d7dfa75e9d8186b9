import json
import subprocess
import sys

import numpy as np
import pytest

from qgattack import cli, data, grad_core

SMALL = {
    "seed": 3,
    "model": {"hidden": [16]},
    "data": {"n_train": 300, "n_eval": 60},
    "train": {"epochs": 3},
    "attack": {"kind": "pgd", "epsilon": 0.2, "alpha": 0.02, "steps": 5},
    "eval": {"num_runs": 2},
}


def write_config(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cfg = write_config(tmp, SMALL)
    out = tmp / "train"
    assert cli.main(["train", "--config", cfg, "--out", str(out)]) == 0
    return tmp, out / "model.ckpt"


def with_section(section, **values):
    return {**SMALL, section: {**SMALL.get(section, {}), **values}}


def test_train_outputs(trained):
    _, ckpt = trained
    out = ckpt.parent
    assert sorted(p.name for p in out.iterdir()) == ["manifest.json", "model.ckpt", "train_log.csv"]
    model = grad_core.load_model(ckpt)
    assert model.input_dim == 64 and model.num_classes == 10
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "train" and manifest["seeds"]["master"] == 3
    assert manifest["config"]["train"]["epochs"] == 3
    assert len((out / "train_log.csv").read_text().splitlines()) == 4


def test_eval_at_zero_radius_is_clean(trained, tmp_path):
    base, ckpt = trained
    cfg = write_config(tmp_path, with_section("attack", epsilon=0.0))
    out = tmp_path / "eval"
    assert cli.main(["eval", "--config", cfg, "--checkpoint", str(ckpt), "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["worst"] == rep["avg"] == rep["merged_accuracy"] == rep["clean_accuracy"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert len(manifest["checkpoint_sha256"]) == 64


def test_attack_is_byte_reproducible(trained, tmp_path):
    _, ckpt = trained
    cfg = write_config(tmp_path, with_section("attack", kind="pqgd", b=100))
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert cli.main(["attack", "--config", cfg, "--checkpoint", str(ckpt), "--out", str(out)]) == 0
    for name in ["report.json", "report.csv", "manifest.json", "adversarial/adversarial.npy"]:
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    adv = np.load(outs[0] / "adversarial" / "adversarial.npy")
    orig = np.load(outs[0] / "adversarial" / "original.npy")
    assert np.max(np.abs(adv - orig)) <= 0.2 + 1e-12


def test_seed_override_changes_run(trained, tmp_path):
    _, ckpt = trained
    cfg = write_config(tmp_path, SMALL)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["eval", "--config", cfg, "--checkpoint", str(ckpt), "--out", str(a)]) == 0
    assert cli.main(["eval", "--config", cfg, "--checkpoint", str(ckpt), "--out", str(b), "--seed", "11"]) == 0
    ma = json.loads((a / "manifest.json").read_text())
    mb = json.loads((b / "manifest.json").read_text())
    assert ma["seeds"]["master"] == 3 and mb["seeds"]["master"] == 11
    assert ma["seeds"]["attack"] != mb["seeds"]["attack"]


def test_histogram_and_sweep(trained, tmp_path):
    _, ckpt = trained
    cfg = write_config(tmp_path, {**SMALL, "sweep": {"attacks": ["pgd", "pqgd:50"], "parameter": "steps",
                                                     "values": [1, 3], "num_runs": 1}})
    h, s = tmp_path / "h", tmp_path / "s"
    assert cli.main(["histogram", "--config", cfg, "--checkpoint", str(ckpt), "--out", str(h)]) == 0
    lines = (h / "histogram.csv").read_text().splitlines()
    assert lines[0] == "value,count" and len(lines) == 1 + 2 * 10 + 1
    assert cli.main(["sweep", "--config", cfg, "--checkpoint", str(ckpt), "--out", str(s)]) == 0
    assert len((s / "sweep.csv").read_text().splitlines()) == 5
    assert len(json.loads((s / "sweep.json").read_text())) == 4


@pytest.mark.parametrize(
    "cfg",
    [
        "{not json",
        json.dumps({"attack": {"kind": "pgd", "epsilon": 0.3, "alpha": 0.01, "stpes": 3}}),
        json.dumps({"attack": {"kind": "pgd", "epsilon": 0.1, "alpha": 0.5}}),
        json.dumps({"attack": {"kind": "pqgd"}}),
        json.dumps({"bogus": 1}),
        json.dumps({"model": {"hidden": [0]}}),
    ],
)
def test_bad_config_exits_3_and_writes_nothing(trained, tmp_path, cfg):
    _, ckpt = trained
    path = tmp_path / "bad.json"
    path.write_text(cfg)
    out = tmp_path / "out"
    assert cli.main(["eval", "--config", str(path), "--checkpoint", str(ckpt), "--out", str(out)]) == 3
    assert not out.exists()


def test_missing_files_exit_4(trained, tmp_path):
    _, ckpt = trained
    out = tmp_path / "out"
    assert cli.main(["train", "--config", str(tmp_path / "nope.json"), "--out", str(out)]) == 4
    cfg = write_config(tmp_path, SMALL)
    assert cli.main(["eval", "--config", cfg, "--checkpoint", str(tmp_path / "none.ckpt"), "--out", str(out)]) == 4
    idx = write_config(tmp_path, {"data": {"source": "idx", "eval_images": "missing-img", "eval_labels": "missing-lab"}}, "idx.json")
    assert cli.main(["eval", "--config", idx, "--checkpoint", str(ckpt), "--out", str(out)]) == 4
    assert not out.exists()


def test_bad_checkpoint_exits_5(trained, tmp_path):
    cfg = write_config(tmp_path, SMALL)
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"garbage")
    out = tmp_path / "out"
    assert cli.main(["eval", "--config", cfg, "--checkpoint", str(bad), "--out", str(out)]) == 5
    wrong = tmp_path / "wrong.ckpt"
    grad_core.save_model(grad_core.init_model(grad_core.ModelSpec(10, (4,), 10), 0), wrong)
    assert cli.main(["eval", "--config", cfg, "--checkpoint", str(wrong), "--out", str(out)]) == 5
    assert not out.exists()


def test_bad_idx_exits_6(trained, tmp_path):
    _, ckpt = trained
    (tmp_path / "img").write_bytes(b"\x00\x00\x08\x01\x00\x00\x00\x01\x05")
    data.write_idx(tmp_path / "lab", np.array([1], dtype=np.uint8))
    cfg = write_config(tmp_path, {**SMALL, "data": {"source": "idx", "eval_images": str(tmp_path / "img"),
                                                    "eval_labels": str(tmp_path / "lab")}})
    out = tmp_path / "out"
    assert cli.main(["eval", "--config", cfg, "--checkpoint", str(ckpt), "--out", str(out)]) == 6
    assert not out.exists()


def test_idx_data_end_to_end(trained, tmp_path, monkeypatch):
    _, ckpt = trained
    ds = data.synth_dataset(20, seed=9)
    data.save_idx(ds, tmp_path / "img.gz", tmp_path / "lab.gz")
    monkeypatch.setenv(data.DATA_DIR_ENV, str(tmp_path))
    cfg = write_config(tmp_path, {**SMALL, "data": {"source": "idx", "eval_images": "img.gz", "eval_labels": "lab.gz"}})
    out = tmp_path / "out"
    assert cli.main(["eval", "--config", cfg, "--checkpoint", str(ckpt), "--out", str(out)]) == 0
    assert json.loads((out / "report.json").read_text())["num_examples"] == 20


def test_usage_errors():
    assert cli.main([]) == 2
    assert cli.main(["eval", "--config", "x.json"]) == 2
    assert cli.main(["frobnicate"]) == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "qgattack", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "train" in proc.stdout and "sweep" in proc.stdout
