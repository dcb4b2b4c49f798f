import subprocess
import sys

import numpy as np
import pytest

from cfftgan.cli import main
from cfftgan.data import load_image
from cfftgan.trainkit import TrainConfig

QUICK = TrainConfig(C=8, spade_hidden=8, levels=2, batch_size=2, steps=2, dataset_size=8, log_interval=0)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    QUICK.save(root / "cfg.txt")
    assert main(["gen-data", "--seed", "3", "--count", "4", "--out", str(root / "data")]) == 0
    assert main(["train", "--config", str(root / "cfg.txt"), "--out", str(root / "run")]) == 0
    return root


def test_gen_data_layout(workspace):
    names = sorted(p.name for p in (workspace / "data").iterdir())
    assert names[:2] == ["00000_a.ppm", "00000_b.ppm"] and "manifest.txt" in names
    assert len(names) == 9
    assert load_image(workspace / "data" / "00002_b.ppm").shape == (3, 32, 32)


def test_gen_data_is_deterministic(workspace, tmp_path):
    assert main(["gen-data", "--seed", "3", "--count", "4", "--out", str(tmp_path)]) == 0
    for p in (workspace / "data").iterdir():
        assert (tmp_path / p.name).read_bytes() == p.read_bytes()


def test_train_outputs(workspace):
    run = workspace / "run"
    assert (run / "final.ckpt").exists()
    assert len((run / "losses.log").read_text().splitlines()) == 2


def test_resume_extends_training(workspace, tmp_path):
    rc = main(["train", "--config", str(workspace / "cfg.txt"), "--out", str(tmp_path),
               "--steps", "3", "--resume", str(workspace / "run" / "final.ckpt")])
    assert rc == 0
    assert (tmp_path / "losses.log").read_text().startswith("step=3 ")


def test_translate_is_deterministic(workspace, tmp_path):
    d = workspace / "data"
    args = ["translate", "--ckpt", str(workspace / "run" / "final.ckpt"),
            "--content", str(d / "00000_a.ppm"), "--exemplar", str(d / "00001_b.ppm")]
    assert main(args + ["--out", str(tmp_path / "x.ppm")]) == 0
    assert main(args + ["--out", str(tmp_path / "y.ppm")]) == 0
    assert (tmp_path / "x.ppm").read_bytes() == (tmp_path / "y.ppm").read_bytes()
    assert load_image(tmp_path / "x.ppm").shape == (3, 32, 32)


def test_eval_prints_documented_keys(workspace, capsys):
    assert main(["eval", "--ckpt", str(workspace / "run" / "final.ckpt"), "--data", str(workspace / "data")]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert [ln.split("=")[0] for ln in lines] == ["swd", "semantic_consistency", "style_similarity"]
    assert all(np.isfinite(float(ln.split("=")[1])) for ln in lines)


def test_gradcheck_subset_passes(capsys):
    assert main(["gradcheck", "--dtype", "float32", "--only", "add", "linear"]) == 0
    assert "2/2 gradient checks passed" in capsys.readouterr().out


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["bogus"],
        ["gen-data", "--seed", "1"],
        ["gen-data", "--seed", "1", "--count", "0", "--out", "x"],
        ["gen-data", "--seed", "1", "--count", "2", "--size", "30", "--out", "x"],
        ["gradcheck", "--dtype", "float16"],
        ["gradcheck", "--only", "no_such_case"],
    ],
)
def test_usage_errors_exit_2(argv, capsys):
    assert main(argv) == 2
    assert capsys.readouterr().err


def test_runtime_errors_exit_1(workspace, tmp_path, capsys):
    (tmp_path / "bad.txt").write_text("nonsense=1\n")
    assert main(["train", "--config", str(tmp_path / "bad.txt")]) == 1
    assert main(["translate", "--ckpt", str(tmp_path / "missing.ckpt"), "--content", "a", "--exemplar", "b",
                 "--out", "c"]) == 1
    (tmp_path / "junk.ckpt").write_bytes(b"junk")
    assert main(["eval", "--ckpt", str(tmp_path / "junk.ckpt"), "--data", str(workspace / "data")]) == 1
    err = capsys.readouterr().err
    assert "unknown key" in err and "magic" in err


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "cfftgan", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "gen-data" in res.stdout
