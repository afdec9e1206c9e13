import json
import os
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from scenegan.cli import main
from scenegan.neural_renderer import blocks_for

from helpers import tiny_run_config


@pytest.fixture(scope="module")
def trained(tiny_dataset, tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = tiny_run_config(str(tiny_dataset))
    path = root / "tiny.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert main(["train", "--config", str(path), "--run-dir", str(root / "run"), "--iterations", "10"]) == 0
    return root


def test_train_writes_run_directory(trained):
    run = trained / "run"
    rows = (run / "metrics.csv").read_text().strip().splitlines()
    assert rows[0].startswith("iteration,d_loss") and len(rows) == 11
    assert (run / "checkpoint.nsf").exists() and (run / "config.json").exists()


def test_train_resume_continues(trained, tmp_path):
    run = tmp_path / "run"
    import shutil
    shutil.copytree(trained / "run", run)
    assert main(["train", "--config", str(trained / "tiny.json"), "--run-dir", str(run),
                 "--iterations", "2", "--resume"]) == 0
    rows = (run / "metrics.csv").read_text().strip().splitlines()
    assert rows[-1].startswith("12,")


def test_train_input_errors_exit_2(tmp_path, tiny_dataset, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{oops")
    assert main(["train", "--config", str(bad)]) == 2
    cfg = tiny_run_config(str(tiny_dataset)).to_dict()
    cfg["train"]["lr_g"] = -1.0
    bad.write_text(json.dumps(cfg))
    assert main(["train", "--config", str(bad)]) == 2
    cfg = tiny_run_config(str(tmp_path / "nowhere")).to_dict()
    bad.write_text(json.dumps(cfg))
    assert main(["train", "--config", str(bad)]) == 2
    assert "dataset not found" in capsys.readouterr().err
    assert main(["train", "--config", str(tmp_path / "missing.json")]) == 2


def test_render_rotation_macro_and_alpha_export(trained, tmp_path):
    script = tmp_path / "spin.json"
    script.write_text(json.dumps([{"macro": "rotate_360", "index": 0, "frames": 4}]))
    out = tmp_path / "frames"
    assert main(["render", "--checkpoint", str(trained / "run" / "checkpoint.nsf"), "--script", str(script),
                 "--output", str(out), "--alpha", "--seed", "3"]) == 0
    frames = sorted(out.glob("frame_*.png"))
    assert len(frames) == 5
    a, b = (np.asarray(Image.open(f), dtype=np.float64) for f in (frames[0], frames[-1]))
    assert np.abs(a - b).mean() == 0
    assert len(list(out.glob("alpha_0000_obj*.png"))) == 2
    grid = np.asarray(Image.open(out / "disentanglement.png"))
    assert grid.shape == (4 * 16, 5 * 16, 3)
    states = json.loads((out / "states.json").read_text())
    assert len(states) == 5


def test_render_is_reproducible(trained, tmp_path):
    ck = str(trained / "run" / "checkpoint.nsf")
    script = tmp_path / "s.json"
    script.write_text(json.dumps({"seed": 4, "steps": [{"op": "set_camera", "azimuth": 1.0, "frames": 2}]}))
    for d in ("a", "b"):
        assert main(["render", "--checkpoint", ck, "--script", str(script), "--output", str(tmp_path / d)]) == 0
    for f in ("frame_0000.png", "frame_0001.png"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_render_invalid_edit_exit_2(trained, tmp_path, capsys):
    script = tmp_path / "bad.json"
    script.write_text(json.dumps([{"op": "rotate_object", "index": 0, "yaw": 0.1},
                                  {"op": "rotate_object", "index": 8, "yaw": 0.1}]))
    code = main(["render", "--checkpoint", str(trained / "run" / "checkpoint.nsf"), "--script", str(script),
                 "--output", str(tmp_path / "o")])
    err = capsys.readouterr().err
    assert code == 2 and "step 1" in err and "'index': 8" in err
    assert main(["render", "--checkpoint", str(tmp_path / "none.nsf"), "--output", str(tmp_path / "o")]) == 2


def test_resolution_arithmetic():
    assert blocks_for(16, 256) == 4


def test_generate_data_and_check(tmp_path, capsys):
    assert main(["generate-data", "--preset", "clevr-2", "--n", "3", "--resolution", "16",
                 "--root", str(tmp_path)]) == 0
    manifest = json.loads((tmp_path / "clevr-2" / "manifest.json").read_text())
    assert len(manifest["files"]) == 3
    assert main(["generate-data", "--preset", "nope", "--root", str(tmp_path)]) == 2
    assert main(["check"]) == 0
    assert capsys.readouterr().out.count("PASS") >= 6


def test_thread_env_var_reaches_blas():
    env = {**os.environ, "SCENEGAN_THREADS": "1"}
    env.pop("OMP_NUM_THREADS", None)
    code = "import scenegan.cli, os; print(os.environ['OMP_NUM_THREADS'])"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "1"
    help_out = subprocess.run([sys.executable, "-m", "scenegan", "--help"], capture_output=True, text=True)
    assert help_out.returncode == 0 and "generate-data" in help_out.stdout
