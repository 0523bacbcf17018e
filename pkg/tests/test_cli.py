import shutil
import subprocess
import sys

import pytest
from filelock import FileLock

from bodylatent.cli import main

TINY = """[run]
seed = 3
out_dir = {out}
[data]
count = 40
duration = 30
motion_sequences = 4
motion_test_sequences = 2
[model]
g_fit_samples = 60
g_dim = 12
g_resolution = coarse
f_resolution = coarse
[varishape]
hidden = 32
depth = 1
warm_epochs = 3
epochs = 1
[mogen]
hidden = 32
epochs = 2
[eval]
n_test = 4
n_baseline = 1
[baseline]
iters = 5
[apps]
sample_count = 3
"""


def _run(ini, *argv):
    return main(["--config", str(ini), *map(str, argv)])


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    out = root / "out"
    ini = root / "tiny.ini"
    ini.write_text(TINY.format(out=out))
    for cmd in ("gen-data", "train-varishape", "train-mogen"):
        assert _run(ini, cmd) == 0
    return ini, out


def _metrics(out, cmd):
    return dict(line.split("\t", 1) for line in (out / cmd / "metrics.tsv").read_text().splitlines())


def test_pipeline_outputs(run_dir):
    ini, out = run_dir
    assert (out / "models" / "varishape.bin").exists() and (out / "models" / "mogen.bin").exists()
    assert (out / "data" / "manifest.tsv").exists()
    for png in (out / "train-varishape").glob("*.png"):
        assert png.stat().st_size > 0


def test_apps_commands(run_dir, capsys):
    ini, out = run_dir
    mesh = out / "data" / "meshes" / "raw_00000.obj"
    seq = sorted((out / "data" / "motions").glob("test_*.seq"))[0]
    assert _run(ini, "retrieve", mesh) == 0
    assert (out / "retrieve" / "reconstruction.obj").exists()
    assert _run(ini, "interp", "--seq", seq) == 0
    assert _run(ini, "extrap", "--seq", seq, "--steps", 6) == 0
    assert _metrics(out, "extrap")["frames"] == "6"
    assert _run(ini, "interp4d", "--s", 1.5) == 0
    assert _run(ini, "sample") == 0
    assert _metrics(out, "sample")["bodies"] == "3"
    frames = out / "interp" / "frames"
    assert _run(ini, "transfer", "--motion", frames, "--target", mesh) == 0
    assert _run(ini, "transfer", "--motion", frames / "frame_manifest.tsv", "--target", mesh, "--mode", "lifted") == 0
    assert _metrics(out, "transfer")["mode"] == "lifted"
    assert "frames\t" in capsys.readouterr().out


def test_eval_metrics_reproducible(run_dir):
    ini, out = run_dir
    assert _run(ini, "eval") == 0
    first = (out / "eval" / "metrics.tsv").read_bytes()
    assert (out / "eval" / "timings.tsv").exists()
    assert (out / "eval" / "vertex_error_cdf.png").exists()
    assert _run(ini, "eval") == 0
    assert (out / "eval" / "metrics.tsv").read_bytes() == first
    assert b"seconds" not in first


def test_dist_self_zero(run_dir):
    ini, out = run_dir
    mesh = out / "data" / "meshes" / "reg_00001.obj"
    assert _run(ini, "dist", mesh, mesh) == 0
    m = _metrics(out, "dist")
    assert float(m["varifold"]) == pytest.approx(0.0, abs=1e-9 * float(m["sigma"]) ** -2)
    assert float(m["chamfer"]) == 0.0


def test_gen_data_reproducible(run_dir, tmp_path):
    ini, out = run_dir
    assert _run(ini, "--set", f"run.data_dir={tmp_path / 'again'}", "gen-data") == 0
    assert (tmp_path / "again" / "manifest.tsv").read_bytes() == (out / "data" / "manifest.tsv").read_bytes()
    a = (out / "data" / "meshes" / "raw_00007.obj").read_bytes()
    assert (tmp_path / "again" / "meshes" / "raw_00007.obj").read_bytes() == a
    assert _run(ini, "--seed", 4, "--set", f"run.data_dir={tmp_path / 'other'}", "gen-data") == 0
    assert (tmp_path / "other" / "manifest.tsv").read_bytes() != (out / "data" / "manifest.tsv").read_bytes()


def test_flags_after_command(run_dir, tmp_path):
    ini, out = run_dir
    assert main(["gen-data", "--config", str(ini), "--set", f"run.data_dir={tmp_path / 'd'}"]) == 0
    assert (tmp_path / "d" / "manifest.tsv").exists()


def test_config_errors_exit_2(run_dir, capsys, tmp_path):
    ini, _ = run_dir
    assert _run(ini, "--set", "data.count=-1", "--set", "mogen.window=1", "gen-data") == 2
    err = capsys.readouterr().err
    assert "data.count" in err and "mogen.window" in err
    bad = tmp_path / "bad.ini"
    bad.write_text("[data]\nnope = 1\n")
    assert main(["--config", str(bad), "gen-data"]) == 2


def test_runtime_errors_exit_1(run_dir, capsys, tmp_path):
    ini, _ = run_dir
    assert _run(ini, "retrieve", tmp_path / "missing.obj") == 1
    empty = tmp_path / "fresh"
    assert main(["--out", str(empty), "eval"]) == 1
    assert "error:" in capsys.readouterr().err


def test_lock_refuses_concurrent_run(run_dir, capsys):
    ini, out = run_dir
    with FileLock(str(out / ".lock")):
        assert _run(ini, "sample") == 1
    assert "in use" in capsys.readouterr().err
    assert _run(ini, "sample") == 0


@pytest.mark.skipif(shutil.which("bodylatent") is None, reason="console script not installed")
def test_console_script_help():
    r = subprocess.run(["bodylatent", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "gen-data" in r.stdout
    r = subprocess.run([sys.executable, "-m", "bodylatent.cli", "dist"], capture_output=True, text=True)
    assert r.returncode == 2
