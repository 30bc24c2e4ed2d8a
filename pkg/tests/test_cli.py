import json
import subprocess
import sys

import pytest

from helpers import GOLDEN_IMAGE_BYTES
from vlp import cli
from vlp.harness import experiment
from vlp.mesh.pipeline import run_pipeline as real_run_pipeline


@pytest.fixture
def spec_file(tmp_path):
    path = tmp_path / "spec.json"
    path.write_text(json.dumps({"experiment": "C", "max_frames": 3}))
    return path


def test_run_writes_reports(spec_file, tmp_path, capsys):
    out = tmp_path / "out"
    assert cli.main(["run", str(spec_file), "--out", str(out), "--seed", "4"]) == cli.EXIT_OK
    text = capsys.readouterr().out
    assert "experiment C" in text and "seed=4" in text
    assert (out / "samples.csv").exists() and (out / "latency.csv").exists()
    assert json.loads((out / "spec.json").read_text())["seed"] == 4


def test_run_flags_override_spec(spec_file, tmp_path, capsys):
    out = tmp_path / "out"
    code = cli.main(["run", str(spec_file), "--out", str(out), "--topology", "split", "--preset", "native"])
    assert code == cli.EXIT_OK
    assert "preset=native topology=split" in capsys.readouterr().out


def test_run_degraded_exit(spec_file, tmp_path, monkeypatch):
    def flaky(*args, **kw):
        res = real_run_pipeline(*args, **kw)
        res.errors.append("camera process exited with code 1")
        return res

    monkeypatch.setattr(experiment, "run_pipeline", flaky)
    assert cli.main(["run", str(spec_file), "--out", str(tmp_path / "o")]) == cli.EXIT_DEGRADED


def test_run_without_fixes_fails(tmp_path):
    path = tmp_path / "spec.json"
    path.write_text(json.dumps({"name": "far", "mode": "static", "points": [[-200.0, 200.0]], "repetitions": 2}))
    assert cli.main(["run", str(path), "--out", str(tmp_path / "o")]) == cli.EXIT_FAIL


def test_run_bad_spec_fails(tmp_path, capsys):
    path = tmp_path / "spec.json"
    path.write_text(json.dumps({"name": "x", "mode": "orbit"}))
    assert cli.main(["run", str(path)]) == cli.EXIT_FAIL
    assert "vlp: error" in capsys.readouterr().err
    assert cli.main(["run", str(tmp_path / "missing.json")]) == cli.EXIT_FAIL


def test_stats_summarises_samples(spec_file, tmp_path, capsys):
    out = tmp_path / "out"
    cli.main(["run", str(spec_file), "--out", str(out)])
    capsys.readouterr()
    assert cli.main(["stats", str(out / "samples.csv"), "--axis", "x"]) == cli.EXIT_OK
    text = capsys.readouterr().out
    assert "samples            3" in text and "fitted line" in text


def test_stats_empty_file_fails(tmp_path):
    path = tmp_path / "samples.csv"
    path.write_text("frame_seq,t_s,truth_x,truth_y,est_x,est_y,est_z,theta_deg,error_cm,path_error_cm,pair\n")
    assert cli.main(["stats", str(path)]) == cli.EXIT_FAIL


def test_protodump_golden_frame(tmp_path, capsys):
    path = tmp_path / "frame.bin"
    path.write_bytes(GOLDEN_IMAGE_BYTES)
    assert cli.main(["protodump", str(path)]) == cli.EXIT_OK
    text = capsys.readouterr().out
    assert "name       camera/image" in text
    assert "image      2x2 enc=0 min=0 max=48" in text


def test_protodump_malformed(tmp_path):
    path = tmp_path / "frame.bin"
    path.write_bytes(GOLDEN_IMAGE_BYTES[:-2])
    assert cli.main(["protodump", str(path)]) == cli.EXIT_FAIL


def test_module_entry_point(tmp_path):
    path = tmp_path / "frame.bin"
    path.write_bytes(GOLDEN_IMAGE_BYTES)
    proc = subprocess.run([sys.executable, "-m", "vlp.cli", "protodump", str(path)], capture_output=True, text=True)
    assert proc.returncode == 0 and "ImageBody" in proc.stdout
