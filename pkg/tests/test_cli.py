import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from punit import cli
from punit.dtm import read_sgrid
from punit.lattice import read_stl_count
from punit.spline import PeriodicBSpline, load as load_spline, to_dict
from punit.voxelgrid import read_vgrid

BARS = [
    {"primitive": {"kind": "bar", "axis": a, "width": 0.3}, "op": "union"} for a in "xyz"
]


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture
def csg(tmp_path):
    path = tmp_path / "bars.json"
    path.write_text(json.dumps(BARS))
    return path


def test_help_for_every_subcommand():
    for sub in ["voxel", "dtm", "fit", "connect", "homogenize", "topopt", "splice", "mesh", "pipeline"]:
        with pytest.raises(SystemExit) as exc:
            run(sub, "--help")
        assert exc.value.code == 0


def test_flags_validated_before_inputs(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        run("fit", "-i", tmp_path / "missing.sgrid", "--n", "1,2", "-o", tmp_path / "u.json")
    assert exc.value.code == 2
    assert not (tmp_path / "u.json").exists()


def test_stage_chain(tmp_path, csg, capsys):
    vg, field, unit = tmp_path / "s.vgrid", tmp_path / "f.sgrid", tmp_path / "u.json"
    assert run("voxel", "--csg", csg, "--dims", "16,16,16", "-o", vg) == 0
    assert read_vgrid(vg.read_bytes()).dims == (16, 16, 16)
    assert run("dtm", "-i", vg, "-m", 5, "-o", field) == 0
    assert read_sgrid(field.read_bytes()).dims == (16, 16, 16)
    assert run("fit", "-i", field, "--n", "7,7,7", "--r", "3,3,3", "-o", unit, "--report", tmp_path / "rep.json") == 0
    s = load_spline(unit)
    assert s.sym_degree == (3, 3, 3)
    assert json.loads((tmp_path / "rep.json").read_text())["converged"]
    capsys.readouterr()
    assert run("spline", "check", "-i", unit) == 0
    report = json.loads(capsys.readouterr().out)
    assert max(report["max_mirror_deviation"]) <= 1e-10
    trace = tmp_path / "t.csv"
    assert run("connect", "-i", unit, "--density", 0.3, "--grid", 16, "-o", tmp_path / "uc.json", "--trace", trace) == 0
    assert trace.read_text().splitlines()[0] == "iter,L,density"
    stl = tmp_path / "unit.stl"
    assert run("mesh", "-i", tmp_path / "uc.json", "--res", 16, "-o", stl) == 0
    blob = stl.read_bytes()
    assert read_stl_count(blob) > 0
    obj = tmp_path / "lat.obj"
    assert run("splice", "-i", unit, "--cells", "2,1,1", "--density", 0.4, "--res", 16, "--size", "20,10,10", "-o", obj) == 0
    assert obj.read_text().startswith("v ")


def test_exit_codes(tmp_path, capsys):
    assert run("dtm", "-i", tmp_path / "nope.vgrid", "-o", tmp_path / "f.sgrid") == 4
    assert "stage 'dtm'" in capsys.readouterr().err
    bad = tmp_path / "bad.vgrid"
    bad.write_bytes(b"VGRID\x00\x00\x01" + b"\x02\x00\x00\x00" * 3)
    assert run("dtm", "-i", bad, "-o", tmp_path / "f.sgrid") == 4
    doc = to_dict(PeriodicBSpline.uniform((4, 4, 4), r=(1, 1, 1)))
    doc["coeffs"][0] = 1.0
    broken = tmp_path / "broken.json"
    broken.write_text(json.dumps(doc))
    assert run("spline", "check", "-i", broken) == 2
    empty = tmp_path / "empty.json"
    empty.write_text("[]")
    grid = tmp_path / "g.vgrid"
    assert run("voxel", "--csg", empty, "--dims", "4,4,4", "-o", grid) == 0
    assert run("dtm", "-i", grid, "-o", tmp_path / "f.sgrid") == 3


def test_atomic_write_leaves_no_temp(tmp_path):
    target = tmp_path / "a" / "out.json"
    cli.write_atomic(target, "{}\n")
    cli.write_atomic(target, "{\"x\": 1}\n")
    assert json.loads(target.read_text()) == {"x": 1}
    assert [p.name for p in target.parent.iterdir()] == ["out.json"]


def pipeline_config(tmp_path, csg, **over):
    stages = [
        {"stage": "voxel", "csg": str(csg), "dims": [16, 16, 16], "output": "s.vgrid"},
        {"stage": "dtm", "input": "s.vgrid", "m": 5, "output": "f.sgrid"},
        {"stage": "fit", "input": "f.sgrid", "n": [7, 7, 7], "r": [3, 3, 3], "output": "unit_raw.json"},
        {"stage": "connect", "input": "unit_raw.json", "density": 0.3, "grid": 16, "output": "unit.json"},
        {"stage": "homogenize", "input": "unit.json", "rho": "0.2:0.6:3", "res": 8, "output": "curves.json"},
        {"stage": "topopt", "elements": [12, 4, 4], "spline_shape": [6, 3, 3], "max_iters": 5, "curves": "curves.json", "output": "rho.json"},
        {"stage": "splice", "input": "unit.json", "cells": [6, 2, 2], "density_field": "rho.json", "res": 24, "size": [60, 20, 20], "output": "beam.stl"},
    ]
    doc = {"stages": stages, "summary": "summary.json"}
    doc.update(over)
    path = tmp_path / "pipe.json"
    path.write_text(json.dumps(doc))
    return path


def test_pipeline_runs(tmp_path, csg):
    cfg = pipeline_config(tmp_path, csg)
    work = tmp_path / "work"
    assert run("pipeline", "-c", cfg, "--workdir", work) == 0
    for name in ["unit.json", "curves.json", "rho.json", "beam.stl", "summary.json"]:
        assert (work / name).exists()
    summary = json.loads((work / "summary.json").read_text())
    assert summary["seed"] == 0 and len(summary["stages"]) == 7


def test_pipeline_missing_input_names_stage(tmp_path, csg, capsys):
    doc = json.loads(pipeline_config(tmp_path, csg).read_text())
    doc["stages"][1]["input"] = "absent.vgrid"
    path = tmp_path / "pipe2.json"
    path.write_text(json.dumps(doc))
    assert run("pipeline", "-c", path, "--workdir", tmp_path / "w") == 4
    assert "1:dtm" in capsys.readouterr().err


def test_pipeline_validation(tmp_path, csg):
    doc = json.loads(pipeline_config(tmp_path, csg).read_text())
    doc["stages"][1]["output"] = "s.vgrid"
    path = tmp_path / "dup.json"
    path.write_text(json.dumps(doc))
    assert run("pipeline", "-c", path) == 2
    path.write_text(json.dumps({"stages": [{"stage": "warp"}]}))
    assert run("pipeline", "-c", path) == 2
    path.write_text("{oops")
    assert run("pipeline", "-c", path) == 2
    path.write_text(json.dumps({"seed": -1, "stages": []}))
    assert run("pipeline", "-c", path) == 2


def test_threads_env_fallback(tmp_path, csg, monkeypatch):
    monkeypatch.setenv("PUNIT_THREADS", "2")
    for var in cli.THREAD_VARS:
        monkeypatch.delenv(var, raising=False)
    assert cli._apply_threads(None) == 2
    assert os.environ["OMP_NUM_THREADS"] == "2"
    assert cli._apply_threads(3) == 3


def test_console_script(tmp_path, csg):
    out = subprocess.run(
        [sys.executable, "-m", "punit.cli", "--threads", "1", "voxel", "--csg", str(csg), "--dims", "8", "-o", str(tmp_path / "g.vgrid")],
        capture_output=True,
        text=True,
    )
    assert out.returncode == 0, out.stderr
    assert json.loads(out.stdout)["dims"] == [8, 8, 8]
