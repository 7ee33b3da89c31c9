import csv
import json
import math
import subprocess
import sys

import pytest

from swe2d.cases import default_case
from swe2d.harness import (
    cli_main,
    convergence_study,
    grid_for_cells,
    run_benchmark,
    run_config,
)
from swe2d.io import load_config


def _write_config(tmp_path, body):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(body))
    return path


def test_meshgen_then_validate(tmp_path, capsys):
    mesh = tmp_path / "unit.mesh"
    assert cli_main(["meshgen", "--nx", "1", "--ny", "1", "--lx", "1", "--ly", "1",
                     "-o", str(mesh)]) == 0
    assert mesh.read_text().splitlines()[1] == "4 2"
    assert cli_main(["validate", "--mesh", str(mesh)]) == 0
    out = capsys.readouterr().out
    assert "cells" in out and "2" in out


def test_validate_reports_broken_mesh(tmp_path, capsys):
    mesh = tmp_path / "bad.mesh"
    mesh.write_text("SWEMESH 1\n3 1\n0 0\n1 0\n2 0\n0 1 2 0 0\n")
    assert cli_main(["validate", "--mesh", str(mesh)]) == 1
    assert "zero area" in capsys.readouterr().out


def test_bad_config_exits_nonzero(tmp_path, capsys):
    path = _write_config(tmp_path, {"case": {"id": "water_drop"}, "params": {"cfl": 1.5}})
    assert cli_main(["run", "--config", str(path)]) == 1
    assert "cfl" in capsys.readouterr().err


def test_usage_error_exits_two(capsys):
    assert cli_main(["frobnicate"]) == 2
    assert cli_main(["run"]) == 2


def test_run_writes_outputs_and_is_reproducible(tmp_path):
    body = {"case": {"id": "water_drop", "t_end": 60.0},
            "mesh": {"generate": {"nx": 8, "ny": 8}},
            "outputs": {"dir": "out", "snapshot_interval": 30.0}}
    path = _write_config(tmp_path, body)
    assert cli_main(["run", "--config", str(path)]) == 0
    out = tmp_path / "out"
    first = (out / "stats.csv").read_bytes()
    assert sorted(p.name for p in out.glob("*.vtk"))[0] == "snapshot_0000.vtk"
    summary = json.loads((out / "run_summary.json").read_text())
    assert summary["completed"] and summary["cells"] == 128

    echo = out / "effective_config.json"
    assert cli_main(["run", "--config", str(echo), "--out-dir", str(tmp_path / "again")]) == 0
    assert (tmp_path / "again" / "stats.csv").read_bytes() == first
    rows = list(csv.DictReader(first.decode().splitlines()))
    assert float(rows[-1]["t"]) == 60.0
    assert all(r["wall_ms_flux"] == "" for r in rows)


def test_threads_override_reaches_backend(tmp_path):
    path = _write_config(tmp_path, {"case": {"id": "lake_at_rest", "t_end": 0.5,
                                             "nx": 10, "ny": 4},
                                    "outputs": {"dir": str(tmp_path / "o")}})
    cfg = load_config(path, {"threads": 3, "backend": "par"})
    stats, mesh = run_config(cfg)
    summary = json.loads((tmp_path / "o" / "run_summary.json").read_text())
    assert summary["threads"] == 3 and summary["backend"] == "par"
    assert stats.mass_drift == 0.0


def test_grid_for_cells():
    assert 2 * grid_for_cells(1036) ** 2 == 1058
    assert 2 * grid_for_cells(104_788) ** 2 == pytest.approx(104_788, rel=0.01)


def test_bench_small_ladder(tmp_path):
    report = run_benchmark([200], ("seq", "par"), (1, 2), steps=3, reps=3)
    seq = [r for r in report.rows if r["backend"] == "seq"]
    assert len(seq) == 3 and all(r["speedup"] == 1.0 for r in seq)
    par1 = next(s for s in report.summary if s["backend"] == "par" and s["threads"] == 1)
    # same kernels either way; thread-pool overhead only
    assert par1["runs"] == 3 and par1["std_speedup"] >= 0.0
    assert {"min_speedup", "max_speedup", "median_speedup"} <= set(par1)
    report.write_csv(tmp_path / "b.csv")
    assert (tmp_path / "b_summary.csv").exists()
    assert any("par" in ln for ln in report.lines())


def test_bench_single_thread_parallel_matches_sequential():
    report = run_benchmark([10_132], ("seq", "par"), (1,), steps=10, reps=5)
    par1 = next(s for s in report.summary if s["backend"] == "par")
    assert 0.8 <= par1["median_speedup"] <= 1.2


def test_bench_requires_mode():
    with pytest.raises(ValueError):
        run_benchmark([200], steps=None, t_end=None)


def test_convergence_at_initial_time_is_exact():
    rows = convergence_study(resolutions=((8, 2), (16, 2), (32, 2)), t_eval=0.0)
    # cell centroids never straddle the dam at x=50 on these grids
    assert all(r["l1_error"] == 0.0 for r in rows)


def test_convergence_small_study():
    spec = default_case("dam_break_1d", t_end=2.0)
    rows = convergence_study(spec, ((32, 4), (64, 4), (128, 4)))
    errs = [r["l1_error"] for r in rows]
    assert errs[0] > errs[1] > errs[2]
    assert math.isnan(rows[0]["ratio"]) and rows[1]["ratio"] > 1.2
    assert rows[2]["order"] == pytest.approx(math.log2(rows[2]["ratio"]))


def test_convergence_needs_three_levels():
    with pytest.raises(ValueError):
        convergence_study(resolutions=((8, 2), (16, 2)))


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "swe2d", "meshgen", "--nx", "2", "--ny", "1",
                           "--lx", "2", "--ly", "1", "-o", str(tmp_path / "m.mesh")],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "4 cells" in proc.stdout
