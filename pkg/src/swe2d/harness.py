"""Command line interface, benchmark ladder and convergence study."""

from __future__ import annotations

import argparse
import json
import logging
import math
import statistics
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from swe2d.cases import CaseSpec, default_case, setup_case, stoker_exact
from swe2d.engine import SimulationState, advance_step, make_backend, run
from swe2d.errors import SWEError
from swe2d.io import (
    Config,
    check_output_dir,
    load_config,
    load_mesh_source,
    read_mesh_native,
    write_mesh_native,
    write_stats_csv,
    write_table_csv,
    write_vtk_snapshot,
)
from swe2d.kernels import PhysParams
from swe2d.mesh import generate_square_mesh, mesh_diagnostics

log = logging.getLogger("swe2d")

# cell counts of the reference grid ladder; the last two rungs are opt-in
LADDER = (1_036, 10_132, 104_788)
LARGE_RUNGS = (1_056_518, 10_261_932)


# --------------------------------------------------------------------------
# run

def run_config(config: Config, echo: bool = True):
    """Execute a validated configuration, writing outputs to its directory."""
    out = check_output_dir(config)
    if echo:
        (out / config.outputs.echo).write_text(config.to_json())
    raw, z, n = load_mesh_source(config.mesh)
    mesh, state = setup_case(config.case, raw, z, n)
    history = []

    def snapshot(st, index):
        path = out / config.outputs.vtk_pattern.format(index=index)
        write_vtk_snapshot(mesh, st, st.t, path)

    be = config.backend
    with make_backend(be.kind, be.threads, be.deterministic) as backend:
        try:
            stats = run(mesh, state, config.params, backend, t_end=config.case.t_end,
                        snapshot_interval=config.outputs.snapshot_interval,
                        on_snapshot=snapshot if config.outputs.snapshot_interval else None,
                        on_step=history.append)
        finally:
            write_stats_csv(history, out / config.outputs.stats_csv,
                            timings=config.outputs.csv_timings)
    summary = {k: v for k, v in asdict(stats).items() if k not in ("history", "final_state")}
    summary.update(cells=mesh.n_cells, edges=mesh.n_edges, backend=be.kind, threads=be.threads)
    (out / "run_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return stats, mesh


# --------------------------------------------------------------------------
# benchmark

BENCH_COLUMNS = ("grid", "cells", "edges", "backend", "threads", "rep", "steps", "wall_s",
                 "throughput", "speedup", "status")
SUMMARY_COLUMNS = ("grid", "cells", "backend", "threads", "runs", "median_wall_s",
                   "mean_speedup", "median_speedup", "min_speedup", "max_speedup",
                   "std_speedup")


@dataclass
class BenchReport:
    rows: list[dict] = field(default_factory=list)
    summary: list[dict] = field(default_factory=list)

    def write_csv(self, path):
        path = Path(path)
        write_table_csv(self.rows, path, BENCH_COLUMNS)
        write_table_csv(self.summary, path.with_name(path.stem + "_summary.csv"),
                        SUMMARY_COLUMNS)

    def lines(self) -> list[str]:
        out = [f"{'grid':>5} {'cells':>9} {'backend':>7} {'thr':>3} {'median s':>10} "
               f"{'speedup':>8} {'spread':>15}"]
        for s in self.summary:
            out.append(f"{s['grid']:>5} {s['cells']:>9} {s['backend']:>7} {s['threads']:>3} "
                       f"{s['median_wall_s']:>10.4f} {s['median_speedup']:>8.3f} "
                       f"[{s['min_speedup']:.3f}, {s['max_speedup']:.3f}]")
        return out


def grid_for_cells(cells: int) -> int:
    """Squares per side of a generated square mesh with about ``cells`` triangles."""
    return max(1, round(math.sqrt(cells / 2)))


def _time_run(mesh, state, params, backend, steps, t_end):
    # one untimed warmup step on a throwaway copy
    warm = SimulationState(mesh, state, params)
    advance_step(warm, mesh, params, backend, track_mass=False)
    stats = run(mesh, state, params, backend, t_end=t_end if t_end else math.inf,
                max_steps=steps, track_mass=False)
    return stats.steps, stats.wall_s_flux + stats.wall_s_update + stats.wall_s_friction


def run_benchmark(ladder=LADDER, backends=("seq", "par"), thread_counts=(1, 2, 4),
                  steps: int | None = 20, t_end=None, reps: int = 3,
                  params: PhysParams = PhysParams(), progress=None) -> BenchReport:
    """Time the water-drop case over a ladder of grid sizes.

    ``steps`` selects fixed-step-count mode; otherwise ``t_end`` (a number,
    or a mapping from rung cell target to end time) sets the simulated
    time. Only the flux, update and friction phases are timed. Speedups are
    taken against the median sequential wall time of the same grid.
    """
    if steps is None and t_end is None:
        raise ValueError("give either steps or t_end")
    report = BenchReport()
    configs = []
    if "seq" in backends:
        configs.append(("seq", 1))
    if "par" in backends:
        configs += [("par", t) for t in thread_counts]

    for rung, target in enumerate(ladder, start=1):
        label = f"#{rung}"
        rung_t = t_end.get(target) if isinstance(t_end, dict) else t_end
        try:
            k = grid_for_cells(target)
            spec = default_case("water_drop", nx=k, ny=k)
            mesh, state = setup_case(spec)
        except MemoryError:
            report.rows.append(dict(grid=label, cells=target, status="skipped: out of memory"))
            continue
        walls: dict[tuple, list[float]] = {}
        for kind, threads in configs:
            for rep in range(reps):
                try:
                    with make_backend(kind, threads) as backend:
                        n_steps, wall = _time_run(mesh, state, params, backend, steps, rung_t)
                except MemoryError:
                    report.rows.append(dict(grid=label, cells=mesh.n_cells, backend=kind,
                                            threads=threads, rep=rep,
                                            status="skipped: out of memory"))
                    continue
                walls.setdefault((kind, threads), []).append(wall)
                report.rows.append(dict(
                    grid=label, cells=mesh.n_cells, edges=mesh.n_edges, backend=kind,
                    threads=threads, rep=rep, steps=n_steps, wall_s=wall,
                    throughput=mesh.n_cells * n_steps / wall, status="ok"))
                if progress:
                    progress(report.rows[-1])
        base = statistics.median(walls[("seq", 1)]) if ("seq", 1) in walls else None
        for row in report.rows:
            if row.get("grid") == label and row.get("status") == "ok":
                row["speedup"] = base / row["wall_s"] if base else float("nan")
        for (kind, threads), ws in walls.items():
            sp = [base / w for w in ws] if base else [float("nan")]
            if kind == "seq":
                sp = [1.0] * len(ws)
            report.summary.append(dict(
                grid=label, cells=mesh.n_cells, backend=kind, threads=threads, runs=len(ws),
                median_wall_s=statistics.median(ws),
                mean_speedup=statistics.fmean(sp), median_speedup=statistics.median(sp),
                min_speedup=min(sp), max_speedup=max(sp),
                std_speedup=statistics.pstdev(sp)))
        # the sequential baseline is 1 by definition
        for row in report.rows:
            if row.get("grid") == label and row.get("backend") == "seq" and "speedup" in row:
                row["speedup"] = 1.0
    return report


# --------------------------------------------------------------------------
# convergence

CONVERGE_COLUMNS = ("nx", "ny", "cells", "dx", "steps", "l1_error", "ratio", "order", "flag")
DEFAULT_RESOLUTIONS = ((64, 16), (128, 32), (256, 64))


def l1_depth_error(mesh, h, spec: CaseSpec, t: float) -> float:
    """Area-weighted mean of ``|h - h_exact|`` with the exact depth sampled at
    cell centroids."""
    exact, _ = stoker_exact(spec.h_left, spec.h_right, mesh.centroid[:, 0], t, spec.x_dam)
    return float(np.sum(mesh.area * np.abs(h - exact)) / np.sum(mesh.area))


def convergence_study(spec: CaseSpec | None = None, resolutions=DEFAULT_RESOLUTIONS,
                      t_eval: float | None = None, params: PhysParams = PhysParams(),
                      backend=None) -> list[dict]:
    """L1 depth error of the wet-bed dam break against the Stoker solution.

    ``ratio`` is the error of the previous (coarser) rung over this one and
    ``order`` its base-2 logarithm. Rows whose error did not decrease are
    flagged ``non-monotone``.
    """
    spec = spec or default_case("dam_break_1d")
    if len(resolutions) < 3:
        raise ValueError("need at least three resolutions")
    t_eval = spec.t_end if t_eval is None else t_eval
    rows = []
    prev = None
    for nx, ny in resolutions:
        rspec = spec.replace(nx=nx, ny=ny)
        mesh, state = setup_case(rspec)
        steps = 0
        h = state.h
        if t_eval > 0:
            stats = run(mesh, state, params, backend, t_end=t_eval, track_mass=False)
            steps, h = stats.steps, stats.final_state.h
        err = l1_depth_error(mesh, h, rspec, t_eval)
        row = dict(nx=nx, ny=ny, cells=mesh.n_cells, dx=spec.lx / nx, steps=steps,
                   l1_error=err, ratio=float("nan"), order=float("nan"), flag="")
        if prev is not None:
            row["ratio"] = prev / err if err > 0 else float("inf")
            row["order"] = math.log2(row["ratio"]) if err > 0 else float("inf")
            if not err < prev:
                row["flag"] = "non-monotone"
        rows.append(row)
        prev = err
    return rows


# --------------------------------------------------------------------------
# CLI

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="swe2d", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a simulation from a JSON config")
    r.add_argument("--config", required=True)
    r.add_argument("--threads", type=int)
    r.add_argument("--backend", choices=("seq", "par"))
    r.add_argument("--t-end", type=float)
    r.add_argument("--out-dir")

    b = sub.add_parser("bench", help="time the grid ladder across backends")
    b.add_argument("--cells", type=int, nargs="+", default=list(LADDER))
    b.add_argument("--large", action="store_true", help="add the ~1e6 and ~1e7 cell rungs")
    b.add_argument("--backends", nargs="+", choices=("seq", "par"), default=["seq", "par"])
    b.add_argument("--threads", type=int, nargs="+", default=[1, 2, 4])
    mode = b.add_mutually_exclusive_group()
    mode.add_argument("--steps", type=int, help="fixed step count per run (default 20)")
    mode.add_argument("--t-end", type=float, help="simulated seconds per run")
    b.add_argument("--reps", type=int, default=3)
    b.add_argument("-o", "--output", default="bench.csv")

    c = sub.add_parser("converge", help="dam-break convergence against the Stoker solution")
    c.add_argument("--resolutions", nargs="+", default=None,
                   help="NXxNY entries, e.g. 64x16 128x32 256x64")
    c.add_argument("--t-eval", type=float, default=None)
    c.add_argument("--h-left", type=float, default=1.0)
    c.add_argument("--h-right", type=float, default=0.1)
    c.add_argument("-o", "--output", default="convergence.csv")

    g = sub.add_parser("meshgen", help="write a structured triangular mesh")
    g.add_argument("--nx", type=int, required=True)
    g.add_argument("--ny", type=int, required=True)
    g.add_argument("--lx", type=float, required=True)
    g.add_argument("--ly", type=float, required=True)
    g.add_argument("--manning", type=float, default=0.0)
    g.add_argument("-o", "--output", required=True)

    v = sub.add_parser("validate", help="print mesh diagnostics")
    v.add_argument("--mesh", required=True)
    return p


def _cmd_run(args) -> int:
    overrides = dict(threads=args.threads, backend=args.backend, t_end=args.t_end,
                     out_dir=args.out_dir)
    config = load_config(args.config, overrides)
    stats, mesh = run_config(config)
    print(f"cells {mesh.n_cells}  steps {stats.steps}  t {stats.t_final:.6g} s  "
          f"wall {stats.wall_s:.3f} s  mass drift {stats.mass_drift:.3e}  "
          f"clipped {stats.n_clipped}")
    print(f"outputs in {config.out_dir}")
    return 0


def _cmd_bench(args) -> int:
    ladder = list(args.cells) + (list(LARGE_RUNGS) if args.large else [])
    steps = args.steps if args.t_end is None else None
    if steps is None and args.t_end is None:
        steps = 20

    def progress(row):
        print(f"  {row['grid']} {row['backend']}x{row['threads']} rep {row['rep']}: "
              f"{row['wall_s']:.4f} s", file=sys.stderr)

    report = run_benchmark(ladder, args.backends, args.threads, steps=steps,
                           t_end=args.t_end, reps=args.reps, progress=progress)
    report.write_csv(args.output)
    print("\n".join(report.lines()))
    return 0


def _parse_resolution(text: str):
    try:
        nx, ny = text.lower().split("x")
        return int(nx), int(ny)
    except ValueError:
        raise ValueError(f"bad resolution {text!r}, expected NXxNY") from None


def _cmd_converge(args) -> int:
    res = [_parse_resolution(r) for r in args.resolutions] if args.resolutions \
        else DEFAULT_RESOLUTIONS
    spec = default_case("dam_break_1d", h_left=args.h_left, h_right=args.h_right)
    rows = convergence_study(spec, res, args.t_eval)
    write_table_csv(rows, args.output, CONVERGE_COLUMNS)
    for r in rows:
        print(f"{r['nx']:>5}x{r['ny']:<5} cells {r['cells']:>7}  L1 {r['l1_error']:.6e}  "
              f"ratio {r['ratio']:.3f}  order {r['order']:.3f} {r['flag']}")
    return 0


def _cmd_meshgen(args) -> int:
    raw = generate_square_mesh(args.nx, args.ny, args.lx, args.ly)
    write_mesh_native(args.output, raw, 0.0, args.manning)
    print(f"wrote {raw.n_nodes} nodes, {raw.n_cells} cells to {args.output}")
    return 0


def _cmd_validate(args) -> int:
    raw, z, n = read_mesh_native(args.mesh)
    report = mesh_diagnostics(raw, z, n)
    print("\n".join(report.lines()))
    return 0 if report.ok else 1


COMMANDS = {"run": _cmd_run, "bench": _cmd_bench, "converge": _cmd_converge,
            "meshgen": _cmd_meshgen, "validate": _cmd_validate}


def cli_main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (SWEError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(cli_main())
