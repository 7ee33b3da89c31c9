"""Explicit finite-volume time stepping with interchangeable backends.

A step has three data-parallel phases:

1. edge loop: reconstruct, solve the Riemann problem and store the flux
   applied to each side of every edge (edge-indexed writes only);
2. cell loop: gather the three edge fluxes of each cell in local-edge order
   and apply the explicit Euler update (cell-indexed writes only);
3. cell loop: friction, dry clamping, blowup scan and the CFL bound for the
   next step.

No phase accumulates across work items except exact ``min``/``max``
reductions, so results do not depend on how the index ranges are split.
The parallel backend runs the same compiled loops on contiguous chunks in a
thread pool (the loops release the GIL), which makes its trajectories
bitwise identical to the sequential backend for any thread count.

Stored edge fluxes are outward for the receiving cell and have that cell's
own hydrostatic pressure ``g h*^2 / 2 * n_out`` removed. Since the outward
normals of a closed triangle sum to zero this leaves the update unchanged,
but it makes a lake at rest an exact fixed point instead of a round-off one.
"""

from __future__ import annotations

import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numba import njit

from swe2d.errors import BlowupError, PositivityError
from swe2d.kernels import (
    CLIP_RTOL,
    PhysParams,
    _friction_factor,
    _hllc_flux,
    _pressure,
    _reconstruct,
    _velocity,
    _wall_flux,
)
from swe2d.mesh import Mesh

log = logging.getLogger(__name__)

_OK, _BLOWUP, _NEGATIVE = 0, 1, 2


# --------------------------------------------------------------------------
# compiled loops

@njit(cache=True, nogil=True)
def _edge_loop(e0, e1, h, qx, qy, z, edge_left, edge_right, normal, g, h_dry, fl, fr):
    for e in range(e0, e1):
        L = edge_left[e]
        R = edge_right[e]
        nx = normal[e, 0]
        ny = normal[e, 1]
        if R < 0:
            f0, f1, f2 = _wall_flux(h[L], qx[L], qy[L], nx, ny, g, h_dry)
            p = _pressure(h[L], g, h_dry)
            fl[e, 0] = f0
            fl[e, 1] = f1 - p * nx
            fl[e, 2] = f2 - p * ny
            fr[e, 0] = 0.0
            fr[e, 1] = 0.0
            fr[e, 2] = 0.0
            continue
        hL = h[L]
        hR = h[R]
        hLs, hRs = _reconstruct(hL, z[L], hR, z[R])
        uL = _velocity(hL, qx[L], h_dry)
        vL = _velocity(hL, qy[L], h_dry)
        uR = _velocity(hR, qx[R], h_dry)
        vR = _velocity(hR, qy[R], h_dry)
        f0, f1, f2 = _hllc_flux(hLs, hLs * uL, hLs * vL, hRs, hRs * uR, hRs * vR,
                                nx, ny, g, h_dry)
        pL = _pressure(hLs, g, h_dry)
        pR = _pressure(hRs, g, h_dry)
        fl[e, 0] = f0
        fl[e, 1] = f1 - pL * nx
        fl[e, 2] = f2 - pL * ny
        fr[e, 0] = -f0
        fr[e, 1] = -(f1 - pR * nx)
        fr[e, 2] = -(f2 - pR * ny)


@njit(cache=True, nogil=True)
def _update_loop(c0, c1, h, qx, qy, area, cell_edges, cell_signs, edge_length,
                 fl, fr, dt, out_h, out_qx, out_qy):
    for c in range(c0, c1):
        a0 = 0.0
        a1 = 0.0
        a2 = 0.0
        for k in range(3):
            e = cell_edges[c, k]
            le = edge_length[e]
            if cell_signs[c, k] > 0:
                a0 += fl[e, 0] * le
                a1 += fl[e, 1] * le
                a2 += fl[e, 2] * le
            else:
                a0 += fr[e, 0] * le
                a1 += fr[e, 1] * le
                a2 += fr[e, 2] * le
        r = dt / area[c]
        out_h[c] = h[c] - r * a0
        out_qx[c] = qx[c] - r * a1
        out_qy[c] = qy[c] - r * a2


@njit(cache=True, nogil=True)
def _cfl_bound(h, qx, qy, r, g, h_dry):
    if h < h_dry:
        return math.inf, 0.0
    speed = math.sqrt(qx * qx + qy * qy) / h
    signal = speed + math.sqrt(g * h)
    return r / signal, signal


@njit(cache=True, nogil=True)
def _finish_loop(c0, c1, h, qx, qy, area, manning, inradius, dt, g, h_dry, clip_tol):
    """Friction, clamping, blowup scan and next CFL bound, in place.

    Returns (status, cell, min r/(|u|+c), max |u|+c, clip count, clipped volume).
    """
    bound = math.inf
    vmax = 0.0
    n_clip = 0
    clipped = 0.0
    for c in range(c0, c1):
        hc = h[c]
        if not (math.isfinite(hc) and math.isfinite(qx[c]) and math.isfinite(qy[c])):
            return _BLOWUP, c, bound, vmax, n_clip, clipped
        if hc < 0.0:
            if hc < -clip_tol:
                return _NEGATIVE, c, bound, vmax, n_clip, clipped
            n_clip += 1
            clipped -= hc * area[c]
            hc = 0.0
            h[c] = 0.0
        if hc < h_dry:
            qx[c] = 0.0
            qy[c] = 0.0
            continue
        f = _friction_factor(hc, qx[c], qy[c], manning[c], dt, g, h_dry)
        if f != 1.0:
            qx[c] *= f
            qy[c] *= f
        b, s = _cfl_bound(hc, qx[c], qy[c], inradius[c], g, h_dry)
        if not math.isfinite(s):
            return _BLOWUP, c, bound, vmax, n_clip, clipped
        if b < bound:
            bound = b
        if s > vmax:
            vmax = s
    return _OK, -1, bound, vmax, n_clip, clipped


@njit(cache=True, nogil=True)
def _scan_loop(c0, c1, h, qx, qy, inradius, g, h_dry):
    bound = math.inf
    vmax = 0.0
    for c in range(c0, c1):
        b, s = _cfl_bound(h[c], qx[c], qy[c], inradius[c], g, h_dry)
        if not math.isfinite(s) or not math.isfinite(h[c]):
            return _BLOWUP, c, bound, vmax
        if b < bound:
            bound = b
        if s > vmax:
            vmax = s
    return _OK, -1, bound, vmax


# --------------------------------------------------------------------------
# backends

def _split(n: int, parts: int) -> list[tuple[int, int]]:
    parts = max(1, min(parts, n)) if n else 1
    bounds = [n * k // parts for k in range(parts + 1)]
    return [(bounds[k], bounds[k + 1]) for k in range(parts)]


class SequentialBackend:
    """Reference backend: every loop runs once over the full index range."""

    kind = "seq"
    threads = 1
    deterministic = True

    def map(self, fn, n, *args):
        return [fn(0, n, *args)]

    def close(self):
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __repr__(self):
        return "SequentialBackend()"


class ParallelBackend:
    """Thread-pool backend over contiguous index chunks, one per thread.

    Only the deterministic edge-then-gather scheme is implemented, so
    ``deterministic`` is informational.
    """

    kind = "par"

    def __init__(self, threads: int | None = None, deterministic: bool = True):
        if threads is None:
            threads = os.cpu_count() or 1
        if threads < 1:
            raise ValueError(f"threads must be >= 1, got {threads}")
        self.threads = int(threads)
        self.deterministic = deterministic
        self._pool = ThreadPoolExecutor(max_workers=self.threads, thread_name_prefix="swe2d")

    def map(self, fn, n, *args):
        if self.threads == 1:
            return [fn(0, n, *args)]
        futures = [self._pool.submit(fn, a, b, *args) for a, b in _split(n, self.threads)]
        return [f.result() for f in futures]

    def close(self):
        self._pool.shutdown(wait=True)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __repr__(self):
        return f"ParallelBackend(threads={self.threads})"


def make_backend(kind: str = "seq", threads: int = 1, deterministic: bool = True):
    if kind in ("seq", "sequential"):
        return SequentialBackend()
    if kind in ("par", "parallel"):
        return ParallelBackend(threads, deterministic)
    raise ValueError(f"unknown backend kind {kind!r}")


# --------------------------------------------------------------------------
# state and stats

@dataclass
class State:
    """Conservative variables per cell and the clock."""

    h: np.ndarray
    qx: np.ndarray
    qy: np.ndarray
    t: float = 0.0

    def copy(self) -> State:
        return State(self.h.copy(), self.qx.copy(), self.qy.copy(), self.t)


@dataclass
class EdgeFluxes:
    """Per-edge fluxes applied to the left and right cell (outward for
    each, own hydrostatic pressure removed). Wall edges have zero ``right``."""

    left: np.ndarray  # (e, 3)
    right: np.ndarray  # (e, 3)


@dataclass
class StepStats:
    step: int
    t: float
    dt: float
    mass: float
    mass_drift: float
    max_speed: float
    wall_ms_flux: float
    wall_ms_update: float
    wall_ms_friction: float
    n_clipped: int = 0


@dataclass
class RunStats:
    steps: int = 0
    t_final: float = 0.0
    wall_s: float = 0.0
    wall_s_flux: float = 0.0
    wall_s_update: float = 0.0
    wall_s_friction: float = 0.0
    mass_initial: float = 0.0
    mass_final: float = 0.0
    mass_drift: float = 0.0
    dt_min: float = math.inf
    dt_mean: float = 0.0
    n_clipped: int = 0
    clipped_volume: float = 0.0
    completed: bool = False
    error: str | None = None
    history: list[StepStats] = field(default_factory=list)
    final_state: State | None = field(default=None, repr=False)


def total_mass(h, mesh: Mesh) -> float:
    """Water volume ``sum(h_i * area_i)`` with numpy's fixed pairwise order."""
    h = h.h if isinstance(h, State) else h
    return float(np.sum(np.asarray(h, dtype=np.float64) * mesh.area))


class SimulationState:
    """Double-buffered state resident for the lifetime of a run.

    Holds the current and next buffers, the flux workspace, the clock and
    the mass ledger. ``snapshot`` is the only way to copy the state out.
    """

    def __init__(self, mesh: Mesh, state: State, params: PhysParams = PhysParams(),
                 h_ref: float | None = None):
        m = mesh.n_cells
        h = np.array(state.h, dtype=np.float64)
        qx = np.array(state.qx, dtype=np.float64)
        qy = np.array(state.qy, dtype=np.float64)
        if h.shape != (m,) or qx.shape != (m,) or qy.shape != (m,):
            raise ValueError(f"state arrays must have {m} entries")
        if (h < 0).any():
            raise PositivityError("initial state has negative depth",
                                  int(np.flatnonzero(h < 0)[0]))
        self.h, self.qx, self.qy = h, qx, qy
        self.h_next = np.empty(m)
        self.qx_next = np.empty(m)
        self.qy_next = np.empty(m)
        self.flux_left = np.zeros((mesh.n_edges, 3))
        self.flux_right = np.zeros((mesh.n_edges, 3))
        self.t = float(state.t)
        self.step = 0
        self.mass0 = total_mass(h, mesh)
        self.h_ref = float(h_ref if h_ref is not None else max(h.max(), params.h_dry))
        self.n_clipped = 0
        self.clipped_volume = 0.0
        self.cfl_bound: float | None = None  # min r/(|u|+c), refreshed every step
        self.max_speed = 0.0

    def snapshot(self) -> State:
        return State(self.h.copy(), self.qx.copy(), self.qy.copy(), self.t)

    def swap(self):
        self.h, self.h_next = self.h_next, self.h
        self.qx, self.qx_next = self.qx_next, self.qx
        self.qy, self.qy_next = self.qy_next, self.qy


# --------------------------------------------------------------------------
# operations

def _edge_phase(sim: SimulationState, mesh: Mesh, params: PhysParams, backend):
    backend.map(_edge_loop, mesh.n_edges, sim.h, sim.qx, sim.qy, mesh.bathymetry,
                mesh.edge_left, mesh.edge_right, mesh.edge_normal,
                params.g, params.h_dry, sim.flux_left, sim.flux_right)


def compute_fluxes(state: State | SimulationState, mesh: Mesh,
                   params: PhysParams = PhysParams(), backend=None) -> EdgeFluxes:
    """Edge fluxes for ``state`` (copied out; the engine uses its own workspace)."""
    backend = backend or SequentialBackend()
    if isinstance(state, State):
        sim = SimulationState(mesh, state, params)
    else:
        sim = state
    _edge_phase(sim, mesh, params, backend)
    return EdgeFluxes(sim.flux_left.copy(), sim.flux_right.copy())


def _scan(sim: SimulationState, mesh: Mesh, params: PhysParams, backend):
    results = backend.map(_scan_loop, mesh.n_cells, sim.h, sim.qx, sim.qy,
                          mesh.inradius, params.g, params.h_dry)
    for status, cell, _, _ in results:
        if status != _OK:
            raise BlowupError(f"non-finite state in cell {cell}", sim.step, cell)
    sim.cfl_bound = min(r[2] for r in results)
    sim.max_speed = max(r[3] for r in results)


def advance_step(sim: SimulationState, mesh: Mesh, params: PhysParams = PhysParams(),
                 backend=None, t_end: float = math.inf, track_mass: bool = True) -> StepStats:
    """One explicit Euler step of at most ``t_end - sim.t``."""
    backend = backend or SequentialBackend()
    if sim.cfl_bound is None:
        _scan(sim, mesh, params, backend)
    dt = params.dt_max if math.isinf(sim.cfl_bound) else params.cfl * sim.cfl_bound
    last = False
    if sim.t + dt >= t_end:
        dt = t_end - sim.t
        last = True
    if not dt > 0:
        raise ValueError(f"non-positive time step {dt} at t={sim.t}")

    t0 = time.perf_counter()
    _edge_phase(sim, mesh, params, backend)
    t1 = time.perf_counter()
    backend.map(_update_loop, mesh.n_cells, sim.h, sim.qx, sim.qy, mesh.area,
                mesh.cell_edges, mesh.cell_signs, mesh.edge_length,
                sim.flux_left, sim.flux_right, dt, sim.h_next, sim.qx_next, sim.qy_next)
    t2 = time.perf_counter()
    results = backend.map(_finish_loop, mesh.n_cells, sim.h_next, sim.qx_next, sim.qy_next,
                          mesh.area, mesh.manning, mesh.inradius, dt, params.g,
                          params.h_dry, CLIP_RTOL * sim.h_ref)
    t3 = time.perf_counter()

    for status, cell, *_ in results:
        if status == _BLOWUP:
            raise BlowupError(
                f"non-finite state at step {sim.step + 1} in cell {cell} (dt={dt:.6g})",
                sim.step + 1, cell, dt)
        if status == _NEGATIVE:
            raise PositivityError(
                f"negative depth {sim.h_next[cell]:.6g} at step {sim.step + 1} "
                f"in cell {cell} (dt={dt:.6g})", cell)
    n_clip = sum(r[4] for r in results)
    if n_clip:
        volume = sum(r[5] for r in results)
        sim.n_clipped += n_clip
        sim.clipped_volume += volume
        log.debug("step %d: clipped %d cells, volume %.3g", sim.step + 1, n_clip, volume)
    sim.cfl_bound = min(r[2] for r in results)
    sim.max_speed = max(r[3] for r in results)

    sim.swap()
    sim.t = t_end if last else sim.t + dt
    sim.step += 1

    if track_mass:
        mass = total_mass(sim.h, mesh)
        drift = (mass - sim.mass0) / sim.mass0 if sim.mass0 else mass
    else:
        mass = drift = math.nan
    return StepStats(sim.step, sim.t, dt, mass, drift, sim.max_speed,
                     1e3 * (t1 - t0), 1e3 * (t2 - t1), 1e3 * (t3 - t2), n_clip)


def run(mesh: Mesh, state: State, params: PhysParams = PhysParams(), backend=None, *,
        t_end: float = math.inf, max_steps: int | None = None,
        snapshot_interval: float | None = None,
        on_snapshot: Callable[[State, int], None] | None = None,
        on_step: Callable[[StepStats], None] | None = None,
        keep_history: bool = False, track_mass: bool = True) -> RunStats:
    """Integrate to ``t_end`` (landing on it exactly) or for ``max_steps``.

    Snapshots are copied out at ``t = 0`` and at the first step reaching each
    multiple of ``snapshot_interval``, plus the final state. On a numerical
    failure the raised error carries the partial stats as ``.stats``.
    """
    if max_steps is None and not (t_end > state.t and math.isfinite(t_end)):
        raise ValueError(f"t_end must be finite and > t0, got {t_end}")
    backend = backend or SequentialBackend()
    sim = SimulationState(mesh, state, params)
    stats = RunStats(mass_initial=sim.mass0)
    next_snap = math.inf
    snap_index = 0
    if on_snapshot is not None:
        on_snapshot(sim.snapshot(), snap_index)
        snap_index += 1
        if snapshot_interval:
            next_snap = sim.t + snapshot_interval

    dt_sum = 0.0
    start = time.perf_counter()
    try:
        while sim.t < t_end and (max_steps is None or sim.step < max_steps):
            st = advance_step(sim, mesh, params, backend, t_end, track_mass)
            stats.steps = sim.step
            stats.wall_s_flux += st.wall_ms_flux / 1e3
            stats.wall_s_update += st.wall_ms_update / 1e3
            stats.wall_s_friction += st.wall_ms_friction / 1e3
            stats.dt_min = min(stats.dt_min, st.dt)
            dt_sum += st.dt
            if keep_history:
                stats.history.append(st)
            if on_step is not None:
                on_step(st)
            done = sim.t >= t_end or (max_steps is not None and sim.step >= max_steps)
            if on_snapshot is not None and (sim.t >= next_snap or done):
                on_snapshot(sim.snapshot(), snap_index)
                snap_index += 1
                while next_snap <= sim.t:
                    next_snap += snapshot_interval
    except (BlowupError, PositivityError) as exc:
        stats.error = str(exc)
        _finalize(stats, sim, mesh, start, dt_sum)
        exc.stats = stats
        raise
    _finalize(stats, sim, mesh, start, dt_sum)
    stats.completed = True
    stats.final_state = sim.snapshot()
    return stats


def _finalize(stats: RunStats, sim: SimulationState, mesh: Mesh, start: float, dt_sum: float):
    stats.wall_s = time.perf_counter() - start
    stats.t_final = sim.t
    stats.mass_final = total_mass(sim.h, mesh)
    stats.mass_drift = ((stats.mass_final - sim.mass0) / sim.mass0) if sim.mass0 else 0.0
    stats.dt_mean = dt_sum / stats.steps if stats.steps else 0.0
    stats.n_clipped = sim.n_clipped
    stats.clipped_volume = sim.clipped_volume
