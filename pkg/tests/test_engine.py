import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from swe2d.cases import default_case, setup_case
from swe2d.engine import (
    ParallelBackend,
    SequentialBackend,
    SimulationState,
    State,
    advance_step,
    compute_fluxes,
    make_backend,
    run,
    total_mass,
)
from swe2d.errors import BlowupError
from swe2d.kernels import ConservedState, PhysParams, hllc_flux, wall_flux
from swe2d.mesh import BOUNDARY, build_mesh, generate_square_mesh

P = PhysParams()


def _flat(nx, ny, lx=1.0, ly=1.0, z=0.0):
    return build_mesh(generate_square_mesh(nx, ny, lx, ly), bathymetry=z)


def _still(mesh, h=1.0):
    m = mesh.n_cells
    return State(np.full(m, h), np.zeros(m), np.zeros(m))


# ---------------------------------------------------------------- well-balancing

def test_lake_at_rest_is_bitwise_fixed_point():
    mesh, state = setup_case(default_case("lake_at_rest", nx=20, ny=8))
    assert (mesh.bathymetry > 0).any() and (state.h == 0).any()  # mounds poke out
    stats = run(mesh, state, P, max_steps=200)
    out = stats.final_state
    assert np.array_equal(out.h, state.h)
    assert not out.qx.any() and not out.qy.any()


def test_flat_still_water_unchanged():
    mesh = _flat(5, 4)
    stats = run(mesh, _still(mesh, 2.0), P, max_steps=50)
    assert np.array_equal(stats.final_state.h, np.full(mesh.n_cells, 2.0))
    assert not stats.final_state.qx.any()


def test_still_water_edge_fluxes_vanish():
    mesh, state = setup_case(default_case("lake_at_rest", nx=10, ny=4))
    fl = compute_fluxes(state, mesh)
    assert not fl.left.any() and not fl.right.any()


def test_uniform_flow_has_zero_divergence():
    mesh = _flat(4, 4)
    m = mesh.n_cells
    state = State(np.ones(m), np.full(m, 0.3), np.full(m, -0.2))
    fl = compute_fluxes(state, mesh)
    interior = mesh.edge_right != BOUNDARY
    assert np.array_equal(fl.left[interior], -fl.right[interior])
    # telescoping sum over interior cells: no net change away from walls
    sim = SimulationState(mesh, state, P)
    advance_step(sim, mesh, P)
    touches_wall = np.isin(mesh.cell_edges, mesh.boundary_edges).any(axis=1)
    assert np.abs(sim.h[~touches_wall] - 1.0).max() <= 1e-15
    assert np.abs(sim.qx[~touches_wall] - 0.3).max() <= 1e-15


# ---------------------------------------------------------------- update by hand

def test_two_cell_update_matches_hand_computation():
    mesh = _flat(1, 1, 2.0, 1.0)
    h = np.array([1.0, 0.5])
    qx = np.array([0.2, -0.1])
    qy = np.array([0.0, 0.3])
    sim = SimulationState(mesh, State(h, qx, qy), P)
    st = advance_step(sim, mesh, P)

    expected = []
    for c in range(2):
        acc = np.zeros(3)
        for k in range(3):
            e = mesh.cell_edges[c, k]
            s = mesh.cell_signs[c, k]
            n = tuple(s * mesh.edge_normal[e])
            mine = ConservedState(h[c], qx[c], qy[c])
            if mesh.edge_right[e] == BOUNDARY:
                f = wall_flux(mine, n)
            else:
                o = 1 - c
                f = hllc_flux(mine, ConservedState(h[o], qx[o], qy[o]), n)
            acc += mesh.edge_length[e] * np.array(f)
        expected.append(np.array([h[c], qx[c], qy[c]]) - st.dt / mesh.area[c] * acc)
    got = np.column_stack([sim.h, sim.qx, sim.qy])
    assert np.allclose(got, expected, rtol=1e-14, atol=1e-14)
    # time step from the hand-evaluated CFL bound
    speed = np.hypot(qx, qy) / h + np.sqrt(P.g * h)
    assert st.dt == pytest.approx(0.7 * np.min(mesh.inradius / speed), rel=1e-15)


# ---------------------------------------------------------------- backends

def _water_drop(n=12):
    return setup_case(default_case("water_drop", nx=n, ny=n))


@pytest.mark.parametrize("threads", [1, 2, 3, 5])
def test_parallel_bitwise_equal_to_sequential(threads):
    mesh, state = _water_drop()
    ref = run(mesh, state, P, SequentialBackend(), max_steps=40).final_state
    with ParallelBackend(threads) as be:
        got = run(mesh, state, P, be, max_steps=40).final_state
    for a, b in ((ref.h, got.h), (ref.qx, got.qx), (ref.qy, got.qy)):
        assert np.array_equal(a, b)
    assert ref.t == got.t


def test_make_backend():
    assert isinstance(make_backend("seq"), SequentialBackend)
    be = make_backend("par", 3)
    assert isinstance(be, ParallelBackend) and be.threads == 3
    be.close()
    with pytest.raises(ValueError):
        make_backend("gpu")
    with pytest.raises(ValueError):
        make_backend("par", 0)


def test_repeated_runs_identical():
    mesh, state = _water_drop(10)
    a = run(mesh, state, P, max_steps=30, keep_history=True)
    b = run(mesh, state, P, max_steps=30, keep_history=True)
    assert [s.dt for s in a.history] == [s.dt for s in b.history]
    assert np.array_equal(a.final_state.h, b.final_state.h)


# ---------------------------------------------------------------- mass

def test_total_mass_examples():
    mesh = _flat(2, 2)
    assert total_mass(np.ones(8), mesh) == 1.0
    assert total_mass(np.zeros(8), mesh) == 0.0
    h = np.arange(8.0)
    assert total_mass(h, mesh) == pytest.approx(oracles.kahan_sum(h * mesh.area), rel=1e-13)


def test_total_mass_matches_compensated_sum():
    rng = np.random.default_rng(5)
    raw = generate_square_mesh(40, 30, 7.0, 3.0)
    mesh = build_mesh(raw)
    h = rng.uniform(0, 10, mesh.n_cells)
    assert total_mass(h, mesh) == pytest.approx(oracles.kahan_sum(h * mesh.area), rel=1e-13)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 6), st.floats(0.0, 1.5))
def test_random_states_keep_mass_and_positivity(seed, n, bump):
    rng = np.random.default_rng(seed)
    raw = generate_square_mesh(n, n, 10.0, 10.0)
    m = raw.n_cells
    z = bump * rng.uniform(0, 1, m)
    mesh = build_mesh(raw, bathymetry=z, manning=rng.uniform(0, 0.05, m))
    h = np.where(rng.uniform(size=m) < 0.3, 0.0, rng.uniform(0.0, 2.0, m))
    qx = h * rng.uniform(-1, 1, m)
    qy = h * rng.uniform(-1, 1, m)

    def check(st):
        assert abs(st.mass_drift) <= 1e-12 or st.n_clipped > 0

    sim = SimulationState(mesh, State(h, qx, qy), P)
    for _ in range(30):
        st = advance_step(sim, mesh, P)
        assert np.isfinite(sim.h).all() and (sim.h >= 0).all()
        check(st)


# ---------------------------------------------------------------- run control

def test_run_lands_exactly_on_t_end():
    mesh = _flat(3, 3)
    sim = SimulationState(mesh, _still(mesh), P)
    advance_step(sim, mesh, P)
    dt = sim.t
    stats = run(mesh, _still(mesh), P, t_end=0.5 * dt, keep_history=True)
    assert stats.steps == 1
    assert stats.t_final == 0.5 * dt
    stats = run(mesh, _still(mesh), P, t_end=2.5 * dt)
    assert stats.steps == 3 and stats.t_final == 2.5 * dt


def test_all_dry_uses_dt_max():
    mesh = _flat(2, 2)
    params = PhysParams(dt_max=0.25)
    stats = run(mesh, _still(mesh, 0.0), params, t_end=1.0, keep_history=True)
    assert [s.dt for s in stats.history] == [0.25] * 4
    assert stats.completed and stats.mass_drift == 0.0


def test_snapshots_initial_interval_and_final():
    mesh, state = _water_drop(6)
    seen = []
    run(mesh, state, P, t_end=100.0, snapshot_interval=30.0,
        on_snapshot=lambda s, i: seen.append((i, s.t)))
    idx, times = zip(*seen)
    assert idx == tuple(range(len(seen)))
    assert times[0] == 0.0 and times[-1] == 100.0
    # one snapshot at the first step past 30, 60, 90
    assert len(seen) == 5
    assert all(t >= k * 30.0 for t, k in zip(times[1:4], (1, 2, 3)))


def test_blowup_reports_step_cell_and_partial_stats():
    mesh = _flat(3, 3)
    state = _still(mesh)
    state.qx[4] = math.nan
    with pytest.raises(BlowupError) as err:
        run(mesh, state, P, max_steps=5)
    assert err.value.cell == 4
    assert err.value.stats.completed is False
    assert "4" in str(err.value)


def test_run_requires_finite_end():
    mesh = _flat(1, 1)
    with pytest.raises(ValueError):
        run(mesh, _still(mesh))


def test_friction_slows_uniform_flow():
    raw = generate_square_mesh(4, 4, 1.0, 1.0)
    m = raw.n_cells
    state = State(np.ones(m), np.full(m, 0.5), np.zeros(m))
    smooth = run(build_mesh(raw), state, P, max_steps=5).final_state
    rough = run(build_mesh(raw, manning=0.05), state, P, max_steps=5).final_state
    assert np.abs(rough.qx).sum() < np.abs(smooth.qx).sum()
