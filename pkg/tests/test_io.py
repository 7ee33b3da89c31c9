import io
import json

import numpy as np
import pytest

import oracles
from swe2d.engine import State, StepStats
from swe2d.errors import ConfigError, MeshFormatError
from swe2d.io import (
    STATS_HEADER,
    load_config,
    parse_config,
    read_mesh_native,
    write_mesh_native,
    write_stats_csv,
    write_vtk_snapshot,
)
from swe2d.mesh import build_mesh, generate_square_mesh

TWO_CELLS = """SWEMESH 1
4 2
0 0
1 0
1 1
0 1
0 1 2 0.5 0.03
0 2 3 0.25 0
"""


def test_parse_native_mesh():
    raw, z, n = read_mesh_native(io.StringIO(TWO_CELLS))
    assert raw.n_nodes == 4 and raw.n_cells == 2
    assert raw.triangles.tolist() == [[0, 1, 2], [0, 2, 3]]
    assert z.tolist() == [0.5, 0.25] and n.tolist() == [0.03, 0.0]


def test_native_round_trip_byte_identical(tmp_path):
    rng = np.random.default_rng(0)
    raw = generate_square_mesh(5, 3, 2.0, 1.0)
    raw = type(raw)(raw.nodes + rng.uniform(-1e-3, 1e-3, raw.nodes.shape), raw.triangles)
    z = rng.uniform(-1, 1, raw.n_cells)
    first = tmp_path / "a.mesh"
    write_mesh_native(first, raw, z, 0.02)
    raw2, z2, n2 = read_mesh_native(first)
    assert np.array_equal(raw2.nodes, raw.nodes) and np.array_equal(z2, z)
    second = tmp_path / "b.mesh"
    write_mesh_native(second, raw2, z2, n2)
    assert first.read_bytes() == second.read_bytes()


@pytest.mark.parametrize("text,line,col,match", [
    (TWO_CELLS.replace("4 2", "4 3"), 9, None, "count mismatch"),
    (TWO_CELLS.replace("0 2 3 0.25", "0 2 9 0.25"), 8, 5, "out of range"),
    (TWO_CELLS.replace("1 1\n", "1 nan\n"), 5, 3, "finite"),
    (TWO_CELLS.replace("1 1\n", "1 x\n"), 5, 3, None),
    (TWO_CELLS.replace("SWEMESH 1", "MESH 2"), 1, None, "magic"),
    (TWO_CELLS + "7 7\n", 9, None, "unexpected"),
    (TWO_CELLS.replace("0.03", "-0.03"), 7, 11, "manning"),
])
def test_native_errors_carry_position(text, line, col, match):
    with pytest.raises(MeshFormatError, match=match) as err:
        read_mesh_native(io.StringIO(text))
    assert err.value.line == line
    if col is not None:
        assert err.value.column == col
    assert str(err.value).startswith(f"line {line}")


def test_vtk_snapshot_parses_back(tmp_path):
    raw, z, n = read_mesh_native(io.StringIO(TWO_CELLS))
    mesh = build_mesh(raw, z, n)
    state = State(np.array([1.0, 0.0]), np.array([0.5, 0.0]), np.array([-1.0, 0.0]))
    path = tmp_path / "s.vtk"
    write_vtk_snapshot(mesh, state, 1.25, path)
    text = path.read_text()
    assert "CELLS 2 8" in text
    vtk = oracles.parse_vtk(text)
    assert vtk["cells_size"] == 8 and vtk["cell_types"].tolist() == [5, 5]
    assert np.array_equal(vtk["points"][:, :2], mesh.nodes)
    assert np.array_equal(vtk["cells"], mesh.cell_nodes)
    assert vtk["scalars"]["h"].tolist() == [1.0, 0.0]
    assert vtk["scalars"]["eta"].tolist() == [1.5, 0.25]
    assert vtk["velocity"].tolist() == [[0.5, -1.0, 0.0], [0.0, 0.0, 0.0]]
    assert "t=1.25" in vtk["title"]


def test_vtk_rejects_mismatched_state(tmp_path):
    mesh = build_mesh(generate_square_mesh(1, 1, 1, 1))
    with pytest.raises(ValueError):
        write_vtk_snapshot(mesh, State(np.ones(3), np.ones(3), np.ones(3)), 0.0,
                           tmp_path / "x.vtk")


def test_stats_csv_columns(tmp_path):
    rows = [StepStats(1, 0.1, 0.1, 2.0, 0.0, 3.0, 1.5, 2.5, 0.5)]
    path = tmp_path / "s.csv"
    write_stats_csv(rows, path)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(STATS_HEADER)
    assert lines[1] == "1,0.10000000000000001,0.10000000000000001,2,0,3,,"
    write_stats_csv(rows, path, timings=True)
    assert path.read_text().splitlines()[1].endswith(",1.5,2.5")


# ---------------------------------------------------------------- config

def test_config_defaults():
    cfg = parse_config('{"case": {"id": "water_drop"}}')
    assert cfg.params.cfl == 0.7 and cfg.params.g == 9.81
    assert cfg.backend.kind == "seq" and cfg.backend.threads == 1
    assert (cfg.mesh.nx, cfg.mesh.ny, cfg.mesh.lx) == (23, 23, 1000.0)
    assert cfg.case.t_end == 2400.0


def test_config_round_trips_through_echo():
    cfg = parse_config('{"case": {"id": "three_mounds", "t_end": 5},'
                       ' "backend": {"kind": "par", "threads": 3}}')
    again = parse_config(cfg.to_json())
    assert again == cfg
    assert json.loads(cfg.to_json())["case"]["id"] == "three_mounds"


@pytest.mark.parametrize("text,match", [
    ('{"case": {"id": "water_drop"}, "params": {"cfl": 1.5}}', "cfl"),
    ('{"case": {"id": "water_drop"}, "params": {"cfl": 0}}', "cfl"),
    ('{"case": {"id": "water_drop"}, "solver": {}}', "solver"),
    ('{"case": {"id": "water_drop", "colour": 1}}', "colour"),
    ('{"case": {}}', "case.id"),
    ('{"case": {"id": "water_drop"}, "mesh": {"file": "a", "generate": {}}}', "not both"),
    ('{"case": {"id": "water_drop"}, "backend": {"kind": "gpu"}}', "gpu"),
    ('{"case": {"id": "water_drop"}, "backend": {"threads": 0}}', "threads"),
    ('[1, 2]', "object"),
    ('{"case": ', "JSON"),
])
def test_config_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)


def test_cli_overrides_win(tmp_path):
    path = tmp_path / "c.json"
    path.write_text('{"case": {"id": "water_drop", "t_end": 50},'
                    ' "backend": {"kind": "seq", "threads": 2}, "outputs": {"dir": "out"}}')
    cfg = load_config(path, {"threads": 8, "backend": "par", "t_end": 10.0})
    assert cfg.backend.threads == 8 and cfg.backend.kind == "par"
    assert cfg.case.t_end == 10.0
    assert cfg.out_dir == tmp_path / "out"
    assert load_config(path).backend.threads == 2
    assert load_config(path, {"out_dir": str(tmp_path / "x")}).out_dir == tmp_path / "x"


def test_mesh_file_path_resolved_against_config(tmp_path):
    path = tmp_path / "c.json"
    path.write_text('{"case": {"id": "lake_at_rest"}, "mesh": {"file": "m.mesh"}}')
    assert load_config(path).mesh.file == str(tmp_path / "m.mesh")


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "nope.json")
