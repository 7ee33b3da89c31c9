"""File interfaces: SWEMESH meshes, VTK snapshots, CSV stats, JSON run configs.

Floats are written with 17 significant digits so every double round-trips.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import IO, Iterable

import numpy as np

from swe2d.cases import CASE_FIELDS, CaseSpec, default_case
from swe2d.engine import State, StepStats
from swe2d.errors import CaseError, ConfigError, MeshError, MeshFormatError
from swe2d.kernels import PhysParams
from swe2d.mesh import Mesh, RawMesh

MAGIC = "SWEMESH 1"
STATS_HEADER = ("step", "t", "dt", "mass", "mass_drift", "max_speed",
                "wall_ms_flux", "wall_ms_update")


def fmt(x: float) -> str:
    return "%.17g" % x


# --------------------------------------------------------------------------
# SWEMESH

def _tokens(line: str):
    """Yield (token, 1-based column)."""
    col = 0
    for tok in line.split():
        col = line.index(tok, col)
        yield tok, col + 1
        col += len(tok)


def _parse_float(tok, line_no, col):
    try:
        v = float(tok)
    except ValueError:
        raise MeshFormatError(f"expected a number, got {tok!r}", line_no, col) from None
    if not math.isfinite(v):
        raise MeshFormatError(f"non-finite number {tok!r}", line_no, col)
    return v


def _parse_int(tok, line_no, col):
    try:
        return int(tok)
    except ValueError:
        raise MeshFormatError(f"expected an integer, got {tok!r}", line_no, col) from None


def read_mesh_native(stream: IO[str] | str | os.PathLike):
    """Parse a SWEMESH file. Returns ``(RawMesh, bathymetry, manning)``.

    Layout: ``SWEMESH 1``; ``<nnodes> <ncells>``; one ``x y`` line per node;
    one ``i j k z_b n_manning`` line per cell with 0-based node indices.
    """
    if isinstance(stream, (str, os.PathLike)):
        with open(stream, encoding="ascii") as f:
            return read_mesh_native(f)
    lines = stream.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()

    def line(k):
        if k > len(lines):
            return None
        return lines[k - 1]

    if line(1) is None or line(1).strip() != MAGIC:
        raise MeshFormatError(f"bad magic, expected {MAGIC!r}", 1)
    header = list(_tokens(line(2) or ""))
    if len(header) != 2:
        raise MeshFormatError("expected '<nnodes> <ncells>'", 2)
    n_nodes = _parse_int(header[0][0], 2, header[0][1])
    n_cells = _parse_int(header[1][0], 2, header[1][1])
    if n_nodes < 3 or n_cells < 1:
        raise MeshFormatError("need at least 3 nodes and 1 cell", 2)

    nodes = np.empty((n_nodes, 2))
    for k in range(n_nodes):
        ln = 3 + k
        text = line(ln)
        if text is None:
            raise MeshFormatError(
                f"count mismatch: header declares {n_nodes} nodes, found {k}", ln)
        toks = list(_tokens(text))
        if len(toks) != 2:
            raise MeshFormatError(f"node line needs 2 values, got {len(toks)}", ln)
        nodes[k] = [_parse_float(t, ln, c) for t, c in toks]

    tris = np.empty((n_cells, 3), dtype=np.int64)
    z = np.empty(n_cells)
    manning = np.empty(n_cells)
    for k in range(n_cells):
        ln = 3 + n_nodes + k
        text = line(ln)
        if text is None:
            raise MeshFormatError(
                f"count mismatch: header declares {n_cells} cells, found {k}", ln)
        toks = list(_tokens(text))
        if len(toks) != 5:
            raise MeshFormatError(f"cell line needs 5 values, got {len(toks)}", ln)
        for j in range(3):
            tok, col = toks[j]
            idx = _parse_int(tok, ln, col)
            if not 0 <= idx < n_nodes:
                raise MeshFormatError(f"node index {idx} out of range [0, {n_nodes})", ln, col)
            tris[k, j] = idx
        z[k] = _parse_float(toks[3][0], ln, toks[3][1])
        manning[k] = _parse_float(toks[4][0], ln, toks[4][1])
        if manning[k] < 0:
            raise MeshFormatError("negative manning coefficient", ln, toks[4][1])
    extra = 3 + n_nodes + n_cells
    for ln in range(extra, len(lines) + 1):
        if lines[ln - 1].strip():
            raise MeshFormatError("unexpected content after the last cell", ln)
    return RawMesh(nodes, tris), z, manning


def write_mesh_native(stream: IO[str] | str | os.PathLike, raw: RawMesh,
                      bathymetry=0.0, manning=0.0):
    m = raw.n_cells
    z = np.broadcast_to(np.asarray(bathymetry, dtype=np.float64), (m,))
    n = np.broadcast_to(np.asarray(manning, dtype=np.float64), (m,))
    if isinstance(stream, (str, os.PathLike)):
        with open(stream, "w", encoding="ascii", newline="\n") as f:
            return write_mesh_native(f, raw, z, n)
    out = [MAGIC, f"{raw.n_nodes} {m}"]
    out += [f"{fmt(x)} {fmt(y)}" for x, y in raw.nodes]
    out += [f"{i} {j} {k} {fmt(zz)} {fmt(nn)}"
            for (i, j, k), zz, nn in zip(raw.triangles.tolist(), z, n)]
    stream.write("\n".join(out) + "\n")


# --------------------------------------------------------------------------
# VTK

def write_vtk_snapshot(mesh: Mesh, state: State, t: float, path):
    """Legacy ASCII VTK unstructured grid with per-cell h, eta, z and velocity."""
    m = mesh.n_cells
    if state.h.shape != (m,):
        raise ValueError(f"state has {state.h.shape[0]} cells, mesh has {m}")
    h = state.h
    wet = h > 0
    u = np.zeros(m)
    v = np.zeros(m)
    u[wet] = state.qx[wet] / h[wet]
    v[wet] = state.qy[wet] / h[wet]
    eta = h + mesh.bathymetry

    out = ["# vtk DataFile Version 3.0", f"swe2d snapshot t={fmt(t)}", "ASCII",
           "DATASET UNSTRUCTURED_GRID", f"POINTS {mesh.n_nodes} double"]
    out += [f"{fmt(x)} {fmt(y)} 0" for x, y in mesh.nodes]
    out.append(f"CELLS {m} {4 * m}")
    out += [f"3 {i} {j} {k}" for i, j, k in mesh.cell_nodes.tolist()]
    out.append(f"CELL_TYPES {m}")
    out += ["5"] * m
    out.append(f"CELL_DATA {m}")
    for name, values in (("h", h), ("eta", eta), ("z", mesh.bathymetry)):
        out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        out += [fmt(x) for x in values]
    out.append("VECTORS velocity double")
    out += [f"{fmt(a)} {fmt(b)} 0" for a, b in zip(u, v)]
    try:
        with open(path, "w", encoding="ascii", newline="\n") as f:
            f.write("\n".join(out) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write VTK snapshot {path}: {exc.strerror}") from exc


# --------------------------------------------------------------------------
# CSV

def write_stats_csv(rows: Iterable[StepStats], path, timings: bool = False):
    """Per-step stats. Wall-time columns stay empty unless ``timings`` is set,
    which keeps the file reproducible byte for byte."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(STATS_HEADER)
        for s in rows:
            w.writerow([s.step, fmt(s.t), fmt(s.dt), fmt(s.mass), fmt(s.mass_drift),
                        fmt(s.max_speed),
                        fmt(s.wall_ms_flux) if timings else "",
                        fmt(s.wall_ms_update) if timings else ""])


def write_table_csv(rows: list[dict], path, columns: Iterable[str]):
    columns = list(columns)
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (fmt(v) if isinstance(v, float) else v) for k, v in r.items()})


# --------------------------------------------------------------------------
# config

@dataclass(frozen=True)
class MeshSource:
    file: str | None = None
    nx: int | None = None
    ny: int | None = None
    lx: float | None = None
    ly: float | None = None

    def to_dict(self) -> dict:
        if self.file is not None:
            return {"file": self.file}
        return {"generate": {"nx": self.nx, "ny": self.ny, "lx": self.lx, "ly": self.ly}}


@dataclass(frozen=True)
class BackendSpec:
    kind: str = "seq"
    threads: int = 1
    deterministic: bool = True


@dataclass(frozen=True)
class OutputSpec:
    dir: str = "."
    snapshot_interval: float | None = None
    vtk_pattern: str = "snapshot_{index:04d}.vtk"
    stats_csv: str = "stats.csv"
    csv_timings: bool = False
    echo: str = "effective_config.json"


@dataclass(frozen=True)
class Config:
    mesh: MeshSource
    case: CaseSpec
    params: PhysParams = field(default_factory=PhysParams)
    backend: BackendSpec = field(default_factory=BackendSpec)
    outputs: OutputSpec = field(default_factory=OutputSpec)

    def to_dict(self) -> dict:
        case = self.case.to_dict()
        case_id = case.pop("case")
        return {
            "case": {"id": case_id, **case},
            "mesh": self.mesh.to_dict(),
            "params": asdict(self.params),
            "backend": asdict(self.backend),
            "outputs": asdict(self.outputs),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @property
    def out_dir(self) -> Path:
        return Path(self.outputs.dir)


_TOP_KEYS = {"case", "mesh", "params", "backend", "outputs"}
_CASE_KEYS = {"id"} | (set(CASE_FIELDS) - {"case"})
_PARAM_KEYS = {"g", "h_dry", "cfl", "dt_max"}
_BACKEND_KEYS = {"kind", "threads", "deterministic"}
_OUTPUT_KEYS = {"dir", "snapshot_interval", "vtk_pattern", "stats_csv", "csv_timings", "echo"}
_GEN_KEYS = {"nx", "ny", "lx", "ly"}
OVERRIDE_KEYS = {"threads", "backend", "t_end", "out_dir"}


def _section(d, name, allowed):
    sec = d.get(name, {})
    if sec is None:
        sec = {}
    if not isinstance(sec, dict):
        raise ConfigError(f"'{name}' must be an object")
    unknown = set(sec) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in '{name}': {', '.join(sorted(unknown))}")
    return dict(sec)


def parse_config(text: str, overrides: dict | None = None, base_dir=None) -> Config:
    """Validate a JSON run configuration, apply defaults and CLI overrides.

    ``overrides`` may hold ``threads``, ``backend``, ``t_end`` and
    ``out_dir``; they win over file values. Relative paths are resolved
    against ``base_dir`` when given.
    """
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    unknown = set(overrides) - OVERRIDE_KEYS
    if unknown:
        raise ConfigError(f"unknown override(s): {', '.join(sorted(unknown))}")
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from None
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(d) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(unknown))}")

    case_d = _section(d, "case", _CASE_KEYS)
    if "id" not in case_d:
        raise ConfigError("case.id is required")
    case_id = case_d.pop("id")
    if "t_end" in overrides:
        case_d["t_end"] = float(overrides["t_end"])
    try:
        case = default_case(case_id, **case_d)
    except (CaseError, TypeError) as exc:
        raise ConfigError(f"case: {exc}") from None

    mesh_d = _section(d, "mesh", {"file", "generate"})
    if "file" in mesh_d and "generate" in mesh_d:
        raise ConfigError("mesh: give either 'file' or 'generate', not both")
    if "file" in mesh_d:
        path = mesh_d["file"]
        if not isinstance(path, str) or not path:
            raise ConfigError("mesh.file must be a non-empty string")
        if base_dir is not None and not os.path.isabs(path):
            path = os.path.normpath(os.path.join(base_dir, path))
        mesh = MeshSource(file=path)
    else:
        gen = _section(mesh_d, "generate", _GEN_KEYS)
        mesh = MeshSource(nx=int(gen.get("nx", case.nx)), ny=int(gen.get("ny", case.ny)),
                          lx=float(gen.get("lx", case.lx)), ly=float(gen.get("ly", case.ly)))
        if mesh.nx < 1 or mesh.ny < 1 or not (mesh.lx > 0 and mesh.ly > 0):
            raise ConfigError("mesh.generate needs positive nx, ny, lx, ly")

    try:
        params = PhysParams(**_section(d, "params", _PARAM_KEYS))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"params: {exc}") from None

    be = _section(d, "backend", _BACKEND_KEYS)
    if "backend" in overrides:
        be["kind"] = overrides["backend"]
    if "threads" in overrides:
        be["threads"] = int(overrides["threads"])
    backend = BackendSpec(**be)
    if backend.kind not in ("seq", "par"):
        raise ConfigError(f"backend.kind must be 'seq' or 'par', got {backend.kind!r}")
    if not isinstance(backend.threads, int) or backend.threads < 1:
        raise ConfigError("backend.threads must be a positive integer")

    out = _section(d, "outputs", _OUTPUT_KEYS)
    if "out_dir" in overrides:
        out["dir"] = str(overrides["out_dir"])
    elif base_dir is not None and not os.path.isabs(out.get("dir", ".")):
        out["dir"] = os.path.normpath(os.path.join(base_dir, out.get("dir", ".")))
    outputs = OutputSpec(**out)
    if outputs.snapshot_interval is not None and not outputs.snapshot_interval > 0:
        raise ConfigError("outputs.snapshot_interval must be > 0 or null")
    return Config(mesh, case, params, backend, outputs)


def load_config(path, overrides: dict | None = None) -> Config:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, overrides, base_dir=path.parent.resolve())


def check_output_dir(config: Config) -> Path:
    """Create the output directory and make sure it is writable."""
    out = config.out_dir
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc.strerror}") from None
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory {out} is not writable")
    return out


def load_mesh_source(source: MeshSource):
    """RawMesh plus the file's per-cell fields (``None`` for generated meshes)."""
    from swe2d.mesh import generate_square_mesh

    if source.file is not None:
        try:
            return read_mesh_native(source.file)
        except OSError as exc:
            raise MeshError(f"cannot read mesh {source.file}: {exc.strerror}") from None
    return generate_square_mesh(source.nx, source.ny, source.lx, source.ly), None, None
