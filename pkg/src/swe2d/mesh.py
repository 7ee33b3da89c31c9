"""Unstructured triangular meshes with edge-based connectivity.

Each edge is stored once with a unit normal pointing from its left cell to
its right cell. Cells keep three ``(edge, sign)`` incidences; ``sign * n``
is the outward normal of that cell on the edge.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from swe2d.errors import MeshError

BOUNDARY = -1


@dataclass(frozen=True)
class RawMesh:
    """Node coordinates and triangle node triples, as read or generated."""

    nodes: NDArray[np.float64]
    triangles: NDArray[np.int64]

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=np.float64)
        tris = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if nodes.ndim != 2 or nodes.shape[1] != 2:
            raise MeshError(f"nodes must have shape (n, 2), got {nodes.shape}")
        if tris.ndim != 2 or tris.shape[1] != 3:
            raise MeshError(f"triangles must have shape (m, 3), got {tris.shape}")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "triangles", tris)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_cells(self) -> int:
        return self.triangles.shape[0]


@dataclass(frozen=True, eq=False)
class Mesh:
    """Built mesh. All arrays are read-only."""

    nodes: NDArray[np.float64]
    cell_nodes: NDArray[np.int64]  # (m, 3), counter-clockwise
    area: NDArray[np.float64]
    centroid: NDArray[np.float64]  # (m, 2)
    perimeter: NDArray[np.float64]
    inradius: NDArray[np.float64]
    bathymetry: NDArray[np.float64]
    manning: NDArray[np.float64]
    cell_edges: NDArray[np.int64]  # (m, 3)
    cell_signs: NDArray[np.int64]  # (m, 3), +1 if the cell is the edge's left cell
    edge_nodes: NDArray[np.int64]  # (e, 2)
    edge_left: NDArray[np.int64]
    edge_right: NDArray[np.int64]  # BOUNDARY for wall edges
    edge_normal: NDArray[np.float64]  # (e, 2), unit, left -> right
    edge_length: NDArray[np.float64]

    def __post_init__(self):
        for name, value in vars(self).items():
            if isinstance(value, np.ndarray):
                value.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cell_nodes.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edge_nodes.shape[0]

    @property
    def boundary_edges(self) -> NDArray[np.int64]:
        return np.flatnonzero(self.edge_right == BOUNDARY)

    def closure_residual(self) -> NDArray[np.float64]:
        """Per-cell norm of the outward-signed sum of ``n_k * l_k``."""
        nl = self.edge_normal * self.edge_length[:, None]
        s = (self.cell_signs[:, :, None] * nl[self.cell_edges]).sum(axis=1)
        return np.hypot(s[:, 0], s[:, 1])


def generate_square_mesh(nx: int, ny: int, Lx: float, Ly: float) -> RawMesh:
    """Structured triangulation of ``[0, Lx] x [0, Ly]``.

    Every grid square is split along its (i, j)-(i+1, j+1) diagonal, so the
    triangulation maps onto itself under a 180 degree rotation about the
    domain centre; cell ``c`` maps to cell ``n_cells - 1 - c``.
    """
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise MeshError(f"nx and ny must be positive integers, got {nx}, {ny}")
    if not (Lx > 0 and Ly > 0):
        raise MeshError(f"Lx and Ly must be positive, got {Lx}, {Ly}")
    nx, ny = int(nx), int(ny)
    xs = np.arange(nx + 1) * (Lx / nx)
    ys = np.arange(ny + 1) * (Ly / ny)
    xs[-1], ys[-1] = Lx, Ly
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    j, i = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    n00 = (j * (nx + 1) + i).ravel()
    n10 = n00 + 1
    n01 = n00 + nx + 1
    n11 = n01 + 1
    tris = np.empty((2 * nx * ny, 3), dtype=np.int64)
    tris[0::2] = np.column_stack([n00, n10, n11])
    tris[1::2] = np.column_stack([n00, n11, n01])
    return RawMesh(nodes, tris)


def _signed_area(nodes, tris):
    p0, p1, p2 = nodes[tris[:, 0]], nodes[tris[:, 1]], nodes[tris[:, 2]]
    return 0.5 * ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
                  - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1]))


def _per_cell(values, n, name):
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 0:
        arr = np.full(n, float(arr))
    if arr.shape != (n,):
        raise MeshError(f"{name} has {arr.size} entries for {n} cells")
    if not np.all(np.isfinite(arr)):
        raise MeshError(f"{name} contains non-finite values")
    return arr.copy()


def build_mesh(raw: RawMesh, bathymetry=0.0, manning=0.0) -> Mesh:
    """Build connectivity and geometry from a raw triangulation.

    ``bathymetry`` and ``manning`` are per-cell arrays (scalars broadcast).
    Raises :class:`MeshError` for out-of-range or repeated node indices,
    zero-area triangles, size mismatches and non-manifold edges.
    """
    nodes, tris = raw.nodes, raw.triangles.copy()
    m = tris.shape[0]
    if m == 0:
        raise MeshError("mesh has no triangles")
    if tris.min() < 0 or tris.max() >= raw.n_nodes:
        bad = int(np.flatnonzero((tris < 0).any(1) | (tris >= raw.n_nodes).any(1))[0])
        raise MeshError(f"triangle {bad} references a node index out of range")
    degenerate = (tris[:, 0] == tris[:, 1]) | (tris[:, 1] == tris[:, 2]) | (tris[:, 0] == tris[:, 2])
    if degenerate.any():
        raise MeshError(f"triangle {int(np.flatnonzero(degenerate)[0])} repeats a node index")
    z = _per_cell(bathymetry, m, "bathymetry")
    n_man = _per_cell(manning, m, "manning")
    if (n_man < 0).any():
        raise MeshError("manning coefficients must be >= 0")

    sa = _signed_area(nodes, tris)
    flip = sa < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    area = np.abs(sa)
    if not (area > 0).all():
        raise MeshError(f"triangle {int(np.flatnonzero(area <= 0)[0])} has zero area")

    # half-edges a -> b in CCW order, local edge k joins vertex k and k+1
    a = tris.ravel()
    b = tris[:, [1, 2, 0]].ravel()
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    key = lo * raw.n_nodes + hi
    uniq, first, inverse, counts = np.unique(
        key, return_index=True, return_inverse=True, return_counts=True)
    if (counts > 2).any():
        e = int(np.flatnonzero(counts > 2)[0])
        raise MeshError(
            f"non-manifold edge ({uniq[e] // raw.n_nodes}, {uniq[e] % raw.n_nodes}) "
            f"shared by {counts[e]} triangles")
    n_edges = uniq.size
    half_cell = np.repeat(np.arange(m), 3)

    # left cell owns the lowest half-edge index (np.unique's first occurrence)
    is_left = np.zeros(3 * m, dtype=bool)
    is_left[first] = True
    edge_left = half_cell[first]
    edge_nodes = np.column_stack([a[first], b[first]])
    edge_right = np.full(n_edges, BOUNDARY, dtype=np.int64)
    right_half = np.flatnonzero(~is_left)
    edge_right[inverse[right_half]] = half_cell[right_half]
    # a consistently oriented neighbour traverses the shared edge backwards
    same_dir = a[right_half] == edge_nodes[inverse[right_half], 0]
    if same_dir.any():
        e = int(inverse[right_half[same_dir][0]])
        raise MeshError(
            f"non-manifold edge ({edge_nodes[e, 0]}, {edge_nodes[e, 1]}): "
            "incident triangles overlap")

    d = nodes[edge_nodes[:, 1]] - nodes[edge_nodes[:, 0]]
    length = np.hypot(d[:, 0], d[:, 1])
    normal = np.column_stack([d[:, 1], -d[:, 0]]) / length[:, None]

    cell_edges = inverse.reshape(m, 3).astype(np.int64)
    cell_signs = np.where(is_left, 1, -1).reshape(m, 3).astype(np.int64)
    perimeter = length[cell_edges].sum(axis=1)
    centroid = nodes[tris].mean(axis=1)

    return Mesh(
        nodes=nodes.copy(),
        cell_nodes=tris,
        area=area,
        centroid=centroid,
        perimeter=perimeter,
        inradius=2.0 * area / perimeter,
        bathymetry=z,
        manning=n_man,
        cell_edges=cell_edges,
        cell_signs=cell_signs,
        edge_nodes=edge_nodes.astype(np.int64),
        edge_left=edge_left.astype(np.int64),
        edge_right=edge_right,
        edge_normal=normal,
        edge_length=length,
    )


@dataclass
class DiagnosticsReport:
    n_nodes: int = 0
    n_cells: int = 0
    n_edges: int = 0
    n_boundary_edges: int = 0
    n_boundary_loops: int = 0
    min_area: float = float("nan")
    max_area: float = float("nan")
    min_inradius: float = float("nan")
    euler_characteristic: int = 0
    max_closure_residual: float = float("nan")
    euler_ok: bool = False
    closure_ok: bool = False
    errors: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors and self.euler_ok and self.closure_ok

    def lines(self) -> list[str]:
        out = [
            f"nodes            {self.n_nodes}",
            f"cells            {self.n_cells}",
            f"edges            {self.n_edges}",
            f"boundary edges   {self.n_boundary_edges}",
            f"boundary loops   {self.n_boundary_loops}",
            f"min area         {self.min_area:.6g}",
            f"max area         {self.max_area:.6g}",
            f"min inradius     {self.min_inradius:.6g}",
            f"V - E + F        {self.euler_characteristic}"
            f" ({'ok' if self.euler_ok else 'FAIL'})",
            f"closure residual {self.max_closure_residual:.3g}"
            f" ({'ok' if self.closure_ok else 'FAIL'})",
        ]
        out += [f"error: {e}" for e in self.errors]
        return out


def _boundary_loops(mesh: Mesh) -> int:
    bnd = mesh.boundary_edges
    if bnd.size == 0:
        return 0
    ends = mesh.edge_nodes[bnd]
    used, local = np.unique(ends, return_inverse=True)
    local = local.reshape(-1, 2)
    k = used.size
    graph = coo_matrix((np.ones(len(local)), (local[:, 0], local[:, 1])), shape=(k, k))
    n, _ = connected_components(graph, directed=False)
    return int(n)


def mesh_diagnostics(mesh: Mesh | RawMesh, bathymetry=0.0, manning=0.0) -> DiagnosticsReport:
    """Quality and topology report. Never raises for a broken raw mesh;
    build failures are recorded in ``errors``."""
    report = DiagnosticsReport()
    if isinstance(mesh, RawMesh):
        report.n_nodes, report.n_cells = mesh.n_nodes, mesh.n_cells
        try:
            mesh = build_mesh(mesh, bathymetry, manning)
        except MeshError as exc:
            report.errors.append(str(exc))
            return report
    report.n_nodes = mesh.n_nodes
    report.n_cells = mesh.n_cells
    report.n_edges = mesh.n_edges
    report.n_boundary_edges = int(mesh.boundary_edges.size)
    report.n_boundary_loops = _boundary_loops(mesh)
    report.min_area = float(mesh.area.min())
    report.max_area = float(mesh.area.max())
    report.min_inradius = float(mesh.inradius.min())
    report.euler_characteristic = mesh.n_nodes - mesh.n_edges + mesh.n_cells
    report.euler_ok = report.euler_characteristic == 2 - report.n_boundary_loops
    residual = mesh.closure_residual()
    report.max_closure_residual = float(residual.max())
    report.closure_ok = bool((residual <= 1e-10 * mesh.perimeter).all())
    return report
