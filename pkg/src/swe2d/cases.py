"""Initial conditions, bathymetries and analytic references for the test cases."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from swe2d.engine import State
from swe2d.errors import CaseError, OracleError
from swe2d.kernels import GRAVITY
from swe2d.mesh import Mesh, RawMesh, build_mesh, generate_square_mesh

CASE_IDS = ("water_drop", "three_mounds", "lake_at_rest", "dam_break_1d")
BATHYMETRIES = ("flat", "three_mounds", "bump")

# (x, y, height, radius) of the conical mounds
THREE_MOUNDS = ((30.0, 6.0, 1.0, 8.0), (30.0, 24.0, 1.0, 8.0), (47.5, 15.0, 3.0, 10.0))


@dataclass(frozen=True)
class CaseSpec:
    """Declarative case description. Unset fields take the case defaults
    from :func:`default_case`."""

    case: str
    lx: float
    ly: float
    t_end: float
    eta0: float = 1.0
    amplitude: float = 0.5
    sigma: float = 50.0
    h_left: float = 1.0
    h_right: float = 0.1
    x_dam: float = 0.0
    manning: float = 0.0
    bathymetry: str = "flat"
    nx: int = 23
    ny: int = 23

    def __post_init__(self):
        if self.case not in CASE_IDS:
            raise CaseError(f"unknown case {self.case!r}; expected one of {CASE_IDS}")
        if self.bathymetry not in BATHYMETRIES:
            raise CaseError(f"unknown bathymetry {self.bathymetry!r}")
        if not (self.lx > 0 and self.ly > 0):
            raise CaseError("domain extents must be positive")
        if not self.t_end > 0:
            raise CaseError(f"t_end must be positive, got {self.t_end}")
        if self.manning < 0:
            raise CaseError("manning must be >= 0")
        if self.case == "water_drop" and not (self.sigma > 0 and self.eta0 > 0
                                              and self.eta0 + min(self.amplitude, 0) > 0):
            raise CaseError("water_drop needs sigma > 0 and a positive free surface")
        if self.case == "dam_break_1d" and not self.h_left > self.h_right >= 0:
            raise CaseError("dam_break_1d requires h_left > h_right >= 0")
        if self.case == "three_mounds" and not self.h_left > 0:
            raise CaseError("three_mounds requires a positive reservoir depth")

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **changes) -> CaseSpec:
        return replace(self, **changes)


_DEFAULTS = {
    "water_drop": dict(lx=1000.0, ly=1000.0, t_end=2400.0, eta0=1.0, amplitude=0.5,
                       sigma=50.0, manning=0.0, nx=23, ny=23),
    "three_mounds": dict(lx=75.0, ly=30.0, t_end=60.0, h_left=1.875, x_dam=16.0,
                         manning=0.018, bathymetry="three_mounds", nx=100, ny=40),
    "lake_at_rest": dict(lx=75.0, ly=30.0, t_end=10.0, eta0=1.5,
                         bathymetry="three_mounds", nx=100, ny=40),
    "dam_break_1d": dict(lx=100.0, ly=25.0, t_end=6.0, h_left=1.0, h_right=0.1,
                         x_dam=50.0, nx=128, ny=32),
}

CASE_FIELDS = tuple(f.name for f in fields(CaseSpec))


def default_case(case: str, **overrides) -> CaseSpec:
    if case not in _DEFAULTS:
        raise CaseError(f"unknown case {case!r}; expected one of {CASE_IDS}")
    return CaseSpec(case=case, **{**_DEFAULTS[case], **overrides})


def bathymetry_at(kind: str, x, y, lx: float = 75.0, ly: float = 30.0):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if kind == "flat":
        return np.zeros(np.broadcast(x, y).shape)
    if kind == "three_mounds":
        z = np.zeros(np.broadcast(x, y).shape)
        for xc, yc, height, radius in THREE_MOUNDS:
            cone = height - height / radius * np.hypot(x - xc, y - yc)
            z = np.maximum(z, cone)
        return z
    if kind == "bump":
        return 0.8 * np.exp(-((x - lx / 2) ** 2 + (y - ly / 2) ** 2) / (0.02 * lx * ly))
    raise CaseError(f"unknown bathymetry {kind!r}")


def _exact_lake(eta0: float, z):
    """Depths with ``h + z == eta0`` exactly in floating point where wet."""
    h = np.maximum(eta0 - z, 0.0)
    wet = h > 0
    for _ in range(8):
        s = h + z
        hi = wet & (s > eta0)
        lo = wet & (s < eta0)
        if not (hi.any() or lo.any()):
            break
        h[hi] = np.nextafter(h[hi], -np.inf)
        h[lo] = np.nextafter(h[lo], np.inf)
    return h


def init_case(spec: CaseSpec, mesh: Mesh, use_mesh_fields: bool = False):
    """Per-cell ``(bathymetry, manning, State)`` evaluated at cell centroids.

    With ``use_mesh_fields`` the mesh's own bathymetry and Manning
    coefficients are kept (meshes read from file).
    """
    x, y = mesh.centroid[:, 0], mesh.centroid[:, 1]
    m = mesh.n_cells
    qx = np.zeros(m)
    qy = np.zeros(m)
    if use_mesh_fields:
        z = np.array(mesh.bathymetry)
        manning = np.array(mesh.manning)
    else:
        z = bathymetry_at(spec.bathymetry, x, y, spec.lx, spec.ly)
        manning = np.full(m, spec.manning)

    if spec.case == "water_drop":
        r2 = (x - 0.5 * spec.lx) ** 2 + (y - 0.5 * spec.ly) ** 2
        eta = spec.eta0 + spec.amplitude * np.exp(-r2 / (2.0 * spec.sigma ** 2))
        h = eta - z
        if (h < 0).any():
            raise CaseError("water_drop free surface lies below the bed")
    elif spec.case == "three_mounds":
        h = np.where(x < spec.x_dam, np.maximum(spec.h_left - z, 0.0), 0.0)
    elif spec.case == "lake_at_rest":
        h = _exact_lake(spec.eta0, z)
    else:
        h = np.where(x < spec.x_dam, spec.h_left, spec.h_right).astype(np.float64)
        h = np.maximum(h - z, 0.0)
    return z, manning, State(h, qx, qy, 0.0)


def setup_case(spec: CaseSpec, raw: RawMesh | None = None, bathymetry=None, manning=None):
    """Build the mesh and initial state for ``spec``.

    The mesh is generated from the case grid settings unless ``raw`` is given. Per-cell
    ``bathymetry``/``manning`` (as read from a mesh file) take precedence
    over the case's own fields.
    """
    if raw is None:
        raw = generate_square_mesh(spec.nx, spec.ny, spec.lx, spec.ly)
    if bathymetry is not None:
        mesh = build_mesh(raw, bathymetry, 0.0 if manning is None else manning)
        _, _, state = init_case(spec, mesh, use_mesh_fields=True)
        return mesh, state
    z, n, state = init_case(spec, build_mesh(raw))
    return build_mesh(raw, z, n), state


def _stoker_function(hm, hL, hR, g):
    # rarefaction into the left state equals the shock into the right state
    u_raref = 2.0 * (math.sqrt(g * hL) - math.sqrt(g * hm))
    u_shock = (hm - hR) * math.sqrt(0.5 * g * (hm + hR) / (hm * hR))
    return u_raref - u_shock


def stoker_middle_state(hL: float, hR: float, g: float = GRAVITY, tol: float = 1e-12):
    """Middle depth and velocity ``(h_m, u_m)`` and shock speed of the wet-bed
    dam break, by bisection on ``(hR, hL)``."""
    if not hL > hR > 0:
        raise OracleError(f"wet-bed dam break needs hL > hR > 0, got {hL}, {hR}")
    lo, hi = hR, hL
    flo = _stoker_function(lo, hL, hR, g)
    if not flo > 0 or not _stoker_function(hi, hL, hR, g) < 0:
        raise OracleError("root of the depth function is not bracketed")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = _stoker_function(mid, hL, hR, g)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi - lo <= tol * hL:
            break
    else:
        raise OracleError("bisection did not converge")
    hm = 0.5 * (lo + hi)
    um = 2.0 * (math.sqrt(g * hL) - math.sqrt(g * hm))
    shock = hm * um / (hm - hR)
    return hm, um, shock


def stoker_exact(hL: float, hR: float, x, t: float, x_dam: float = 0.0, g: float = GRAVITY):
    """Depth and velocity of the wet-bed dam break at positions ``x``, time ``t``.

    Left state at rest, rarefaction fan, constant middle state, shock into
    the right state at rest.
    """
    x = np.asarray(x, dtype=np.float64)
    if t < 0:
        raise OracleError("t must be >= 0")
    if hL == hR:
        return np.full(x.shape, float(hL)), np.zeros(x.shape)
    if t == 0:
        return np.where(x < x_dam, hL, hR).astype(np.float64), np.zeros(x.shape)
    hm, um, shock = stoker_middle_state(hL, hR, g)
    cL = math.sqrt(g * hL)
    cm = math.sqrt(g * hm)
    xi = (x - x_dam) / t
    h = np.full(x.shape, float(hR))
    u = np.zeros(x.shape)
    left = xi < -cL
    fan = (xi >= -cL) & (xi < um - cm)
    middle = (xi >= um - cm) & (xi < shock)
    h[left] = hL
    h[fan] = (2.0 * cL - xi[fan]) ** 2 / (9.0 * g)
    u[fan] = 2.0 / 3.0 * (cL + xi[fan])
    h[middle] = hm
    u[middle] = um
    return h, u
