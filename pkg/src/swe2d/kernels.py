"""Pointwise and edgewise physics for the 2D shallow water equations.

The ``_``-prefixed functions are numba-compiled scalar cores used by the
engine's loops; the public functions wrap them for ``ConservedState``
inputs and validate arguments. Everything is double precision.

Normal-frame convention: for a unit normal ``n = (nx, ny)`` the normal
momentum is ``qx*nx + qy*ny`` and the transverse momentum is
``-qx*ny + qy*nx``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numba import njit

from swe2d.errors import AdmissibilityError, BlowupError, PositivityError

GRAVITY = 9.81
SSTAR_DENOM_EPS = 1e-14
CLIP_RTOL = 1e-14


class ConservedState(NamedTuple):
    h: float
    qx: float
    qy: float


class Flux3(NamedTuple):
    mass: float
    momx: float
    momy: float


@dataclass(frozen=True)
class PhysParams:
    g: float = GRAVITY
    h_dry: float = 1e-6
    cfl: float = 0.7
    dt_max: float = 1.0

    def __post_init__(self):
        if not self.g > 0:
            raise ValueError(f"g must be positive, got {self.g}")
        if not self.h_dry > 0:
            raise ValueError(f"h_dry must be positive, got {self.h_dry}")
        if not 0 < self.cfl < 1:
            raise ValueError(f"cfl must lie in (0, 1), got {self.cfl}")
        if not self.dt_max > 0:
            raise ValueError(f"dt_max must be positive, got {self.dt_max}")


# --------------------------------------------------------------------------
# compiled cores

@njit(cache=True, nogil=True)
def _pressure(h, g, h_dry):
    if h < h_dry:
        return 0.0
    return 0.5 * g * h * h


@njit(cache=True, nogil=True)
def _velocity(h, q, h_dry):
    if h < h_dry:
        return 0.0
    return q / h


@njit(cache=True, nogil=True)
def _physical_flux_normal(h, qx, qy, nx, ny, g, h_dry):
    if h < h_dry:
        return 0.0, 0.0, 0.0
    qn = qx * nx + qy * ny
    un = qn / h
    p = 0.5 * g * h * h
    return qn, un * qx + p * nx, un * qy + p * ny


@njit(cache=True, nogil=True)
def _wave_speeds(hL, uL, hR, uR, g, h_dry):
    """(SL, Sstar, SR) in the normal frame; at least one side must be wet."""
    cL = math.sqrt(g * hL)
    cR = math.sqrt(g * hR)
    if hR < h_dry:
        SL = uL - cL
        SR = uL + 2.0 * cL
    elif hL < h_dry:
        SL = uR - 2.0 * cR
        SR = uR + cR
    else:
        u_star = 0.5 * (uL + uR) + cL - cR
        # sqrt(g * h_star) with h_star = c_star**2 / g
        c_star = abs(0.5 * (cL + cR) + 0.25 * (uL - uR))
        SL = min(uL - cL, u_star - c_star)
        SR = max(uR + cR, u_star + c_star)
    denom = hR * (uR - SR) - hL * (uL - SL)
    if abs(denom) < SSTAR_DENOM_EPS:
        s_star = 0.5 * (uL + uR)
    else:
        s_star = (SL * hR * (uR - SR) - SR * hL * (uL - SL)) / denom
    return SL, s_star, SR


@njit(cache=True, nogil=True)
def _hllc_normal(hL, unL, utL, hR, unR, utR, g, h_dry):
    """HLLC flux in the normal frame from primitive normal/transverse velocities.

    Mass and normal momentum use the HLL flux written as
    ``FL - SL * (dF - SR * dU) / (SR - SL)``, which is exactly ``FL`` for
    identical states; transverse momentum is upwinded by the contact speed.
    """
    if hL < h_dry and hR < h_dry:
        return 0.0, 0.0, 0.0
    if hL < h_dry:
        unL = 0.0
        utL = 0.0
    if hR < h_dry:
        unR = 0.0
        utR = 0.0
    SL, s_star, SR = _wave_speeds(hL, unL, hR, unR, g, h_dry)

    qL = hL * unL
    qR = hR * unR
    f0L = qL
    f1L = qL * unL + _pressure(hL, g, h_dry)
    f0R = qR
    f1R = qR * unR + _pressure(hR, g, h_dry)

    if SL >= 0.0:
        return f0L, f1L, f0L * utL
    if SR <= 0.0:
        return f0R, f1R, f0R * utR

    w = SL / (SR - SL)
    f0 = f0L - w * ((f0R - f0L) - SR * (hR - hL))
    f1 = f1L - w * ((f1R - f1L) - SR * (qR - qL))
    if s_star >= 0.0:
        f2 = f0 * utL
    else:
        f2 = f0 * utR
    return f0, f1, f2


@njit(cache=True, nogil=True)
def _hllc_flux(hL, qxL, qyL, hR, qxR, qyR, nx, ny, g, h_dry):
    unL = _velocity(hL, qxL * nx + qyL * ny, h_dry)
    utL = _velocity(hL, -qxL * ny + qyL * nx, h_dry)
    unR = _velocity(hR, qxR * nx + qyR * ny, h_dry)
    utR = _velocity(hR, -qxR * ny + qyR * nx, h_dry)
    f0, f1, f2 = _hllc_normal(hL, unL, utL, hR, unR, utR, g, h_dry)
    return f0, f1 * nx - f2 * ny, f1 * ny + f2 * nx


@njit(cache=True, nogil=True)
def _wall_flux(h, qx, qy, nx, ny, g, h_dry):
    """Reflective wall: HLLC against the mirror state.

    Mass and transverse components vanish by symmetry of the mirror
    problem and are set to exactly zero.
    """
    if h < h_dry:
        return 0.0, 0.0, 0.0
    un = (qx * nx + qy * ny) / h
    _, f1, _ = _hllc_normal(h, un, 0.0, h, -un, 0.0, g, h_dry)
    return 0.0, f1 * nx, f1 * ny


@njit(cache=True, nogil=True)
def _reconstruct(hL, zL, hR, zR):
    """Hydrostatic reconstruction of interface depths."""
    z_star = max(zL, zR)
    return max(0.0, hL + zL - z_star), max(0.0, hR + zR - z_star)


@njit(cache=True, nogil=True)
def _friction_factor(h, qx, qy, n_manning, dt, g, h_dry):
    if h < h_dry or n_manning == 0.0:
        return 1.0
    speed = math.sqrt(qx * qx + qy * qy) / h
    return 1.0 / (1.0 + dt * g * n_manning * n_manning * speed / h ** (4.0 / 3.0))


@njit(cache=True, nogil=True)
def _hllc_batch(hL, qxL, qyL, hR, qxR, qyR, nx, ny, g, h_dry, out):
    for i in range(hL.shape[0]):
        f0, f1, f2 = _hllc_flux(hL[i], qxL[i], qyL[i], hR[i], qxR[i], qyR[i],
                                nx[i], ny[i], g, h_dry)
        out[i, 0] = f0
        out[i, 1] = f1
        out[i, 2] = f2


@njit(cache=True, nogil=True)
def _physical_batch(h, qx, qy, nx, ny, g, h_dry, out):
    for i in range(h.shape[0]):
        f0, f1, f2 = _physical_flux_normal(h[i], qx[i], qy[i], nx[i], ny[i], g, h_dry)
        out[i, 0] = f0
        out[i, 1] = f1
        out[i, 2] = f2


@njit(cache=True, nogil=True)
def _wave_speed_batch(hL, uL, hR, uR, g, h_dry, out):
    for i in range(hL.shape[0]):
        SL, Ss, SR = _wave_speeds(hL[i], uL[i], hR[i], uR[i], g, h_dry)
        out[i, 0] = SL
        out[i, 1] = Ss
        out[i, 2] = SR


# --------------------------------------------------------------------------
# public API

def _check_state(U: ConservedState, what: str = "state"):
    if not U.h >= 0:
        raise AdmissibilityError(f"{what} has negative or NaN depth h={U.h}")


def _unit(n):
    nx, ny = float(n[0]), float(n[1])
    if abs(math.hypot(nx, ny) - 1.0) > 1e-12:
        raise ValueError(f"normal ({nx}, {ny}) is not a unit vector")
    return nx, ny


def physical_flux_normal(U: ConservedState, n, params: PhysParams = PhysParams()) -> Flux3:
    """Exact flux ``G*nx + H*ny``; zero for a dry state."""
    _check_state(U)
    nx, ny = _unit(n)
    return Flux3(*_physical_flux_normal(U.h, U.qx, U.qy, nx, ny, params.g, params.h_dry))


def wave_speed_estimates(hL, uL, hR, uR, params: PhysParams = PhysParams()):
    """Outer and contact wave speeds ``(SL, Sstar, SR)`` of a 1D normal-frame problem.

    Both sides dry has no meaningful answer; callers short-circuit to a
    zero flux, and this function raises ``ValueError`` for it.
    """
    if hL < 0 or hR < 0:
        raise AdmissibilityError(f"negative depth in ({hL}, {hR})")
    if hL < params.h_dry and hR < params.h_dry:
        raise ValueError("both sides dry: flux is zero, no wave speeds")
    if hL < params.h_dry:
        uL = 0.0
    if hR < params.h_dry:
        uR = 0.0
    return _wave_speeds(float(hL), float(uL), float(hR), float(uR), params.g, params.h_dry)


def hllc_flux(left: ConservedState, right: ConservedState, n,
              params: PhysParams = PhysParams()) -> Flux3:
    _check_state(left, "left state")
    _check_state(right, "right state")
    nx, ny = _unit(n)
    return Flux3(*_hllc_flux(left.h, left.qx, left.qy, right.h, right.qx, right.qy,
                             nx, ny, params.g, params.h_dry))


def hllc_flux_batch(left, right, normals, params: PhysParams = PhysParams()):
    """Vectorised :func:`hllc_flux`. ``left``/``right`` are (k, 3) arrays of
    ``(h, qx, qy)``, ``normals`` is (k, 2). Returns a (k, 3) array."""
    left = np.ascontiguousarray(left, dtype=np.float64)
    right = np.ascontiguousarray(right, dtype=np.float64)
    normals = np.ascontiguousarray(normals, dtype=np.float64)
    if (left[:, 0] < 0).any() or (right[:, 0] < 0).any():
        raise AdmissibilityError("negative depth in batch input")
    out = np.empty((left.shape[0], 3))
    _hllc_batch(left[:, 0].copy(), left[:, 1].copy(), left[:, 2].copy(),
                right[:, 0].copy(), right[:, 1].copy(), right[:, 2].copy(),
                normals[:, 0].copy(), normals[:, 1].copy(), params.g, params.h_dry, out)
    return out


def physical_flux_batch(states, normals, params: PhysParams = PhysParams()):
    states = np.ascontiguousarray(states, dtype=np.float64)
    normals = np.ascontiguousarray(normals, dtype=np.float64)
    out = np.empty((states.shape[0], 3))
    _physical_batch(states[:, 0].copy(), states[:, 1].copy(), states[:, 2].copy(),
                    normals[:, 0].copy(), normals[:, 1].copy(), params.g, params.h_dry, out)
    return out


def wave_speed_batch(hL, uL, hR, uR, params: PhysParams = PhysParams()):
    args = [np.ascontiguousarray(a, dtype=np.float64) for a in (hL, uL, hR, uR)]
    out = np.empty((args[0].shape[0], 3))
    _wave_speed_batch(*args, params.g, params.h_dry, out)
    return out


def hydrostatic_reconstruct(UL: ConservedState, zL: float, UR: ConservedState, zR: float,
                            n, params: PhysParams = PhysParams()):
    """Reconstruct both sides against the interface bed ``max(zL, zR)``.

    Returns ``(UL*, UR*, corrL, corrR)``. ``corr_s`` is the pressure
    correction ``(g/2)(h_s**2 - h_s***2) n`` to add to the interface flux on
    side ``s`` (expressed along ``n``, the left-to-right normal).
    """
    _check_state(UL, "left state")
    _check_state(UR, "right state")
    nx, ny = _unit(n)
    g, h_dry = params.g, params.h_dry
    hLs, hRs = _reconstruct(UL.h, zL, UR.h, zR)
    uL, vL = _velocity(UL.h, UL.qx, h_dry), _velocity(UL.h, UL.qy, h_dry)
    uR, vR = _velocity(UR.h, UR.qx, h_dry), _velocity(UR.h, UR.qy, h_dry)
    dpL = _pressure(UL.h, g, h_dry) - _pressure(hLs, g, h_dry)
    dpR = _pressure(UR.h, g, h_dry) - _pressure(hRs, g, h_dry)
    return (
        ConservedState(hLs, hLs * uL, hLs * vL),
        ConservedState(hRs, hRs * uR, hRs * vR),
        Flux3(0.0, dpL * nx, dpL * ny),
        Flux3(0.0, dpR * nx, dpR * ny),
    )


def wall_flux(U: ConservedState, n, params: PhysParams = PhysParams()) -> Flux3:
    """Flux through a reflective wall with outward normal ``n``."""
    _check_state(U)
    nx, ny = _unit(n)
    return Flux3(*_wall_flux(U.h, U.qx, U.qy, nx, ny, params.g, params.h_dry))


def stable_dt(h, qx, qy, inradius, params: PhysParams = PhysParams()) -> float:
    """CFL time step over wet cells; ``params.dt_max`` when everything is dry."""
    h = np.asarray(h, dtype=np.float64)
    qx = np.asarray(qx, dtype=np.float64)
    qy = np.asarray(qy, dtype=np.float64)
    wet = h >= params.h_dry
    if not wet.any():
        return params.dt_max
    hw = h[wet]
    with np.errstate(invalid="ignore", over="ignore"):
        speed = np.sqrt(qx[wet] ** 2 + qy[wet] ** 2) / hw
    bad = ~np.isfinite(speed)
    if bad.any():
        cell = int(np.flatnonzero(wet)[np.flatnonzero(bad)[0]])
        raise BlowupError(f"non-finite velocity in cell {cell}", cell=cell)
    bound = np.asarray(inradius, dtype=np.float64)[wet] / (speed + np.sqrt(params.g * hw))
    return float(params.cfl * bound.min())


def apply_friction(U: ConservedState, n_manning: float, dt: float,
                   params: PhysParams = PhysParams()) -> ConservedState:
    """Semi-implicit Manning friction: both momenta divided by
    ``1 + dt g n^2 |u| / h^(4/3)`` evaluated on the given state."""
    f = _friction_factor(U.h, U.qx, U.qy, n_manning, dt, params.g, params.h_dry)
    if f == 1.0:
        return U
    return ConservedState(U.h, U.qx * f, U.qy * f)


def clamp_dry(U: ConservedState, params: PhysParams = PhysParams(),
              h_ref: float = 1.0) -> ConservedState:
    """Zero the momentum of dry cells and clip round-off negative depths.

    Depths below ``-1e-14 * h_ref`` raise :class:`PositivityError`.
    """
    h = U.h
    if h < 0:
        if h < -CLIP_RTOL * h_ref:
            raise PositivityError(f"negative depth {h} beyond round-off tolerance")
        h = 0.0
    if h < params.h_dry:
        return ConservedState(h, 0.0, 0.0)
    return U
