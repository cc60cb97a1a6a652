"""Geodesic coordinates, Carnot-Caratheodory distance and region labels.

The chart sends ``(u, eta)`` with ``0 < |eta| < 2 pi`` to the endpoint of
the unit-time geodesic whose horizontal projection is a circular arc
centered at ``u`` subtending the angle ``|eta|``:

    x = (I - exp(J_eta)) u,    z = |u|^2 / 2 (1 - sin|eta| / |eta|) eta,

with ``exp(J_eta) = cos|eta| I + sin|eta| / |eta| J_eta``.  Radial data
of the image depends on ``(|u|, |eta|)`` only, see :func:`phi_norms`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .algebra import HTypeGroup, Point, _unpack
from .special import one_minus_cos, sin_minus_theta_cos, sinc, theta_minus_sin

__all__ = [
    "GeodesicCoords",
    "Region",
    "OutsideChart",
    "InsideBall",
    "DomainError",
    "phi",
    "phi_xz",
    "phi_norms",
    "phi_inverse",
    "solve_angle",
    "cc_distance_from_identity",
    "cc_distance_norms",
    "cc_distance",
    "jacobian_A",
    "radial_weight",
    "region_classify",
    "in_unit_ball",
]

TWO_PI = 2.0 * math.pi
ETA_CAP = TWO_PI - 1e-9


class DomainError(ValueError):
    pass


class OutsideChart(DomainError):
    """Raised for points with x = 0 or z = 0, which the chart misses."""


class InsideBall(DomainError):
    """Raised when a region label is requested inside the unit ball."""


class Region(enum.Enum):
    R1 = "R1"
    R2 = "R2"
    R3 = "R3"


@dataclass(frozen=True)
class GeodesicCoords:
    u: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        u = np.array(self.u, dtype=float).reshape(-1)
        eta = np.array(self.eta, dtype=float).reshape(-1)
        ru, re = np.linalg.norm(u), np.linalg.norm(eta)
        if not ru > 0:
            raise DomainError("geodesic coordinates need |u| > 0")
        if not 0 < re < TWO_PI:
            raise DomainError(f"geodesic coordinates need 0 < |eta| < 2 pi, got {re}")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "eta", eta)

    @property
    def r(self) -> float:
        return float(np.linalg.norm(self.u))

    @property
    def rho(self) -> float:
        return float(np.linalg.norm(self.eta))


def phi_xz(G: HTypeGroup, u, eta):
    """Vectorized chart map on arrays of shape (..., 2n) and (..., m)."""
    u = np.asarray(u, dtype=float)
    eta = np.asarray(eta, dtype=float)
    rho = np.linalg.norm(eta, axis=-1)
    r2 = np.sum(u * u, axis=-1)
    Ju = G.j_map(eta, u)
    x = one_minus_cos(rho)[..., None] * u - sinc(rho)[..., None] * Ju
    # (1 - sin rho / rho) eta = (rho - sin rho)/rho * eta
    with np.errstate(invalid="ignore", divide="ignore"):
        zfac = np.where(rho > 0, theta_minus_sin(rho) / np.where(rho > 0, rho, 1.0), 0.0)
    z = (0.5 * r2 * zfac)[..., None] * eta
    return x, z


def phi(G: HTypeGroup, c: GeodesicCoords) -> Point:
    if c.u.shape != (2 * G.n,) or c.eta.shape != (G.m,):
        raise DomainError("coordinate dimensions do not match the group")
    return Point(*phi_xz(G, c.u, c.eta))


def phi_norms(r, rho):
    """(|x|, |z|) of the image of any (u, eta) with |u| = r, |eta| = rho."""
    r = np.asarray(r, dtype=float)
    rho = np.asarray(rho, dtype=float)
    return 2.0 * r * np.abs(np.sin(0.5 * rho)), 0.5 * r * r * theta_minus_sin(rho)


def _angle_ratio(theta):
    """(theta - sin theta) / (2 - 2 cos theta), increasing on (0, 2 pi)."""
    return theta_minus_sin(theta) / (2.0 * one_minus_cos(theta))


def solve_angle(c):
    """Solve (theta - sin theta)/(2 - 2 cos theta) = c for theta in (0, 2 pi).

    Vectorized bisection down to a bracket width of 1e-14, followed by two
    Newton steps.
    """
    c = np.asarray(c, dtype=float)
    lo = np.zeros_like(c)
    hi = np.full_like(c, TWO_PI)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        above = _angle_ratio(np.where(mid > 0, mid, 1e-300)) > c
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
        if np.all(hi - lo < 1e-14):
            break
    theta = 0.5 * (lo + hi)
    for _ in range(2):
        F = _angle_ratio(theta)
        D = 2.0 * one_minus_cos(theta)
        dF = 0.5 - 2.0 * F * np.sin(theta) / D
        step = (F - c) / dF
        cand = theta - step
        ok = (cand > 0) & (cand < TWO_PI) & np.isfinite(cand)
        theta = np.where(ok, cand, theta)
    return theta


def phi_inverse(G: HTypeGroup, g) -> GeodesicCoords:
    """Geodesic coordinates of a point with x != 0 and z != 0."""
    x, z = _unpack(g)
    nx, nz = np.linalg.norm(x), np.linalg.norm(z)
    if nx == 0 or nz == 0:
        raise OutsideChart("phi_inverse needs x != 0 and z != 0")
    theta = float(solve_angle(2.0 * nz / nx ** 2))
    zhat = z / nz
    # (I - exp(J_eta))^{-1} x = x/2 + cot(theta/2)/2 J_zhat x
    u = 0.5 * x + 0.5 / math.tan(0.5 * theta) * G.j_map(zhat, x)
    return GeodesicCoords(u, theta * zhat)


def cc_distance_norms(nx, nz):
    """d(0, (x, z)) as a function of |x| and |z| (vectorized)."""
    nx = np.asarray(nx, dtype=float)
    nz = np.asarray(nz, dtype=float)
    nx, nz = np.broadcast_arrays(nx, nz)
    out = np.empty(nx.shape)
    axis_z = nx == 0
    axis_x = (nz == 0) & ~axis_z
    gen = ~(axis_z | axis_x)
    out[axis_z] = 2.0 * np.sqrt(math.pi * nz[axis_z])
    out[axis_x] = nx[axis_x]
    if np.any(gen):
        theta = solve_angle(2.0 * nz[gen] / nx[gen] ** 2)
        # |u| = |x| / (2 sin(theta/2)); d = |u| theta
        out[gen] = nx[gen] * 0.5 * theta / np.sin(0.5 * theta)
    return out


def cc_distance_from_identity(G: HTypeGroup, g) -> float:
    x, z = _unpack(g)
    d = cc_distance_norms(np.linalg.norm(x, axis=-1), np.linalg.norm(z, axis=-1))
    return float(d) if np.ndim(d) == 0 else d


def cc_distance(G: HTypeGroup, g, h) -> float:
    gx, gz = _unpack(g)
    hx, hz = _unpack(h)
    x, z = G.mul_xz(-gx, -gz, hx, hz)
    return cc_distance_from_identity(G, (x, z))


def _check_rho(rho):
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0) or np.any(rho >= TWO_PI):
        raise DomainError("jacobian needs 0 < rho < 2 pi")
    return rho


def jacobian_A(G: HTypeGroup, r, rho):
    """Jacobian determinant of the chart, a function of |u| and |eta|."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise DomainError("jacobian needs r >= 0")
    rho = _check_rho(rho)
    n, m = G.n, G.m
    half = 0.5 * rho
    last = 4.0 * np.sin(half) * sin_minus_theta_cos(half)  # 2 - 2cos - rho sin
    return (
        r ** (2 * m)
        * (0.5 * theta_minus_sin(rho) / rho) ** (m - 1)
        * (2.0 * one_minus_cos(rho)) ** (n - 1)
        * last
    )


def radial_weight(G: HTypeGroup, rho):
    """w(rho) = A(1, rho) rho^(m-1-Q), the (s, rho) density with s = |u||eta|.

    With ``u = (s/rho) uhat`` and ``eta = rho etahat`` Haar measure reads
    ``s^(Q-1) w(rho) ds drho dsigma(uhat) dsigma(etahat)``.  The weight is
    bounded, behaves like rho^(m-1) at 0 and like (2 pi - rho)^(2n-1) at
    2 pi; every factor is evaluated without cancellation.
    """
    rho = np.asarray(rho, dtype=float)
    n, m = G.n, G.m
    half = 0.5 * rho
    safe = np.where(rho > 0, rho, 1.0)
    tms3 = np.where(rho > 0, theta_minus_sin(rho) / safe ** 3, 1.0 / 6.0)
    s2 = (np.sinc(half / math.pi)) ** 2  # (2 sin(rho/2) / rho)^2
    smc = np.where(rho > 0, sin_minus_theta_cos(half) / np.where(half > 0, half, 1.0) ** 3,
                   1.0 / 3.0)
    last = 4.0 * sinc(half) * smc / 16.0  # (2 - 2cos - rho sin) / rho^4
    return rho ** (m - 1) * (0.5 * tms3) ** (m - 1) * s2 ** (n - 1) * last


def region_classify(G: HTypeGroup, c: GeodesicCoords) -> Region:
    r, rho = c.r, c.rho
    if r * rho < 1:
        raise InsideBall(f"|u||eta| = {r * rho:.6g} < 1")
    if rho <= math.pi:
        return Region.R1
    if rho <= TWO_PI - 1.0 / r ** 2:
        return Region.R2
    return Region.R3


def classify_norms(r, rho):
    """Vectorized labels (1, 2, 3) for |u||eta| >= 1 (0 inside the ball)."""
    r = np.asarray(r, dtype=float)
    rho = np.asarray(rho, dtype=float)
    lab = np.where(rho <= math.pi, 1, np.where(rho <= TWO_PI - 1.0 / r ** 2, 2, 3))
    return np.where(r * rho < 1, 0, lab)


def in_unit_ball(G: HTypeGroup, g) -> bool:
    return cc_distance_from_identity(G, g) <= 1.0
