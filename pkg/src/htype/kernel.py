"""Subelliptic heat kernel: pointwise values, gradients and convolutions.

The kernel is

    p_t(x, z) = (2 pi)^-m (4 pi)^-n  int_{R^m} exp(i <lam, z> - |lam| coth(t |lam|) |x|^2 / 4)
                                      (|lam| / sinh(t |lam|))^n  dlam .

Integrating out the directions of ``lam`` leaves a one dimensional
Hankel-type integral,

    p_t = C  int_0^inf  g(s) s^(m-1) Jr_{m/2-1}(s |z|) ds,
    g(s) = exp(-s coth(ts) |x|^2 / 4) (s / sinh(ts))^n,

where ``Jr_nu(y) = J_nu(y) / y^nu`` and ``C = (2 pi)^(-m/2) (4 pi)^-n``.
Differentiating under the integral gives ``grad_x p = a x`` and
``grad_z p = b z`` with two more integrals of the same shape.  All three
are computed together on composite Gauss-Legendre panels whose width
follows the oscillation period ``pi / |z|``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .algebra import HTypeGroup, Point, ScalarField, _unpack
from .geometry import TWO_PI, cc_distance_from_identity, phi_norms, radial_weight
from .quadrature import composite, composite_unit, sphere_rule
from .special import one_minus_cos, reduced_bessel, sphere_area, theta_minus_sin

__all__ = [
    "QuadratureConfig",
    "QuadratureFailure",
    "MissingGrowthCertificate",
    "KernelEvaluator",
    "RadialKernel",
    "ConvolutionGrid",
    "GridPoints",
]


class QuadratureFailure(RuntimeError):
    def __init__(self, message: str, error_estimate: float = float("nan")):
        self.error_estimate = float(error_estimate)
        super().__init__(f"{message} (estimated error {self.error_estimate:.3e})")


class MissingGrowthCertificate(ValueError):
    """convolve() needs evidence that the integrand is in the growth class."""


@dataclass(frozen=True)
class QuadratureConfig:
    """Tolerances and rule sizes.

    ``abs_tol`` is measured in units of the kernel peak ``t^(-Q/2)``.
    ``lambda_cutoff`` of ``None`` selects the spectral cutoff from the
    exponential decay of the integrand; a number overrides it.
    """

    rel_tol: float = 1e-9
    abs_tol: float = 1e-16
    lambda_cutoff: Optional[float] = None
    max_subdivisions: int = 4096
    nodes_per_panel: int = 16
    min_panels: int = 8
    sphere_rule_degree: int = 6
    radial_nodes: int = 64
    angle_nodes: int = 64

    def __post_init__(self):
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ValueError("tolerances must be positive")


class RadialKernel(NamedTuple):
    """Kernel value with radial derivative coefficients.

    ``grad_x p = a x``, ``grad_z p = b z``; ``error`` is the estimated
    absolute quadrature error of ``value``.
    """

    value: np.ndarray
    a: np.ndarray
    b: np.ndarray
    error: np.ndarray


T_MIN = 1e-6
_SQ2PI = math.sqrt(2.0 / math.pi)


def _bessel_pair(m: int, arg):
    """(Jr_nu, Jr_{nu+1}) at ``arg`` for nu = m/2 - 1."""
    if m == 1:
        return _SQ2PI * np.cos(arg), _SQ2PI * np.sinc(arg / math.pi)
    if m == 3:
        sn, cs = np.sin(arg), np.cos(arg)
        j0 = _SQ2PI * np.sinc(arg / math.pi)
        small = arg < 0.5
        safe = np.where(small, 1.0, arg)
        j1 = _SQ2PI * (sn - safe * cs) / safe ** 3
        if np.any(small):
            j1 = np.where(small, reduced_bessel(1.5, np.where(small, arg, 0.0)), j1)
        return j0, j1
    nu = 0.5 * m - 1.0
    return reduced_bessel(nu, arg), reduced_bessel(nu + 1.0, arg)


_CHUNK = 1_500_000


@dataclass(frozen=True, eq=False)
class KernelEvaluator:
    """Evaluates p_t and its derivatives for one group."""

    group: HTypeGroup
    config: QuadratureConfig = field(default_factory=QuadratureConfig)
    _grids: dict = field(default_factory=dict, init=False, repr=False)

    # -- radial integrals -------------------------------------------------
    @property
    def _prefactor(self) -> float:
        n, m = self.group.n, self.group.m
        return (2 * math.pi) ** (-0.5 * m) * (4 * math.pi) ** (-n)

    def _cutoff(self, t: float, r: np.ndarray) -> np.ndarray:
        if self.config.lambda_cutoff is not None:
            return np.full_like(r, float(self.config.lambda_cutoff))
        n, m = self.group.n, self.group.m
        kappa = n * t + 0.25 * r * r
        # tail of (2s)^n s^(m+1) exp(-kappa s) (1 - e^{-2ts})^-n below abs_tol / 1000
        target = math.log(1e-3 * self.config.abs_tol) - (n + m) * math.log(t)
        lam = np.full_like(r, 10.0 / t)
        for _ in range(30):
            lam = (n * math.log(4.0) + (n + m + 1) * np.log(np.maximum(lam, 1.0))
                   - np.log(kappa) - target) / kappa
        return np.maximum(lam, 1e-3)

    def _integrals(self, t, r, zeta, s, w):
        """Return the (value, a, b) integrals on nodes s (P, K) with weights w."""
        n, m = self.group.n, self.group.m
        y = t * s
        em = -np.expm1(-2.0 * y)  # 1 - e^{-2y}
        s_coth = s * (2.0 - em) / em
        log_ratio = -math.log(t) - y - np.log(em / (2.0 * y))  # log(s / sinh(ts))
        base = np.exp(-0.25 * r * r * s_coth + n * log_ratio) * w
        j0, j1 = _bessel_pair(m, s * zeta)
        sm1 = s ** (m - 1)
        val = np.sum(base * sm1 * j0, axis=-1)
        a = np.sum(base * (-0.5 * s_coth) * sm1 * j0, axis=-1)
        b = -np.sum(base * sm1 * s * s * j1, axis=-1)
        return val, a, b

    def _panel_pass(self, t, r, zeta, lam, npanels, k):
        """Evaluate the integrals with ``npanels`` equal panels of k nodes."""
        sig, wsig = composite_unit(npanels, k)
        out_v = np.empty(len(r))
        out_a = np.empty(len(r))
        out_b = np.empty(len(r))
        step = max(1, _CHUNK // len(sig))
        for lo in range(0, len(r), step):
            sl = slice(lo, lo + step)
            L = lam[sl, None]
            s = L * sig[None, :]
            w = L * wsig[None, :]
            v, a, b = self._integrals(t, r[sl, None], zeta[sl, None], s, w)
            out_v[sl], out_a[sl], out_b[sl] = v, a, b
        return out_v, out_a, out_b

    def radial(self, t: float, r, zeta) -> RadialKernel:
        """Kernel data at |x| = r, |z| = zeta (arrays broadcast together)."""
        t = float(t)
        if not t > 0:
            raise ValueError("t must be positive")
        if t < T_MIN:
            raise ValueError(f"t < {T_MIN}: evaluate at a larger time and use the scaling law")
        r, zeta = np.broadcast_arrays(np.asarray(r, float), np.asarray(zeta, float))
        shape = r.shape
        r = np.abs(r.ravel())
        zeta = np.abs(zeta.ravel())
        cfg = self.config
        lam = self._cutoff(t, r)
        k = cfg.nodes_per_panel
        need = np.ceil(lam * zeta / math.pi)
        panels = np.maximum(cfg.min_panels, 2 ** np.ceil(np.log2(np.maximum(need, 1.0))))
        val = np.zeros(len(r))
        aco = np.zeros(len(r))
        bco = np.zeros(len(r))
        err = np.zeros(len(r))
        todo = np.arange(len(r))
        peak = t ** (-0.5 * self.group.Q)
        C = self._prefactor
        while todo.size:
            if panels[todo].max() > cfg.max_subdivisions:
                bad = todo[panels[todo] > cfg.max_subdivisions]
                raise QuadratureFailure(
                    f"kernel quadrature exhausted {cfg.max_subdivisions} panels at "
                    f"r={r[bad[0]]:.6g}, |z|={zeta[bad[0]]:.6g}", err[bad[0]])
            still = []
            for P in np.unique(panels[todo]):
                idx = todo[panels[todo] == P]
                hi = self._panel_pass(t, r[idx], zeta[idx], lam[idx], int(P), k)
                lo = self._panel_pass(t, r[idx], zeta[idx], lam[idx], int(P), k // 2)
                e = C * np.max(np.abs(np.stack(hi) - np.stack(lo)), axis=0)
                val[idx], aco[idx], bco[idx] = (C * v for v in hi)
                err[idx] = e
                tol = np.maximum(cfg.rel_tol * np.abs(val[idx]), cfg.abs_tol * peak)
                still.append(idx[e > tol])
            todo = np.concatenate(still) if still else np.array([], dtype=int)
            panels[todo] *= 2
        return RadialKernel(val.reshape(shape), aco.reshape(shape), bco.reshape(shape),
                            err.reshape(shape))

    # -- public pointwise API ---------------------------------------------
    def kernel_radial(self, t: float, r, zeta):
        out = self.radial(t, r, zeta).value
        return float(out) if np.ndim(out) == 0 else out

    def kernel(self, t: float, g) -> float:
        x, z = _unpack(g)
        out = self.radial(t, np.linalg.norm(x, axis=-1), np.linalg.norm(z, axis=-1)).value
        return float(out) if np.ndim(out) == 0 else out

    def kernel_gradients(self, t: float, g):
        """Return (grad p, grad_z p, grad^ p) at g (batched over leading dims)."""
        x, z = _unpack(g)
        rk = self.radial(t, np.linalg.norm(x, axis=-1), np.linalg.norm(z, axis=-1))
        gx = rk.a[..., None] * x
        gz = rk.b[..., None] * z
        half = 0.5 * self.group.j_map(gz, x)
        return gx + half, gz, gx - half

    def heat_equation_residual(self, t: float, g, h: float = 1e-3, ht: Optional[float] = None):
        """|d/dt p_t(g) - L p_t(g)| / p_t(g) with finite differences.

        L is discretized with the group stencils p(g * (+-h e_i, 0)), which
        sample X_i^2 exactly along the integral curves of X_i.
        """
        G = self.group
        x, z = _unpack(g)
        ht = 1e-4 * t if ht is None else ht
        pts_x = [x]
        pts_z = [z]
        for i in range(2 * G.n):
            for sgn in (1.0, -1.0):
                e = np.zeros(2 * G.n)
                e[i] = sgn * h
                xx, zz = G.mul_xz(x, z, e, np.zeros(G.m))
                pts_x.append(xx)
                pts_z.append(zz)
        X = np.array(pts_x)
        Z = np.array(pts_z)
        vals = self.radial(t, np.linalg.norm(X, axis=-1), np.linalg.norm(Z, axis=-1)).value
        p0 = vals[0]
        lap = (vals[1::2].sum() + vals[2::2].sum() - 2 * (2 * G.n) * p0) / h ** 2
        nx, nz = np.linalg.norm(x), np.linalg.norm(z)
        tp, tm = self.radial(t + ht, nx, nz).value, self.radial(t - ht, nx, nz).value
        dt = (tp - tm) / (2 * ht)
        return float(abs(dt - lap) / p0)

    def scaling_residual(self, t: float, alpha: float, g) -> float:
        """|alpha^Q p_{alpha^2 t}(phi_alpha g) / p_t(g) - 1|."""
        G = self.group
        x, z = _unpack(g)
        lhs = alpha ** G.Q * self.kernel(alpha ** 2 * t, (alpha * x, alpha ** 2 * z))
        rhs = self.kernel(t, (x, z))
        return abs(lhs - rhs) / rhs

    # -- integrals over G --------------------------------------------------
    def convolution_grid(self, t: float, s_max: Optional[float] = None,
                         sphere_degree: Optional[int] = None,
                         radial_nodes: Optional[int] = None,
                         angle_nodes: Optional[int] = None) -> "ConvolutionGrid":
        """Quadrature grid for P_t, cached per (t, s_max, rule sizes)."""
        if s_max is None:
            s_max = self.cutoff_radius(t, None)
        # round the cutoff up so nearby requests share a grid
        s_max = math.ceil(s_max / math.sqrt(t)) * math.sqrt(t)
        key = (float(t), s_max, sphere_degree, radial_nodes, angle_nodes)
        grid = self._grids.get(key)
        if grid is None:
            grid = ConvolutionGrid.build(self, t, s_max, sphere_degree, radial_nodes, angle_nodes)
            if len(self._grids) > 16:
                self._grids.pop(next(iter(self._grids)))
            self._grids[key] = grid
        return grid

    def total_mass(self, t: float, **kw) -> float:
        return self.convolution_grid(t, sphere_degree=0, **kw).radial_integral()

    def cutoff_radius(self, t: float, cert, shift: float = 0.0) -> float:
        """Distance beyond which the convolution tail is below abs_tol."""
        G = self.group
        logM = math.log(max(cert.M, 1e-300)) if cert is not None else 0.0
        a = cert.a if cert is not None else 0.0
        eps = cert.eps if cert is not None else 0.5
        target = math.log(self.config.abs_tol) - 6.0
        S = np.linspace(1e-3, 200.0 * math.sqrt(t) + 2 * shift + 50, 200001)
        # p_t(k) <= c t^(-Q/2) (1 + d/sqrt t)^(2n) exp(-d^2 / 4t); integrate s^(Q-1) ds
        logtail = (logM + a * (S + shift) ** (2 - eps) - S * S / (4 * t)
                   + (G.Q + 2 * G.n) * np.log1p(S / math.sqrt(t))
                   - 0.5 * G.Q * math.log(t) + G.Q * np.log(np.maximum(S, 1.0)))
        # first S after which the bound stays below target
        above = np.nonzero(logtail >= target)[0]
        last_bad = above.max() if above.size else -1
        if last_bad + 1 >= len(S):
            raise QuadratureFailure("could not find a convolution cutoff for this growth class")
        return float(max(S[last_bad + 1], 6.0 * math.sqrt(t)))

    def convolve(self, f: ScalarField, t: float, g=None, grid: "ConvolutionGrid" = None,
                 bounds: Optional[float] = None) -> float:
        """P_t f(g) = int f(g * k) p_t(k) dm(k).

        ``f`` must carry a growth certificate unless an explicit radial
        integration bound ``bounds`` (a distance cutoff) is supplied.
        """
        G = self.group
        g = Point.identity(G) if g is None else g
        x, z = _unpack(g)
        if grid is None:
            if bounds is None:
                if f.growth_certificate is None:
                    raise MissingGrowthCertificate(
                        "field has no growth certificate; pass bounds= to integrate anyway")
                shift = cc_distance_from_identity(G, (x, z))
                bounds = self.cutoff_radius(t, f.growth_certificate, shift)
            grid = self.convolution_grid(t, s_max=bounds)
        return grid.convolve(f, (x, z))


class GridPoints(NamedTuple):
    x: np.ndarray        # (N, 2n) node coordinates
    z: np.ndarray        # (N, m)
    weight: np.ndarray   # Haar quadrature weight
    kernel: np.ndarray   # p_t at the node (ones for a plain Haar grid)
    a: np.ndarray        # grad_x p_t = a x
    b: np.ndarray        # grad_z p_t = b z


@dataclass(eq=False)
class ConvolutionGrid:
    """Quadrature nodes k_q = Phi(u, eta) with Haar weights and kernel values.

    Coordinates are ``s = |u||eta|`` (the distance from the identity),
    ``rho = |eta|`` and the two sphere directions.  Integrands are smooth
    on the whole rectangle ``[0, s_max] x [0, 2 pi]``.  A grid built by
    :meth:`ball` carries no kernel and integrates over ``d(0, k) <= s_max``.
    """

    group: HTypeGroup
    t: Optional[float]
    s: np.ndarray
    rho: np.ndarray
    p_radial: np.ndarray        # (Ns, Nrho)
    a_radial: np.ndarray
    b_radial: np.ndarray
    radial_w: np.ndarray        # (Ns, Nrho) Haar weight without sphere factors
    sphere_degree: int
    _points: Optional[GridPoints] = None

    @staticmethod
    def _radial_nodes(G, s_max, ns, nr):
        k = 16
        if ns >= k:
            s, ws = composite(np.linspace(0.0, s_max, max(1, ns // k) + 1), k)
        else:
            s, ws = composite([0.0, s_max], ns)
        # denser near 2 pi, where the kernel varies on the scale 1/s^2
        breaks = np.array([0.0, math.pi, 1.5 * math.pi, 1.85 * math.pi, TWO_PI])
        per = max(2, nr // (len(breaks) - 1))
        rho, wrho = composite(breaks, per)
        radial_w = (ws * s ** (G.Q - 1))[:, None] * (wrho * radial_weight(G, rho))[None, :]
        return s, rho, radial_w

    @classmethod
    def build(cls, E: KernelEvaluator, t, s_max, sphere_degree=None,
              radial_nodes=None, angle_nodes=None):
        G = E.group
        cfg = E.config
        t = float(t)
        s, rho, radial_w = cls._radial_nodes(G, s_max, radial_nodes or cfg.radial_nodes,
                                             angle_nodes or cfg.angle_nodes)
        S, R = np.meshgrid(s, rho, indexing="ij")
        nx, nz = phi_norms(S / R, R)
        rk = E.radial(t, nx, nz)
        deg = cfg.sphere_rule_degree if sphere_degree is None else sphere_degree
        return cls(G, t, s, rho, rk.value, rk.a, rk.b, radial_w, deg)

    @classmethod
    def ball(cls, G: HTypeGroup, radius: float = 1.0, sphere_degree: int = 6,
             radial_nodes: int = 32, angle_nodes: int = 64):
        """Plain Haar-measure grid on the ball d(0, k) <= radius."""
        s, rho, radial_w = cls._radial_nodes(G, radius, radial_nodes, angle_nodes)
        ones = np.ones_like(radial_w)
        zeros = np.zeros_like(radial_w)
        return cls(G, None, s, rho, ones, zeros, zeros, radial_w, sphere_degree)

    def radial_integral(self, values=1.0) -> float:
        """Integral of kernel * values, with values tabulated on the (s, rho) grid."""
        G = self.group
        area = sphere_area(2 * G.n) * sphere_area(G.m)
        return float(np.sum(self.radial_w * self.p_radial * values) * area)

    def points(self) -> GridPoints:
        """Nodes and weights over the full product grid (cached)."""
        if self._points is None:
            G = self.group
            U, wu = sphere_rule(2 * G.n, self.sphere_degree)
            H, wh = sphere_rule(G.m, self.sphere_degree)
            S, R = np.meshgrid(self.s, self.rho, indexing="ij")
            r = (S / R)[..., None, None, None]
            rho = R[..., None, None, None]
            uhat = U[None, None, :, None, :]
            ehat = H[None, None, None, :, :]
            Ju = np.einsum("...j,jab,...b->...a", ehat, G.J, uhat)
            x = r * (one_minus_cos(rho) * uhat - np.sin(rho) * Ju)
            z = 0.5 * r * r * theta_minus_sin(rho) * ehat
            shape = x.shape[:-1]
            x = np.broadcast_to(x, shape + (2 * G.n,)).reshape(-1, 2 * G.n)
            z = np.broadcast_to(z, shape + (G.m,)).reshape(-1, G.m)
            sph = (wu[:, None] * wh[None, :])[None, None]

            def spread(arr):
                return np.broadcast_to(arr[..., None, None], shape).ravel()

            w = np.broadcast_to(self.radial_w[..., None, None] * sph, shape).ravel()
            self._points = GridPoints(x, z, w, spread(self.p_radial),
                                      spread(self.a_radial), spread(self.b_radial))
        return self._points

    def kernel_gradients(self):
        """(grad p_t, grad_z p_t, grad^ p_t) at every node."""
        P = self.points()
        gx = P.a[:, None] * P.x
        gz = P.b[:, None] * P.z
        half = 0.5 * self.group.j_map(gz, P.x)
        return gx + half, gz, gx - half

    def nodes_at(self, g=None):
        """Node coordinates left-translated by g: g * k_q."""
        P = self.points()
        if g is None:
            return P.x, P.z
        gx, gz = _unpack(g)
        return self.group.mul_xz(gx, gz, P.x, P.z)

    def convolve(self, f, g=None) -> float:
        """P_t f(g) on this grid; ``f`` is any callable (x, z) -> values."""
        P = self.points()
        x, z = self.nodes_at(g)
        return float(np.dot(P.weight * P.kernel, f(x, z)))

    def integrate(self, values) -> float:
        """Haar integral of values tabulated at the nodes (no kernel)."""
        return float(np.dot(self.points().weight, values))
