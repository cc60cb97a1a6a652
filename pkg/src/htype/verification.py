"""Numerical evidence for the heat kernel estimates and the gradient inequality.

Every check returns an :class:`EstimateReport` recording the smallest and
largest value of a ratio over a sampled domain together with the points
where they occur.  The implicit constants of the estimates are existential,
so reports only record empirical values; nothing here asserts a numeric
target that is not a proven identity.

Sampling grids are indexed by the distance ``d`` from the identity and the
chart angle ``rho``: for ``0 < rho < 2 pi`` a grid point is the image of
``|u| = d / rho, |eta| = rho``, while ``rho = 0`` and ``rho = 2 pi`` stand
for the two coordinate axes ``z = 0`` and ``x = 0`` that the chart misses.
Doubling a grid keeps every old node, so refinement can only widen the
recorded range.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product
from typing import Callable, List, Optional, Sequence

import numpy as np

from .algebra import GrowthCertificate, HTypeGroup, ScalarField
from .geometry import TWO_PI, classify_norms, jacobian_A, phi_norms
from .kernel import ConvolutionGrid, KernelEvaluator, MissingGrowthCertificate, QuadratureFailure
from .polynomial import (
    Polynomial,
    apply_Xi,
    heat_semigroup_poly,
    k2_closed_form,
    k2_ratio,
    optimal_constant_example,
)
from .quadrature import composite

__all__ = [
    "DegenerateDenominator",
    "EstimateReport",
    "EstimateGrid",
    "TestFunctionFamily",
    "check_p1_estimate",
    "check_gradient_estimates",
    "check_A_asymptotics",
    "check_geodesic_integral_lemma",
    "check_projection_identity",
    "ball_average",
    "check_commutation",
    "check_integration_by_parts",
    "check_identity_suites",
    "fd_gradient_at_identity",
    "exact_gradient_at_identity",
    "gaussian_bump",
    "modulated_bump",
    "ball_volume",
    "p1_comparison",
    "gradient_ratio",
    "gradient_ratio_details",
    "scan_gradient_inequality",
    "optimal_constant_experiment",
    "optimal_constant_report",
    "standard_fields",
    "verify_all",
]

FD_STEP = 1e-5
RESIDUAL_TOL = 1e-4


class DegenerateDenominator(ArithmeticError):
    """P_t(|grad f|)(0) is too small for the gradient ratio to mean anything."""


# -- reports ---------------------------------------------------------------

def _clean(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return [_clean(a) for a in v.tolist()]
    if isinstance(v, Fraction):
        return str(v)
    if isinstance(v, dict):
        return {k: _clean(a) for k, a in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(a) for a in v]
    return v


@dataclass
class EstimateReport:
    """Range of a ratio over a sampled domain.

    ``kind`` selects the passing rule: ``"two_sided"`` needs
    ``0 < min_ratio <= max_ratio < inf``, ``"upper"`` only a finite
    ``max_ratio``, and ``"residual"`` needs ``max_ratio <= threshold``.
    Any recorded failure makes the report fail.
    """

    estimate_id: str
    grid_spec: dict
    min_ratio: float
    max_ratio: float
    argmin: dict
    argmax: dict
    n_points: int
    failures: List[str] = field(default_factory=list)
    kind: str = "two_sided"
    threshold: Optional[float] = None
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_values(cls, estimate_id, grid_spec, values, witness: Callable[[int], dict],
                    failures=(), kind="two_sided", threshold=None, extra=None):
        """Reduce an array of ratios (NaN marks a failed point)."""
        values = np.asarray(values, dtype=float).ravel()
        ok = np.isfinite(values)
        if ok.any():
            idx = np.nonzero(ok)[0]
            imin = int(idx[np.argmin(values[ok])])
            imax = int(idx[np.argmax(values[ok])])
            lo, hi = float(values[imin]), float(values[imax])
            wmin, wmax = witness(imin), witness(imax)
        else:
            lo, hi, wmin, wmax = math.nan, math.nan, {}, {}
        failures = list(failures)
        bad = int((~ok).sum())
        if bad and not failures:
            failures.append(f"{bad} sample(s) produced a non-finite ratio")
        return cls(estimate_id, dict(grid_spec), lo, hi, wmin, wmax, int(values.size),
                   failures, kind, threshold, dict(extra or {}))

    @property
    def passed(self) -> bool:
        if self.failures or not (math.isfinite(self.min_ratio) and math.isfinite(self.max_ratio)):
            return False
        if self.kind == "two_sided":
            return 0.0 < self.min_ratio <= self.max_ratio
        if self.kind == "upper":
            return self.min_ratio >= 0.0
        return self.max_ratio <= self.threshold

    def merge(self, other: "EstimateReport") -> "EstimateReport":
        """Combine two reports on disjoint samples (associative, commutative)."""
        if self.estimate_id != other.estimate_id:
            raise ValueError("cannot merge reports of different estimates")

        def pick(a, wa, b, wb, better):
            if not math.isfinite(a):
                return b, wb
            if not math.isfinite(b):
                return a, wa
            if better(b, a) or (b == a and repr(sorted(wb.items())) < repr(sorted(wa.items()))):
                return b, wb
            return a, wa

        lo, wlo = pick(self.min_ratio, self.argmin, other.min_ratio, other.argmin,
                       lambda u, v: u < v)
        hi, whi = pick(self.max_ratio, self.argmax, other.max_ratio, other.argmax,
                       lambda u, v: u > v)
        return EstimateReport(self.estimate_id, self.grid_spec, lo, hi, wlo, whi,
                              self.n_points + other.n_points,
                              sorted(self.failures + other.failures), self.kind,
                              self.threshold, {**self.extra, **other.extra})

    def to_json(self) -> dict:
        out = {
            "estimate_id": self.estimate_id,
            "grid_spec": _clean(self.grid_spec),
            "min_ratio": self.min_ratio,
            "max_ratio": self.max_ratio,
            "argmin": _clean(self.argmin),
            "argmax": _clean(self.argmax),
            "n_points": self.n_points,
            "failures": list(self.failures),
            "kind": self.kind,
            "passed": self.passed,
        }
        if self.threshold is not None:
            out["threshold"] = self.threshold
        if self.extra:
            out["extra"] = _clean(self.extra)
        return out


# -- sampling grids ----------------------------------------------------------

@dataclass(frozen=True)
class EstimateGrid:
    """Tensor grid in (d, rho); ``level`` k has 24 * 2^k + 1 distances."""

    d_min: float = 0.05
    d_max: float = 6.0
    level: int = 0
    axes: bool = True

    @property
    def d(self) -> np.ndarray:
        return np.exp(np.linspace(math.log(self.d_min), math.log(self.d_max),
                                  24 * 2 ** self.level + 1))

    @property
    def rho(self) -> np.ndarray:
        k = np.arange(24 * 2 ** self.level + 1)
        rho = TWO_PI * k / k[-1]
        return rho if self.axes else rho[1:-1]

    def refine(self) -> "EstimateGrid":
        return EstimateGrid(self.d_min, self.d_max, self.level + 1, self.axes)

    def samples(self):
        """Flattened (d, rho, |x|, |z|, region label) arrays."""
        D, R = np.meshgrid(self.d, self.rho, indexing="ij")
        D, R = D.ravel(), R.ravel()
        inner = (R > 0) & (R < TWO_PI)
        r = np.where(inner, D / np.where(R > 0, R, 1.0), np.inf)
        nx, nz = phi_norms(np.where(inner, r, 0.0), R)
        nx = np.where(R == 0, D, np.where(R >= TWO_PI, 0.0, nx))
        nz = np.where(R == 0, 0.0, np.where(R >= TWO_PI, D * D / (4 * math.pi), nz))
        label = classify_norms(np.where(inner, r, 1.0), np.where(inner, R, 1.0))
        label = np.where(D < 1, 0, np.where(R == 0, 1, np.where(R >= TWO_PI, 3, label)))
        return D, R, nx, nz, label

    def spec(self) -> dict:
        _, _, _, _, label = self.samples()
        counts = {name: int((label == k).sum())
                  for k, name in enumerate(("ball", "R1", "R2", "R3"))}
        return {"d_range": [self.d_min, self.d_max], "level": self.level,
                "n_d": len(self.d), "n_rho": len(self.rho), "axes": self.axes,
                "regions": counts}


_REGION_NAMES = ("ball", "R1", "R2", "R3")


def _axis_point(G: HTypeGroup, nx: float, nz: float) -> dict:
    x = np.zeros(2 * G.n)
    z = np.zeros(G.m)
    x[0], z[0] = nx, nz
    return {"x": x.tolist(), "z": z.tolist()}


def _grid_witness(G, D, R, nx, nz, label):
    def witness(i):
        w = {"d": float(D[i]), "rho": float(R[i]), "region": _REGION_NAMES[int(label[i])]}
        w.update(_axis_point(G, float(nx[i]), float(nz[i])))
        return w
    return witness


def _radial_safe(E: KernelEvaluator, t, nx, nz):
    """Kernel data with NaN (and a failure message) where quadrature fails."""
    try:
        rk = E.radial(t, nx, nz)
        return rk.value, rk.a, rk.b, []
    except QuadratureFailure:
        pass
    vals = np.full(len(nx), np.nan)
    a = np.full(len(nx), np.nan)
    b = np.full(len(nx), np.nan)
    failures = []
    for i, (u, v) in enumerate(zip(nx, nz)):
        try:
            rk = E.radial(t, u, v)
            vals[i], a[i], b[i] = rk.value, rk.a, rk.b
        except QuadratureFailure as exc:
            failures.append(f"|x|={u:.6g}, |z|={v:.6g}: {exc}")
    return vals, a, b, failures


def p1_comparison(G: HTypeGroup, nx, d):
    """(1 + d^(2n-m-1)) / (1 + (|x| d)^(n - 1/2)) exp(-d^2 / 4).

    At the identity the power term is taken as 0, so the comparison
    function equals 1 there whatever the sign of 2n - m - 1.
    """
    n, m = G.n, G.m
    nx = np.asarray(nx, float)
    d = np.asarray(d, float)
    with np.errstate(divide="ignore"):
        power = np.where(d > 0, np.where(d > 0, d, 1.0) ** (2 * n - m - 1), 0.0)
    return (1 + power) / (1 + (nx * d) ** (n - 0.5)) * np.exp(-0.25 * d * d)


def check_p1_estimate(G: HTypeGroup, grid: Optional[EstimateGrid] = None,
                      evaluator: Optional[KernelEvaluator] = None) -> EstimateReport:
    """Ratio of p_1 to its two-sided comparison function over the grid."""
    grid = grid or EstimateGrid()
    E = evaluator or KernelEvaluator(G)
    D, R, nx, nz, label = grid.samples()
    p, _, _, failures = _radial_safe(E, 1.0, nx, nz)
    ratio = p / p1_comparison(G, nx, D)
    return EstimateReport.from_values("p1-estimate", grid.spec(), ratio,
                                      _grid_witness(G, D, R, nx, nz, label), failures)


def check_gradient_estimates(G: HTypeGroup, grid: Optional[EstimateGrid] = None,
                             evaluator: Optional[KernelEvaluator] = None):
    """Reports for |grad p_1| / ((1 + d) p_1), |grad_z p_1| / p_1 and the hat version.

    The default grid leaves out the axes, where the x- or z-gradient
    vanishes identically.  The hat report also records the largest excess
    of |grad^ p| over |grad p| + |x| |grad_z p|.
    """
    grid = grid or EstimateGrid(axes=False)
    E = evaluator or KernelEvaluator(G)
    D, R, nx, nz, label = grid.samples()
    p, a, b, failures = _radial_safe(E, 1.0, nx, nz)
    # grad_x p = a x and J_{grad_z p} x = b |z| |x| (unit) orthogonal to x
    gx = np.abs(a) * nx
    half = 0.5 * np.abs(b) * nz * nx
    grad = np.hypot(gx, half)
    gradz = np.abs(b) * nz
    # evaluate the hat gradient on explicit vectors to keep the check honest
    x = np.zeros((len(nx), 2 * G.n))
    z = np.zeros((len(nx), G.m))
    x[:, 0], z[:, 0] = nx, nz
    gzv = b[:, None] * z
    hat = a[:, None] * x - 0.5 * G.j_map(gzv, x)
    left = a[:, None] * x + 0.5 * G.j_map(gzv, x)
    hat_norm = np.linalg.norm(hat, axis=-1)
    excess = hat_norm - (np.linalg.norm(left, axis=-1) + nx * gradz)
    scale = np.maximum(hat_norm, 1e-300)
    witness = _grid_witness(G, D, R, nx, nz, label)
    spec = grid.spec()
    combo = float(np.nanmax(excess / scale))
    return (
        EstimateReport.from_values("gradp1-estimate", spec, grad / ((1 + D) * p), witness,
                                   failures),
        EstimateReport.from_values("gradzp1-estimate", spec, gradz / p, witness, failures),
        EstimateReport.from_values("gradhatp1-estimate", spec, hat_norm / ((1 + D) * p),
                                   witness, failures,
                                   extra={"combination_max_relative_excess": combo,
                                          "combination_holds": bool(combo <= 1e-12)}),
    )


def check_A_asymptotics(G: HTypeGroup, level: int = 0, r_range=(1.0, 20.0),
                        eps: float = 1e-4) -> EstimateReport:
    """A(r, rho) / (r^(2m) rho^(2(m+n)) (2 pi - rho)^(2n-1)) on a (r, rho) grid."""
    n, m = G.n, G.m
    r = np.exp(np.linspace(math.log(r_range[0]), math.log(r_range[1]), 4 * 2 ** level + 1))
    rho = np.linspace(eps, TWO_PI - eps, 120 * 2 ** level + 1)
    Rr, Rh = np.meshgrid(r, rho, indexing="ij")
    Rr, Rh = Rr.ravel(), Rh.ravel()
    A = jacobian_A(G, Rr, Rh)
    ratio = A / (Rr ** (2 * m) * Rh ** (2 * (m + n)) * (TWO_PI - Rh) ** (2 * n - 1))
    label = classify_norms(Rr, Rh)
    counts = {name: int((label == k).sum()) for k, name in enumerate(_REGION_NAMES)}

    def witness(i):
        return {"r": float(Rr[i]), "rho": float(Rh[i]), "region": _REGION_NAMES[int(label[i])]}

    spec = {"r_range": list(r_range), "rho_range": [eps, TWO_PI - eps], "level": level,
            "n_r": len(r), "n_rho": len(rho), "regions": counts}
    return EstimateReport.from_values("A-estimates", spec, ratio, witness)


def _lemma_integrals(G, E, r, rho, q_values, panels):
    """I_q = int_1^{2 pi / rho} p_1(u, t eta) A(u, t rho) t^q dt for each sample.

    Substituting rho' = t rho, the integrand carries exp(-(r rho')^2 / 4),
    so the range is cut where r rho' exceeds sqrt((r rho)^2 + 240).
    """
    hi = np.minimum(TWO_PI, np.sqrt(rho ** 2 + 240.0 / r ** 2))
    k = 16
    unit, wunit = composite(np.linspace(0.0, 1.0, panels + 1), k)
    width = (hi - rho)[:, None]
    rp = rho[:, None] + width * unit[None, :]
    w = width * wunit[None, :]
    rb = np.broadcast_to(r[:, None], rp.shape)
    nx, nz = phi_norms(rb, rp)
    p, _, _, failures = _radial_safe(E, 1.0, nx.ravel(), nz.ravel())
    p = p.reshape(rp.shape)
    base = p * jacobian_A(G, rb, np.minimum(rp, np.nextafter(TWO_PI, 0.0))) * w / rho[:, None]
    t = rp / rho[:, None]
    return {q: np.sum(base * t ** q, axis=1) for q in q_values}, failures


def check_geodesic_integral_lemma(G: HTypeGroup, q: Optional[Sequence[int]] = None,
                                  level: int = 0, s_range=(1.0, 6.0), panels: int = 1,
                                  evaluator: Optional[KernelEvaluator] = None):
    """I (|u||eta|)^2 / (p_1(u, eta) A(u, |eta|)) over samples with |u||eta| >= 1.

    Returns one report per exponent q (default 0, m - 1 and 2).  Each
    report records in ``extra`` the largest relative change of the ratio
    when the number of quadrature panels is doubled.
    """
    E = evaluator or KernelEvaluator(G)
    qs = sorted(set(q if q is not None else (0, G.m - 1, 2)))
    s = np.exp(np.linspace(math.log(s_range[0]), math.log(s_range[1]), 24 * 2 ** level + 1))
    k = np.arange(1, 24 * 2 ** level)
    # the ratio at fixed s converges as rho -> 0; a fixed geometric tail
    # samples that limit at every level
    tail = TWO_PI * 2.0 ** -np.arange(6, 12)
    rho = np.unique(np.concatenate([TWO_PI * k / (24 * 2 ** level), tail]))
    S, Rh = np.meshgrid(s, rho, indexing="ij")
    S, Rh = S.ravel(), Rh.ravel()
    r = S / Rh
    coarse, fail1 = _lemma_integrals(G, E, r, Rh, qs, panels)
    fine, fail2 = _lemma_integrals(G, E, r, Rh, qs, 2 * panels)
    nx, nz = phi_norms(r, Rh)
    p, _, _, fail3 = _radial_safe(E, 1.0, nx, nz)
    denom = p * jacobian_A(G, r, Rh) / S ** 2
    label = np.where(S < 1, 0, classify_norms(r, Rh))
    label = np.where(label == 0, np.where(Rh <= math.pi, 1, 2), label) * (S >= 1)
    counts = {name: int((label == j).sum()) for j, name in enumerate(_REGION_NAMES)}
    spec = {"s_range": list(s_range), "level": level, "n_s": len(s), "n_rho": len(rho),
            "panels": panels, "regions": counts}
    failures = sorted(set(fail1 + fail2 + fail3))

    def witness(i):
        w = {"s": float(S[i]), "r": float(r[i]), "rho": float(Rh[i]),
             "region": _REGION_NAMES[int(label[i])]}
        return w

    reports = []
    for qq in qs:
        ratio = fine[qq] / denom
        change = np.abs(fine[qq] - coarse[qq]) / np.abs(fine[qq])
        reports.append(EstimateReport.from_values(
            f"geodesic-integral-bound-q{qq}", {**spec, "q": qq}, ratio, witness, failures,
            extra={"refinement_max_relative_change": float(np.nanmax(change))}))
    return reports


def check_projection_identity(G: HTypeGroup, n_points: int = 50, seed: int = 0,
                              evaluator: Optional[KernelEvaluator] = None) -> EstimateReport:
    """|T(x) grad p_1 - (grad - grad^) p_1 / 2| / |grad p_1| at random points.

    T(x) is the orthogonal projection onto span{J_{u_j} x}.
    """
    E = evaluator or KernelEvaluator(G)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n_points, 2 * G.n)) * rng.uniform(0.2, 2.0, (n_points, 1))
    z = rng.normal(size=(n_points, G.m)) * rng.uniform(0.1, 3.0, (n_points, 1))
    grad, gradz, hat = E.kernel_gradients(1.0, (x, z))
    Jx = G.j_basis_images(x)  # (N, m, 2n)
    T = np.einsum("nja,njb->nab", Jx, Jx) / np.sum(x * x, axis=-1)[:, None, None]
    lhs = np.einsum("nab,nb->na", T, grad)
    res_diff = np.linalg.norm(lhs - 0.5 * (grad - hat), axis=-1)
    res_J = np.linalg.norm(lhs - 0.5 * G.j_map(gradz, x), axis=-1)
    scale = np.linalg.norm(grad, axis=-1)
    ratio = np.maximum(res_diff, res_J) / scale

    def witness(i):
        return {"x": x[i].tolist(), "z": z[i].tolist()}

    return EstimateReport.from_values("Tgradp", {"n_points": n_points, "seed": seed}, ratio,
                                      witness, kind="residual", threshold=1e-8)


# -- fields and averages -----------------------------------------------------

_BALL_GRIDS: dict = {}


def _ball_grid(G: HTypeGroup) -> ConvolutionGrid:
    key = (G.n, G.m, G.J.tobytes())
    grid = _BALL_GRIDS.get(key)
    if grid is None:
        grid = ConvolutionGrid.ball(G, 1.0, sphere_degree=8)
        _BALL_GRIDS[key] = grid
    return grid


def ball_volume(G: HTypeGroup) -> float:
    grid = _ball_grid(G)
    return float(np.sum(grid.points().weight))


def ball_average(G: HTypeGroup, f: ScalarField) -> float:
    """m_f, the Haar average of f over the unit ball around the identity."""
    grid = _ball_grid(G)
    P = grid.points()
    return grid.integrate(f(P.x, P.z)) / ball_volume(G)


def _monomials(G: HTypeGroup, max_weight: int):
    nx = 2 * G.n
    out = []
    for e in product(range(max_weight + 1), repeat=G.dim):
        w = sum(e[:nx]) + 2 * sum(e[nx:])
        if 1 <= w <= max_weight:
            out.append(e)
    return out


@dataclass(frozen=True)
class TestFunctionFamily:
    """Polynomials of dilation weight <= 4 plus three hand-picked members.

    Polynomials lie in the growth class and come with an exact semigroup
    oracle, which is kept in ``polynomials``.
    """

    __test__ = False  # not a pytest class

    group: HTypeGroup
    polynomials: tuple
    seed: int
    description: str

    @classmethod
    def random(cls, G: HTypeGroup, size: int = 20, seed: int = 0, max_weight: int = 4):
        rng = np.random.default_rng(seed)
        xs, zs = Polynomial.variables(G)
        fixed = [xs[0], zs[0]]
        if G.n * 2 >= 2:
            try:
                fixed.append(optimal_constant_example(G))
            except ValueError:
                pass
        monos = _monomials(G, max_weight)
        members = list(fixed)
        while len(members) < size:
            k = int(rng.integers(2, 6))
            pick = rng.choice(len(monos), size=k, replace=False)
            coeffs = {}
            for j in sorted(pick):
                c = 0
                while c == 0:
                    c = int(rng.integers(-6, 7))
                coeffs[monos[j]] = Fraction(c, 2)
            members.append(Polynomial(G, coeffs))
        desc = (f"{size} polynomials of weight <= {max_weight} with coefficients in "
                f"[-3, 3] (halves), seed {seed}")
        return cls(G, tuple(members), seed, desc)

    @property
    def fields(self) -> List[ScalarField]:
        return [p.to_field() for p in self.polynomials]

    def __len__(self):
        return len(self.polynomials)


def gaussian_bump(G: HTypeGroup, width: float = 1.0) -> ScalarField:
    """exp(-(|x|^2 + |z|^2) / width^2), bounded with bounded gradients."""
    c = 1.0 / width ** 2

    def value(x, z):
        return np.exp(-c * (np.sum(x * x, axis=-1) + np.sum(z * z, axis=-1)))

    def grad(x, z):
        v = value(x, z)[..., None]
        return -2 * c * x * v, -2 * c * z * v

    # |grad f| <= sqrt(2c/e) and |x| |grad_z f| <= c / e + 1 for the hat gradient
    M = 1.0 + 4.0 * math.sqrt(c) + c
    return ScalarField(value, grad, GrowthCertificate(M, 0.0, 0.5), f"gaussian bump (width {width})")


def modulated_bump(G: HTypeGroup) -> ScalarField:
    """cos((x1 + z1) / 2) exp(-|x|^2 / 2 - |z|^2 / 2)."""
    def value(x, z):
        return np.cos(0.5 * (x[..., 0] + z[..., 0])) * np.exp(
            -0.5 * (np.sum(x * x, axis=-1) + np.sum(z * z, axis=-1)))

    def grad(x, z):
        e = np.exp(-0.5 * (np.sum(x * x, axis=-1) + np.sum(z * z, axis=-1)))[..., None]
        ph = 0.5 * (x[..., 0] + z[..., 0])[..., None]
        c, s = np.cos(ph), np.sin(ph)
        gx = -c * x * e
        gx[..., 0:1] -= 0.5 * s * e
        gz = -c * z * e
        gz[..., 0:1] -= 0.5 * s * e
        return gx, gz

    return ScalarField(value, grad, GrowthCertificate(8.0, 0.0, 0.5), "cos((x1 + z1) / 2) gaussian")


def standard_fields(G: HTypeGroup, seed: int = 0) -> List[ScalarField]:
    """Ten fields for the identity suites: polynomials and smooth bumps."""
    fam = TestFunctionFamily.random(G, size=8, seed=seed)
    return fam.fields + [gaussian_bump(G), modulated_bump(G)]


# -- convolution identities -------------------------------------------------

def _threads() -> int:
    try:
        return max(1, int(os.environ.get("HTYPE_THREADS", "1")))
    except ValueError:
        return 1


def _parallel_map(fn, items):
    items = list(items)
    n = min(_threads(), len(items))
    if n <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _grid_for(E: KernelEvaluator, f: ScalarField, t: float, shift: float,
              sphere_degree: Optional[int]):
    """Convolution grid sized to the group: product sphere rules grow fast with n and m."""
    if f.growth_certificate is None:
        raise MissingGrowthCertificate("field has no growth certificate")
    small = E.group.dim <= 3
    deg = sphere_degree if sphere_degree is not None else (12 if small else 5)
    nodes = None if small else 48
    s_max = E.cutoff_radius(t, f.growth_certificate, shift)
    return E.convolution_grid(t, s_max=s_max, sphere_degree=deg, radial_nodes=nodes,
                              angle_nodes=nodes)


def fd_gradient_at_identity(E: KernelEvaluator, f: ScalarField, t: float,
                            grid: Optional[ConvolutionGrid] = None, h: float = FD_STEP,
                            sphere_degree: Optional[int] = None) -> np.ndarray:
    """X_i P_t f(0) = d/ds P_t f((s e_i, 0)) at s = 0, Richardson extrapolated.

    At the identity the left and right invariant fields coincide, so this
    is also the hat gradient of P_t f at 0.
    """
    G = E.group
    grid = grid or _grid_for(E, f, t, 2 * h, sphere_degree)
    zero = np.zeros(G.m)
    out = np.empty(2 * G.n)
    for i in range(2 * G.n):
        e = np.zeros(2 * G.n)
        e[i] = 1.0

        def F(s):
            return grid.convolve(f, (s * e, zero))

        d1 = (F(h) - F(-h)) / (2 * h)
        d2 = (F(0.5 * h) - F(-0.5 * h)) / h
        out[i] = (4 * d2 - d1) / 3
    return out


def _gradients_on_grid(G, f, P):
    gx, gz = f.gradient(P.x, P.z)
    half = 0.5 * G.j_map(gz, P.x)
    return gx + half, gx - half, gz


def check_commutation(G: HTypeGroup, f: ScalarField, t: float = 1.0,
                      evaluator: Optional[KernelEvaluator] = None,
                      sphere_degree: Optional[int] = None) -> dict:
    """Compare grad^ P_t f(0) (finite differences) with P_t(grad^ f)(0).

    The residual is normalized by P_t(|grad^ f|)(0).
    """
    E = evaluator or KernelEvaluator(G)
    grid = _grid_for(E, f, t, 2 * FD_STEP, sphere_degree)
    lhs = fd_gradient_at_identity(E, f, t, grid)
    P = grid.points()
    _, hat, _ = _gradients_on_grid(G, f, P)
    wk = P.weight * P.kernel
    rhs = wk @ hat
    scale = float(wk @ np.linalg.norm(hat, axis=-1))
    res = float(np.linalg.norm(lhs - rhs))
    return {"field": f.description, "lhs": lhs, "rhs": rhs, "scale": scale,
            "residual": res / scale if scale > 0 else res}


def check_integration_by_parts(G: HTypeGroup, f: ScalarField, t: float = 1.0,
                               evaluator: Optional[KernelEvaluator] = None,
                               sphere_degree: Optional[int] = None) -> dict:
    """Residuals of int (grad f) p_t = -int (grad p_t) f and its hat analogue.

    Both are normalized by int |grad f| p_t (absolute when that vanishes).
    """
    E = evaluator or KernelEvaluator(G)
    grid = _grid_for(E, f, t, 0.0, sphere_degree)
    P = grid.points()
    left, hat, _ = _gradients_on_grid(G, f, P)
    kg, _, khat = grid.kernel_gradients()
    fv = f(P.x, P.z)
    wk = P.weight * P.kernel
    scale = float(wk @ np.linalg.norm(left, axis=-1))
    r_left = float(np.linalg.norm(wk @ left + P.weight @ (kg * fv[:, None])))
    r_right = float(np.linalg.norm(wk @ hat + P.weight @ (khat * fv[:, None])))
    if scale > 0:
        r_left, r_right = r_left / scale, r_right / scale
    return {"field": f.description, "scale": scale, "left": r_left, "right": r_right}


def _identity_report(estimate_id, rows, key, spec):
    vals = np.array([row[key] for row in rows])
    return EstimateReport.from_values(
        estimate_id, spec, vals, lambda i: {"field": rows[i]["field"]},
        kind="residual", threshold=RESIDUAL_TOL)


def check_identity_suites(G: HTypeGroup, t: float = 1.0, seed: int = 0,
                          fields: Optional[Sequence[ScalarField]] = None,
                          evaluator: Optional[KernelEvaluator] = None):
    """Commutation and both integration by parts residuals over test fields."""
    E = evaluator or KernelEvaluator(G)
    fields = list(fields) if fields is not None else standard_fields(G, seed)
    comm = _parallel_map(lambda f: check_commutation(G, f, t, E), fields)
    ibp = _parallel_map(lambda f: check_integration_by_parts(G, f, 1.0, E), fields)
    spec = {"t": t, "n_fields": len(fields), "seed": seed}
    return (
        _identity_report("commute", comm, "residual", spec),
        _identity_report("byparts-left", ibp, "left", {**spec, "t": 1.0}),
        _identity_report("byparts-right", ibp, "right", {**spec, "t": 1.0}),
    )


# -- gradient inequality -----------------------------------------------------

def _abs_gradient_field(G: HTypeGroup, f: ScalarField) -> ScalarField:
    def value(x, z):
        gx, gz = f.gradient(x, z)
        return np.linalg.norm(gx + 0.5 * G.j_map(gz, x), axis=-1)

    return ScalarField(value, None, f.growth_certificate, f"|grad ({f.description})|")


def gradient_ratio_details(G: HTypeGroup, f: ScalarField, t: float,
                           evaluator: Optional[KernelEvaluator] = None,
                           sphere_degree: Optional[int] = None) -> dict:
    E = evaluator or KernelEvaluator(G)
    grid = _grid_for(E, f, t, 2 * FD_STEP, sphere_degree)
    num = fd_gradient_at_identity(E, f, t, grid)
    P = grid.points()
    left, hat, _ = _gradients_on_grid(G, f, P)
    wk = P.weight * P.kernel
    den = float(wk @ np.linalg.norm(left, axis=-1))
    if not den > E.config.abs_tol:
        raise DegenerateDenominator(f"P_t(|grad f|)(0) = {den:.3e} for {f.description}")
    diff = float(np.linalg.norm(wk @ (left - hat)))
    return {"field": f.description, "gradient": num, "denominator": den,
            "ratio": float(np.linalg.norm(num)) / den, "difference_ratio": diff / den}


def gradient_ratio(G: HTypeGroup, f: ScalarField, t: float,
                   evaluator: Optional[KernelEvaluator] = None,
                   sphere_degree: Optional[int] = None) -> float:
    """|grad P_t f(0)| / P_t(|grad f|)(0).

    Raises
    ------
    DegenerateDenominator
        If P_t(|grad f|)(0) does not exceed the absolute quadrature tolerance.
    """
    return gradient_ratio_details(G, f, t, evaluator, sphere_degree)["ratio"]


def exact_gradient_at_identity(p: Polynomial, t) -> np.ndarray:
    """grad P_t p(0) from the exact polynomial semigroup."""
    Pt = heat_semigroup_poly(p, t)
    return np.array([float(apply_Xi(Pt, i).at_identity())
                     for i in range(1, 2 * p.group.n + 1)])


def scan_gradient_inequality(family: TestFunctionFamily, t: float = 1.0,
                             evaluator: Optional[KernelEvaluator] = None) -> EstimateReport:
    """Largest gradient ratio over a family; records the reduced integral too.

    ``extra["difference_ratio"]`` holds |int (grad - grad^) f p_t| / int |grad f| p_t
    per member, and ``extra["oracle_gap"]`` the largest difference between
    the finite-difference numerator and the exact polynomial one, relative
    to the denominator.
    """
    G = family.group
    E = evaluator or KernelEvaluator(G)

    def one(p):
        try:
            det = gradient_ratio_details(G, p.to_field(), t, E)
        except DegenerateDenominator as exc:
            return None, str(exc)
        exact = exact_gradient_at_identity(p, Fraction(t).limit_denominator(10 ** 12))
        det["exact_ratio"] = float(np.linalg.norm(exact)) / det["denominator"]
        det["oracle_gap"] = float(np.linalg.norm(exact - det["gradient"])) / det["denominator"]
        return det, None

    rows = _parallel_map(one, family.polynomials)
    ratios = np.array([r["ratio"] if r else np.nan for r, _ in rows])
    failures = [err for _, err in rows if err]
    extra = {
        "difference_ratio": [r["difference_ratio"] if r else None for r, _ in rows],
        "exact_ratio": [r["exact_ratio"] if r else None for r, _ in rows],
        "oracle_gap": max((r["oracle_gap"] for r, _ in rows if r), default=math.nan),
        "empirical_K": float(np.nanmax(ratios)) if np.isfinite(ratios).any() else math.nan,
    }

    def witness(i):
        return {"index": i, "field": str(family.polynomials[i])}

    spec = {"t": t, "family": family.description, "size": len(family)}
    rep = EstimateReport.from_values("main-grad-theorem", spec, ratios, witness, failures,
                                     kind="upper", extra=extra)
    return rep


def optimal_constant_experiment(G: HTypeGroup, tol: float = 1e-10) -> dict:
    """Maximize k_2(t) for f = x1 + z1 x2 and compare with the closed forms.

    The search is a golden-section search on exact rational evaluations;
    the exact optimum 2 / (3n + 3) is then checked against the search
    result and the closed form value (3n + 5) / (3n + 1).
    """
    if G.rational_J is None:
        raise ValueError("the exact experiment needs a group with rational J")
    n = G.n

    def k2(t):
        return k2_ratio(G, Fraction(t))

    lo, hi = 0.0, 1.0
    g = (math.sqrt(5) - 1) / 2
    a, b = hi - g * (hi - lo), lo + g * (hi - lo)
    fa, fb = k2(a), k2(b)
    while hi - lo > tol:
        if fa < fb:
            lo, a, fa = a, b, fb
            b = lo + g * (hi - lo)
            fb = k2(b)
        else:
            hi, b, fb = b, a, fa
            a = hi - g * (hi - lo)
            fa = k2(a)
    t_search = 0.5 * (lo + hi)
    t_max = Fraction(2, 3 * n + 3)
    k2_max = k2_ratio(G, t_max)
    expected = Fraction(3 * n + 5, 3 * n + 1)
    return {
        "n": n,
        "t_search": t_search,
        "t_max": t_max,
        "k2_max": k2_max,
        "lower_bound": math.sqrt(k2_max),
        "k2_at_zero": k2_ratio(G, 0),
        "matches_closed_form": bool(k2_max == expected and k2_closed_form(n, t_max) == expected
                                    and abs(t_search - float(t_max)) < 1e-6),
    }


def optimal_constant_report(G: HTypeGroup) -> EstimateReport:
    """The optimal-constant experiment packaged as a one-point report."""
    try:
        rec = optimal_constant_experiment(G)
    except ValueError as exc:
        return EstimateReport("optimal-constant", {}, math.nan, math.nan, {}, {}, 0,
                              [str(exc)], "upper")
    val = float(rec["k2_max"])
    where = {"t": str(rec["t_max"])}
    return EstimateReport("optimal-constant", {"search": "golden-section on exact k2"},
                          val, val, where, where, 1,
                          [] if rec["matches_closed_form"] else ["closed form mismatch"],
                          "upper", extra=rec)


# -- everything --------------------------------------------------------------

def verify_all(G: HTypeGroup, t: float = 1.0, seed: int = 0, level: int = 0,
               evaluator: Optional[KernelEvaluator] = None) -> List[EstimateReport]:
    """Run every estimate and identity suite; the order is fixed."""
    E = evaluator or KernelEvaluator(G)
    reports = [check_p1_estimate(G, EstimateGrid(level=level), E)]
    reports += list(check_gradient_estimates(G, EstimateGrid(level=level, axes=False), E))
    reports.append(check_A_asymptotics(G, level))
    reports += check_geodesic_integral_lemma(G, level=level, evaluator=E)
    reports.append(check_projection_identity(G, seed=seed, evaluator=E))
    reports += list(check_identity_suites(G, t, seed, evaluator=E))
    reports.append(scan_gradient_inequality(TestFunctionFamily.random(G, seed=seed), t, E))
    reports.append(optimal_constant_report(G))
    return reports
