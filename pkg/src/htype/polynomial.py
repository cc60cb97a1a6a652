"""Exact polynomial calculus for the horizontal vector fields.

Polynomials live on R^{2n+m} with variables ``x1..x2n, z1..zm`` and
:class:`~fractions.Fraction` coefficients.  The sublaplacian strictly
lowers the dilation weight ``deg_x + 2 deg_z`` by two, so the heat
semigroup ``exp(tL)`` is a finite sum on polynomials.
"""

from __future__ import annotations

import math
from fractions import Fraction
from functools import lru_cache
from typing import Dict, Iterable, Mapping, Tuple

import numpy as np

from .algebra import GrowthCertificate, HTypeGroup, ScalarField

__all__ = [
    "NonTermination",
    "Polynomial",
    "apply_Xi",
    "sublaplacian",
    "heat_semigroup_poly",
    "k2_ratio",
    "k2_closed_form",
    "optimal_constant_example",
    "parse_rational",
]

Monomial = Tuple[int, ...]


class NonTermination(RuntimeError):
    """The heat series failed to terminate; indicates an internal bug."""


def parse_rational(text) -> Fraction:
    """Parse ``"p/q"``, an integer or a decimal string into a Fraction."""
    if isinstance(text, Fraction):
        return text
    if isinstance(text, float):
        return Fraction(text)
    return Fraction(str(text).strip())


class Polynomial:
    """Immutable polynomial with exact rational coefficients.

    Parameters
    ----------
    group : HTypeGroup
        Fixes the number of variables (2n + m) and the vector fields.
    coeffs : mapping
        Exponent tuple -> coefficient.  Zero coefficients are dropped.
    """

    __slots__ = ("group", "_coeffs", "_hash")

    def __init__(self, group: HTypeGroup, coeffs: Mapping[Monomial, object] = ()):
        self.group = group
        nv = group.dim
        clean: Dict[Monomial, Fraction] = {}
        items = coeffs.items() if isinstance(coeffs, Mapping) else coeffs
        for mono, c in items:
            mono = tuple(int(e) for e in mono)
            if len(mono) != nv or min(mono, default=0) < 0:
                raise ValueError(f"bad exponent tuple {mono} for {nv} variables")
            c = Fraction(c)
            if c:
                clean[mono] = clean.get(mono, Fraction(0)) + c
                if not clean[mono]:
                    del clean[mono]
        self._coeffs = dict(sorted(clean.items()))
        self._hash = None

    # -- constructors -----------------------------------------------------
    @classmethod
    def constant(cls, group: HTypeGroup, c) -> "Polynomial":
        return cls(group, {(0,) * group.dim: c})

    @classmethod
    def variable(cls, group: HTypeGroup, name: str) -> "Polynomial":
        """``x1`` .. ``x{2n}`` or ``z1`` .. ``z{m}`` (1-based as in the text)."""
        idx = _var_index(group, name)
        mono = [0] * group.dim
        mono[idx] = 1
        return cls(group, {tuple(mono): 1})

    @classmethod
    def variables(cls, group: HTypeGroup):
        """Return (xs, zs): lists of the coordinate polynomials."""
        xs = [cls.variable(group, f"x{i + 1}") for i in range(2 * group.n)]
        zs = [cls.variable(group, f"z{j + 1}") for j in range(group.m)]
        return xs, zs

    # -- basic protocol ---------------------------------------------------
    @property
    def coeffs(self) -> Dict[Monomial, Fraction]:
        return dict(self._coeffs)

    def terms(self) -> Iterable[Tuple[Monomial, Fraction]]:
        return self._coeffs.items()

    def is_zero(self) -> bool:
        return not self._coeffs

    def __eq__(self, other):
        if isinstance(other, (int, Fraction)):
            other = Polynomial.constant(self.group, other)
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.group is other.group and self._coeffs == other._coeffs

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((id(self.group), tuple(self._coeffs.items())))
        return self._hash

    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            if other.group is not self.group:
                raise ValueError("polynomials belong to different groups")
            return other
        return Polynomial.constant(self.group, Fraction(other))

    def __add__(self, other):
        other = self._coerce(other)
        out = dict(self._coeffs)
        for mono, c in other._coeffs.items():
            out[mono] = out.get(mono, Fraction(0)) + c
        return Polynomial(self.group, out)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.group, {k: -v for k, v in self._coeffs.items()})

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def scale(self, c) -> "Polynomial":
        c = Fraction(c)
        return Polynomial(self.group, {k: c * v for k, v in self._coeffs.items()})

    def __mul__(self, other):
        if not isinstance(other, Polynomial):
            return self.scale(other)
        other = self._coerce(other)
        out: Dict[Monomial, Fraction] = {}
        for m1, c1 in self._coeffs.items():
            for m2, c2 in other._coeffs.items():
                mono = tuple(a + b for a, b in zip(m1, m2))
                out[mono] = out.get(mono, Fraction(0)) + c1 * c2
        return Polynomial(self.group, out)

    __rmul__ = __mul__

    def __pow__(self, k: int):
        if k < 0:
            raise ValueError("negative power")
        out = Polynomial.constant(self.group, 1)
        for _ in range(k):
            out = out * self
        return out

    # -- calculus ---------------------------------------------------------
    def partial(self, i: int) -> "Polynomial":
        """Derivative in the i-th variable (0-based over x then z)."""
        out = {}
        for mono, c in self._coeffs.items():
            e = mono[i]
            if e:
                new = list(mono)
                new[i] = e - 1
                out[tuple(new)] = c * e
        return Polynomial(self.group, out)

    def partial_x(self, i: int) -> "Polynomial":
        return self.partial(i)

    def partial_z(self, j: int) -> "Polynomial":
        return self.partial(2 * self.group.n + j)

    def degree(self) -> int:
        return max((sum(m) for m in self._coeffs), default=0)

    def weight(self) -> int:
        """Dilation weight deg_x + 2 deg_z (max over terms)."""
        nx = 2 * self.group.n
        return max((sum(m[:nx]) + 2 * sum(m[nx:]) for m in self._coeffs), default=0)

    def compose_dilation(self, alpha) -> "Polynomial":
        """Return p o phi_alpha, alpha rational."""
        alpha = Fraction(alpha)
        nx = 2 * self.group.n
        return Polynomial(
            self.group,
            {m: c * alpha ** (sum(m[:nx]) + 2 * sum(m[nx:])) for m, c in self._coeffs.items()},
        )

    # -- evaluation -------------------------------------------------------
    def evaluate(self, x, z) -> Fraction:
        """Exact evaluation at a point with rational (or int) coordinates."""
        vals = [Fraction(v) for v in list(x) + list(z)]
        total = Fraction(0)
        for mono, c in self._coeffs.items():
            term = c
            for v, e in zip(vals, mono):
                if e:
                    term *= v ** e
            total += term
        return total

    def at_identity(self) -> Fraction:
        return self._coeffs.get((0,) * self.group.dim, Fraction(0))

    def __call__(self, x, z):
        """Float evaluation, vectorized over leading dimensions."""
        x = np.asarray(x, dtype=float)
        z = np.asarray(z, dtype=float)
        shape = np.broadcast_shapes(x.shape[:-1], z.shape[:-1])
        coords = np.concatenate(
            [np.broadcast_to(x, shape + x.shape[-1:]), np.broadcast_to(z, shape + z.shape[-1:])],
            axis=-1,
        )
        out = np.zeros(coords.shape[:-1])
        for mono, c in self._coeffs.items():
            term = np.full(coords.shape[:-1], float(c))
            for k, e in enumerate(mono):
                if e:
                    term = term * coords[..., k] ** e
            out = out + term
        return out

    def to_field(self) -> ScalarField:
        """Wrap as a :class:`ScalarField` with exact gradient polynomials."""
        G = self.group
        nx = 2 * G.n
        grads = [self.partial(k) for k in range(G.dim)]

        def grad(x, z):
            gx = np.stack([grads[k](x, z) for k in range(nx)], axis=-1)
            gz = np.stack([grads[nx + j](x, z) for j in range(G.m)], axis=-1)
            return gx, gz

        # |x| <= d and |z| <= d^2, so every monomial is <= (1 + d)^weight and
        # the gradients are bounded the same way with a (1 + m) weight factor.
        w = max(self.weight(), 1)
        K = sum(abs(float(c)) for c in self._coeffs.values()) * (1 + 2 * w * (1 + G.m))
        cert = GrowthCertificate(M=K * math.exp(_log_growth_excess(w)), a=GROWTH_RATE, eps=0.5)
        return ScalarField(self.__call__, grad, cert, description=str(self))

    # -- text -------------------------------------------------------------
    def var_names(self):
        G = self.group
        return [f"x{i + 1}" for i in range(2 * G.n)] + [f"z{j + 1}" for j in range(G.m)]

    def __str__(self):
        if not self._coeffs:
            return "0"
        names = self.var_names()
        parts = []
        for mono, c in self._coeffs.items():
            factors = [str(c)]
            for name, e in zip(names, mono):
                if e == 1:
                    factors.append(name)
                elif e > 1:
                    factors.append(f"{name}^{e}")
            parts.append(" * ".join(factors))
        return " + ".join(parts)

    def __repr__(self):
        return f"Polynomial({self})"


GROWTH_RATE = 0.05


def _log_growth_excess(w: int) -> float:
    """max over d >= 0 of w log(1 + d) - GROWTH_RATE d^(3/2)."""
    d = np.linspace(0.0, (w / GROWTH_RATE) ** (2 / 3) * 4 + 4.0, 20001)
    return float(np.max(w * np.log1p(d) - GROWTH_RATE * d ** 1.5)) + 1e-9


def _var_index(group: HTypeGroup, name: str) -> int:
    kind, num = name[0], int(name[1:])
    if kind == "x" and 1 <= num <= 2 * group.n:
        return num - 1
    if kind == "z" and 1 <= num <= group.m:
        return 2 * group.n + num - 1
    raise ValueError(f"unknown variable {name!r}")


@lru_cache(maxsize=64)
def _jx_components(group: HTypeGroup):
    """c[i][j] = <J_{u_j} x, e_i> = sum_l (J_j)_{il} x^l as polynomials."""
    xs, _ = Polynomial.variables(group)
    rJ = group.rational_J
    out = []
    for i in range(2 * group.n):
        row = []
        for j in range(group.m):
            p = Polynomial(group)
            for l in range(2 * group.n):
                if rJ[j][i][l]:
                    p = p + xs[l].scale(rJ[j][i][l])
            row.append(p)
        out.append(row)
    return out


def apply_Xi(p: Polynomial, i: int) -> Polynomial:
    """Apply the left-invariant field X_i (1 <= i <= 2n) to ``p``."""
    G = p.group
    if not 1 <= i <= 2 * G.n:
        raise IndexError(f"X_i index {i} out of range 1..{2 * G.n}")
    comps = _jx_components(G)[i - 1]
    out = p.partial_x(i - 1)
    for j in range(G.m):
        dz = p.partial_z(j)
        if not dz.is_zero() and not comps[j].is_zero():
            out = out + (comps[j] * dz).scale(Fraction(1, 2))
    return out


def apply_hat_Xi(p: Polynomial, i: int) -> Polynomial:
    """Apply the right-invariant field on ``p``."""
    G = p.group
    if not 1 <= i <= 2 * G.n:
        raise IndexError(f"index {i} out of range 1..{2 * G.n}")
    comps = _jx_components(G)[i - 1]
    out = p.partial_x(i - 1)
    for j in range(G.m):
        out = out - (comps[j] * p.partial_z(j)).scale(Fraction(1, 2))
    return out


def left_gradient_poly(p: Polynomial):
    return [apply_Xi(p, i) for i in range(1, 2 * p.group.n + 1)]


def sublaplacian(p: Polynomial) -> Polynomial:
    """L p = sum_i X_i X_i p."""
    out = Polynomial(p.group)
    for i in range(1, 2 * p.group.n + 1):
        out = out + apply_Xi(apply_Xi(p, i), i)
    return out


@lru_cache(maxsize=256)
def heat_terms(p: Polynomial) -> Tuple[Polynomial, ...]:
    """The nonzero iterates p, Lp, L^2 p, ... (terminating)."""
    limit = math.ceil(p.weight() / 2) + 1
    terms = []
    q = p
    while not q.is_zero():
        if len(terms) > limit:
            raise NonTermination(f"L^k p nonzero beyond k={limit}")
        terms.append(q)
        q = sublaplacian(q)
    return tuple(terms)


def heat_semigroup_poly(p: Polynomial, t) -> Polynomial:
    """P_t p = sum_k t^k / k! L^k p, exactly."""
    t = parse_rational(t)
    out = Polynomial(p.group)
    for k, q in enumerate(heat_terms(p)):
        out = out + q.scale(t ** k / math.factorial(k))
    return out


def optimal_constant_example(group: HTypeGroup) -> Polynomial:
    """f = x1 + z1 x2, the extremal test function for the gradient bound."""
    J1 = group.rational_J[0]
    # requires J_{u_1} e_1 = e_2, i.e. first column of J_1 equal to e_2
    col = [J1[a][0] for a in range(2 * group.n)]
    if col != [Fraction(int(a == 1)) for a in range(2 * group.n)]:
        raise ValueError("group must satisfy J_{u_1} e_1 = e_2")
    xs, zs = Polynomial.variables(group)
    return xs[0] + zs[0] * xs[1]


def k2_parts(group: HTypeGroup, t):
    """Return (|grad P_t f(0)|^2, P_t(|grad f|^2)(0)) exactly."""
    t = parse_rational(t)
    f = optimal_constant_example(group)
    Ptf = heat_semigroup_poly(f, t)
    num = sum((apply_Xi(Ptf, i).at_identity() ** 2 for i in range(1, 2 * group.n + 1)),
              Fraction(0))
    sq = Polynomial(group)
    for gi in left_gradient_poly(f):
        sq = sq + gi * gi
    den = heat_semigroup_poly(sq, t).at_identity()
    return num, den


def k2_ratio(group: HTypeGroup, t) -> Fraction:
    """k_2(t) = |grad P_t f(0)|^2 / P_t(|grad f|^2)(0) for f = x1 + z1 x2."""
    num, den = k2_parts(group, t)
    if den == 0:
        raise ZeroDivisionError("P_t(|grad f|^2)(0) vanishes")
    return num / den


def k2_closed_form(n: int, t) -> Fraction:
    t = parse_rational(t)
    return (1 + t) ** 2 / (1 - 2 * t + (3 * n + 2) * t ** 2)
