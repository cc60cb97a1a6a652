"""H-type group structures, the group law and invariant gradients.

Elements of a group are stored as pairs ``(x, z)`` with ``x`` in R^{2n}
(horizontal part) and ``z`` in R^m (center).  Most routines accept numpy
arrays with arbitrary leading batch dimensions, so ``x`` has shape
``(..., 2n)`` and ``z`` has shape ``(..., m)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "AxiomViolation",
    "HTypeGroup",
    "Point",
    "GrowthCertificate",
    "ScalarField",
    "build_heisenberg",
    "build_quaternionic",
    "build_custom",
    "load_group",
    "parse_group_spec",
]

AXIOM_TOL = 1e-10


class AxiomViolation(ValueError):
    """Raised when structure constants do not define an H-type group."""

    def __init__(self, axiom: str, indices: tuple, residual: float):
        self.axiom = axiom
        self.indices = indices
        self.residual = float(residual)
        super().__init__(
            f"H-type axiom '{axiom}' violated at indices {indices} "
            f"(residual norm {self.residual:.3e})"
        )


@dataclass(frozen=True, eq=False)
class Point:
    """A group element ``g = (x, z)``."""

    x: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        x = np.array(self.x, dtype=float).reshape(-1)
        z = np.array(self.z, dtype=float).reshape(-1)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(z))):
            raise ValueError("point coordinates must be finite")
        x.setflags(write=False)
        z.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)

    @classmethod
    def identity(cls, group: "HTypeGroup") -> "Point":
        return cls(np.zeros(2 * group.n), np.zeros(group.m))

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.x, self.z])

    def __eq__(self, other):
        if not isinstance(other, Point):
            return NotImplemented
        return np.array_equal(self.x, other.x) and np.array_equal(self.z, other.z)

    def __hash__(self):
        return hash((self.x.tobytes(), self.z.tobytes()))

    def __repr__(self):
        return f"Point(x={self.x.tolist()}, z={self.z.tolist()})"


def _as_fraction_matrix(mat) -> tuple:
    return tuple(tuple(Fraction(v) for v in row) for row in mat)


def _is_exact_input(J_list) -> bool:
    for mat in J_list:
        for row in mat:
            for v in row:
                if not isinstance(v, (int, Fraction, np.integer)) or isinstance(v, bool):
                    return False
    return True


@dataclass(frozen=True, eq=False)
class HTypeGroup:
    """Validated H-type structure on R^{2n} x R^m.

    Use :func:`build_heisenberg`, :func:`build_quaternionic` or
    :func:`build_custom` rather than instantiating directly; the builders
    run the axiom checks.
    """

    n: int
    m: int
    J: np.ndarray
    name: str = "custom"
    exact_J: Optional[tuple] = field(default=None, repr=False)

    def __post_init__(self):
        J = np.array(self.J, dtype=float)
        J.setflags(write=False)
        object.__setattr__(self, "J", J)

    @property
    def Q(self) -> int:
        """Homogeneous dimension 2n + 2m."""
        return 2 * self.n + 2 * self.m

    @property
    def dim(self) -> int:
        return 2 * self.n + self.m

    @property
    def rational_J(self) -> tuple:
        """Structure matrices as exact fractions.

        Float entries are converted exactly (every double is a dyadic
        rational), so the polynomial calculus works for any group.
        """
        if self.exact_J is not None:
            return self.exact_J
        return tuple(_as_fraction_matrix(Jj.tolist()) for Jj in self.J)

    # -- linear algebra ---------------------------------------------------
    def j_matrix(self, z) -> np.ndarray:
        """Return the matrix J_z = sum_j z^j J_j (batched over ``z``)."""
        z = np.asarray(z, dtype=float)
        if z.shape[-1] != self.m:
            raise ValueError(f"z must have trailing dimension {self.m}, got {z.shape}")
        return np.tensordot(z, self.J, axes=([-1], [0]))

    def j_map(self, z, x) -> np.ndarray:
        """Apply J_z to x, broadcasting over leading dimensions."""
        z = np.asarray(z, dtype=float)
        x = np.asarray(x, dtype=float)
        if z.shape[-1] != self.m or x.shape[-1] != 2 * self.n:
            raise ValueError(
                f"dimension mismatch: z has {z.shape[-1]} (want {self.m}), "
                f"x has {x.shape[-1]} (want {2 * self.n})"
            )
        # (J_j x)_a = sum_b J_j[a, b] x_b
        Jx = np.einsum("jab,...b->...ja", self.J, x)
        return np.einsum("...j,...ja->...a", z, Jx)

    def j_basis_images(self, x) -> np.ndarray:
        """Return the vectors J_{u_j} x stacked along axis -2: shape (..., m, 2n)."""
        x = np.asarray(x, dtype=float)
        return np.einsum("jab,...b->...ja", self.J, x)

    def bracket_xz(self, x1, x2) -> np.ndarray:
        """Bracket of horizontal parts; component j is <J_j x1, x2>."""
        return np.einsum("...ja,...a->...j", self.j_basis_images(x1), np.asarray(x2, float))

    # -- group law on arrays ----------------------------------------------
    def mul_xz(self, x1, z1, x2, z2):
        x1, z1, x2, z2 = (np.asarray(a, dtype=float) for a in (x1, z1, x2, z2))
        return x1 + x2, z1 + z2 + 0.5 * self.bracket_xz(x1, x2)

    def dilate_xz(self, alpha, x, z):
        return alpha * np.asarray(x, float), alpha ** 2 * np.asarray(z, float)

    # -- Point-level API --------------------------------------------------
    def _check_point(self, g: Point):
        if g.x.shape != (2 * self.n,) or g.z.shape != (self.m,):
            raise ValueError(f"point dimensions {g.x.shape}, {g.z.shape} do not match group")

    def bracket(self, v: Point, w: Point) -> np.ndarray:
        self._check_point(v)
        self._check_point(w)
        return self.bracket_xz(v.x, w.x)

    def mul(self, g: Point, h: Point) -> Point:
        self._check_point(g)
        self._check_point(h)
        return Point(*self.mul_xz(g.x, g.z, h.x, h.z))

    def inv(self, g: Point) -> Point:
        self._check_point(g)
        return Point(-g.x, -g.z)

    def dilate(self, alpha: float, g: Point) -> Point:
        if not alpha > 0:
            raise ValueError("dilation factor must be positive")
        self._check_point(g)
        return Point(*self.dilate_xz(alpha, g.x, g.z))

    def identity(self) -> Point:
        return Point.identity(self)

    def point(self, x, z) -> Point:
        g = Point(x, z)
        self._check_point(g)
        return g

    # -- invariant gradients ----------------------------------------------
    def left_gradient(self, f: "ScalarField", g) -> np.ndarray:
        """Left-invariant subgradient (X_1 f, ..., X_2n f) at g."""
        x, z = _unpack(g)
        gx, gz = f.gradient(x, z)
        return gx + 0.5 * self.j_map(gz, x)

    def right_gradient(self, f: "ScalarField", g) -> np.ndarray:
        """Right-invariant subgradient at g."""
        x, z = _unpack(g)
        gx, gz = f.gradient(x, z)
        return gx - 0.5 * self.j_map(gz, x)

    def z_gradient(self, f: "ScalarField", g) -> np.ndarray:
        x, z = _unpack(g)
        return f.gradient(x, z)[1]

    # -- serialization ----------------------------------------------------
    def to_json(self) -> dict:
        if self.exact_J is not None:
            J = [[[_fraction_to_json(v) for v in row] for row in mat] for mat in self.exact_J]
        else:
            J = self.J.tolist()
        return {"n": self.n, "m": self.m, "J": J}

    def __repr__(self):
        return f"HTypeGroup(name={self.name!r}, n={self.n}, m={self.m})"


def _fraction_to_json(v: Fraction):
    return int(v) if v.denominator == 1 else f"{v.numerator}/{v.denominator}"


def _unpack(g):
    if isinstance(g, Point):
        return g.x, g.z
    x, z = g
    return np.asarray(x, dtype=float), np.asarray(z, dtype=float)


def _validate(n: int, m: int, J: np.ndarray, exact: Optional[tuple]) -> None:
    eye = np.eye(2 * n)
    if exact is not None:
        # exact arithmetic on the rational input
        size = 2 * n
        mats = exact

        def prod(A, B):
            return [[sum(A[i][k] * B[k][j] for k in range(size)) for j in range(size)]
                    for i in range(size)]

        for j, A in enumerate(mats):
            res = max(abs(A[a][b] + A[b][a]) for a in range(size) for b in range(size))
            if res != 0:
                raise AxiomViolation("skew", (j + 1,), float(res))
        for j in range(m):
            for k in range(j, m):
                P = prod(mats[j], mats[k])
                R = prod(mats[k], mats[j])
                target = -2 if j == k else 0
                res = max(
                    abs(P[a][b] + R[a][b] - (target if a == b else 0))
                    for a in range(size) for b in range(size)
                )
                if res != 0:
                    name = "square" if j == k else "anticommutation"
                    raise AxiomViolation(name, (j + 1, k + 1), float(res))
        return

    for j in range(m):
        res = np.linalg.norm(J[j] + J[j].T)
        if res > AXIOM_TOL:
            raise AxiomViolation("skew", (j + 1,), res)
    for j in range(m):
        for k in range(j, m):
            target = -2.0 * eye if j == k else 0.0 * eye
            res = np.linalg.norm(J[j] @ J[k] + J[k] @ J[j] - target)
            if res > AXIOM_TOL:
                name = "square" if j == k else "anticommutation"
                raise AxiomViolation(name, (j + 1, k + 1), res)


def build_custom(n: int, m: int, J_list: Sequence, name: str = "custom") -> HTypeGroup:
    """Build a group from user supplied structure matrices J_1..J_m.

    Integer or :class:`~fractions.Fraction` entries are checked exactly;
    float entries to within ``1e-10`` in Frobenius norm.

    Raises
    ------
    AxiomViolation
        If a matrix is not skew, does not square to -I, or two matrices
        fail to anticommute.
    """
    if n < 1 or m < 1:
        raise ValueError("n and m must be positive")
    if len(J_list) != m:
        raise ValueError(f"expected {m} matrices, got {len(J_list)}")
    arrs = [np.array(mat, dtype=object) for mat in J_list]
    for j, a in enumerate(arrs):
        if a.shape != (2 * n, 2 * n):
            raise ValueError(f"J_{j + 1} has shape {a.shape}, expected {(2 * n, 2 * n)}")
    exact = None
    if _is_exact_input(J_list):
        exact = tuple(_as_fraction_matrix(mat) for mat in J_list)
    J = np.array([[[float(v) for v in row] for row in mat] for mat in J_list], dtype=float)
    _validate(n, m, J, exact)
    return HTypeGroup(n=n, m=m, J=J, name=name, exact_J=exact)


def build_heisenberg(n: int) -> HTypeGroup:
    """Isotropic Heisenberg group of dimension 2n+1.

    J_1 is block diagonal with blocks [[0, -1], [1, 0]], so J_1 e_1 = e_2.
    """
    if n < 1:
        raise ValueError("n must be positive")
    J = [[0] * (2 * n) for _ in range(2 * n)]
    for k in range(n):
        J[2 * k][2 * k + 1] = -1
        J[2 * k + 1][2 * k] = 1
    return build_custom(n, 1, [J], name=f"heisenberg:{n}")


# left multiplication by i, j, k on the quaternions, basis (1, i, j, k)
_QUAT_UNITS = (
    [[0, -1, 0, 0], [1, 0, 0, 0], [0, 0, 0, -1], [0, 0, 1, 0]],
    [[0, 0, -1, 0], [0, 0, 0, 1], [1, 0, 0, 0], [0, -1, 0, 0]],
    [[0, 0, 0, -1], [0, 0, -1, 0], [0, 1, 0, 0], [1, 0, 0, 0]],
)


def build_quaternionic(k: int) -> HTypeGroup:
    """Quaternionic H-type group: H^k x Im(H), so 2n = 4k and m = 3."""
    if k < 1:
        raise ValueError("k must be positive")
    size = 4 * k
    mats = []
    for unit in _QUAT_UNITS:
        M = [[0] * size for _ in range(size)]
        for b in range(k):
            for a in range(4):
                for c in range(4):
                    M[4 * b + a][4 * b + c] = unit[a][c]
        mats.append(M)
    return build_custom(2 * k, 3, mats, name=f"quaternionic:{k}")


def _parse_entry(v):
    if isinstance(v, str):
        return Fraction(v)
    if isinstance(v, bool):
        raise ValueError("boolean matrix entry")
    return v


def load_group(path) -> HTypeGroup:
    """Load ``{n, m, J}`` JSON; axioms are re-validated on load."""
    doc = json.loads(Path(path).read_text())
    return group_from_json(doc, name=str(path))


def group_from_json(doc: dict, name: str = "custom") -> HTypeGroup:
    try:
        n, m, J = int(doc["n"]), int(doc["m"]), doc["J"]
    except KeyError as exc:
        raise ValueError(f"group document missing key {exc}") from None
    J = [[[_parse_entry(v) for v in row] for row in mat] for mat in J]
    return build_custom(n, m, J, name=name)


def parse_group_spec(spec: str) -> HTypeGroup:
    """Resolve ``heisenberg:N``, ``quaternionic:K`` or a JSON file path."""
    if ":" in spec:
        kind, _, arg = spec.partition(":")
        if kind == "heisenberg":
            return build_heisenberg(int(arg))
        if kind == "quaternionic":
            return build_quaternionic(int(arg))
    path = Path(spec)
    if path.exists():
        return load_group(path)
    raise ValueError(f"unknown group '{spec}' (use heisenberg:N, quaternionic:K or a JSON file)")


# -- scalar fields ---------------------------------------------------------

@dataclass(frozen=True)
class GrowthCertificate:
    """Constants (M, a, eps) with |f| + |grad f| + |grad^ f| <= M exp(a d^(2-eps))."""

    M: float
    a: float
    eps: float

    def __post_init__(self):
        if self.M < 0 or self.a < 0 or not 0 < self.eps < 1:
            raise ValueError("growth certificate needs M >= 0, a >= 0 and 0 < eps < 1")

    def bound(self, d):
        return self.M * np.exp(self.a * np.asarray(d, float) ** (2 - self.eps))


def fd_step(v: np.ndarray) -> np.ndarray:
    return np.maximum(1e-6, 1e-6 * np.abs(v))


@dataclass(frozen=True)
class ScalarField:
    """A real function on G, evaluated batch-wise on ``(x, z)`` arrays.

    ``value(x, z)`` receives arrays of shapes (..., 2n) and (..., m) and
    returns shape (...).  ``euclidean_gradient`` (optional) returns the
    pair ``(grad_x f, grad_z f)``.  Without it, :meth:`gradient` falls back
    to central differences with step ``max(1e-6, 1e-6 |coordinate|)``,
    which is good to roughly 1e-9 relative for well scaled fields.
    """

    value: Callable
    euclidean_gradient: Optional[Callable] = None
    growth_certificate: Optional[GrowthCertificate] = None
    description: str = ""

    def __call__(self, x, z):
        return np.asarray(self.value(np.asarray(x, float), np.asarray(z, float)), dtype=float)

    def at(self, g: Point) -> float:
        return float(self(g.x, g.z))

    def gradient(self, x, z):
        x = np.asarray(x, dtype=float)
        z = np.asarray(z, dtype=float)
        if self.euclidean_gradient is not None:
            gx, gz = self.euclidean_gradient(x, z)
            return np.asarray(gx, float), np.asarray(gz, float)
        return _fd_gradient(self, x, z)

    def compose_dilation(self, alpha: float) -> "ScalarField":
        """Return f o phi_alpha."""
        f = self

        def value(x, z):
            return f(alpha * x, alpha ** 2 * z)

        def grad(x, z):
            gx, gz = f.gradient(alpha * x, alpha ** 2 * z)
            return alpha * gx, alpha ** 2 * gz

        cert = None
        if self.growth_certificate is not None:
            c = self.growth_certificate
            # d(0, phi_a g) = a d(0, g); gradients pick up at most max(1, a)
            cert = GrowthCertificate(c.M * max(1.0, alpha), c.a * alpha ** (2 - c.eps), c.eps)
        return ScalarField(value, grad, cert, f"({self.description}) o dilation({alpha})")


def _fd_gradient(f: ScalarField, x: np.ndarray, z: np.ndarray):
    gx = np.empty(np.broadcast_shapes(x.shape[:-1], z.shape[:-1]) + x.shape[-1:])
    gz = np.empty(gx.shape[:-1] + z.shape[-1:])
    for i in range(x.shape[-1]):
        h = fd_step(x[..., i])
        xp = x.copy()
        xm = x.copy()
        xp[..., i] += h
        xm[..., i] -= h
        gx[..., i] = (f(xp, z) - f(xm, z)) / (2 * h)
    for j in range(z.shape[-1]):
        h = fd_step(z[..., j])
        zp = z.copy()
        zm = z.copy()
        zp[..., j] += h
        zm[..., j] -= h
        gz[..., j] = (f(x, zp) - f(x, zm)) / (2 * h)
    return gx, gz
