from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from htype.algebra import build_heisenberg, build_quaternionic
from htype.polynomial import (
    Polynomial,
    apply_hat_Xi,
    apply_Xi,
    heat_semigroup_poly,
    k2_closed_form,
    k2_parts,
    k2_ratio,
    optimal_constant_example,
    parse_rational,
    sublaplacian,
)

H1 = build_heisenberg(1)


def xz(G):
    return Polynomial.variables(G)


def test_parse_rational():
    assert parse_rational("1/3") == Fraction(1, 3)
    assert parse_rational("0.25") == Fraction(1, 4)
    assert parse_rational(2) == 2


def test_arithmetic_and_text():
    (x1, x2), (z1,) = xz(H1)
    p = (x1 + z1 * x2) ** 2 - x1 * x1
    assert p == (z1 * x2).scale(2) * x1 + (z1 * x2) ** 2
    assert str(x1 + z1 * x2) == "1 * x2 * z1 + 1 * x1"
    assert (x1 - x1).is_zero()


def test_weight_and_dilation():
    (x1, x2), (z1,) = xz(H1)
    p = x1 * z1 + x2
    assert p.weight() == 3 and p.degree() == 2
    q = p.compose_dilation(Fraction(2))
    assert q.evaluate([1, 1], [1]) == 8 + 2


def test_x_fields_on_coordinates():
    (x1, x2), (z1,) = xz(H1)
    # X_i z = 1/2 <J x, e_i> with J e_1 = e_2, so <J x, e_1> = -x2
    assert apply_Xi(z1, 1) == x2.scale(Fraction(-1, 2))
    assert apply_Xi(z1, 2) == x1.scale(Fraction(1, 2))
    assert apply_hat_Xi(z1, 1) == x2.scale(Fraction(1, 2))
    with pytest.raises(IndexError):
        apply_Xi(z1, 3)


def test_sublaplacian_examples():
    (x1, x2), (z1,) = xz(H1)
    assert sublaplacian(x1 * x1) == Polynomial.constant(H1, 2)
    assert sublaplacian(z1).is_zero()
    # X_i X_i z^2 summed: 2 sum (X_i z)^2 = 1/2 |x|^2
    assert sublaplacian(z1 * z1) == (x1 * x1 + x2 * x2).scale(Fraction(1, 2))


def test_heat_semigroup_solves_heat_equation():
    (x1, x2), (z1,) = xz(H1)
    p = x1 ** 2 * z1 + z1 ** 2 - x2 ** 3
    t = Fraction(2, 7)
    # P_t p is quadratic in t here, so the central difference is exact
    h = Fraction(1, 10 ** 6)
    lhs = (heat_semigroup_poly(p, t + h) - heat_semigroup_poly(p, t - h)).scale(1 / (2 * h))
    assert lhs == sublaplacian(heat_semigroup_poly(p, t))


def test_semigroup_property():
    (x1, x2), (z1,) = xz(H1)
    p = x1 ** 2 * z1 ** 2 + x2 * z1
    s, t = Fraction(1, 3), Fraction(2, 5)
    assert heat_semigroup_poly(heat_semigroup_poly(p, s), t) == heat_semigroup_poly(p, s + t)


def test_left_fields_commute_with_right_fields():
    G = build_quaternionic(1)
    xs, zs = xz(G)
    p = xs[0] * zs[1] + xs[2] ** 2 * zs[0] + zs[2] ** 2
    for i in range(1, 5):
        for j in range(1, 5):
            assert apply_Xi(apply_hat_Xi(p, j), i) == apply_hat_Xi(apply_Xi(p, i), j)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=3, max_size=3))
def test_float_evaluation_matches_exact(v):
    (x1, x2), (z1,) = xz(H1)
    p = x1 ** 3 * z1 - Fraction(5, 2) * x2 * z1 ** 2 + 7
    exact = float(p.evaluate([Fraction(v[0]), Fraction(v[1])], [Fraction(v[2])]))
    assert p(np.array(v[:2]), np.array(v[2:])) == pytest.approx(exact, rel=1e-12, abs=1e-12)


def test_to_field_gradients():
    (x1, x2), (z1,) = xz(H1)
    f = (x1 * z1 + x2 ** 2).to_field()
    gx, gz = f.gradient(np.array([1.0, 2.0]), np.array([3.0]))
    assert np.allclose(gx, [3.0, 4.0]) and np.allclose(gz, [1.0])
    assert f.growth_certificate is not None


@pytest.mark.parametrize("n", [1, 2, 3])
def test_k2_matches_closed_form(n):
    G = build_heisenberg(n)
    for t in [Fraction(k, 7) for k in range(0, 15)]:
        assert k2_ratio(G, t) == k2_closed_form(n, t)


def test_k2_at_extremes():
    assert k2_ratio(H1, 0) == 1
    assert k2_ratio(H1, Fraction(1, 3)) == 2
    assert k2_ratio(build_heisenberg(2), Fraction(2, 9)) == Fraction(11, 7)


def test_k2_parts_for_quaternionic():
    # the closed form only depends on n through |x|^2 moments
    G = build_quaternionic(1)
    num, den = k2_parts(G, Fraction(1, 4))
    assert num > 0 and den > 0
    assert k2_ratio(G, Fraction(1, 4)) == k2_closed_form(G.n, Fraction(1, 4))


def test_optimal_example_needs_standard_block():
    from htype.algebra import build_custom
    G = build_custom(1, 1, [[[0, 1], [-1, 0]]])
    with pytest.raises(ValueError):
        optimal_constant_example(G)
