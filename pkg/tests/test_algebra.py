import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from htype.algebra import (
    AxiomViolation,
    GrowthCertificate,
    Point,
    ScalarField,
    build_custom,
    build_heisenberg,
    build_quaternionic,
    group_from_json,
    load_group,
    parse_group_spec,
)

finite = st.floats(-3, 3, allow_nan=False)


def vec(k):
    return st.lists(finite, min_size=k, max_size=k).map(np.array)


GROUPS = [build_heisenberg(1), build_heisenberg(2), build_quaternionic(1), build_quaternionic(2)]


@pytest.mark.parametrize("G", GROUPS, ids=lambda G: G.name)
def test_builtin_groups_satisfy_axioms(G):
    I = np.eye(2 * G.n)
    for i, Ji in enumerate(G.J):
        assert np.array_equal(Ji.T, -Ji)
        assert np.array_equal(Ji @ Ji, -I)
        for Jk in G.J[i + 1:]:
            assert np.array_equal(Ji @ Jk + Jk @ Ji, np.zeros_like(I))


def test_dimensions():
    G = build_quaternionic(2)
    assert (G.n, G.m, G.Q, G.dim) == (4, 3, 14, 11)
    assert build_heisenberg(3).Q == 8


@pytest.mark.parametrize("J,axiom", [
    ([[[0, 1], [1, 0]]], "skew"),
    ([[[0, 2], [-2, 0]]], "square"),
])
def test_axiom_violations(J, axiom):
    with pytest.raises(AxiomViolation) as info:
        build_custom(1, 1, J)
    assert info.value.axiom == axiom


def test_anticommutation_violation():
    H = build_heisenberg(2).J[0]
    with pytest.raises(AxiomViolation) as info:
        build_custom(2, 2, [H, H])
    assert info.value.axiom == "anticommutation"
    assert info.value.indices == (1, 2)


def test_float_tolerance_accepts_rounding():
    J = build_heisenberg(1).J[0] * (1 + 1e-13)
    build_custom(1, 1, [J])
    with pytest.raises(AxiomViolation):
        build_custom(1, 1, [J * (1 + 1e-6)])


def test_json_roundtrip(tmp_path):
    G = build_quaternionic(1)
    path = tmp_path / "q.json"
    path.write_text(json.dumps(G.to_json()))
    H = load_group(path)
    assert np.array_equal(G.J, H.J)
    doc = {"n": 1, "m": 1, "J": [[["0", "-1/1"], ["1", "0"]]]}
    assert group_from_json(doc).rational_J[0][0][1] == Fraction(-1)


def test_parse_group_spec():
    assert parse_group_spec("heisenberg:2").n == 2
    assert parse_group_spec("quaternionic:1").m == 3
    with pytest.raises(ValueError):
        parse_group_spec("octonionic:1")


def test_identity_and_inverse():
    G = build_heisenberg(1)
    g = G.point([1.0, 2.0], [0.5])
    e = G.identity()
    assert G.mul(g, e) == g
    prod = G.mul(g, G.inv(g))
    assert np.allclose(prod.x, 0) and np.allclose(prod.z, 0)


def test_point_is_read_only():
    p = Point([1.0, 2.0], [3.0])
    with pytest.raises(ValueError):
        p.x[0] = 5.0


def test_bracket_of_basis_vectors():
    # [e_1, e_2]_j = <J_j e_1, e_2>; for the standard Heisenberg block this is 1
    G = build_heisenberg(1)
    assert G.bracket_xz(np.array([1.0, 0.0]), np.array([0.0, 1.0]))[0] == 1.0


@settings(max_examples=50, deadline=None)
@given(vec(4), vec(3), vec(4), vec(3), vec(4), vec(3))
def test_multiplication_is_associative(x1, z1, x2, z2, x3, z3):
    G = build_quaternionic(1)
    a = G.mul_xz(*G.mul_xz(x1, z1, x2, z2), x3, z3)
    b = G.mul_xz(x1, z1, *G.mul_xz(x2, z2, x3, z3))
    assert np.allclose(a[0], b[0]) and np.allclose(a[1], b[1], atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(vec(4), vec(3), vec(4), vec(3), st.floats(0.1, 5))
def test_dilation_is_an_automorphism(x1, z1, x2, z2, alpha):
    G = build_quaternionic(1)
    lhs = G.dilate_xz(alpha, *G.mul_xz(x1, z1, x2, z2))
    rhs = G.mul_xz(*G.dilate_xz(alpha, x1, z1), *G.dilate_xz(alpha, x2, z2))
    assert np.allclose(lhs[0], rhs[0]) and np.allclose(lhs[1], rhs[1], atol=1e-10)


@settings(max_examples=50, deadline=None)
@given(vec(4), vec(3))
def test_j_map_is_conformal(x, z):
    # |J_z x| = |z| |x|
    G = build_quaternionic(1)
    assert np.isclose(np.linalg.norm(G.j_map(z, x)), np.linalg.norm(z) * np.linalg.norm(x),
                      atol=1e-12)


def test_gradients_of_a_center_coordinate():
    G = build_heisenberg(1)
    f = ScalarField(lambda x, z: z[..., 0],
                    lambda x, z: (np.zeros_like(x), np.ones_like(z)))
    g = ([2.0, -1.0], [0.3])
    left, right = G.left_gradient(f, g), G.right_gradient(f, g)
    # (grad - grad^) f = J_{grad_z f} x, whose norm is |x| |grad_z f|
    assert np.isclose(np.linalg.norm(left - right), np.sqrt(5.0))
    assert np.allclose(left + right, 0.0)


def test_finite_difference_gradient_fallback():
    G = build_heisenberg(1)
    f = ScalarField(lambda x, z: x[..., 0] ** 2 + 3 * z[..., 0])
    gx, gz = f.gradient(np.array([1.5, 0.0]), np.array([2.0]))
    assert np.allclose(gx, [3.0, 0.0], atol=1e-8)
    assert np.allclose(gz, [3.0], atol=1e-8)
    assert G.z_gradient(f, ([1.5, 0.0], [2.0]))[0] == pytest.approx(3.0, abs=1e-8)


def test_compose_dilation():
    f = ScalarField(lambda x, z: x[..., 0] + z[..., 0],
                    lambda x, z: (np.array([1.0, 0.0]) + 0 * x, np.ones_like(z)),
                    GrowthCertificate(2.0, 0.1, 0.5))
    h = f.compose_dilation(2.0)
    assert h(np.array([1.0, 0.0]), np.array([1.0])) == 6.0
    gx, gz = h.gradient(np.array([1.0, 0.0]), np.array([1.0]))
    assert gx[0] == 2.0 and gz[0] == 4.0
    assert h.growth_certificate.a > f.growth_certificate.a


def test_growth_certificate_validation():
    with pytest.raises(ValueError):
        GrowthCertificate(1.0, 0.1, 1.5)
