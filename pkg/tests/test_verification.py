import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from htype.algebra import GrowthCertificate, ScalarField, build_heisenberg
from htype.geometry import TWO_PI, cc_distance_from_identity, jacobian_A
from htype.kernel import ConvolutionGrid
from htype.polynomial import Polynomial, optimal_constant_example
from htype.verification import (
    DegenerateDenominator,
    EstimateGrid,
    EstimateReport,
    TestFunctionFamily,
    ball_average,
    check_A_asymptotics,
    check_commutation,
    check_geodesic_integral_lemma,
    check_gradient_estimates,
    check_integration_by_parts,
    check_p1_estimate,
    check_projection_identity,
    gaussian_bump,
    gradient_ratio,
    optimal_constant_experiment,
    p1_comparison,
    scan_gradient_inequality,
)


# -- reports -----------------------------------------------------------------

def make_report(values, kind="two_sided"):
    return EstimateReport.from_values("r", {}, values, lambda i: {"i": int(i)}, kind=kind)


def test_report_reduction_and_json():
    rep = make_report([3.0, 1.0, 2.0])
    assert (rep.min_ratio, rep.max_ratio, rep.argmin, rep.argmax) == (1.0, 3.0, {"i": 1}, {"i": 0})
    assert rep.passed
    j = rep.to_json()
    for key in ("estimate_id", "grid_spec", "min_ratio", "max_ratio", "argmin", "argmax",
                "n_points", "failures"):
        assert key in j


def test_report_failure_modes():
    assert not make_report([1.0, np.nan]).passed
    assert not make_report([0.0, 1.0]).passed
    assert make_report([0.0, 1.0], kind="upper").passed
    res = EstimateReport.from_values("r", {}, [1e-3], lambda i: {}, kind="residual", threshold=1e-4)
    assert not res.passed


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 100), min_size=3, max_size=30), st.integers(1, 2))
def test_merge_matches_single_reduction(values, cut):
    cut = min(cut, len(values) - 1)
    whole = EstimateReport.from_values("r", {}, values, lambda i: {"i": i})
    a = EstimateReport.from_values("r", {}, values[:cut], lambda i: {"i": i})
    b = EstimateReport.from_values("r", {}, values[cut:], lambda i: {"i": i + cut})
    for m in (a.merge(b), b.merge(a)):
        assert (m.min_ratio, m.max_ratio, m.n_points) == (whole.min_ratio, whole.max_ratio,
                                                         whole.n_points)


# -- grids and estimates -----------------------------------------------------------

def test_grid_refinement_is_nested_and_covers_regions():
    g0, g1 = EstimateGrid(), EstimateGrid().refine()
    assert set(np.round(g0.d, 12)) <= set(np.round(g1.d, 12))
    assert set(np.round(g0.rho, 12)) <= set(np.round(g1.rho, 12))
    spec = g0.spec()
    assert len(g0.d) * len(g0.rho) >= 500
    assert all(spec["regions"][k] > 0 for k in ("R1", "R2", "R3"))


def test_p1_comparison_at_origin(heis1, evaluator_h1):
    assert p1_comparison(heis1, 0.0, 0.0) == 1.0
    ratio = evaluator_h1.kernel(1.0, ([0.0, 0.0], [0.0])) / p1_comparison(heis1, 0.0, 0.0)
    assert ratio == pytest.approx(1 / 16, rel=1e-10)


def test_p1_estimate_report(heis1, evaluator_h1):
    rep = check_p1_estimate(heis1, evaluator=evaluator_h1)
    assert rep.passed and rep.n_points >= 500
    # the witness re-evaluates to the recorded ratio
    w = rep.argmax
    again = evaluator_h1.kernel(1.0, (w["x"], w["z"])) / p1_comparison(
        heis1, np.linalg.norm(w["x"]), w["d"])
    assert again == pytest.approx(rep.max_ratio, rel=1e-9)
    # deterministic
    assert check_p1_estimate(heis1, evaluator=evaluator_h1).to_json() == rep.to_json()


def test_p1_estimate_deep_r1_point_is_finite(heis1, evaluator_h1):
    # x close to 0 with |z| large
    x, z = np.array([1e-3, 0.0]), np.array([8.0])
    d = cc_distance_from_identity(heis1, (x, z))
    ratio = evaluator_h1.kernel(1.0, (x, z)) / p1_comparison(heis1, 1e-3, d)
    assert np.isfinite(ratio) and ratio > 0


def test_gradient_reports(heis1, evaluator_h1):
    grad, gradz, hat = check_gradient_estimates(heis1, evaluator=evaluator_h1)
    assert grad.passed and gradz.passed and hat.passed
    assert hat.extra["combination_holds"]
    # |grad p| = |grad^ p| for the radial kernel, so the two reports agree
    assert grad.max_ratio == pytest.approx(hat.max_ratio, rel=1e-12)


def test_gradient_ratios_on_axes(heis1, evaluator_h1):
    grad, gradz, hat = evaluator_h1.kernel_gradients(1.0, ([0.0, 0.0], [1.3]))
    assert np.allclose(grad, hat)
    _, gz0, _ = evaluator_h1.kernel_gradients(1.0, ([0.0, 0.0], [0.0]))
    assert np.linalg.norm(gz0) == 0.0


def test_A_asymptotics(heis1):
    rep = check_A_asymptotics(heis1)
    assert rep.passed
    # small rho limit: A(1, rho) ~ rho^(2(m+n)) / 12^m, divided by (2 pi)^(2n-1)
    limit = 1.0 / (12 ** heis1.m * TWO_PI ** (2 * heis1.n - 1))
    rho = 1e-5
    ratio = jacobian_A(heis1, 1.0, rho) / (rho ** 4 * (TWO_PI - rho))
    assert ratio == pytest.approx(limit, rel=1e-5)
    assert rep.min_ratio <= limit <= rep.max_ratio


def test_geodesic_lemma(heis1, evaluator_h1):
    reps = check_geodesic_integral_lemma(heis1, evaluator=evaluator_h1)
    assert [r.grid_spec["q"] for r in reps] == [0, 2]
    for r in reps:
        assert r.passed
        assert r.extra["refinement_max_relative_change"] < 1e-2
    # near rho = 2 pi the integration interval is short and the ratio small
    assert reps[0].argmin["rho"] > 5.5


def test_projection_identity(heis1, evaluator_h1):
    rep = check_projection_identity(heis1, evaluator=evaluator_h1)
    assert rep.passed and rep.max_ratio < 1e-8


# -- ball averages -----------------------------------------------------------------

def test_ball_average(heis1):
    c = ScalarField(lambda x, z: np.full(x.shape[:-1], 2.5))
    assert ball_average(heis1, c) == pytest.approx(2.5, rel=1e-13)
    odd = ScalarField(lambda x, z: x[..., 0] ** 3 + x[..., 1] * z[..., 0])
    assert abs(ball_average(heis1, odd)) < 1e-13
    d2 = ScalarField(lambda x, z: cc_distance_from_identity(heis1, (x, z)) ** 2)
    avg = ball_average(heis1, d2)
    # Haar measure of {d <= s} scales like s^Q
    assert avg == pytest.approx(heis1.Q / (heis1.Q + 2), rel=1e-10)
    fine = ConvolutionGrid.ball(heis1, 1.0, sphere_degree=12, radial_nodes=64, angle_nodes=96)
    P = fine.points()
    refined = fine.integrate(d2(P.x, P.z)) / P.weight.sum()
    assert refined == pytest.approx(avg, abs=1e-4)


# -- identities -----------------------------------------------------------------

def test_commutation_linear_field(heis1, evaluator_h1):
    x1 = Polynomial.variable(heis1, "x1").to_field()
    out = check_commutation(heis1, x1, 1.0, evaluator_h1)
    assert np.allclose(out["lhs"], [1.0, 0.0], atol=1e-8)
    assert np.allclose(out["rhs"], [1.0, 0.0], atol=1e-10)


def test_commutation_matches_polynomial_oracle(heis1, evaluator_h1):
    from htype.verification import exact_gradient_at_identity
    p = optimal_constant_example(heis1)
    out = check_commutation(heis1, p.to_field(), 0.5, evaluator_h1)
    exact = exact_gradient_at_identity(p, Fraction(1, 2))
    assert np.allclose(out["lhs"], exact, atol=1e-8)
    assert np.allclose(out["rhs"], exact, atol=1e-8)
    assert out["residual"] < 1e-4


@pytest.mark.parametrize("make", [gaussian_bump, lambda G: Polynomial.variable(G, "x1").to_field()])
def test_integration_by_parts(heis1, evaluator_h1, make):
    out = check_integration_by_parts(heis1, make(heis1), 1.0, evaluator_h1)
    assert out["left"] < 1e-4 and out["right"] < 1e-4


def test_integration_by_parts_constant(heis1, evaluator_h1):
    c = Polynomial.constant(heis1, 3).to_field()
    out = check_integration_by_parts(heis1, c, 1.0, evaluator_h1)
    assert out["scale"] == 0.0
    assert out["left"] < 1e-12 and out["right"] < 1e-12


# -- gradient inequality -----------------------------------------------------------

def test_gradient_ratio_examples(heis1, evaluator_h1):
    x1 = Polynomial.variable(heis1, "x1")
    assert gradient_ratio(heis1, x1.to_field(), 1.0, evaluator_h1) == pytest.approx(1.0, rel=1e-8)
    f = optimal_constant_example(heis1)
    assert gradient_ratio(heis1, f.to_field(), 1 / 3, evaluator_h1) >= math.sqrt(2) - 1e-3
    with pytest.raises(DegenerateDenominator):
        gradient_ratio(heis1, Polynomial.constant(heis1, 1).to_field(), 1.0, evaluator_h1)


def test_gradient_ratio_scaling_invariance(heis1, evaluator_h1):
    f = optimal_constant_example(heis1)
    alpha = 2.0
    base = gradient_ratio(heis1, f.to_field(), 1.0, evaluator_h1)
    scaled = gradient_ratio(heis1, f.compose_dilation(Fraction(2)).to_field(), 1.0 / alpha ** 2,
                            evaluator_h1)
    assert scaled == pytest.approx(base, abs=1e-3)


def test_family_is_reproducible(heis1):
    a = TestFunctionFamily.random(heis1, 20, seed=4)
    b = TestFunctionFamily.random(heis1, 20, seed=4)
    assert a.polynomials == b.polynomials and len(a) == 20
    assert all(1 <= p.weight() <= 4 for p in a.polynomials)
    assert all(abs(c) <= 3 for p in a.polynomials for c in p.coeffs.values())


def test_scan_small_family(heis1, evaluator_h1):
    fam = TestFunctionFamily.random(heis1, 6, seed=1)
    rep = scan_gradient_inequality(fam, 1.0, evaluator_h1)
    assert rep.passed and np.isfinite(rep.max_ratio)
    assert rep.extra["oracle_gap"] < 1e-3
    # z1 is the second member; its gradient at the identity vanishes
    assert rep.extra["exact_ratio"][1] == 0.0


def test_scan_records_degenerate_members(heis1, evaluator_h1):
    fam = TestFunctionFamily(heis1, (Polynomial.constant(heis1, 2),
                                     Polynomial.variable(heis1, "x1")), 0, "manual")
    rep = scan_gradient_inequality(fam, 1.0, evaluator_h1)
    assert len(rep.failures) == 1 and "P_t(|grad f|)(0)" in rep.failures[0]
    assert rep.max_ratio == pytest.approx(1.0, rel=1e-8)


@pytest.mark.parametrize("n,k2max", [(1, Fraction(2)), (2, Fraction(11, 7))])
def test_optimal_constant_experiment(n, k2max):
    rec = optimal_constant_experiment(build_heisenberg(n))
    assert rec["t_max"] == Fraction(2, 3 * n + 3)
    assert rec["k2_max"] == k2max
    assert rec["k2_at_zero"] == 1
    assert rec["lower_bound"] == pytest.approx(math.sqrt(k2max))
    assert rec["matches_closed_form"]
