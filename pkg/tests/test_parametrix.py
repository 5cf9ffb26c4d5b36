import numpy as np
import pytest

from padic_heat.cauchy import (
    CauchyProblem,
    Growth,
    RadialBackground,
    StepFunction,
    TimeSource,
    heat_potential_u1,
    heat_potential_u2,
)
from padic_heat.errors import CosetResolutionTooCoarse, HypothesisViolation, IterationDiverged
from padic_heat.kernel import KernelParams, heat_kernel_series
from padic_heat.padic import Ball, PAdicPoint
from padic_heat.parametrix import (
    Coefficient,
    CoefficientSet,
    build_parametrix,
    build_skeleton,
    cell_solution,
    constant_field,
    frozen_drift_constant,
    gamma_solution,
    iterate_ratios,
    iterate_decay_factor,
    ode_reference,
    parametrized_kernel,
    r_kernel,
    r_majorant,
    solve_variable,
)
from padic_heat.qform import QFormPair

FORM = QFormPair(3)
SKEL = build_skeleton(FORM)
OMEGA = StepFunction.unit_ball(3)
C = PAdicPoint.from_values(["1/3", 0, 0, 0], 3)


def bump(height, base=0.0):
    """base + height on the cell B_0(c)."""
    return StepFunction(3, ((Ball(C, 0), base + height),), RadialBackground.const(base), None,
                        Growth(abs(base) + abs(height), 0.0))


def const(v):
    return constant_field(3, v)


@pytest.fixture(scope="module")
def unperturbed():
    return build_parametrix(CoefficientSet(FORM, 1.5, const(1.3)), SKEL, q=3)


def test_reduction_is_exact(unperturbed):
    res = unperturbed
    assert np.all(res.rbar == 0) and np.all(res.phi == 0) and np.all(res.w == 0)
    x, xi = PAdicPoint.from_values(["1/3", 1, 0, 0], 3), PAdicPoint.from_values([0, 0, 1, 0], 3)
    g, _ = gamma_solution(res, x, 0.75, xi, 0.25)
    z = heat_kernel_series(KernelParams(FORM, 1.5, 1.3), x - xi, 0.5)
    assert g == z.value
    assert parametrized_kernel(res.coeffs, x, 0.75, xi, 0.25).value == z.value


def test_constant_coefficients_match_cauchy_solver(unperturbed):
    res = unperturbed
    prob = CauchyProblem(KernelParams(FORM, 1.5, 1.3), OMEGA)
    sol = solve_variable(res.coeffs, OMEGA, None, [(SKEL.points[a], 0.5) for a in (0, 5, 40, 81, 90)], res=res)
    for x, t, v in sol.rows:
        assert abs(v - heat_potential_u1(prob, x, t)[0].real) < 1e-12


def test_constant_coefficients_with_source(unperturbed):
    res = unperturbed
    g = TimeSource.constant_in_time(OMEGA)
    prob = CauchyProblem(KernelParams(FORM, 1.5, 1.3), OMEGA, g)
    sol = solve_variable(res.coeffs, OMEGA, g, [(SKEL.points[a], 1.0) for a in (0, 7, 85)], res=res)
    for x, t, v in sol.rows:
        exact = heat_potential_u1(prob, x, t)[0].real + heat_potential_u2(prob, x, t)[0].real
        assert abs(v - exact) < 2e-3 * max(1, abs(exact))  # trapezoid in time with 8 steps


def test_b_only_r_kernel_closed_form():
    co = CoefficientSet(FORM, 1.5, const(1.0), (), const(0.4))
    x, xi = PAdicPoint.from_values([1, 0, 0, 0], 3), PAdicPoint.from_values(["1/3", 0, 1, 0], 3)
    r, _ = r_kernel(co, x, 0.8, xi, 0.3)
    assert abs(r + 0.4 * heat_kernel_series(KernelParams(FORM, 1.5, 1.0), x - xi, 0.5).value) < 1e-15


@pytest.mark.parametrize("b", [0.3, 1.0])
def test_constant_b_mass_decay(b):
    res = build_parametrix(CoefficientSet(FORM, 1.5, const(1.0), (), const(b)), SKEL, q=4)
    mass = res.mass(SKEL.sample(OMEGA))
    assert np.max(np.abs(mass - np.exp(-b * res.times))) < 1e-3
    # b-only iterates: b^m T^(m-1) / (m-1)!
    assert abs(res.iterate_norms[1] / res.iterate_norms[0] - b) < 1e-2 * b


def test_variable_coefficients_match_ode():
    co = CoefficientSet(FORM, 1.5, TimeSource.constant_in_time(bump(0.4, 1.0)),
                        (Coefficient(0.7, TimeSource.constant_in_time(bump(0.5, 0.2))),),
                        TimeSource.constant_in_time(bump(0.3)))
    res = build_parametrix(co, SKEL, q=4, m_max=8)
    phi0 = SKEL.sample(OMEGA)
    diff = np.max(np.abs(cell_solution(res, phi0) - ode_reference(co, SKEL, phi0, res.times)))
    assert diff < 1e-5


def test_time_refinement_converges():
    """Two time resolutions agree within the observed first-order error."""
    co = CoefficientSet(FORM, 1.5, TimeSource((0.0, 0.5), (bump(0.3, 1.0), bump(-0.2, 1.2))), (),
                        TimeSource.constant_in_time(bump(0.3)), nu=0.5)
    phi0 = SKEL.sample(OMEGA)
    errs = []
    for q in (2, 3):
        res = build_parametrix(co, SKEL, q=q)
        errs.append(np.max(np.abs(cell_solution(res, phi0) - ode_reference(co, SKEL, phi0, res.times))))
    assert errs[1] < 0.7 * errs[0]


def test_perturbation_order():
    ratios, w = {}, {}
    for d in (0.1, 0.01):
        co = CoefficientSet(FORM, 1.5, TimeSource.constant_in_time(bump(d, 1.0)), (),
                            TimeSource.constant_in_time(bump(d)))
        res = build_parametrix(co, SKEL, q=3)
        ratios[d] = iterate_ratios(res)[0]
        w[d] = np.max(np.abs(res.w))
    assert 5 <= ratios[0.1] / ratios[0.01] <= 20
    assert 5 <= w[0.1] / w[0.01] <= 20


def test_iterates_follow_factorial_decay():
    co = CoefficientSet(FORM, 1.5, TimeSource.constant_in_time(bump(0.5, 1.0)), (), const(0.5))
    res = build_parametrix(co, SKEL, q=3, m_max=6)
    n = res.iterate_norms
    scaled = [v / iterate_decay_factor(co, m + 1) for m, v in enumerate(n)]
    assert max(scaled) <= 10 * scaled[0]
    assert all(b < a for a, b in zip(n, n[1:]))


def test_diverging_iteration_detected():
    with pytest.raises(IterationDiverged):
        build_parametrix(CoefficientSet(FORM, 1.5, const(1.0), (), const(1e4)), SKEL, q=2)


def test_hypotheses():
    with pytest.raises(HypothesisViolation):
        CoefficientSet(FORM, 1.0, const(1.0))
    with pytest.raises(HypothesisViolation):
        CoefficientSet(FORM, 1.5, const(0.5), mu=1.0)
    with pytest.raises(HypothesisViolation):
        CoefficientSet(FORM, 1.5, const(1.0), (Coefficient(0.9, const(1)), Coefficient(0.5, const(1))))
    with pytest.raises(HypothesisViolation):
        CoefficientSet(FORM, 1.5, const(1.0), (Coefficient(1.5, const(1)),))
    co = CoefficientSet(FORM, 1.5, const(1.0), (Coefficient(0.5, const(1)),), nu=1.0)
    assert not co.chain_ordered  # alpha (1 - nu) = 0 sits below alpha_1: flagged only
    assert CoefficientSet(FORM, 1.5, const(1.0), (Coefficient(0.5, const(1)),), nu=0.5).chain_ordered
    grow = StepFunction(3, (), RadialBackground.const(1.0), None, Growth(1.0, 0.6))
    with pytest.raises(HypothesisViolation):
        solve_variable(co, grow, None, [])
    fine = CoefficientSet(FORM, 1.5, TimeSource.constant_in_time(
        StepFunction(3, ((Ball(C, -1), 2.0),), RadialBackground.const(1.0), None, Growth(2.0, 0.0))))
    with pytest.raises(CosetResolutionTooCoarse):
        build_parametrix(fine, SKEL, q=1)


def test_hoelder_ratio():
    ts = TimeSource((0.0, 0.25), (bump(0.0, 1.0), bump(0.0, 1.5)))
    co = CoefficientSet(FORM, 1.5, ts, nu=0.5)
    assert abs(co.holder_ratio() - 0.5 / 0.25**0.5) < 1e-12
    with pytest.raises(HypothesisViolation):
        CoefficientSet(FORM, 1.5, ts, nu=0.5, holder_constant=0.5)


def _r_ratio(co, t_values):
    pts = [PAdicPoint.from_values(v, 3) for v in ([0, 0, 0, 0], [1, 0, 0, 0], ["1/3", 0, 0, 0], [0, 0, "1/9", 0])]
    worst = 0.0
    for x in pts:
        for xi in pts:
            for t in t_values:
                r, _ = r_kernel(co, x, t, xi, 0.0)
                worst = max(worst, abs(r) / r_majorant(co, x, t, xi, 0.0))
    return worst


def test_r_bound_constant_stable():
    co = CoefficientSet(FORM, 1.5, TimeSource.constant_in_time(bump(0.5, 1.0)),
                        (Coefficient(0.6, const(0.3)),), const(0.2), nu=0.5)
    coarse = _r_ratio(co, np.logspace(-3, 0, 7))
    fine = _r_ratio(co, np.logspace(-3, 0, 25))
    assert np.isfinite(coarse) and abs(fine - coarse) <= 0.1 * coarse


def test_frozen_drift_constant_stable():
    co = CoefficientSet(FORM, 1.5, TimeSource.constant_in_time(bump(0.5, 1.0)))
    coarse = frozen_drift_constant(co, SKEL, np.logspace(-3, 0, 7))
    fine = frozen_drift_constant(co, SKEL, np.logspace(-3, 0, 25))
    assert np.isfinite(coarse) and abs(fine - coarse) <= 0.1 * coarse
