import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from padic_heat.errors import DomainViolation, RejectionBudgetExceeded
from padic_heat.kernel import KernelParams
from padic_heat import markov
from padic_heat.markov import (
    CORE,
    build_radial_law,
    chi_square,
    digit_uniformity,
    increment_independence,
    sample_digits,
    sample_increment,
    shell_report,
    simulate,
    two_sample_shells,
)
from padic_heat.qform import QFormPair, Side, abs_exponent

P3 = KernelParams(QFormPair(3), 1.5, 1.0)
P5 = KernelParams(QFormPair(5), 1.2, 0.7)
N = 100_000


@pytest.fixture(scope="module")
def law():
    return build_radial_law(P3, 1.0, 1e-10)


@pytest.mark.parametrize("params", [P3, P5])
@pytest.mark.parametrize("t", [0.01, 1.0, 20.0])
def test_law_is_a_probability(params, t):
    L = build_radial_law(params, t, 1e-10)
    assert np.all(L.probs >= 0)
    assert L.tail_mass < 1e-10
    assert abs(L.probs.sum() + L.tail_mass - 1) <= 1e-10 + L.mass_error


@given(st.floats(1e-3, 10.0))
@settings(max_examples=15, deadline=None)
def test_law_scaling_shift(t):
    a = build_radial_law(P3, t, 1e-10).table()
    b = build_radial_law(P3, t * 3 ** (-2 * P3.alpha), 1e-10).table()
    for (j, m), q in a.items():
        if m != CORE and (j - 1, m) in b:
            assert abs(b[(j - 1, m)] - q) < 1e-13


def test_norm_stochastically_increases():
    laws = [build_radial_law(P3, t, 1e-10) for t in (0.1, 0.5, 1.0, 4.0)]
    for j in range(-3, 5):
        cdf = [L.norm_cdf(j) for L in laws]
        assert all(b <= a + 1e-12 for a, b in zip(cdf, cdf[1:]))


def test_shell_histogram_matches_law(law):
    idx, u = sample_digits(law, 11, np.arange(N), 0)
    j, m = markov._shell_of(u, 0, 3, P3.form.coefficients(Side.F))
    # u is primitive except in the core; shift back to the sampled shell
    j = np.where(law.m[idx] == CORE, law.j[idx], law.j[idx] + j)
    assert chi_square(law, j, m)[1] > 1e-3


def test_sampled_points_lie_on_their_shell(law):
    idx, u = sample_digits(law, 3, np.arange(200), 0)
    for k in range(200):
        if law.m[idx[k]] == CORE:
            continue
        x = markov.sample_increment(law, 3, k, 0)
        assert x.norm_exponent() == law.j[idx[k]]
        assert abs_exponent(P3.form, x) == 2 * law.j[idx[k]] - law.m[idx[k]]


def test_digits_uniform_within_shells(law):
    idx, u = sample_digits(law, 5, np.arange(N), 0)
    u = u[law.m[idx] != CORE]
    for pos in (1, 6, 11):
        assert digit_uniformity(u, 3, pos) > 1e-3


def test_seed_determinism(law):
    a = sample_increment(law, 99, 4, 2)
    assert a == sample_increment(law, 99, 4, 2)
    assert a != sample_increment(law, 100, 4, 2)


def test_rejection_budget(law, monkeypatch):
    monkeypatch.setattr(markov, "MAX_ATTEMPTS", 1)
    with pytest.raises(RejectionBudgetExceeded):
        sample_digits(law, 1, np.arange(2000), 0)


def test_one_step_is_sample_increment(law):
    ens = simulate(P3, 1.0, 1, 50, 8)
    for i in (0, 17, 49):
        assert ens.trajectory(i).points[1].to_fractions() == sample_increment(law, 8, i, 0).to_fractions()


def test_semigroup_two_sample():
    many = simulate(P3, 1.0, 4, N, 21)
    one = simulate(P3, 1.0, 1, N, 22)
    assert two_sample_shells(many.shells(4), one.shells(1)) > 1e-3
    assert chi_square(build_radial_law(P3, 1.0, 1e-10), *many.shells(4))[1] > 1e-3


def test_per_step_bins_within_four_sigma():
    ens = simulate(P3, 1.0, 3, N, 5)
    rows = shell_report(build_radial_law(P3, 1 / 3, 1e-10), ens)
    assert max(abs(r["z"]) for r in rows) < 4


def test_increments_independent():
    ens = simulate(P3, 1.0, 3, N, 13)
    assert increment_independence(ens, 0) > 1e-3
    assert increment_independence(ens, 1) > 1e-3


def test_thread_count_does_not_change_ensemble():
    a = simulate(P5, 0.5, 3, 20000, 4, threads=1)
    b = simulate(P5, 0.5, 3, 20000, 4, threads=3, chunk=3000)
    assert a.exponents == b.exponents
    assert all(np.array_equal(x, y) for x, y in zip(a.numerators, b.numerators))


def test_simulate_preconditions():
    with pytest.raises(DomainViolation):
        simulate(P3, 1.0, 0, 10, 1)
    with pytest.raises(DomainViolation):
        simulate(P3, 1.0, 1, 0, 1)
    with pytest.raises(DomainViolation):
        build_radial_law(P3, 0.0, 1e-10)
