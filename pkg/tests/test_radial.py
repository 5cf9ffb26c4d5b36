from fractions import Fraction

import numpy as np
import pytest

from padic_heat import _accel
from padic_heat.errors import CosetResolutionTooCoarse, TailNotControlled
from padic_heat.padic import PAdicPoint, point_from_integers
from padic_heat.qform import QFormPair, Side
from padic_heat.radial import compute_profile, oscillatory_sum_oracle, radial_integral


@pytest.mark.parametrize("p", [3, 5, 7, 11, 13])
@pytest.mark.parametrize("side", [Side.F, Side.FSTAR])
def test_profile_partition(p, side):
    prof = compute_profile(QFormPair(p), side)
    assert prof.v0 + prof.v1 == 1 - Fraction(1, p**4)
    assert prof.volume(1, 3) == p**12 * prof.v1
    for v in (prof.v0, prof.v1):
        den = v.denominator
        while den % p == 0:
            den //= p
        assert den == 1


def test_profile_p3_values_from_exhaustive_scan():
    p = 3
    f = QFormPair(p)
    c = np.array(f.coefficients(Side.FSTAR))
    r = np.arange(9)
    g = np.array(np.meshgrid(r, r, r, r, indexing="ij")).reshape(4, -1).T
    g = g[(g % 3 != 0).any(axis=1)]
    val = (g * g * c).sum(axis=1) % 9
    v0 = Fraction(int((val % 3 != 0).sum()), 6561)
    v1 = Fraction(int(((val % 3 == 0) & (val != 0)).sum()), 6561)
    prof = compute_profile(f, Side.FSTAR)
    assert (prof.v0, prof.v1) == (v0, v1) == (Fraction(8, 9), Fraction(8, 81))


@pytest.mark.parametrize("p", [3, 5])
def test_profile_hensel_stable(p):
    f = QFormPair(p)
    assert compute_profile(f, Side.F, 3) == compute_profile(f, Side.F, 2)


def test_unit_ball_volume():
    prof = compute_profile(QFormPair(3), Side.F)
    res = radial_integral(prof, lambda v: np.ones_like(v), None, 0, inner_sup=1.0)
    assert abs(res.value - 1) <= 1e-15 + res.tail_bound


def test_local_zeta_against_counting():
    """Integral of |f|^s over Z_p^4 minus p^L Z_p^4 from a full residue count."""
    p, L, s = 3, 4, 0.7
    f = QFormPair(p)
    _, counts = _accel.level_character_sums(f.coefficients(Side.F), (0, 0, 0, 0), p, L)
    counted = sum(int(c) * p ** (-4 * L) * p ** (-v * s) for v, c in enumerate(counts))
    prof = compute_profile(f, Side.F)
    res = radial_integral(prof, lambda v: v**s, 1 - L, 0)
    assert abs(res.value - counted) < 1e-13


def test_heat_integrand_monte_carlo():
    p, t = 3, 0.4
    f = QFormPair(p)
    prof = compute_profile(f, Side.FSTAR)
    res = radial_integral(prof, lambda v: np.exp(-t * v), None, 0, inner_sup=1.0)
    rng = np.random.default_rng(5)
    n, D = 10**6, 12
    u = rng.integers(0, p**D, size=(n, 4), dtype=np.int64)
    ordx = np.zeros(n, dtype=np.int64)
    for i in range(1, D):
        ordx = np.where((u % p**i == 0).all(axis=1), i, ordx)
    # |f*(u)| = p^{-2 ord - m}, m from the primitive part mod p^2
    prim = u // (p ** ordx)[:, None]
    c = np.array(f.coefficients(Side.FSTAR))
    val = ((prim % 9) ** 2 * c).sum(axis=1) % 9
    m = (val % 3 == 0).astype(int)
    level = p ** (-2.0 * ordx - m)
    samples = np.exp(-t * level)
    mean, se = samples.mean(), samples.std() / np.sqrt(n)
    assert abs(mean - res.value) < 3 * se + res.tail_bound


def test_scaling_of_radial_integral():
    prof = compute_profile(QFormPair(5), Side.F)
    g = lambda v: np.exp(-0.3 * v)
    lhs = radial_integral(prof, lambda v: g(25 * v))
    rhs = radial_integral(prof, g)
    assert abs(lhs.value - rhs.value / 5**4) < 1e-14 * rhs.value


def test_tail_not_controlled():
    prof = compute_profile(QFormPair(3), Side.F)
    with pytest.raises(TailNotControlled):
        radial_integral(prof, lambda v: v**-1.0, 0, None)


def test_oracle_trivial_cases():
    f = QFormPair(3)
    one = lambda v: np.ones_like(v)
    assert abs(oscillatory_sum_oracle(f, PAdicPoint.zero(3), one, 0, 1) - 1) < 1e-15
    x = PAdicPoint.from_values(["1/9", 0, 0, 0], 3)
    assert abs(oscillatory_sum_oracle(f, x, one, 0, 2)) < 1e-14
    with pytest.raises(CosetResolutionTooCoarse):
        oscillatory_sum_oracle(f, x, one, 0, 1)


@pytest.mark.parametrize("coords", [[1, 0, 0, 0], ["1/3", 1, 0, 0], [0, "2/9", 1, 5], [3, 0, 9, 1]])
def test_oracle_stable_under_refinement(coords):
    p, t = 3, 0.6
    f = QFormPair(p)
    x = PAdicPoint.from_values(coords, p)
    J = x.norm_exponent()
    g = lambda v: np.exp(-t * v)
    k = max(J, 0) + 1
    base = oscillatory_sum_oracle(f, x, g, 1 - J, k)
    assert abs(oscillatory_sum_oracle(f, x, g, 1 - J, 2 * k) - base) < 1e-12
    # shells beyond p^{1-J} integrate to zero against the character
    assert abs(oscillatory_sum_oracle(f, x, g, 2 - J, k) - base) < 1e-12
    assert abs(base.imag) < 1e-13


def test_oracle_radial_in_level():
    """Two points with the same |f| give the same value."""
    f = QFormPair(3)
    g = lambda v: np.exp(-0.5 * v)
    a = PAdicPoint.from_values([1, 0, 0, 0], 3)
    b = PAdicPoint.from_values([2, 1, 0, 1], 3)
    assert abs(oscillatory_sum_oracle(f, a, g, 1, 1) - oscillatory_sum_oracle(f, b, g, 1, 1)) < 1e-13


def test_numba_and_numpy_sums_agree():
    coefs = (6, -3, -2, 1)
    for shift in [(0, 0, 0, 0), (1, 2, 0, 5), (7, 13, 22, 4)]:
        a, ca = _accel.level_character_sums_numpy(coefs, shift, 3, 3)
        b, cb = _accel.level_character_sums_numba(coefs, shift, 3, 3)
        assert np.array_equal(ca, cb)
        assert np.allclose(a, b, atol=1e-10)
