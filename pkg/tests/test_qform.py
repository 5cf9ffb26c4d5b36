from fractions import Fraction
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from padic_heat.errors import CertificationFailed, NonOddPrime, PreconditionError
from padic_heat.padic import PAdicPoint, point_from_integers
from padic_heat.qform import QFormPair, Side, certify_bounds, eval_abs_f, find_nonresidue, residue_level_counts


def squares_mod(p):
    return {x * x % p for x in range(1, p)}


@pytest.mark.parametrize("p,a", [(3, 2), (5, 2), (7, 3), (11, 2), (13, 2)])
def test_find_nonresidue(p, a):
    assert find_nonresidue(p) == a
    assert a not in squares_mod(p)
    assert all(b in squares_mod(p) for b in range(1, a))


def test_invalid_parameters():
    with pytest.raises(NonOddPrime):
        find_nonresidue(2)
    with pytest.raises(NonOddPrime):
        QFormPair(15)
    with pytest.raises(PreconditionError):
        QFormPair(5, 4)  # 4 = 2^2 is a square


def test_side_is_explicit():
    f = QFormPair(3)
    assert f.coefficients(Side.F) == (1, -2, -3, 6)
    assert f.coefficients(Side.FSTAR) == (6, -3, -2, 1)
    assert Side.parse("f°") is Side.FSTAR and Side.parse("f") is Side.F


def test_eval_examples():
    f = QFormPair(3)
    assert eval_abs_f(f, PAdicPoint.from_values([1, 0, 0, 0], 3), Side.F) == 1
    assert eval_abs_f(f, PAdicPoint.zero(3), Side.F) == 0
    assert eval_abs_f(f, PAdicPoint.from_values([0, 0, 1, 0], 3), Side.F) == Fraction(1, 3)
    assert eval_abs_f(f, PAdicPoint.from_values([0, 0, 1, 0], 3), Side.FSTAR) == 1


def brute_counts(p, a, side, k):
    """Exhaustive scan of primitive vectors mod p^k: ord Q(u) histogram."""
    f = QFormPair(p, a)
    c = np.array(f.coefficients(side), dtype=np.int64)
    mod = p**k
    r = np.arange(mod, dtype=np.int64)
    grid = np.array(np.meshgrid(r, r, r, r, indexing="ij")).reshape(4, -1).T
    grid = grid[(grid % p != 0).any(axis=1)]
    val = (grid * grid * c).sum(axis=1) % mod
    out = {}
    for v in val:
        m = 0
        v = int(v)
        while m < k and v % p == 0:
            v //= p
            m += 1
        out[m] = out.get(m, 0) + 1
    return out


@pytest.mark.parametrize("side", [Side.F, Side.FSTAR])
def test_certificate_p3(side):
    bounds = certify_bounds(QFormPair(3, 2), side)
    assert (bounds.lower, bounds.upper) == (Fraction(1, 3), Fraction(1))
    assert bounds.level_counts == brute_counts(3, 2, side, 2)
    assert bounds.level_counts == {0: 5832, 1: 648}


def test_certificate_p5():
    bounds = certify_bounds(QFormPair(5, 2))
    assert (bounds.lower, bounds.upper) == (Fraction(1, 5), Fraction(1))
    assert bounds.level_counts == brute_counts(5, 2, Side.F, 2)


def test_anisotropic_mod_p3_exhaustive():
    for side in Side:
        counts = brute_counts(3, 2, side, 3)
        assert set(counts) == {0, 1}
        assert counts == residue_level_counts(QFormPair(3, 2), side, 3)


def test_certification_rejects_isotropic_form():
    class Broken(QFormPair):
        def coefficients(self, side):
            return (1, -1, -3, 3)  # x^2 - y^2 represents 0

    with pytest.raises(CertificationFailed):
        certify_bounds(Broken(3))


def test_duality_identity_exact():
    rng = np.random.default_rng(3)
    for p in (3, 5, 7):
        f = QFormPair(p)
        a = f.nonresidue
        for _ in range(200):
            xi = [Fraction(int(n), int(d)) for n, d in zip(rng.integers(-99, 99, 4), rng.integers(1, 50, 4))]
            lhs = f.evaluate(Side.FSTAR, xi)
            rhs = a * p * f.evaluate(Side.F, [xi[0], xi[1] / (-a), xi[2] / (-p), xi[3] / (a * p)])
            assert lhs == rhs


vectors = st.lists(st.integers(-(3**9), 3**9), min_size=4, max_size=4).filter(any)


@settings(max_examples=300, deadline=None)
@given(vectors, st.integers(-3, 3), st.sampled_from([Side.F, Side.FSTAR]))
def test_abs_matches_exact_integer_arithmetic(n, e, side):
    p = 3
    f = QFormPair(p)
    x = point_from_integers(n, e, p)
    value = f.evaluate(side, [Fraction(v) * Fraction(p) ** e for v in n])
    k = 0
    num, den = value.numerator, value.denominator
    while num % p == 0:
        num //= p
        k += 1
    while den % p == 0:
        den //= p
        k -= 1
    assert eval_abs_f(f, x, side) == Fraction(p) ** (-k)
    # ellipticity and homogeneity
    norm2 = x.norm() ** 2
    assert norm2 / p <= eval_abs_f(f, x, side) <= norm2
    assert eval_abs_f(f, x.shift(1), side) == eval_abs_f(f, x, side) / p**2


@settings(max_examples=300, deadline=None)
@given(vectors, st.lists(st.integers(-(3**9), 3**9), min_size=4, max_size=4), st.integers(-2, 2))
def test_closed_ball_constancy(n, d, e):
    """|f(x + delta)| = |f(x)| once ||delta|| <= p^-1 ||x|| (this contains the strict version)."""
    p = 3
    f = QFormPair(p)
    x = point_from_integers(n, e, p)
    j = x.norm_exponent()
    delta = point_from_integers(d, 1 - j, p)
    assert eval_abs_f(f, x + delta, Side.F) == eval_abs_f(f, x, Side.F)


def test_unit_vectors_take_two_values():
    rng = np.random.default_rng(11)
    for p in (3, 5, 7):
        f = QFormPair(p)
        seen = set()
        for _ in range(1000):
            n = rng.integers(0, p**6, 4)
            if not (n % p).any():
                n[0] += 1
            seen.add(eval_abs_f(f, point_from_integers(n, 0, p), Side.F))
        assert seen == {Fraction(1), Fraction(1, p)}
