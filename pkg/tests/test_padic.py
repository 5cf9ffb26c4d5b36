import cmath
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from padic_heat.errors import InsufficientPrecision, NonOddPrime, ZeroDenominator
from padic_heat.padic import (
    Ball,
    PAdicPoint,
    PAdicScalar,
    additive_character,
    format_scalar,
    haar_sample,
    padic_from_rational,
    parse_point,
    parse_scalar,
    point_from_integers,
)

PRIMES = st.sampled_from([3, 5, 7, 11, 13])
nonzero = st.integers(-10**6, 10**6).filter(lambda n: n != 0)


def frac_part_oracle(q: Fraction, p: int) -> Fraction:
    """{q}_p from q = n / (p^k d): the residue n d^-1 mod p^k over p^k."""
    k = 0
    den = q.denominator
    while den % p == 0:
        den //= p
        k += 1
    if k == 0:
        return Fraction(0)
    mod = p**k
    return Fraction((q.numerator * pow(den, -1, mod)) % mod, mod)


def test_zero_element():
    z = padic_from_rational(0, 1, 3)
    assert z.valuation is None and z.digits == () and z.norm() == 0


def test_valuation_examples():
    x = padic_from_rational(75, 1, 5)
    assert x.valuation == 2 and x.norm() == Fraction(1, 25)


def test_one_fifth_long_division():
    x = padic_from_rational(1, 5, 5, precision=10)
    assert x.valuation == -1
    # 5 * x = 1 to the available precision
    assert (x.shift(1)).integer_residue(0, 10) == 1
    assert x.digits == (1,) + (0,) * 9


def test_errors():
    with pytest.raises(NonOddPrime):
        padic_from_rational(1, 1, 2)
    with pytest.raises(NonOddPrime):
        padic_from_rational(1, 1, 9)
    with pytest.raises(ZeroDenominator):
        padic_from_rational(1, 0, 3)
    with pytest.raises(ZeroDenominator):
        parse_scalar("1/0", 3)


def test_fractional_part_examples():
    assert padic_from_rational(3, 1, 3).fractional_part() == 0
    assert padic_from_rational(1, 3, 3).fractional_part() == Fraction(1, 3)
    x = padic_from_rational(7, 9, 3)
    assert x.fractional_part() == Fraction(7, 9)
    one = padic_from_rational(1, 1, 3)
    assert abs(additive_character(x + one) - additive_character(x)) < 1e-14


def test_character_examples():
    assert additive_character(padic_from_rational(5, 1, 3)) == 1
    assert abs(additive_character(padic_from_rational(1, 3, 3)) - cmath.exp(2j * math.pi / 3)) < 1e-15


def test_fractional_part_needs_digits():
    x = PAdicScalar.from_unit(3, -20, 1, 16)
    with pytest.raises(InsufficientPrecision):
        x.fractional_part()


def test_total_cancellation_is_inexact_zero():
    one = padic_from_rational(1, 1, 3, precision=8)
    d = one - one
    assert d.is_zero and not d.is_exact_zero
    with pytest.raises(InsufficientPrecision):
        d.norm()
    assert d.norm_bound() == Fraction(1, 3**8)
    # still lies in Z_p, so its fractional part is known
    assert d.fractional_part() == 0


def test_vector_norm_examples():
    p = 3
    assert PAdicPoint.zero(p).norm() == 0
    assert PAdicPoint.from_values([1, p, p**2, p**3], p).norm() == 1
    assert PAdicPoint.from_values([Fraction(1, p**2), p, 0, 1], p).norm() == p**2


@settings(max_examples=200, deadline=None)
@given(PRIMES, nonzero, st.integers(1, 10**6), st.integers(1, 12))
def test_round_trip(p, num, den, prec):
    if den % p == 0 and num % p == 0:
        return
    x = padic_from_rational(num, den, p, prec)
    q = Fraction(num, den)
    scale = -x.valuation
    # p^scale q is a p-adic unit; compare with num den^-1 mod p^k for every k
    unit_q = q * Fraction(p) ** scale
    for k in range(1, prec + 1):
        mod = p**k
        expect = unit_q.numerator * pow(unit_q.denominator, -1, mod) % mod
        assert x.unit % mod == expect
    assert parse_scalar(format_scalar(x), p) == x


@settings(max_examples=200, deadline=None)
@given(PRIMES, nonzero, nonzero, st.integers(0, 4), st.integers(0, 4))
def test_arithmetic_matches_rationals(p, a, b, ka, kb):
    qa, qb = Fraction(a, p**ka), Fraction(b, p**kb)
    xa = padic_from_rational(qa.numerator, qa.denominator, p)
    xb = padic_from_rational(qb.numerator, qb.denominator, p)
    prod = xa * xb
    expect = padic_from_rational((qa * qb).numerator, (qa * qb).denominator, p)
    assert prod == expect
    assert prod.norm() == xa.norm() * xb.norm()
    s = xa + xb
    if qa + qb == 0:
        assert s.is_zero
        return
    if s.is_zero:
        return  # cancelled beyond the available precision
    exact = padic_from_rational((qa + qb).numerator, (qa + qb).denominator, p)
    assert s.valuation == exact.valuation
    assert s.digits == exact.digits[: s.precision]
    assert s.norm() <= max(xa.norm(), xb.norm())
    if xa.norm() != xb.norm():
        assert s.norm() == max(xa.norm(), xb.norm())


@settings(max_examples=200, deadline=None)
@given(PRIMES, st.integers(-10**5, 10**5), st.integers(0, 6), st.integers(1, 50))
def test_fractional_part_oracle(p, num, k, d):
    if d % p == 0:
        d += 1
    q = Fraction(num, p**k * d)
    x = padic_from_rational(q.numerator, q.denominator, p)
    assert x.fractional_part() == frac_part_oracle(q, p)


@settings(max_examples=100, deadline=None)
@given(PRIMES, nonzero, nonzero, st.integers(0, 5), st.integers(0, 5))
def test_character_is_additive(p, a, b, ka, kb):
    xa = padic_from_rational(a, p**ka, p)
    xb = padic_from_rational(b, p**kb, p)
    assert abs(additive_character(xa) * additive_character(xb) - additive_character(xa + xb)) < 1e-12
    assert abs(abs(additive_character(xa)) - 1) < 1e-15


def test_ultrametric_exhaustive_small():
    p = 3
    vals = [Fraction(n, p**k) for n in range(-9, 10) if n for k in range(3)]
    for qa in vals:
        for qb in vals:
            if qa + qb == 0:
                continue
            xa = padic_from_rational(qa.numerator, qa.denominator, p)
            xb = padic_from_rational(qb.numerator, qb.denominator, p)
            s = (xa + xb).norm()
            assert s <= max(xa.norm(), xb.norm())
            if xa.norm() != xb.norm():
                assert s == max(xa.norm(), xb.norm())


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(-500, 500), min_size=12, max_size=12), st.integers(0, 3))
def test_character_bilinear(vals, k):
    p = 3
    xi = point_from_integers(vals[:4], -k, p)
    x = point_from_integers(vals[4:8], -1, p)
    y = point_from_integers(vals[8:], -2, p)
    lhs = additive_character(xi.dot(x + y))
    rhs = additive_character(xi.dot(x)) * additive_character(xi.dot(y))
    assert abs(lhs - rhs) < 1e-12


def test_parse_formats():
    p = 5
    x = parse_scalar("5^-1 * (1,2,3)", p)
    assert x.valuation == -1 and x.digits == (1, 2, 3)
    assert parse_scalar("3/25", p).valuation == -2
    pt = parse_point("(1/5, 5^2 * (1), 0, 7)", p)
    assert pt.norm() == 5
    assert str(parse_point(str(pt), p)) == str(pt)


def test_balls_nested_or_disjoint():
    rng = np.random.default_rng(1)
    p = 3
    balls = [Ball(haar_sample(p, 1, rng, 8), int(rng.integers(-2, 2))) for _ in range(40)]
    for b1 in balls:
        for b2 in balls:
            nested = b1.contains_ball(b2) or b2.contains_ball(b1)
            assert nested != b1.disjoint(b2)


def test_ball_volume_and_membership():
    p = 3
    unit = Ball(PAdicPoint.zero(p), 0)
    assert unit.volume() == 1
    assert Ball(PAdicPoint.zero(p), 2).volume() == 3**8
    assert unit.contains(PAdicPoint.from_values([1, 2, 0, 3], p))
    assert not unit.contains(PAdicPoint.from_values(["1/3", 0, 0, 0], p))
    c = PAdicPoint.from_values(["1/3", 0, 0, 0], p)
    assert Ball(c, -1).contains(c)


def test_haar_sampler_digit_frequencies():
    rng = np.random.default_rng(7)
    p = 3
    first = [haar_sample(p, 0, rng, 4).integer_vector(0, 1)[0] for _ in range(3000)]
    counts = np.bincount(first, minlength=p)
    assert np.all(np.abs(counts / 3000 - 1 / p) < 0.04)
