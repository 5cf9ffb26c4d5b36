"""Finite-precision p-adic numbers, points of Q_p^4 and balls.

A nonzero scalar is ``p**valuation * unit`` with the unit known modulo
``p**precision`` (its base-p digits, least significant first).  The exact
zero has no digits.  An *inexact* zero ``O(p**k)`` is what remains when a
subtraction cancels every known digit: all we know is that the value lies in
``p**k Z_p``.  Operations never invent digits; anything that would need them
raises :class:`InsufficientPrecision`.
"""

from __future__ import annotations

import cmath
import math
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .errors import InsufficientPrecision, NonOddPrime, ZeroDenominator

DEFAULT_PRECISION = 16


def is_odd_prime(p) -> bool:
    if not isinstance(p, (int, np.integer)) or isinstance(p, bool) or p < 3 or p % 2 == 0:
        return False
    return all(p % d for d in range(3, math.isqrt(int(p)) + 1, 2))


def check_prime(p) -> int:
    if not is_odd_prime(p):
        raise NonOddPrime(f"{p!r} is not an odd prime")
    return int(p)


def int_valuation(n: int, p: int) -> int | None:
    """ord_p of a Python integer (None for 0)."""
    if n == 0:
        return None
    v = 0
    while n % p == 0:
        n //= p
        v += 1
    return v


def _digits_of(unit: int, p: int, precision: int) -> tuple[int, ...]:
    out = []
    for _ in range(precision):
        unit, d = divmod(unit, p)
        out.append(d)
    return tuple(out)


@dataclass(frozen=True)
class PAdicScalar:
    prime: int
    valuation: int | None
    digits: tuple[int, ...] = ()
    zero_bound: int | None = None  # set only for an inexact zero O(p^zero_bound)

    def __post_init__(self):
        check_prime(self.prime)
        if self.valuation is None:
            if self.digits:
                raise ValueError("zero element carries no digits")
            return
        if not self.digits:
            raise ValueError("nonzero element needs precision >= 1")
        if self.digits[0] == 0:
            raise ValueError("leading digit must be a unit")
        if any(not 0 <= d < self.prime for d in self.digits):
            raise ValueError("digits must lie in [0, p)")

    # -- constructors -------------------------------------------------------
    @classmethod
    def zero(cls, prime: int) -> "PAdicScalar":
        return cls(prime, None)

    @classmethod
    def from_unit(cls, prime: int, valuation: int, unit: int, precision: int) -> "PAdicScalar":
        unit %= prime**precision
        if unit % prime == 0:
            raise ValueError("not a unit")
        return cls(prime, valuation, _digits_of(unit, prime, precision))

    @classmethod
    def from_int(cls, n: int, prime: int, precision: int = DEFAULT_PRECISION) -> "PAdicScalar":
        return padic_from_rational(n, 1, prime, precision)

    # -- basic properties ---------------------------------------------------
    @property
    def precision(self) -> int:
        return len(self.digits)

    @property
    def unit(self) -> int:
        return sum(d * self.prime**i for i, d in enumerate(self.digits))

    @property
    def is_exact_zero(self) -> bool:
        return self.valuation is None and self.zero_bound is None

    @property
    def is_zero(self) -> bool:
        return self.valuation is None

    @property
    def absolute_precision(self) -> float:
        """Exponent k such that the value is known modulo p^k."""
        if self.valuation is None:
            return math.inf if self.zero_bound is None else self.zero_bound
        return self.valuation + self.precision

    def norm(self) -> Fraction:
        if self.valuation is None:
            if self.zero_bound is not None:
                raise InsufficientPrecision("norm of an inexact zero is unknown")
            return Fraction(0)
        return Fraction(self.prime) ** (-self.valuation)

    def norm_bound(self) -> Fraction:
        """An upper bound for the norm that is always available."""
        if self.valuation is None and self.zero_bound is not None:
            return Fraction(self.prime) ** (-self.zero_bound)
        return self.norm()

    # -- arithmetic ---------------------------------------------------------
    def _check(self, other: "PAdicScalar"):
        if not isinstance(other, PAdicScalar):
            return NotImplemented
        if other.prime != self.prime:
            raise ValueError("mixed primes")
        return None

    def __neg__(self) -> "PAdicScalar":
        if self.valuation is None:
            return self
        return PAdicScalar.from_unit(self.prime, self.valuation, -self.unit, self.precision)

    def __add__(self, other: "PAdicScalar") -> "PAdicScalar":
        if isinstance(other, int):
            other = PAdicScalar.from_int(other, self.prime, max(self.precision, 1))
        bad = self._check(other)
        if bad is not None:
            return bad
        p = self.prime
        if self.is_exact_zero:
            return other
        if other.is_exact_zero:
            return self
        cap = min(self.absolute_precision, other.absolute_precision)
        if self.valuation is None or other.valuation is None:
            live = other if self.valuation is None else self
            if live.valuation is None or live.valuation >= cap:
                return PAdicScalar(p, None, zero_bound=int(cap))
            keep = int(cap) - live.valuation
            return PAdicScalar.from_unit(p, live.valuation, live.unit, keep)
        vmin = min(self.valuation, other.valuation)
        total = self.unit * p ** (self.valuation - vmin) + other.unit * p ** (other.valuation - vmin)
        width = int(cap) - vmin
        total %= p**width
        if total == 0:
            return PAdicScalar(p, None, zero_bound=int(cap))
        shift = int_valuation(total, p)
        return PAdicScalar.from_unit(p, vmin + shift, total // p**shift, width - shift)

    __radd__ = __add__

    def __sub__(self, other: "PAdicScalar") -> "PAdicScalar":
        if isinstance(other, int):
            other = PAdicScalar.from_int(other, self.prime, max(self.precision, 1))
        return self + (-other)

    def __mul__(self, other) -> "PAdicScalar":
        if isinstance(other, int):
            other = PAdicScalar.from_int(other, self.prime, max(self.precision, 1))
        bad = self._check(other)
        if bad is not None:
            return bad
        p = self.prime
        if self.is_exact_zero or other.is_exact_zero:
            return PAdicScalar.zero(p)
        if self.valuation is None or other.valuation is None:
            z, live = (self, other) if self.valuation is None else (other, self)
            shift = 0 if live.valuation is None else live.valuation
            if live.valuation is None:
                return PAdicScalar(p, None, zero_bound=z.zero_bound + live.zero_bound)
            return PAdicScalar(p, None, zero_bound=z.zero_bound + shift)
        prec = min(self.precision, other.precision)
        return PAdicScalar.from_unit(p, self.valuation + other.valuation, self.unit * other.unit, prec)

    __rmul__ = __mul__

    def inverse(self) -> "PAdicScalar":
        if self.valuation is None:
            raise ZeroDenominator("inverse of zero")
        mod = self.prime**self.precision
        return PAdicScalar.from_unit(self.prime, -self.valuation, pow(self.unit, -1, mod), self.precision)

    def __truediv__(self, other: "PAdicScalar") -> "PAdicScalar":
        return self * other.inverse()

    def shift(self, k: int) -> "PAdicScalar":
        """Multiply by p**k (exact)."""
        if self.valuation is None:
            return self if self.zero_bound is None else PAdicScalar(self.prime, None, zero_bound=self.zero_bound + k)
        return PAdicScalar(self.prime, self.valuation + k, self.digits)

    # -- conversions --------------------------------------------------------
    def fractional_part(self) -> Fraction:
        """{x}_p as an exact rational in [0, 1)."""
        p = self.prime
        if self.valuation is None:
            if self.zero_bound is not None and self.zero_bound < 0:
                raise InsufficientPrecision("fractional part of O(p^%d)" % self.zero_bound)
            return Fraction(0)
        if self.valuation >= 0:
            return Fraction(0)
        need = -self.valuation
        if need > self.precision:
            raise InsufficientPrecision("fractional part needs %d digits, have %d" % (need, self.precision))
        low = sum(d * p**i for i, d in enumerate(self.digits[:need]))
        return Fraction(low, p**need)

    def integer_residue(self, scale: int, width: int) -> int:
        """(p**scale * x) mod p**width, requiring p**scale * x in Z_p."""
        p = self.prime
        if width <= 0:
            return 0
        if self.valuation is None:
            if self.zero_bound is None or self.zero_bound + scale >= width:
                return 0
            raise InsufficientPrecision("value not known to p^%d" % (width - scale))
        v = self.valuation + scale
        if v < 0:
            raise ValueError("p^%d x is not integral" % scale)
        if v >= width:
            return 0
        if v + self.precision < width:
            raise InsufficientPrecision("need %d digits, have %d" % (width - v, self.precision))
        return (self.unit * p**v) % p**width

    def to_fraction(self) -> Fraction:
        """Rational value of the stored digits (a representative, not exact)."""
        if self.valuation is None:
            return Fraction(0)
        return Fraction(self.unit) * Fraction(self.prime) ** self.valuation

    def __float__(self) -> float:
        return float(self.to_fraction())

    def __str__(self) -> str:
        return format_scalar(self)

    def __repr__(self) -> str:
        return f"PAdicScalar({format_scalar(self)!r}, p={self.prime})"


def padic_from_rational(num: int, den: int, prime: int, precision: int = DEFAULT_PRECISION) -> PAdicScalar:
    check_prime(prime)
    if den == 0:
        raise ZeroDenominator("denominator is zero")
    if precision < 1:
        raise ValueError("precision must be >= 1")
    if num == 0:
        return PAdicScalar.zero(prime)
    q = Fraction(num, den)
    vn = int_valuation(q.numerator, prime)
    vd = int_valuation(q.denominator, prime)
    a = q.numerator // prime**vn
    b = q.denominator // prime**vd
    mod = prime**precision
    return PAdicScalar.from_unit(prime, vn - vd, a * pow(b, -1, mod), precision)


def additive_character(x: PAdicScalar) -> complex:
    """chi_p(x) = exp(2 pi i {x}_p)."""
    frac = x.fractional_part()
    if frac == 0:
        return 1.0 + 0.0j
    return cmath.exp(2j * math.pi * float(frac))


# ---------------------------------------------------------------------------
# text formats:  "p^k * (d0,d1,...)"  and  "num/den"

_DIGITS_RE = re.compile(r"^\s*(\d+)\^(-?\d+)\s*\*\s*\(([\d,\s]*)\)\s*$")
_ZERO_RE = re.compile(r"^\s*O\(\s*(\d+)\^(-?\d+)\s*\)\s*$")


def format_scalar(x: PAdicScalar) -> str:
    if x.valuation is None:
        return "0" if x.zero_bound is None else f"O({x.prime}^{x.zero_bound})"
    return f"{x.prime}^{x.valuation} * ({','.join(map(str, x.digits))})"


def parse_scalar(text, prime: int, precision: int = DEFAULT_PRECISION) -> PAdicScalar:
    """Accepts the digit format, ``O(p^k)``, integers, ``num/den`` and decimals."""
    if isinstance(text, PAdicScalar):
        return text
    if isinstance(text, (int, np.integer)):
        return padic_from_rational(int(text), 1, prime, precision)
    if isinstance(text, Fraction):
        return padic_from_rational(text.numerator, text.denominator, prime, precision)
    s = str(text).strip()
    m = _DIGITS_RE.match(s)
    if m:
        base, k, body = int(m.group(1)), int(m.group(2)), m.group(3)
        if base != prime:
            raise ValueError(f"digit string for p={base}, expected p={prime}")
        digits = tuple(int(d) for d in body.split(",") if d.strip())
        if not digits:
            raise ValueError("empty digit list")
        if digits[0] == 0:
            raise ValueError("leading digit must be nonzero")
        return PAdicScalar(prime, k, digits)
    m = _ZERO_RE.match(s)
    if m:
        return PAdicScalar(prime, None, zero_bound=int(m.group(2)))
    try:
        q = Fraction(s)
    except (ValueError, ZeroDivisionError) as exc:
        if isinstance(exc, ZeroDivisionError) or "/0" in s.replace(" ", ""):
            raise ZeroDenominator(f"zero denominator in {s!r}") from exc
        raise ValueError(f"cannot parse p-adic scalar {s!r}") from exc
    return padic_from_rational(q.numerator, q.denominator, prime, precision)


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PAdicPoint:
    coords: tuple[PAdicScalar, PAdicScalar, PAdicScalar, PAdicScalar]

    def __post_init__(self):
        if len(self.coords) != 4:
            raise ValueError("a point of Q_p^4 has four coordinates")
        if len({c.prime for c in self.coords}) != 1:
            raise ValueError("mixed primes")

    @classmethod
    def from_values(cls, values: Iterable, prime: int, precision: int = DEFAULT_PRECISION) -> "PAdicPoint":
        return cls(tuple(parse_scalar(v, prime, precision) for v in values))

    @classmethod
    def zero(cls, prime: int) -> "PAdicPoint":
        z = PAdicScalar.zero(prime)
        return cls((z, z, z, z))

    @property
    def prime(self) -> int:
        return self.coords[0].prime

    def __add__(self, other: "PAdicPoint") -> "PAdicPoint":
        return PAdicPoint(tuple(a + b for a, b in zip(self.coords, other.coords)))

    def __sub__(self, other: "PAdicPoint") -> "PAdicPoint":
        return PAdicPoint(tuple(a - b for a, b in zip(self.coords, other.coords)))

    def __neg__(self) -> "PAdicPoint":
        return PAdicPoint(tuple(-a for a in self.coords))

    def shift(self, k: int) -> "PAdicPoint":
        return PAdicPoint(tuple(c.shift(k) for c in self.coords))

    def dot(self, other: "PAdicPoint") -> PAdicScalar:
        total = PAdicScalar.zero(self.prime)
        for a, b in zip(self.coords, other.coords):
            total = total + a * b
        return total

    @property
    def is_zero(self) -> bool:
        return all(c.is_exact_zero for c in self.coords)

    def ord(self) -> int | None:
        """min_i ord(x_i); None for the zero vector.  Inexact zeros must not decide it."""
        vals = [c.valuation for c in self.coords if c.valuation is not None]
        bounds = [c.zero_bound for c in self.coords if c.valuation is None and c.zero_bound is not None]
        if not vals:
            if bounds:
                raise InsufficientPrecision("order of a vector of inexact zeros")
            return None
        v = min(vals)
        if bounds and min(bounds) <= v:
            raise InsufficientPrecision("order not determined at this precision")
        return v

    def norm(self) -> Fraction:
        v = self.ord()
        return Fraction(0) if v is None else Fraction(self.prime) ** (-v)

    def norm_exponent(self) -> int | None:
        """j with ||x|| = p^j (None for 0)."""
        v = self.ord()
        return None if v is None else -v

    def norm_bound_exponent(self) -> float:
        """Smallest j known to satisfy ||x|| <= p^j."""
        js = []
        for c in self.coords:
            if c.valuation is not None:
                js.append(-c.valuation)
            elif c.zero_bound is not None:
                js.append(-c.zero_bound)
        return max(js) if js else -math.inf

    def integer_vector(self, scale: int, width: int) -> tuple[int, int, int, int]:
        """(p**scale x) mod p**width coordinatewise."""
        return tuple(c.integer_residue(scale, width) for c in self.coords)

    def to_fractions(self) -> tuple[Fraction, ...]:
        return tuple(c.to_fraction() for c in self.coords)

    def __str__(self) -> str:
        return "(" + ", ".join(format_scalar(c) for c in self.coords) + ")"


def parse_point(text, prime: int, precision: int = DEFAULT_PRECISION) -> PAdicPoint:
    """Parse ``"(a, b, c, d)"``, a list, or a ``PAdicPoint``."""
    if isinstance(text, PAdicPoint):
        return text
    if isinstance(text, str):
        body = text.strip()
        if body.startswith("(") and body.endswith(")") and not _DIGITS_RE.match(body):
            body = body[1:-1]
        parts = _split_top_level(body)
    else:
        parts = list(text)
    if len(parts) != 4:
        raise ValueError(f"expected 4 coordinates, got {len(parts)}")
    return PAdicPoint.from_values(parts, prime, precision)


def _split_top_level(s: str) -> list[str]:
    out, depth, cur = [], 0, []
    for ch in s:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch in ",;" and depth == 0:
            out.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    if cur or out:
        out.append("".join(cur).strip())
    return [c for c in out if c]


def point_from_integers(ints: Sequence[int], exponent: int, prime: int, precision: int = DEFAULT_PRECISION) -> PAdicPoint:
    """The point p**exponent * (n_1, ..., n_4)."""
    coords = []
    for n in ints:
        n = int(n)
        if n == 0:
            coords.append(PAdicScalar.zero(prime))
        else:
            v = int_valuation(n, prime)
            coords.append(PAdicScalar.from_unit(prime, v + exponent, n // prime**v, precision))
    return PAdicPoint(tuple(coords))


@dataclass(frozen=True)
class Ball:
    """Closed ball {x : ||x - center|| <= p**radius_exp}."""

    center: PAdicPoint
    radius_exp: int

    @property
    def prime(self) -> int:
        return self.center.prime

    def volume(self) -> Fraction:
        return Fraction(self.prime) ** (4 * self.radius_exp)

    def contains(self, x: PAdicPoint) -> bool:
        d = x - self.center
        if d.norm_bound_exponent() <= self.radius_exp:
            return True
        j = d.norm_exponent()
        return j is not None and j <= self.radius_exp

    def contains_ball(self, other: "Ball") -> bool:
        return other.radius_exp <= self.radius_exp and self.contains(other.center)

    def disjoint(self, other: "Ball") -> bool:
        """Two p-adic balls are either nested or disjoint."""
        big, small = (self, other) if self.radius_exp >= other.radius_exp else (other, self)
        return not big.contains(small.center)

    def contains_origin(self) -> bool:
        return self.center.norm_bound_exponent() <= self.radius_exp or self.contains(PAdicPoint.zero(self.prime))


def haar_sample(prime: int, radius_exp: int, rng: np.random.Generator, precision: int = DEFAULT_PRECISION) -> PAdicPoint:
    """Haar-uniform point of B_{radius_exp}(0): i.i.d. uniform digits."""
    ints = [int(sum(int(d) * prime**i for i, d in enumerate(rng.integers(0, prime, precision)))) for _ in range(4)]
    return point_from_integers(ints, -radius_exp, prime, precision)
