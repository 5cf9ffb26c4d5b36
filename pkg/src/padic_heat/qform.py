"""The anisotropic quaternary form and its dual.

    f(x)  = x1^2 - a x2^2 - p x3^2 + a p x4^2
    f*(x) = a p x1^2 - p x2^2 - a x3^2 + x4^2

with ``a`` a quadratic non-residue mod p.  Both are elliptic of degree 2:
p^-1 ||x||^2 <= |f(x)| <= ||x||^2.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import CertificationFailed, InsufficientPrecision, PreconditionError
from .padic import PAdicPoint, check_prime


class Side(enum.Enum):
    F = "f"
    FSTAR = "fstar"

    @classmethod
    def parse(cls, value) -> "Side":
        if isinstance(value, Side):
            return value
        key = str(value).strip().lower().replace("°", "star").replace("*", "star")
        for s in cls:
            if key in (s.value, s.name.lower()):
                return s
        raise ValueError(f"unknown side {value!r}")


def is_nonresidue(a: int, p: int) -> bool:
    return a % p != 0 and pow(a, (p - 1) // 2, p) == p - 1


def find_nonresidue(p: int) -> int:
    check_prime(p)
    return next(a for a in range(2, p) if is_nonresidue(a, p))


@dataclass(frozen=True)
class QFormPair:
    prime: int
    nonresidue: int = field(default=0)

    def __post_init__(self):
        check_prime(self.prime)
        a = self.nonresidue or find_nonresidue(self.prime)
        if not is_nonresidue(a, self.prime):
            raise PreconditionError(f"{a} is not a quadratic non-residue mod {self.prime}")
        object.__setattr__(self, "nonresidue", a)

    def coefficients(self, side: Side) -> tuple[int, int, int, int]:
        p, a = self.prime, self.nonresidue
        if Side.parse(side) is Side.F:
            return (1, -a, -p, a * p)
        return (a * p, -p, -a, 1)

    def evaluate(self, side: Side, values):
        """The form on arbitrary ring elements (ints, Fractions, numpy arrays)."""
        c = self.coefficients(side)
        return sum(ci * v * v for ci, v in zip(c, values))


def _valuation_mod(value: int, p: int, width: int) -> int:
    value %= p**width
    v = 0
    while v < width and value % p == 0:
        value //= p
        v += 1
    return v


def abs_exponent(form: QFormPair, x: PAdicPoint, side: Side = Side.F) -> int | None:
    """e with |Q(x)| = p^e (None for x = 0)."""
    p = form.prime
    j = x.norm_exponent()
    if j is None:
        return None
    # x = p^{-j} u with u primitive; |Q(x)| = p^{2j} |Q(u)| and ord Q(u) in {0, 1}
    try:
        u = x.integer_vector(j, 2)
    except InsufficientPrecision as exc:
        raise InsufficientPrecision("need two digits below the leading one to evaluate |f|") from exc
    v = _valuation_mod(form.evaluate(side, u), p, 2)
    if v >= 2:
        raise CertificationFailed("form is isotropic modulo p^2")
    return 2 * j - v


def eval_abs_f(form: QFormPair, x: PAdicPoint, side: Side = Side.F) -> Fraction:
    e = abs_exponent(form, x, side)
    return Fraction(0) if e is None else Fraction(form.prime) ** e


def residue_level_counts(form: QFormPair, side: Side, k: int) -> dict[int, int]:
    """Number of primitive u in (Z/p^k)^4 with ord_p Q(u) = m, m < k.

    Counts vectors by convolving per-coordinate histograms of c u^2 mod p^k;
    primitivity is imposed by subtracting the contribution of p (Z/p^k)^4.
    """
    p = form.prime
    mod = p**k
    r = np.arange(mod, dtype=np.int64)

    def hist(c, residues):
        return np.bincount((c * residues * residues) % mod, minlength=mod).astype(np.float64)

    def total(residues):
        acc = None
        for c in form.coefficients(side):
            h = np.fft.rfft(hist(c, residues))
            acc = h if acc is None else acc * h
        return np.rint(np.fft.irfft(acc, n=mod)).astype(np.int64)

    everything = total(r)
    divisible = total(r[r % p == 0])
    prim = everything - divisible
    out: dict[int, int] = {}
    for value in range(mod):
        n = int(prim[value])
        if n:
            m = _valuation_mod(value, p, k) if value else k
            out[m] = out.get(m, 0) + n
    return out


@dataclass(frozen=True)
class EllipticityBounds:
    lower: Fraction
    upper: Fraction
    level_counts: dict

    @property
    def ratio(self) -> Fraction:
        return self.upper / self.lower


def certify_bounds(form: QFormPair, side: Side = Side.F) -> EllipticityBounds:
    """Exhaustive check over primitive vectors mod p^2 that ord Q(u) in {0, 1}."""
    counts = residue_level_counts(form, side, 2)
    if any(m >= 2 for m in counts):
        raise CertificationFailed(f"primitive vectors with |Q| <= p^-2 exist: {counts}")
    lower = Fraction(1, form.prime) if counts.get(1) else Fraction(1)
    return EllipticityBounds(lower=lower, upper=Fraction(1), level_counts=counts)
