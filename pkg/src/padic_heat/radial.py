"""Integration of functions of |f| or |f*| over Q_p^4.

The pair (||x||, |Q(x)|) takes values (p^j, p^{2j-m}) with m in {0, 1}; the
level set S(j, m) has Haar volume p^{4j} v_m.  Radial integrals become sums
over (j, m).  Oscillatory integrals are computed by an independent coset
enumeration (:func:`oscillatory_sum_oracle`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np

from . import _accel
from .errors import CosetResolutionTooCoarse, TailNotControlled
from .padic import PAdicPoint
from .qform import QFormPair, Side, residue_level_counts


@dataclass(frozen=True)
class ShellProfile:
    prime: int
    side: Side
    v0: Fraction
    v1: Fraction

    def unit_volume(self, m: int) -> Fraction:
        return (self.v0, self.v1)[m]

    def volume(self, m: int, j: int) -> Fraction:
        return Fraction(self.prime) ** (4 * j) * self.unit_volume(m)

    def volume_float(self, m, j):
        m = np.asarray(m)
        v = np.where(m == 0, float(self.v0), float(self.v1))
        return v * np.power(float(self.prime), 4.0 * np.asarray(j, dtype=float))

    def levels(self, j_lo: int, j_hi: int):
        """Arrays (j, m, level, volume) for j_lo <= j <= j_hi."""
        j = np.repeat(np.arange(j_lo, j_hi + 1), 2)
        m = np.tile(np.array([0, 1]), j_hi - j_lo + 1)
        level = np.power(float(self.prime), 2.0 * j - m)
        return j, m, level, self.volume_float(m, j)


def compute_profile(form: QFormPair, side: Side = Side.F, modulus_exp: int = 2) -> ShellProfile:
    if modulus_exp < 2:
        raise ValueError("need at least two digits to separate m = 0 from m = 1")
    side = Side.parse(side)
    counts = residue_level_counts(form, side, modulus_exp)
    total = Fraction(form.prime) ** (4 * modulus_exp)
    v0 = Fraction(counts.get(0, 0)) / total
    v1 = Fraction(counts.get(1, 0)) / total
    if set(counts) - {0, 1}:
        raise TailNotControlled("form has primitive vectors with |Q| < p^-1")
    return ShellProfile(form.prime, side, v0, v1)


@dataclass(frozen=True)
class RadialResult:
    value: float
    tail_bound: float
    j_min: int
    j_max: int


def _eval(g: Callable, levels: np.ndarray) -> np.ndarray:
    out = g(levels)
    return np.broadcast_to(np.asarray(out, dtype=complex if np.iscomplexobj(out) else float), levels.shape)


def _shell_sum(profile, g, j_lo, j_hi):
    _, _, level, vol = profile.levels(j_lo, j_hi)
    return np.sum(vol * _eval(g, level))


def radial_integral(
    profile: ShellProfile,
    g: Callable,
    j_min: int | None = None,
    j_max: int | None = None,
    majorant: Callable | None = None,
    inner_sup: float | None = None,
    rtol: float = 1e-17,
    max_extent: int | None = None,
) -> RadialResult:
    """Integral of g(|Q(x)|) over {p^j_min <= ||x|| <= p^j_max}.

    ``g`` is called with arrays of levels.  A missing ``j_min`` means the
    integral extends to the origin; the cut is placed where the remaining
    ball's volume times ``inner_sup`` (default: |g| at the innermost level)
    is negligible.  A missing ``j_max`` means the integral extends to
    infinity; the remainder is bounded by ``majorant`` (default |g|), which
    must dominate |g| and decay geometrically along shells.
    """
    p = profile.prime
    if max_extent is None:
        max_extent = int(60 / math.log10(p))
    lo = -8 if j_min is None else j_min
    hi = 8 if j_max is None else j_max
    if hi < lo:
        return RadialResult(0.0, 0.0, lo, hi)
    body = _shell_sum(profile, g, lo, hi)
    tail = 0.0
    scale = lambda: max(abs(body), 1e-300)

    if j_min is None:
        while True:
            sup = inner_sup if inner_sup is not None else float(np.max(np.abs(_eval(g, np.array([p ** (2.0 * lo), p ** (2.0 * lo - 1)])))))
            rest = p ** (4.0 * (lo - 1)) * sup
            if rest <= rtol * scale() or lo < -max_extent or rest == 0.0:
                tail += rest
                break
            lo -= 1
            body += _shell_sum(profile, g, lo, lo)

    if j_max is None:
        h = majorant if majorant is not None else (lambda v: np.abs(_eval(g, v)))
        prev = None
        while True:
            term = float(np.real(_shell_sum(profile, h, hi + 1, hi + 1)))
            nxt = float(np.real(_shell_sum(profile, h, hi + 2, hi + 2)))
            ratio = nxt / term if term > 0 else 0.0
            if term == 0.0 or (ratio < 1.0 and prev is not None and ratio <= prev * (1 + 1e-9)):
                if term == 0.0:
                    break
                rest = term / (1.0 - ratio)
                if rest <= rtol * scale():
                    tail += rest
                    break
            if hi - (j_min if j_min is not None else lo) > max_extent:
                raise TailNotControlled("outer tail does not decay geometrically")
            prev = ratio
            hi += 1
            body += _shell_sum(profile, g, hi, hi)
    return RadialResult(complex(body) if np.iscomplexobj(body) else float(body), float(tail), lo, hi)


def oscillatory_sum_oracle(
    form: QFormPair,
    x: PAdicPoint,
    g: Callable,
    M: int,
    k: int,
    side: Side = Side.FSTAR,
    return_bound: bool = False,
):
    """Integral over ||xi|| <= p^M of chi(xi . x) g(|Q(xi)|) by coset enumeration.

    The ball is cut into cosets of B_{-k}(0).  On every coset except B_{-k}(0)
    itself, |Q| is constant (read off an integer representative) and the
    character is constant when ||x|| <= p^k.  The coset B_{-k}(0) is handled
    radially (the character is 1 there).
    """
    side = Side.parse(side)
    p = form.prime
    jx = x.norm_exponent()
    if jx is not None and jx > k:
        raise CosetResolutionTooCoarse(f"||x|| = p^{jx} exceeds p^k = p^{k}")
    profile = compute_profile(form, side)
    if M <= -k:
        res = radial_integral(profile, g, None, M)
        return (res.value, res.tail_bound) if return_bound else res.value
    L = M + k
    shift = x.integer_vector(k, L)
    sums, counts = _accel.level_character_sums(form.coefficients(side), shift, p, L)
    # coset p^{-M} n has |Q| = p^{2M - ord Q(n)}
    levels = np.array([float(p) ** (2 * M - v) for v in range(len(sums))])
    weights = _eval(g, levels)
    body = np.sum(weights * sums) * float(p) ** (-4 * k)
    core = radial_integral(profile, g, None, -k)
    value = complex(body + core.value)
    return (value, core.tail_bound) if return_bound else value
