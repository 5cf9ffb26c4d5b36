"""The heat kernel Z(x, t) attached to f* and the operators f(d, gamma).

Everything here is radial: Z(x, t) depends on x only through |f(x)|.  Write
u = kappa t |f(x)|^-alpha.  Two evaluation routes are implemented.

* ``taylor``:   the power series in u, used while u p^alpha <= 1.
* ``geometric``: the same series with 1/(1 - p^{-alpha m - gamma - 2})
  expanded geometrically and re-summed over m,

      F_gamma = |f|^{-gamma-2} sum_{r>=0} p^{-r(gamma+2)}
                [exp(-u p^{-r alpha}) - p^gamma exp(-u p^{(1-r) alpha})],

  which converges for every u and has a closed-form remainder.  Z = F_0 and
  dZ/dt = -kappa F_alpha.

An exact coset-sum oracle lives in :mod:`padic_heat.radial`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import DomainViolation, GammaOutOfRange, SeriesNotConverged
from .padic import PAdicPoint
from .qform import QFormPair, Side, abs_exponent
from .radial import ShellProfile, compute_profile, radial_integral

EPS = np.finfo(float).eps
SERIES_RTOL = 1e-14
SERIES_FLOOR = 1e-300


@dataclass(frozen=True)
class KernelParams:
    form: QFormPair
    alpha: float
    kappa: float = 1.0

    def __post_init__(self):
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise DomainViolation(f"alpha must be positive, got {self.alpha}")
        if not (self.kappa > 0 and math.isfinite(self.kappa)):
            raise DomainViolation(f"kappa must be positive, got {self.kappa}")

    @property
    def prime(self) -> int:
        return self.form.prime

    def with_kappa(self, kappa: float) -> "KernelParams":
        return KernelParams(self.form, self.alpha, kappa)


@dataclass(frozen=True)
class KernelValue:
    value: float
    truncation_error: float
    terms_used: int
    method: str = "taylor"


def operator_constant(p: int, gamma: float) -> float:
    """(1 - p^gamma) / (1 - p^{-gamma-2}); negative for gamma > 0."""
    return (1.0 - p**gamma) / (1.0 - p ** (-gamma - 2.0))


def _as_level(params: KernelParams, x) -> float:
    """|f(x)| as a float; accepts a point, a rational or a float."""
    if isinstance(x, PAdicPoint):
        e = abs_exponent(params.form, x, Side.F)
        return 0.0 if e is None else float(params.prime) ** e
    return float(x)


def _check_t(t):
    if not np.all(np.asarray(t) > 0) or not np.all(np.isfinite(t)):
        raise DomainViolation("t must be positive and finite")


# ---------------------------------------------------------------------------
# vectorized geometric route


def family_values(p: int, alpha: float, kappa: float, gamma: float, level, t):
    """F_gamma(level, t) and an error bound, broadcasting over level and t.

    ``level`` = |f(x)| must be positive; t >= 0 is allowed (t = 0 gives the
    Riesz kernel C_gamma |f|^{-gamma-2}, and 0 for gamma = 0).
    """
    level = np.asarray(level, dtype=float)
    t = np.asarray(t, dtype=float)
    level, t = np.broadcast_arrays(level, t)
    u = kappa * t * level ** (-alpha)
    s = gamma + 2.0
    pg = p**gamma
    umax = float(np.max(u)) if u.size else 0.0
    # remainder after r = 0..R is <= u (1 + p^{gamma+alpha}) p^{-(R+1)(s+alpha)} / (1 - p^{-(s+alpha)})
    rel = 1e-18 * min(1.0, max(umax, 1e-300) ** (-s / alpha)) if umax > 1 else 1e-18
    need = math.log(max(umax, 1e-300) * (1 + p ** (gamma + alpha)) / rel) / ((s + alpha) * math.log(p))
    R = int(min(max(math.ceil(need), 2), 4000))
    acc = np.zeros(level.shape)
    mag = np.zeros(level.shape)
    const = 1.0 - pg
    for r in range(R + 1):
        a = u * p ** (-r * alpha)
        b = u * p ** ((1 - r) * alpha)
        ea, eb = np.exp(-a), np.exp(-b)
        small = a < 0.5
        if gamma == 0.0:
            direct = np.where(small, np.expm1(-a) - np.expm1(-b), ea - eb)
            size = np.where(small, np.abs(np.expm1(-a)) + np.abs(np.expm1(-b)), ea + eb)
        else:
            direct = np.where(small, const + np.expm1(-a) - pg * np.expm1(-b), ea - pg * eb)
            size = np.where(small, abs(const) + np.abs(np.expm1(-a)) + pg * np.abs(np.expm1(-b)), ea + pg * eb)
        w = p ** (-r * s)
        acc += w * direct
        mag += w * size
    q = p ** (-(s + alpha))
    tail_const = const * p ** (-(R + 1) * s) / (1.0 - p ** (-s))
    rem = u * (1.0 + p ** (gamma + alpha)) * p ** (-(R + 1) * (s + alpha)) / (1.0 - q)
    scale = level ** (-s)
    value = scale * (acc + tail_const)
    err = scale * (rem + 8 * EPS * (mag + abs(tail_const)) * (R + 2))
    return value, err


# ---------------------------------------------------------------------------
# Taylor route


def _taylor(p, alpha, kappa, gamma, level, t, derivative=False, max_terms=400):
    """Sum_{m>=m0} (-u)^m / m! c_gamma(m) |f|^{-gamma-2} with certified tail.

    ``derivative`` differentiates termwise in t (gamma must be 0).
    """
    u = kappa * t * level ** (-alpha)
    w = u * p**alpha
    s = gamma + 2.0
    if w > 1.0:
        raise SeriesNotConverged(f"u p^alpha = {w:.3g} > 1: outside the decay regime")
    coeff = lambda m: (1.0 - p ** (alpha * m + gamma)) / (1.0 - p ** (-alpha * m - s))
    lead = kappa * level ** (-alpha - 2.0) if derivative else level ** (-s)
    total = 0.0
    absum = 0.0
    m0 = 1 if (derivative or gamma == 0.0) else 0
    term_fact = 1.0
    for m in range(m0, max_terms):
        n = m - 1 if derivative else m
        # u^n / n!
        term_fact = u**n / math.factorial(n) if m == m0 else term_fact * u / n
        term = (-1) ** m * term_fact * coeff(m)
        total += term
        absum += abs(term)
        # majorant of the remaining terms: |c(m)| <= p^{alpha m + gamma} / (1 - p^{-s})
        nxt = n + 1
        tail = p**gamma / (1.0 - p ** (-s)) * (p**alpha) ** (m + 1) * u**nxt / math.factorial(nxt)
        tail /= max(1e-300, 1.0 - w / (nxt + 1))
        if abs(tail) <= SERIES_RTOL * max(abs(total), SERIES_FLOOR) or tail * lead < SERIES_FLOOR:
            err = (tail + 4 * EPS * absum * (m + 1)) * lead
            return total * lead, err, m - m0 + 1
    raise SeriesNotConverged("term budget exhausted")


# ---------------------------------------------------------------------------
# x = 0


def _fstar_profile(params: KernelParams) -> ShellProfile:
    return compute_profile(params.form, Side.FSTAR)


def family_at_zero(params: KernelParams, gamma: float, t: float) -> KernelValue:
    """Integral of |f*(xi)|^gamma exp(-kappa t |f*(xi)|^alpha)."""
    _check_t(t)
    a, k = params.alpha, params.kappa
    g = lambda v: v**gamma * np.exp(-k * t * v**a)
    inner = None if gamma > 0 else 1.0
    res = radial_integral(_fstar_profile(params), g, inner_sup=inner)
    n = res.j_max - res.j_min + 1
    return KernelValue(res.value, res.tail_bound + 8 * EPS * abs(res.value) * n, 2 * n, "radial")


def heat_kernel_at_zero(params: KernelParams, t: float) -> KernelValue:
    return family_at_zero(params, 0.0, t)


# ---------------------------------------------------------------------------
# public pointwise API


def _pointwise(params: KernelParams, gamma: float, x, t: float, method: str | None) -> KernelValue:
    _check_t(t)
    level = _as_level(params, x)
    if level == 0.0:
        return family_at_zero(params, gamma, t)
    p, a, k = params.prime, params.alpha, params.kappa
    w = k * t * level ** (-a) * p**a
    if method == "taylor" or (method is None and w <= 1.0):
        v, e, n = _taylor(p, a, k, gamma, level, t)
        return KernelValue(v, e, n, "taylor")
    v, e = family_values(p, a, k, gamma, level, t)
    return KernelValue(float(v), float(e), -1, "geometric")


def heat_kernel_series(params: KernelParams, abs_fx, t: float, method: str | None = None) -> KernelValue:
    """Z(x, t) for x != 0 (also accepts x = 0 via the radial route)."""
    return _pointwise(params, 0.0, abs_fx, t, method)


def apply_f_to_kernel(params: KernelParams, gamma: float, abs_fx, t: float, method: str | None = None) -> KernelValue:
    """(f(d, gamma) Z_t)(x) for 0 < gamma <= alpha."""
    if not 0.0 < gamma <= params.alpha + 1e-15:
        raise GammaOutOfRange(f"gamma must lie in (0, alpha], got {gamma}")
    if _as_level(params, abs_fx) == 0.0:
        _check_t(t)
        kv = family_at_zero(params, gamma, t)
        return KernelValue(kv.value, kv.truncation_error, kv.terms_used, kv.method)
    return _pointwise(params, gamma, abs_fx, t, method)


def kernel_time_derivative(params: KernelParams, abs_fx, t: float, method: str | None = None) -> KernelValue:
    """dZ/dt: the termwise differentiated series, or -kappa F_alpha."""
    _check_t(t)
    level = _as_level(params, abs_fx)
    p, a, k = params.prime, params.alpha, params.kappa
    if level == 0.0:
        kv = family_at_zero(params, a, t)
        return KernelValue(-k * kv.value, k * kv.truncation_error, kv.terms_used, kv.method)
    w = k * t * level ** (-a) * p**a
    if method == "taylor" or (method is None and w <= 1.0):
        v, e, n = _taylor(p, a, k, 0.0, level, t, derivative=True)
        return KernelValue(v, e, n, "taylor")
    v, e = family_values(p, a, k, a, level, t)
    return KernelValue(float(-k * v), float(k * e), -1, "geometric")


def kernel_values(params: KernelParams, levels, t, gamma: float = 0.0):
    """Vectorized F_gamma over an array of levels (zeros allowed) and times."""
    levels = np.asarray(levels, dtype=float)
    t = np.asarray(t, dtype=float)
    levels_b, t_b = np.broadcast_arrays(levels, t)
    shape = levels_b.shape
    levels_b, t_b = np.atleast_1d(levels_b), np.atleast_1d(t_b)
    val = np.zeros(levels_b.shape)
    err = np.zeros(levels_b.shape)
    pos = levels_b > 0
    if pos.any():
        v, e = family_values(params.prime, params.alpha, params.kappa, gamma, levels_b[pos], t_b[pos])
        val[pos], err[pos] = v, e
    for idx in zip(*np.nonzero(~pos)):
        kv = family_at_zero(params, gamma, float(t_b[idx]))
        val[idx], err[idx] = kv.value, kv.truncation_error
    return val.reshape(shape), err.reshape(shape)


# ---------------------------------------------------------------------------
# integrals over Q_p^4


def kernel_upper_bound(params: KernelParams, levels, t):
    """Z(x, t) <= kappa t p^alpha |f(x)|^{-alpha-2} / (1 - p^{-2-alpha})."""
    p, a = params.prime, params.alpha
    return params.kappa * np.asarray(t) * p**a * np.asarray(levels, dtype=float) ** (-a - 2.0) / (1 - p ** (-2.0 - a))


def _level_window(params: KernelParams, t: float, width: int = 14):
    """Shell range around the natural scale t^{1/(2 alpha)}."""
    p, a = params.prime, params.alpha
    centre = math.log(max(params.kappa * t, 1e-300)) / (2 * a * math.log(p))
    span = int(math.ceil(width / min(a, 1.0)))
    return int(math.floor(centre)) - span, int(math.ceil(centre)) + span


def level_integral(params: KernelParams, t: float, gamma: float = 0.0):
    """Integral over Q_p^4 of F_gamma(., t) by level-set summation.

    Returns (value, bound).  gamma = 0 gives the mass of Z_t.
    """
    _check_t(t)
    p, a = params.prime, params.alpha
    prof = compute_profile(params.form, Side.F)
    lo, hi = _level_window(params, t)
    while True:
        j, m, level, vol = prof.levels(lo, hi)
        vals, errs = kernel_values(params, level, t, gamma)
        at0 = family_at_zero(params, gamma, t)
        inner = float(prof.prime) ** (4.0 * (lo - 1)) * (abs(at0.value) + at0.truncation_error)
        # |F_gamma| <= |f|^{-gamma-2} (|C| + u (1 + p^{gamma+a}) / (1 - p^{-(gamma+2+a)})); for gamma = 0
        # only the u-part survives and the sum over j > hi is geometric with ratio p^{-2 gamma} or p^{-2 a}
        ucoef = params.kappa * t * (1 + p ** (gamma + a)) / (1 - p ** (-(gamma + 2 + a)))
        const = abs(1 - p**gamma) / (1 - p ** (-gamma - 2))
        j1 = hi + 1
        outer = ucoef * (float(prof.v0) + float(prof.v1) * p ** (gamma + a + 2)) * p ** (-2.0 * (gamma + a) * j1) / (1 - p ** (-2 * (gamma + a)))
        if gamma > 0:
            outer += const * (float(prof.v0) + float(prof.v1) * p ** (gamma + 2)) * p ** (-2.0 * gamma * j1) / (1 - p ** (-2 * gamma))
        total = float(np.sum(vol * vals))
        bound = float(np.sum(vol * errs)) + inner + outer + 8 * EPS * float(np.sum(vol * np.abs(vals)))
        if inner + outer < 1e-14 or hi - lo > 400:
            return total, bound
        if inner >= outer:
            lo -= 4
        else:
            hi += max(4, int(4 / max(gamma if gamma > 0 else a, 0.05)))


def kernel_mass(params: KernelParams, t: float):
    return level_integral(params, t, 0.0)


# ---------------------------------------------------------------------------
# estimates as checkable predicates


@dataclass
class BoundReport:
    kind: str
    max_ratio: float
    argmax: tuple
    ratios: np.ndarray = field(repr=False)
    n_points: int = 0


def bound_grid(prime: int, j_range: Iterable[int], t_values: Iterable[float]):
    """(level, norm, t) triples for both level classes of each shell."""
    out = []
    for j in j_range:
        for m in (0, 1):
            for t in t_values:
                out.append((float(prime) ** (2 * j - m), float(prime) ** j, float(t)))
    return out


def check_kernel_bound(params: KernelParams, grid, kind: str = "Z", gamma: float | None = None) -> BoundReport:
    """Ratio of |kernel| to its claimed majorant over the grid.

    kind ``Z``:    Z / (t (t^{1/2a} + ||x||)^{-2a-4})
    kind ``dZdt``: |dZ/dt| / (t^{1/2a} + ||x||)^{-2a-4}
    kind ``fZ``:   |f(d, gamma) Z| / (t^{1/2a} + ||x||)^{-2 gamma-4}
    Grid entries are (level, norm, t) or (PAdicPoint, t).
    """
    a = params.alpha
    rows = []
    for entry in grid:
        if len(entry) == 2:
            x, t = entry
            level = _as_level(params, x)
            jn = x.norm_exponent()
            norm = 0.0 if jn is None else float(params.prime) ** jn
        else:
            level, norm, t = entry
        rows.append((float(level), float(norm), float(t)))
    if not rows:
        raise ValueError("empty grid")
    arr = np.array(rows)
    level, norm, t = arr[:, 0], arr[:, 1], arr[:, 2]
    _check_t(t)
    scale = t ** (1 / (2 * a)) + norm
    if kind == "Z":
        num = kernel_values(params, level, t, 0.0)[0]
        den = t * scale ** (-2 * a - 4)
    elif kind == "dZdt":
        num = params.kappa * np.abs(kernel_values(params, level, t, a)[0])
        den = scale ** (-2 * a - 4)
    elif kind == "fZ":
        g = a if gamma is None else gamma
        if not 0 < g <= a:
            raise GammaOutOfRange(f"gamma must lie in (0, alpha], got {g}")
        num = np.abs(kernel_values(params, level, t, g)[0])
        den = scale ** (-2 * g - 4)
    else:
        raise ValueError(f"unknown bound kind {kind!r}")
    ratios = num / den
    i = int(np.argmax(ratios))
    return BoundReport(kind, float(ratios[i]), tuple(rows[i]), ratios, len(rows))


# ---------------------------------------------------------------------------
# semigroup, functional equation, hypersingular representation


def _ball_mass(params: KernelParams, r: int, t: float) -> float:
    """Integral of Z_t over B_r(0), summed directly from the origin outward."""
    prof = compute_profile(params.form, Side.F)
    z0 = heat_kernel_at_zero(params, t).value
    res = radial_integral(prof, lambda v: kernel_values(params, v, t)[0], j_max=r, inner_sup=z0)
    return res.value


def chapman_kolmogorov(params: KernelParams, x: PAdicPoint, s: float, t: float):
    """(convolution of Z_s and Z_t at x, Z_{s+t}(x), error bound) for x != 0.

    With ||x|| = p^J the y-integral splits into ||y|| < p^J (where
    |f(x - y)| = |f(x)|), ||y|| > p^J (where |f(x - y)| = |f(y)|) and the shell
    ||y|| = p^J, cut into the p^4 - 1 nonzero cosets of B_{J-1}.
    """
    _check_t(s)
    _check_t(t)
    form, p = params.form, params.prime
    J = x.norm_exponent()
    if J is None:
        raise DomainViolation("use heat_kernel_at_zero for x = 0")
    lx = _as_level(params, x)
    zs = lambda lv: kernel_values(params, lv, s)[0]
    zt = lambda lv: kernel_values(params, lv, t)[0]
    inner = float(zs(lx)) * _ball_mass(params, J - 1, t)
    prof = compute_profile(form, Side.F)
    outer = radial_integral(prof, lambda v: zs(v) * zt(v), j_min=J + 1,
                            majorant=lambda v: kernel_upper_bound(params, v, s) * kernel_upper_bound(params, v, t))
    # shell ||y|| = p^J: y = p^{-J} (w + p Z_p^4), w in (Z/p)^4 \ {0}
    u = np.array(x.integer_vector(J, 2), dtype=np.int64)
    grid = np.array(np.meshgrid(*[np.arange(p)] * 4, indexing="ij")).reshape(4, -1).T
    grid = grid[(grid != 0).any(axis=1)]
    coefs = np.array(form.coefficients(Side.F), dtype=np.int64)
    same = ((grid - u[None, :]) % p == 0).all(axis=1)
    diff = (u[None, :] - grid) % (p * p)
    vd = _level_exponents(diff, coefs, p)
    vy = _level_exponents(grid % (p * p), coefs, p)
    pJ = float(p) ** (2 * J)
    shell = float(np.sum(zs(pJ * float(p) ** (-vd[~same])) * zt(pJ * float(p) ** (-vy[~same]))))
    shell *= float(p) ** (4 * (J - 1))
    shell += float(zt(lx)) * _ball_mass(params, J - 1, s)
    lhs = inner + outer.value + shell
    rhs_val, rhs_err = kernel_values(params, lx, s + t)
    bound = outer.tail_bound + float(rhs_err) + 1e-13 * abs(lhs)
    return lhs, float(rhs_val), bound


def _level_exponents(vectors: np.ndarray, coefs: np.ndarray, p: int) -> np.ndarray:
    """ord_p Q(u) in {0, 1} for primitive integer vectors given mod p^2."""
    p2 = p * p
    val = ((vectors * vectors) % p2 * coefs[None, :]).sum(axis=1) % p2
    return np.where(val % p != 0, 0, 1)


def functional_equation(form: QFormPair, s: float):
    """Both sides of the Riesz functional equation for phi = 1_{Z_p^4}.

    lhs = integral of |f(x)|^{s-2} 1_{Z_p^4}(x)
    rhs = (1 - p^{s-2}) / (1 - p^{-s}) * integral of |f*(xi)|^{-s} 1_{Z_p^4}(xi)
    Both are summed exactly over level sets (geometric series in closed form).
    """
    if not 0 < s < 2:
        raise DomainViolation("s must lie in the convergence strip 0 < s < 2")
    p = form.prime
    pf = compute_profile(form, Side.F)
    ps = compute_profile(form, Side.FSTAR)

    def ball_integral(prof, e):
        # sum_{j <= 0} sum_m p^{4j} v_m p^{(2j - m) e}
        return (float(prof.v0) + float(prof.v1) * p ** (-e)) / (1 - p ** (-(4 + 2 * e)))

    lhs = ball_integral(pf, s - 2)
    rhs = (1 - p ** (s - 2)) / (1 - p ** (-s)) * ball_integral(ps, -s)
    return lhs, rhs


def riesz_identity(form: QFormPair, x: PAdicPoint, alpha: float):
    """(|f*(x)|^alpha, C_alpha * integral |f(xi)|^{-alpha-2} (chi(xi . x) - 1) d xi).

    The integrand vanishes for ||xi|| <= ||x||^-1; the shell above that is done
    by coset character sums, shells beyond it contribute only the "-1" part.
    """
    from . import _accel

    p = form.prime
    J = x.norm_exponent()
    if J is None:
        return 0.0, 0.0
    lhs = float(p) ** (alpha * abs_exponent(form, x, Side.FSTAR))
    prof = compute_profile(form, Side.F)
    M = 2 - J  # shells up to p^{1-J} need characters; one more as a check
    k = J
    L = M + k
    shift = x.integer_vector(k, L)
    sums, counts = _accel.level_character_sums(form.coefficients(Side.F), shift, p, L)
    e = -alpha - 2.0
    levels = np.array([float(p) ** (2 * M - v) for v in range(len(sums))])
    body = float(np.real(np.sum(levels**e * (sums - counts)))) * float(p) ** (-4 * k)
    # closed form of sum_{j > M} p^{4j} (v0 p^{2je} + v1 p^{(2j-1)e})
    q = p ** (4 + 2 * e)
    far = (float(prof.v0) + float(prof.v1) * p ** (-e)) * q ** (M + 1) / (1 - q)
    rhs = operator_constant(p, alpha) * (body - far)
    return lhs, rhs
