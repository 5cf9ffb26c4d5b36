"""Locally constant data, the operator f(d, gamma) on it, and the
constant-coefficient Cauchy problem

    du/dt + kappa f(d, alpha) u = g,   u(x, 0) = phi(x).

A :class:`StepFunction` is a finite set of disjoint balls with values, an
optional regular grid of cells, and a radial background (a value on a core
ball and one value per level set {||x|| = p^j, |f(x)| = p^{2j-m}} outside
it).  Every linear functional used here is evaluated atom by atom:

* ball B_r(c): the kernel is constant on the ball when x is outside it, and
  a single radial integral when x is inside;
* level set L(j, m): three cases according to ||x|| versus p^j, the shell
  ||x|| = p^j being cut into the cosets of B_{j-1}.

The infinite family of background shells is truncated once the growth bound
|phi| <= C (1 + ||x||^{2 lam}) makes the remainder negligible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (
    DomainViolation,
    GammaOutOfRange,
    QuadratureBudgetExceeded,
    TailNotControlled,
)
from .kernel import (
    KernelParams,
    family_values,
    kernel_upper_bound,
    kernel_values,
    operator_constant,
)
from .padic import Ball, PAdicPoint, point_from_integers
from .qform import QFormPair, Side, abs_exponent
from .radial import compute_profile

TAIL_TOL = 1e-15


# ---------------------------------------------------------------------------
# data model


@dataclass(frozen=True)
class Growth:
    """|phi(x)| <= constant * (1 + ||x||^{2 lam}) away from the pieces."""

    constant: float = 0.0
    lam: float = 0.0

    def __post_init__(self):
        if self.lam < 0 or self.constant < 0:
            raise DomainViolation("growth constant and exponent must be nonnegative")

    def at_shell(self, p: int, j):
        return self.constant * (1.0 + np.power(float(p), 2.0 * self.lam * np.asarray(j, dtype=float)))


@dataclass(frozen=True)
class RadialBackground:
    core_exp: int = 0
    core_value: complex = 0.0
    shell: Callable[[int, int], complex] | None = None
    constant: bool = False

    @classmethod
    def zero(cls) -> "RadialBackground":
        return cls(0, 0.0, None, True)

    @classmethod
    def const(cls, c: complex) -> "RadialBackground":
        return cls(0, c, lambda j, m: c, True)

    def value(self, j: int | None, m: int, p: int) -> complex:
        if j is None or j <= self.core_exp:
            return self.core_value
        return 0.0 if self.shell is None else self.shell(j, m)

    @property
    def is_zero(self) -> bool:
        return self.constant and self.core_value == 0 and self.shell is None


@dataclass(frozen=True)
class CellGrid:
    """Values on the cosets p^{-R} n + B_l of B_l inside B_R, n in [0, K)^4, K = p^{R-l}.

    ``values`` is flat with index n0 K^3 + n1 K^2 + n2 K + n3.
    """

    outer_exp: int
    cell_exp: int
    values: np.ndarray

    @property
    def side(self) -> int:
        return round(np.asarray(self.values).size ** 0.25)


@dataclass(frozen=True)
class StepFunction:
    prime: int
    pieces: tuple = ()
    background: RadialBackground = field(default_factory=RadialBackground.zero)
    grid: CellGrid | None = None
    growth: Growth = field(default_factory=Growth)

    def __post_init__(self):
        object.__setattr__(self, "pieces", tuple((b, complex(v)) for b, v in self.pieces))
        for i, (b1, _) in enumerate(self.pieces):
            if b1.prime != self.prime:
                raise DomainViolation("piece with a different prime")
            for b2, _ in self.pieces[i + 1:]:
                if not b1.disjoint(b2):
                    raise DomainViolation("pieces must be pairwise disjoint")
        if self.grid is not None and self.pieces:
            raise DomainViolation("use either pieces or a cell grid")

    # -- constructors -------------------------------------------------------
    @classmethod
    def constant(cls, prime: int, c: complex) -> "StepFunction":
        return cls(prime, (), RadialBackground.const(c), None, Growth(abs(c), 0.0))

    @classmethod
    def indicator(cls, ball: Ball, value: complex = 1.0) -> "StepFunction":
        return cls(ball.prime, ((ball, value),))

    @classmethod
    def unit_ball(cls, prime: int) -> "StepFunction":
        return cls.indicator(Ball(PAdicPoint.zero(prime), 0))

    # -- properties ---------------------------------------------------------
    @property
    def lam(self) -> float:
        return self.growth.lam

    @property
    def constancy_exp(self) -> int | None:
        """Largest l with phi(x + y) = phi(x) for ||y|| <= p^l (None: constant)."""
        exps = [b.radius_exp for b, _ in self.pieces]
        if self.grid is not None:
            exps.append(self.grid.cell_exp)
        if not self.background.constant:
            exps.append(self.background.core_exp)
        return min(exps) if exps else None

    def __call__(self, x: PAdicPoint) -> complex:
        return self.evaluate(x)

    def evaluate(self, x: PAdicPoint, form: QFormPair | None = None) -> complex:
        for b, v in self.pieces:
            if b.contains(x):
                return v
        if self.grid is not None:
            g = self.grid
            j = x.norm_exponent()
            if j is None or j <= g.outer_exp:
                return complex(np.asarray(g.values).reshape(-1)[_cell_index(x, g, self.prime)])
        j = x.norm_exponent()
        m = 0
        if j is not None and j > self.background.core_exp and not self.background.constant:
            form = form or QFormPair(self.prime)
            m = 2 * j - abs_exponent(form, x, Side.F)
        return complex(self.background.value(j, m, self.prime))

    # -- linear structure ---------------------------------------------------
    def scaled(self, a: complex) -> "StepFunction":
        bg = self.background
        shell = None if bg.shell is None else (lambda j, m, s=bg.shell: a * s(j, m))
        core = a * bg.core_value
        grid = None if self.grid is None else CellGrid(self.grid.outer_exp, self.grid.cell_exp, a * self.grid.values)
        return StepFunction(
            self.prime,
            tuple((b, a * v) for b, v in self.pieces),
            RadialBackground(bg.core_exp, core, shell, bg.constant),
            grid,
            Growth(abs(a) * self.growth.constant, self.growth.lam),
        )


def power_background(prime: int, coeff: float, exponent: float, core_exp: int = 0) -> RadialBackground:
    """coeff * ||x||^exponent on shells outside B_core; value coeff * p^{exponent core} on the core."""
    lp = math.log(prime)
    return RadialBackground(
        core_exp,
        coeff * prime ** (exponent * core_exp),
        lambda j, m: coeff * math.exp(exponent * j * lp),
        False,
    )


def _cell_index(x: PAdicPoint, grid: CellGrid, p: int) -> int:
    K = grid.side
    width = grid.outer_exp - grid.cell_exp
    n = x.integer_vector(grid.outer_exp, width)
    return ((n[0] * K + n[1]) * K + n[2]) * K + n[3]


def grid_centres(grid: CellGrid, p: int) -> np.ndarray:
    K = p ** (grid.outer_exp - grid.cell_exp)
    r = np.arange(K, dtype=np.int64)
    return np.array(np.meshgrid(r, r, r, r, indexing="ij")).reshape(4, -1).T


# ---------------------------------------------------------------------------
# radial kernels: a pointwise profile and the value of the atom functional
# for a ball B_r containing x


class _Kernel:
    tshape: tuple = ()
    decay: float  # kernel ~ |f|^{-decay - 2} at infinity

    def point(self, levels):
        raise NotImplementedError

    def inside(self, r: int):
        raise NotImplementedError

    def majorant(self, levels):
        raise NotImplementedError


class HeatKernel(_Kernel):
    """y -> Z(y, t) for an array of times; functional = integral of Z(x - y) phi(y) dy."""

    def __init__(self, params: KernelParams, t):
        self.params = params
        self.t = np.atleast_1d(np.asarray(t, dtype=float))
        self.tshape = self.t.shape
        self.decay = params.alpha
        self.profile = compute_profile(params.form, Side.F)
        self._inside = {}

    def point(self, levels):
        levels = np.asarray(levels, dtype=float)
        return kernel_values(self.params, levels[..., None], self.t[None, :])

    def majorant(self, levels):
        return kernel_upper_bound(self.params, np.asarray(levels)[..., None], self.t[None, :])

    def inside(self, r):
        if r not in self._inside:
            self._inside[r] = _complement(self, r, total=1.0)
        return self._inside[r]


class FamilyKernel(_Kernel):
    """y -> (f(d, gamma) Z_t)(y); its integral over Q_p^4 is 0."""

    def __init__(self, params: KernelParams, gamma: float, t):
        if not 0 < gamma <= params.alpha + 1e-15:
            raise GammaOutOfRange(f"gamma must lie in (0, alpha], got {gamma}")
        self.params, self.gamma = params, gamma
        self.t = np.atleast_1d(np.asarray(t, dtype=float))
        self.tshape = self.t.shape
        self.decay = gamma
        self.profile = compute_profile(params.form, Side.F)
        self._inside = {}

    def point(self, levels):
        levels = np.asarray(levels, dtype=float)
        return kernel_values(self.params, levels[..., None], self.t[None, :], self.gamma)

    def majorant(self, levels):
        p, a, g = self.params.prime, self.params.alpha, self.gamma
        lv = np.asarray(levels, dtype=float)[..., None]
        u = self.params.kappa * self.t[None, :] * lv ** (-a)
        return lv ** (-g - 2) * (abs(operator_constant(p, g)) + u * (1 + p ** (g + a)) / (1 - p ** (-(g + 2 + a))))

    def inside(self, r):
        if r not in self._inside:
            self._inside[r] = _complement(self, r, total=0.0)
        return self._inside[r]


class OperatorKernel(_Kernel):
    """The hypersingular kernel C_gamma |f(y)|^{-gamma-2}; functional = (f(d, gamma) phi)(x)."""

    def __init__(self, form: QFormPair, gamma: float):
        if gamma <= 0:
            raise GammaOutOfRange("gamma must be positive")
        self.form, self.gamma = form, gamma
        self.decay = gamma
        self.tshape = (1,)
        self.const = operator_constant(form.prime, gamma)
        self.profile = compute_profile(form, Side.F)

    def point(self, levels):
        lv = np.asarray(levels, dtype=float)[..., None]
        val = self.const * lv ** (-self.gamma - 2)
        return val, 4 * np.finfo(float).eps * np.abs(val)

    def majorant(self, levels):
        return abs(self.const) * np.asarray(levels, dtype=float)[..., None] ** (-self.gamma - 2)

    def inside(self, r):
        # -C * integral over ||y|| > p^r of |f(y)|^{-gamma-2}
        p, g = self.form.prime, self.gamma
        v0, v1 = float(self.profile.v0), float(self.profile.v1)
        tail = (v0 + v1 * p ** (g + 2)) * p ** (-2 * g * (r + 1)) / (1 - p ** (-2 * g))
        val = np.array([-self.const * tail])
        return val, 8 * np.finfo(float).eps * np.abs(val)


def _complement(kern: _Kernel, r: int, total: float):
    """total - integral over ||y|| > p^r of the kernel profile."""
    prof = kern.profile
    p = prof.prime
    acc = np.zeros(kern.tshape)
    err = np.zeros(kern.tshape)
    j = r + 1
    while True:
        js, ms, lv, vol = prof.levels(j, j + 7)
        v, e = kern.point(lv)
        acc += np.sum(vol[:, None] * v, axis=0)
        err += np.sum(vol[:, None] * e, axis=0)
        j += 8
        rest = _shell_tail(kern, prof, j, Growth(0.5, 0.0))
        if np.all(rest <= TAIL_TOL * np.maximum(np.abs(acc), 1e-300)) or np.all(rest < 1e-300):
            break
        if j - r > 4000:
            raise TailNotControlled("kernel tail does not decay")
    return total - acc, err + rest + 8 * np.finfo(float).eps * np.abs(acc)


def _shell_tail(kern: _Kernel, prof, j0: int, growth: Growth):
    """Bound for sum_{j >= j0} sum_m growth(j) vol(m, j) majorant(p^{2j-m})."""
    p = prof.prime
    ratio_exp = 2.0 * growth.lam - 2.0 * kern.decay
    if ratio_exp >= 0:
        raise TailNotControlled(f"growth 2*lam = {2 * growth.lam} is not below 2*{kern.decay}")
    # the majorant is a power law (times at most a constant) beyond the natural scale;
    # bound the first 40 shells explicitly, then close with the asymptotic ratio
    total = np.zeros(kern.tshape)
    js = np.arange(j0, j0 + 40)
    jj = np.repeat(js, 2)
    mm = np.tile([0, 1], len(js))
    lv = np.power(float(p), 2.0 * jj - mm)
    vol = prof.volume_float(mm, jj)
    maj = kern.majorant(lv)
    terms = (growth.at_shell(p, jj) * vol)[:, None] * maj
    total += terms.sum(axis=0)
    last = terms[-2:].sum(axis=0)
    q = p**ratio_exp
    # beyond j0 + 40 the shell terms are dominated by last * q^k (majorants are
    # power laws in the level times a nonincreasing factor)
    total += last * q / (1 - q) * 2.0
    return total


# ---------------------------------------------------------------------------
# atom functionals


def _level_of(form: QFormPair, x: PAdicPoint) -> float:
    e = abs_exponent(form, x, Side.F)
    return 0.0 if e is None else float(form.prime) ** e


def _ball_functional(kern, form, x: PAdicPoint, ball: Ball):
    if ball.contains(x):
        return kern.inside(ball.radius_exp)
    lv = _level_of(form, x - ball.center)
    v, e = kern.point(np.array([lv]))
    vol = float(form.prime) ** (4 * ball.radius_exp)
    return vol * v[0], vol * e[0]


def _shell_coset_functional(kern, form, x: PAdicPoint, j: int, m_filter=None):
    """Per level m: functional of L(j, m) at x when ||x|| = p^j."""
    p = form.prime
    u = np.array(x.integer_vector(j, 2), dtype=np.int64)
    grid = np.array(np.meshgrid(*[np.arange(p)] * 4, indexing="ij")).reshape(4, -1).T
    grid = grid[(grid != 0).any(axis=1)]
    coefs = np.array(form.coefficients(Side.F), dtype=np.int64)
    lev_v = np.where(((grid * grid) * coefs).sum(axis=1) % p != 0, 0, 1)
    same = ((grid - u[None, :]) % p == 0).all(axis=1)
    diff = (u[None, :] - grid) % (p * p)
    val = ((diff * diff) % (p * p) * coefs).sum(axis=1) % (p * p)
    ord_q = np.where(val % p != 0, 0, 1)
    out = {}
    inside_v, inside_e = kern.inside(j - 1)
    for m in (0, 1):
        sel = (lev_v == m) & ~same
        lv = float(p) ** (2 * j) * np.power(float(p), -ord_q[sel].astype(float))
        if lv.size:
            v, e = kern.point(lv)
            vsum = float(p) ** (4 * (j - 1)) * v.sum(axis=0)
            esum = float(p) ** (4 * (j - 1)) * e.sum(axis=0)
        else:
            vsum = np.zeros(kern.tshape)
            esum = np.zeros(kern.tshape)
        if np.any(same & (lev_v == m)):
            vsum = vsum + inside_v
            esum = esum + inside_e
        out[m] = (vsum, esum)
    return out


def _grid_functional(kern, form, x: PAdicPoint, grid: CellGrid, p: int):
    R, l = grid.outer_exp, grid.cell_exp
    vals = np.asarray(grid.values).reshape(-1)
    jx = x.norm_exponent()
    cell_vol = float(p) ** (4 * l)
    if jx is not None and jx > R:
        v, e = kern.point(np.array([_level_of(form, x)]))
        s = vals.sum()
        return cell_vol * s * v[0], cell_vol * np.abs(vals).sum() * e[0]
    width = R - l
    D = width + 1
    X = np.array(x.integer_vector(R, D), dtype=np.int64)
    cells = grid_centres(grid, p)
    diff = (X[None, :] - cells) % (p**D)
    own = ((diff % (p**width)) == 0).all(axis=1)
    d = diff[~own]
    # exact ord of each difference vector (all < width)
    ordd = np.zeros(d.shape[0], dtype=np.int64)
    for k in range(1, width):
        ordd = np.where((d % (p**k) == 0).all(axis=1), k, ordd)
    prim = d // (p**ordd)[:, None]
    coefs = np.array(form.coefficients(Side.F), dtype=np.int64)
    p2 = p * p
    qv = (((prim % p2) ** 2 % p2) * coefs).sum(axis=1) % p2
    m = np.where(qv % p != 0, 0, 1)
    # x - c = p^{-R} d, ||x - c|| = p^{R - ord}, |f(x - c)| = p^{2(R - ord) - m}
    lv = np.power(float(p), 2.0 * (R - ordd) - m)
    v, e = kern.point(lv)
    other = vals[~own]
    total = cell_vol * (other[:, None] * v).sum(axis=0)
    err = cell_vol * (np.abs(other)[:, None] * e).sum(axis=0)
    iv, ie = kern.inside(l)
    mine = vals[own][0]
    return total + mine * iv, err + abs(mine) * ie


def linear_functional(kern: _Kernel, form: QFormPair, phi: StepFunction, x: PAdicPoint, tol: float = TAIL_TOL):
    """Sum over atoms of phi of the kernel functional at x: (values, bounds) over kern.tshape."""
    p = phi.prime
    if p != form.prime:
        raise DomainViolation("prime mismatch")
    bg = phi.background
    total = np.zeros(kern.tshape, dtype=complex)
    bound = np.zeros(kern.tshape)

    coef_core = 0.0 if bg.is_zero else bg.value(None, 0, p)
    level_coef: dict = {}
    ball_atoms = []
    for ball, v in phi.pieces:
        r = ball.radius_exp
        if ball.contains_origin() and r > bg.core_exp and not bg.is_zero:
            ball_atoms.append((ball, v))
            coef_core -= bg.value(None, 0, p)
            for j in range(bg.core_exp + 1, r + 1):
                for m in (0, 1):
                    level_coef[(j, m)] = level_coef.get((j, m), 0.0) - bg.value(j, m, p)
        else:
            jc = None if ball.contains_origin() else ball.center.norm_exponent()
            mc = 0
            if jc is not None and jc > bg.core_exp and not bg.constant:
                mc = 2 * jc - abs_exponent(form, ball.center, Side.F)
            base = 0.0 if bg.is_zero else bg.value(jc, mc, p)
            ball_atoms.append((ball, v - base))
    if phi.grid is not None and not bg.is_zero:
        g = phi.grid
        if g.outer_exp > bg.core_exp:
            raise DomainViolation("grid must lie inside the background core")
        # grid overrides the background on B_R: subtract the core value there
        ball_atoms.append((Ball(PAdicPoint.zero(p), g.outer_exp), -bg.value(None, 0, p)))

    for ball, c in ball_atoms:
        if c == 0:
            continue
        v, e = _ball_functional(kern, form, x, ball)
        total += c * v
        bound += abs(c) * e
    if phi.grid is not None:
        v, e = _grid_functional(kern, form, x, phi.grid, p)
        total += v
        bound += e

    if bg.is_zero:
        return total, bound

    if coef_core != 0:
        v, e = _ball_functional(kern, form, x, Ball(PAdicPoint.zero(p), bg.core_exp))
        total += coef_core * v
        bound += abs(coef_core) * e
    if bg.constant and bg.shell is not None:
        # constant background: shells outside the core carry the same value c;
        # sum of all atoms = c * (whole space) -> use the functional of the constant
        c = bg.core_value
        whole_v, whole_e = _whole_space(kern)
        ball_v, ball_e = _ball_functional(kern, form, x, Ball(PAdicPoint.zero(p), bg.core_exp))
        total += c * (whole_v - ball_v)
        bound += abs(c) * (whole_e + ball_e)
        for (j, m), cf in level_coef.items():
            vv, ee = _level_functional(kern, form, x, j, m)
            total += cf * vv
            bound += abs(cf) * ee
        return total, bound

    # general radial background: explicit shells, then a growth-controlled tail
    jx = x.norm_exponent()
    start = bg.core_exp + 1
    J = max([start, (jx if jx is not None else start) + 1] + [j for j, _ in level_coef]) + 4
    prof = compute_profile(form, Side.F)
    growth = phi.growth
    if growth.constant <= 0:
        raise DomainViolation("a radial background needs a growth bound")
    while True:
        tail = _shell_tail(kern, prof, J + 1, growth)
        if np.all(tail <= tol * np.maximum(np.abs(total), 1e-300)) or np.all(tail < 1e-300):
            break
        J += 4
        if J - start > 2000:
            raise TailNotControlled("background tail does not converge")
    for j in range(start, J + 1):
        for m in (0, 1):
            cf = bg.value(j, m, p) + level_coef.get((j, m), 0.0)
            if cf == 0:
                continue
            vv, ee = _level_functional(kern, form, x, j, m)
            total += cf * vv
            bound += abs(cf) * ee
    return total, bound + tail


def _whole_space(kern: _Kernel):
    if isinstance(kern, HeatKernel):
        return np.ones(kern.tshape), np.zeros(kern.tshape)
    return np.zeros(kern.tshape), np.zeros(kern.tshape)


_SHELL_CACHE: dict = {}


def _level_functional(kern, form, x: PAdicPoint, j: int, m: int):
    p = form.prime
    jx = x.norm_exponent()
    prof = kern.profile
    vol = prof.volume_float(m, j)
    if jx is None or jx <= j - 1:
        v, e = kern.point(np.array([float(p) ** (2 * j - m)]))
        return vol * v[0], vol * e[0]
    if jx >= j + 1:
        v, e = kern.point(np.array([_level_of(form, x)]))
        return vol * v[0], vol * e[0]
    return _shell_coset_functional(kern, form, x, j)[m]


# ---------------------------------------------------------------------------
# public operations


def apply_f_operator(form: QFormPair, gamma: float, phi: StepFunction, x: PAdicPoint):
    """(f(d, gamma) phi)(x) and an error bound; requires lam < gamma."""
    if gamma <= 0:
        raise GammaOutOfRange("gamma must be positive")
    if phi.lam >= gamma and not phi.background.is_zero and not phi.background.constant:
        raise DomainViolation(f"lam = {phi.lam} must be below gamma = {gamma}")
    v, e = linear_functional(OperatorKernel(form, gamma), form, phi, x)
    return complex(v[0]), float(e[0])


@dataclass(frozen=True)
class TimeSource:
    """g(x, theta): step function ``steps[k]`` on [nodes[k], nodes[k+1]); linear
    interpolation between consecutive steps when ``interpolate`` is set."""

    nodes: tuple
    steps: tuple
    interpolate: bool = False

    def __post_init__(self):
        if len(self.steps) != len(self.nodes):
            raise DomainViolation("one step function per time node")
        if any(b <= a for a, b in zip(self.nodes, self.nodes[1:])):
            raise DomainViolation("time nodes must increase")

    @classmethod
    def constant_in_time(cls, phi: StepFunction) -> "TimeSource":
        return cls((0.0,), (phi,))

    @property
    def lam(self) -> float:
        return max(s.lam for s in self.steps)

    def at(self, x: PAdicPoint, t: float) -> complex:
        k = max((i for i, nd in enumerate(self.nodes) if nd <= t), default=None)
        if k is None:
            raise DomainViolation("time before the first node")
        v = self.steps[k].evaluate(x)
        if self.interpolate and k + 1 < len(self.nodes):
            w = (t - self.nodes[k]) / (self.nodes[k + 1] - self.nodes[k])
            v = (1 - w) * v + w * self.steps[k + 1].evaluate(x)
        return v

    def segments(self, a: float, b: float):
        """Pieces of [a, b] on which the source is a fixed step function (or a linear blend)."""
        nodes = list(self.nodes) + [math.inf]
        out = []
        for k in range(len(self.nodes)):
            lo, hi = max(a, nodes[k]), min(b, nodes[k + 1])
            if hi > lo:
                out.append((lo, hi, k))
        if a < self.nodes[0]:
            raise DomainViolation("source not defined before its first node")
        return out


@dataclass(frozen=True)
class CauchyProblem:
    params: KernelParams
    initial: StepFunction
    source: TimeSource | None = None
    horizon: float = 1.0

    def __post_init__(self):
        lam = max(self.initial.lam, self.source.lam if self.source else 0.0)
        if lam >= self.params.alpha:
            raise DomainViolation(f"need lam < alpha, got lam = {lam}")
        if self.horizon <= 0:
            raise DomainViolation("horizon must be positive")


def heat_potential_u1(problem: CauchyProblem, x: PAdicPoint, t):
    """u1(x, t) = integral of Z(x - y, t) phi(y) dy; t may be an array."""
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t_arr <= 0):
        raise DomainViolation("t must be positive")
    v, e = linear_functional(HeatKernel(problem.params, t_arr), problem.params.form, problem.initial, x)
    if np.ndim(t) == 0:
        return complex(v[0]), float(e[0])
    return v, e


def _source_potential(problem, x, step: StepFunction, s, gamma=None):
    kern = HeatKernel(problem.params, s) if gamma is None else FamilyKernel(problem.params, gamma, s)
    return linear_functional(kern, problem.params.form, step, x)


def _source_integrand(problem, x, t, theta, k, gamma):
    src = problem.source
    s = t - theta
    vals, errs = _source_potential(problem, x, src.steps[k], s, gamma)
    if src.interpolate and k + 1 < len(src.steps):
        w = (theta - src.nodes[k]) / (src.nodes[k + 1] - src.nodes[k])
        v2, e2 = _source_potential(problem, x, src.steps[k + 1], s, gamma)
        vals = (1 - w) * vals + w * v2
        errs = (1 - w) * errs + w * e2
    return vals, errs


def midpoint_sums(problem: CauchyProblem, x: PAdicPoint, t: float, tau: float, n: int, gamma=None) -> complex:
    """Composite midpoint sum with n nodes per source segment (no extrapolation)."""
    total = 0j
    for lo, hi, k in problem.source.segments(tau, t):
        h = (hi - lo) / n
        theta = lo + h * (np.arange(n) + 0.5)
        total += h * _source_integrand(problem, x, t, theta, k, gamma)[0].sum()
    return total


def _time_integral(problem, x, t, tau, gamma, tol, max_nodes):
    src = problem.source
    total, bound, used = 0j, 0.0, 0
    for lo, hi, k in src.segments(tau, t):
        n = 4
        prev = prev_rich = None
        while True:
            h = (hi - lo) / n
            theta = lo + h * (np.arange(n) + 0.5)
            used += n
            vals, errs = _source_integrand(problem, x, t, theta, k, gamma)
            est = h * vals.sum()
            if prev is not None:
                # midpoint error is even in h: one Richardson step, then compare
                # successive extrapolants
                rich = est + (est - prev) / 3
                if prev_rich is not None:
                    err = abs(rich - prev_rich)
                    if err <= tol * max(1.0, abs(rich)) / len(src.nodes):
                        total += rich
                        bound += err + h * errs.sum()
                        break
                prev_rich = rich
            if used > max_nodes:
                raise QuadratureBudgetExceeded(f"more than {max_nodes} time nodes")
            prev = est
            n *= 2
    return total, bound


def heat_potential_u2(problem: CauchyProblem, x: PAdicPoint, t: float, tau: float = 0.0,
                      tol: float = 1e-8, max_nodes: int = 2**16):
    """u2(x, t) = int_tau^t int Z(x - y, t - theta) g(y, theta) dy dtheta, as (value, bound).

    Composite midpoint rule per segment of the source grid, node count doubled
    until Richardson-extrapolated sums settle below ``tol``.
    """
    if not 0 <= tau < t:
        raise DomainViolation("need 0 <= tau < t")
    if problem.source is None:
        return 0j, 0.0
    return _time_integral(problem, x, t, tau, None, tol, max_nodes)


@dataclass
class SolutionRow:
    x: PAdicPoint
    t: float
    value: complex
    bound: float


def solve_constant(problem: CauchyProblem, eval_points, tol: float = 1e-8) -> list[SolutionRow]:
    rows = []
    for x, t in eval_points:
        if not 0 < t <= problem.horizon:
            raise DomainViolation(f"t = {t} outside (0, T]")
        v1, e1 = heat_potential_u1(problem, x, t)
        v2, e2 = heat_potential_u2(problem, x, t, 0.0, tol)
        rows.append(SolutionRow(x, t, v1 + v2, e1 + e2))
    return rows


def solution_value(problem: CauchyProblem, x: PAdicPoint, t: float, tol: float = 1e-8):
    v1, e1 = heat_potential_u1(problem, x, t)
    if problem.source is None:
        return v1, e1
    v2, e2 = heat_potential_u2(problem, x, t, 0.0, tol)
    return v1 + v2, e1 + e2


# ---------------------------------------------------------------------------
# refitting, residuals and the commutation check


def level_representative(prime: int, j: int, m: int) -> PAdicPoint:
    """A point with ||x|| = p^j and |f(x)| = p^{2j-m}."""
    base = (1, 0, 0, 0) if m == 0 else (0, 0, 1, 0)
    return point_from_integers(base, -j, prime)


def fit_step_function(func: Callable[[PAdicPoint], complex], prime: int, outer_exp: int, cell_exp: int,
                      lam: float = 0.0, growth_constant: float | None = None) -> StepFunction:
    """Tabulate ``func`` on the cells of B_l inside B_R and on the level sets outside B_R.

    Exact when func is constant on the cells and depends only on the level set
    outside B_R (true for u(., t) once every atom of the data lies in B_{R-1}).
    """
    if cell_exp > outer_exp:
        raise DomainViolation("cell radius exceeds the outer radius")
    K = prime ** (outer_exp - cell_exp)
    cells = grid_centres(CellGrid(outer_exp, cell_exp, np.zeros((K,))), prime)
    values = np.array([func(point_from_integers(c, -outer_exp, prime)) for c in cells], dtype=complex)
    cache: dict = {}

    def shell(j, m):
        if (j, m) not in cache:
            cache[(j, m)] = func(level_representative(prime, j, m))
        return cache[(j, m)]

    size = max([float(np.max(np.abs(values)))] + [abs(shell(j, m)) for j in range(outer_exp + 1, outer_exp + 4) for m in (0, 1)])
    bg = RadialBackground(outer_exp, 0.0, shell, False)
    return StepFunction(prime, (), bg, CellGrid(outer_exp, cell_exp, values.reshape(K, K, K, K)),
                        Growth(growth_constant if growth_constant is not None else 2 * max(size, 1e-300), lam))


def data_support_exp(phi: StepFunction) -> int:
    """Smallest R with every piece (and the background core) inside B_{R-1}."""
    exps = [phi.background.core_exp]
    for b, _ in phi.pieces:
        c = b.center.norm_exponent()
        exps.append(max(b.radius_exp, c if c is not None else b.radius_exp))
    if phi.grid is not None:
        exps.append(phi.grid.outer_exp)
    return max(exps) + 1


def operator_on_solution(problem: CauchyProblem, x: PAdicPoint, t: float, gamma: float | None = None,
                         cell_exp: int | None = None, tol: float = 1e-8):
    """(f(d, gamma) u(., t))(x) by refitting u(., t) to a step function."""
    gamma = problem.params.alpha if gamma is None else gamma
    p = problem.params.prime
    phi = problem.initial
    R = data_support_exp(phi)
    if problem.source is not None:
        R = max([R] + [data_support_exp(s) for s in problem.source.steps])
    l = cell_exp
    if l is None:
        cands = [c for c in [phi.constancy_exp] + ([s.constancy_exp for s in problem.source.steps] if problem.source else []) if c is not None]
        l = min(cands) if cands else R - 1
    l = min(l, R - 1)
    lam = max(phi.lam, problem.source.lam if problem.source else 0.0)
    fit = fit_step_function(lambda y: solution_value(problem, y, t, tol)[0], p, R, l, lam)
    return apply_f_operator(problem.params.form, gamma, fit, x)


def operator_via_kernel(problem: CauchyProblem, x: PAdicPoint, t: float, gamma: float | None = None,
                        tol: float = 1e-10):
    """f(d, gamma) u(., t) at x with the operator moved onto the kernel:
    int (f(d, gamma) Z_t)(x - y) phi(y) dy plus the same under the time integral for g."""
    gamma = problem.params.alpha if gamma is None else gamma
    v, e = linear_functional(FamilyKernel(problem.params, gamma, t), problem.params.form, problem.initial, x)
    value, bound = complex(v[0]), float(e[0])
    if problem.source is not None:
        v2, e2 = _time_integral(problem, x, t, 0.0, gamma, tol, 2**16)
        value, bound = value + v2, bound + e2
    return value, bound


def pde_residual(problem: CauchyProblem, x: PAdicPoint, t: float, tol: float = 1e-11, cell_exp: int | None = None):
    """du/dt + kappa f(d, alpha) u - g at (x, t), with du/dt from Richardson-extrapolated
    centred differences (h = 1e-5 t) and the operator from a step-function refit."""
    h = 1e-5 * t
    u = lambda s: solution_value(problem, x, s, tol)[0]
    d1 = (u(t + h) - u(t - h)) / (2 * h)
    d2 = (u(t + h / 2) - u(t - h / 2)) / h
    dudt = (4 * d2 - d1) / 3
    op, op_err = operator_on_solution(problem, x, t, None, cell_exp, tol)
    g = 0.0 if problem.source is None else problem.source.at(x, t)
    res = dudt + problem.params.kappa * op - g
    scale = abs(dudt) + abs(problem.params.kappa * op) + abs(g)
    return res, scale
