"""Variable coefficients by the parametrix (Levi) construction.

    du/dt + a0(x,t) f(d,alpha) u + sum_k a_k(x,t) f(d,alpha_k) u + b(x,t) u = g

Everything is tabulated on a skeleton: the cosets of B_l inside B_J plus the
level sets L(j, m) for J < j <= J + E.  Quantities are cell integrals in the
source variable, e.g. Zbar[a, c] = integral over cell c of Z(x_a - eta) d eta.
When the coefficients are constant on the cosets of B_l, the cell integral of
phi(eta, theta, xi, tau) over a source cell is itself constant in eta on those
cosets, so the scheme is exact up to the far cells and the time quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.special import gamma as gamma_fn

from .cauchy import (
    FamilyKernel,
    HeatKernel,
    OperatorKernel,
    StepFunction,
    TimeSource,
    _level_functional,
    level_representative,
)
from .errors import CosetResolutionTooCoarse, DomainViolation, HypothesisViolation, IterationDiverged
from .kernel import KernelParams, apply_f_to_kernel, heat_kernel_series
from .padic import PAdicPoint, point_from_integers
from .qform import QFormPair, Side, abs_exponent
from .radial import compute_profile

ITER_TOL = 1e-10


@dataclass(frozen=True)
class Coefficient:
    exponent: float
    field: TimeSource


@dataclass(frozen=True)
class CoefficientSet:
    form: QFormPair
    alpha: float
    a0: TimeSource
    lower: tuple = ()
    b: TimeSource | None = None
    nu: float = 1.0
    mu: float = 1.0
    horizon: float = 1.0
    holder_constant: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(self.lower))
        if self.alpha <= 1:
            raise HypothesisViolation("the variable-coefficient theory needs alpha > 1")
        if not 0 < self.nu <= 1:
            raise HypothesisViolation("Hoelder exponent must lie in (0, 1]")
        if self.mu <= 0 or self.horizon <= 0:
            raise HypothesisViolation("mu and T must be positive")
        exps = [c.exponent for c in self.lower]
        if any(e <= 0 or e >= self.alpha for e in exps) or any(b <= a for a, b in zip(exps, exps[1:])):
            raise HypothesisViolation("need 0 < alpha_1 < ... < alpha_n < alpha")
        for ts in self.fields():
            for step in ts.steps:
                if step.lam != 0:
                    raise HypothesisViolation("coefficients must be bounded (lam = 0)")
        for v in _sample_values(self.a0):
            if v.real < self.mu or abs(v.imag) > 0:
                raise HypothesisViolation(f"parabolicity fails: a0 = {v} < mu = {self.mu}")
        if self.holder_constant is not None and self.holder_ratio() > self.holder_constant:
            raise HypothesisViolation(f"Hoelder ratio {self.holder_ratio():.3g} exceeds {self.holder_constant}")

    def fields(self):
        out = [self.a0] + [c.field for c in self.lower]
        return out + ([self.b] if self.b is not None else [])

    @property
    def alpha_next(self) -> float:
        """alpha (1 - nu), the last exponent of the majorant chain."""
        return self.alpha * (1 - self.nu)

    @property
    def chain_ordered(self) -> bool:
        """False when alpha (1 - nu) does not exceed alpha_n (flagged, not rejected)."""
        return not self.lower or self.alpha_next > self.lower[-1].exponent

    @property
    def n_lower(self) -> int:
        return len(self.lower)

    def holder_ratio(self) -> float:
        """max |a(t') - a(t)| / |t' - t|^nu over consecutive nodes of every coefficient."""
        worst = 0.0
        for ts in self.fields():
            for k in range(len(ts.nodes) - 1):
                dt = ts.nodes[k + 1] - ts.nodes[k]
                d = max(abs(u - v) for u, v in zip(_values(ts.steps[k + 1]), _values(ts.steps[k])))
                worst = max(worst, d / dt**self.nu)
        return worst

    def params(self, kappa: float) -> KernelParams:
        return KernelParams(self.form, self.alpha, kappa)

    def value(self, ts: TimeSource | None, x: PAdicPoint, t: float) -> float:
        return 0.0 if ts is None else float(ts.at(x, t).real)


def _values(step: StepFunction):
    vals = [v for _, v in step.pieces]
    if step.grid is not None:
        vals += list(np.asarray(step.grid.values).reshape(-1))
    bg = step.background
    vals.append(bg.core_value)
    if bg.shell is not None:
        vals += [bg.shell(j, m) for j in range(bg.core_exp + 1, bg.core_exp + 6) for m in (0, 1)]
    return vals


def _sample_values(ts: TimeSource):
    out = []
    for s in ts.steps:
        out += _values(s)
    return out


def constant_field(prime: int, value: float) -> TimeSource:
    return TimeSource.constant_in_time(StepFunction.constant(prime, value))


# ---------------------------------------------------------------------------
# pointwise kernels


def _diff(x: PAdicPoint, y: PAdicPoint) -> PAdicPoint:
    """x - y, with a cancellation down to the working precision read as exact 0."""
    d = x - y
    return PAdicPoint.zero(x.prime) if all(c.is_zero for c in d.coords) else d


def parametrized_kernel(coeffs: CoefficientSet, x: PAdicPoint, t: float, y: PAdicPoint, theta: float):
    """Z(x - y, t - theta) with kappa frozen at a0(y, theta)."""
    kappa = coeffs.value(coeffs.a0, y, theta)
    return heat_kernel_series(coeffs.params(kappa), _diff(x, y), t - theta)


def r_kernel(coeffs: CoefficientSet, x: PAdicPoint, t: float, xi: PAdicPoint, tau: float):
    """R(x,t,xi,tau) = [a0(xi,tau) - a0(x,t)] Z^(alpha) - sum a_k(x,t) Z^(alpha_k) - b(x,t) Z."""
    if not tau < t:
        raise DomainViolation("need tau < t")
    k0 = coeffs.value(coeffs.a0, xi, tau)
    pr = coeffs.params(k0)
    d = _diff(x, xi)
    s = t - tau
    val, err = 0.0, 0.0
    da = k0 - coeffs.value(coeffs.a0, x, t)
    if da:
        kv = apply_f_to_kernel(pr, coeffs.alpha, d, s)
        val, err = val + da * kv.value, err + abs(da) * kv.truncation_error
    for c in coeffs.lower:
        ak = coeffs.value(c.field, x, t)
        if ak:
            kv = apply_f_to_kernel(pr, c.exponent, d, s)
            val, err = val - ak * kv.value, err + abs(ak) * kv.truncation_error
    bx = coeffs.value(coeffs.b, x, t)
    if bx:
        kv = heat_kernel_series(pr, d, s)
        val, err = val - bx * kv.value, err + abs(bx) * kv.truncation_error
    return val, err


def r_majorant(coeffs: CoefficientSet, x: PAdicPoint, t: float, xi: PAdicPoint, tau: float) -> float:
    """sum over k = 1..n+1 of ((t - tau)^{1/(2 alpha)} + ||x - xi||)^{-2 alpha_k - 4}."""
    nrm = float(_diff(x, xi).norm())
    base = (t - tau) ** (1 / (2 * coeffs.alpha)) + nrm
    exps = [c.exponent for c in coeffs.lower] + [coeffs.alpha_next]
    return sum(base ** (-2 * e - 4) for e in exps)


# ---------------------------------------------------------------------------
# skeleton


@dataclass
class Skeleton:
    form: QFormPair
    outer_exp: int
    cell_exp: int
    far_shells: int
    points: list = field(repr=False)
    volumes: np.ndarray = field(repr=False)
    far: list = field(repr=False)  # (j, m) per far cell, None for grid cells
    pair_levels: np.ndarray = field(repr=False)  # |f(x_a - x_c)| where the kernel is constant on cell c

    @property
    def size(self) -> int:
        return len(self.points)

    @property
    def n_grid(self) -> int:
        return sum(1 for f in self.far if f is None)

    def locate(self, x: PAdicPoint) -> int | None:
        """Index of the cell containing x (None beyond the last far shell)."""
        p = self.form.prime
        j = x.norm_exponent()
        if j is None or j <= self.outer_exp:
            K = p ** (self.outer_exp - self.cell_exp)
            n = x.integer_vector(self.outer_exp, self.outer_exp - self.cell_exp)
            return ((n[0] * K + n[1]) * K + n[2]) * K + n[3]
        if j > self.outer_exp + self.far_shells:
            return None
        m = 2 * j - abs_exponent(self.form, x, Side.F)
        return self.n_grid + 2 * (j - self.outer_exp - 1) + m

    def sample(self, step: StepFunction | TimeSource, t: float = 0.0) -> np.ndarray:
        """Values at the cell representatives; the data must be constant on grid cells."""
        if isinstance(step, TimeSource):
            steps = step.steps
        else:
            steps = [step]
        for s in steps:
            l = s.constancy_exp
            if l is not None and l < self.cell_exp:
                raise CosetResolutionTooCoarse(f"data constant only on B_{l}, cells are B_{self.cell_exp}")
        if isinstance(step, TimeSource):
            return np.array([step.at(x, t).real for x in self.points])
        return np.array([step.evaluate(x).real for x in self.points])


def build_skeleton(form: QFormPair, outer_exp: int = 1, cell_exp: int = 0, far_shells: int = 8) -> Skeleton:
    p = form.prime
    if cell_exp >= outer_exp:
        raise DomainViolation("cell radius must be below the outer radius")
    width = outer_exp - cell_exp
    K = p**width
    if K**4 > 6561:
        raise DomainViolation(f"{K ** 4} grid cells is beyond desk scale")
    r = np.arange(K, dtype=np.int64)
    ints = np.array(np.meshgrid(r, r, r, r, indexing="ij")).reshape(4, -1).T
    points = [point_from_integers(tuple(int(v) for v in n), -outer_exp, p) for n in ints]
    vols = [float(p) ** (4 * cell_exp)] * len(points)
    far = [None] * len(points)
    prof = compute_profile(form, Side.F)
    for j in range(outer_exp + 1, outer_exp + far_shells + 1):
        for m in (0, 1):
            points.append(level_representative(p, j, m))
            vols.append(float(prof.volume_float(m, j)))
            far.append((j, m))
    n = len(points)
    ng = len(ints)
    levels = np.zeros((n, n))
    # grid pairs: x_a - x_c = p^{-J} d, level from ord and the primitive part mod p^2
    d = (ints[:, None, :] - ints[None, :, :]) % K
    nz = (d != 0).any(axis=2)
    ordd = np.zeros(d.shape[:2], dtype=np.int64)
    for k in range(1, width):
        ordd = np.where((d % p**k == 0).all(axis=2) & nz, k, ordd)
    prim = d // (p**ordd)[..., None]
    coefs = np.array(form.coefficients(Side.F), dtype=np.int64)
    qv = (((prim % (p * p)) ** 2) * coefs).sum(axis=2) % p
    m = np.where(qv != 0, 0, 1)
    levels[:ng, :ng] = np.where(nz, np.power(float(p), 2.0 * (outer_exp - ordd) - m), 0.0)
    for c in range(ng, n):
        j, mm = far[c]
        levels[:ng, c] = float(p) ** (2 * j - mm)  # kernel seen from inside B_J
        levels[c, :ng] = float(p) ** (2 * j - mm)  # grid cell seen from far away
    return Skeleton(form, outer_exp, cell_exp, far_shells, points, np.array(vols), far, levels)


def cell_matrix(skel: Skeleton, kern) -> np.ndarray:
    """M[a, c, ...] = integral over cell c of the kernel at x_a - eta (shape (N, N) + tshape)."""
    n, ng = skel.size, skel.n_grid
    out = np.zeros((n, n) + kern.tshape)
    lv = skel.pair_levels
    vals_u, inv = np.unique(lv, return_inverse=True)
    inv = inv.reshape(lv.shape)
    pos = vals_u > 0
    table = np.zeros((len(vals_u),) + kern.tshape)
    if pos.any():
        table[pos] = kern.point(vals_u[pos])[0]
    grid_vol = skel.volumes[0]
    # grid -> grid and far -> grid: cell volume times the pointwise kernel
    out[:, :ng] = grid_vol * table[inv[:, :ng]]
    # grid -> far: whole level set seen from inside B_J
    far_vol = skel.volumes[ng:].reshape((1, n - ng) + (1,) * len(kern.tshape))
    out[:ng, ng:] = far_vol * table[inv[:ng, ng:]]
    diag = kern.inside(skel.cell_exp)[0]
    for a in range(ng):
        out[a, a] = diag
    for a in range(ng, n):
        for c in range(ng, n):
            j, m = skel.far[c]
            out[a, c] = _level_functional(kern, skel.form, skel.points[a], j, m)[0]
    return out


# ---------------------------------------------------------------------------
# the Volterra equation on the skeleton


@dataclass
class ParametrixResult:
    coeffs: CoefficientSet
    skeleton: Skeleton
    times: np.ndarray
    zbar: np.ndarray = field(repr=False)  # [i, j, a, c]: Z(t_i - t_j) with kappa = a0(x_c, t_j)
    rbar: np.ndarray = field(repr=False)  # [i, j] for i >= j
    phi: np.ndarray = field(repr=False)
    iterate_norms: list
    w: np.ndarray = field(repr=False)  # Gamma - Z, cell-integrated

    @property
    def step(self) -> float:
        return float(self.times[1] - self.times[0])

    def gamma_bar(self, i: int, j: int) -> np.ndarray:
        return self.zbar[i, j] + self.w[i, j]

    def mass(self, phi0: np.ndarray) -> np.ndarray:
        """Total mass of u(., t_i) for initial cell values phi0 and g = 0."""
        vol = self.skeleton.volumes
        h = self.step
        out = np.empty(len(self.times))
        for i in range(len(self.times)):
            acc = vol * phi0
            if i:
                wts = _trap_weights(0, i) * h
                dens = np.einsum("k,c,kcb->b", wts, vol, self.phi[: i + 1, 0])
                acc = acc + dens * phi0
            out[i] = acc.sum()
        return out


def _trap_weights(j: int, i: int) -> np.ndarray:
    w = np.ones(i - j + 1)
    w[0] = w[-1] = 0.5
    if i == j:
        w[:] = 0.0
    return np.concatenate([np.zeros(j), w])


def _coef_table(coeffs: CoefficientSet, ts: TimeSource | None, skel: Skeleton, times) -> np.ndarray:
    if ts is None:
        return np.zeros((len(times), skel.size))
    return np.array([skel.sample(ts, t) for t in times])


def _kernel_tables(coeffs, skel, lags, kappas):
    """Per distinct kappa: cell matrices of Z, F_alpha and F_alpha_k over all time lags."""
    tables = {}
    for kappa in sorted(set(kappas)):
        pr = coeffs.params(kappa)
        z = cell_matrix(skel, HeatKernel(pr, lags))
        fa = cell_matrix(skel, FamilyKernel(pr, coeffs.alpha, lags))
        fk = [cell_matrix(skel, FamilyKernel(pr, c.exponent, lags)) for c in coeffs.lower]
        tables[kappa] = (z, fa, fk)
    return tables


def build_parametrix(coeffs: CoefficientSet, skel: Skeleton | None = None, q: int = 5, m_max: int = 6) -> ParametrixResult:
    """Tabulate R, its iterates, phi = sum R_m and W = Gamma - Z on the skeleton."""
    if m_max < 1:
        raise DomainViolation("m_max must be at least 1")
    skel = skel or build_skeleton(coeffs.form)
    n_t = 2**q
    times = np.linspace(0.0, coeffs.horizon, n_t + 1)
    h = times[1]
    lags = times.copy()
    A0 = _coef_table(coeffs, coeffs.a0, skel, times)
    AK = [_coef_table(coeffs, c.field, skel, times) for c in coeffs.lower]
    B = _coef_table(coeffs, coeffs.b, skel, times)
    tables = _kernel_tables(coeffs, skel, lags, A0.ravel())
    N = skel.size
    zbar = np.zeros((n_t + 1, n_t + 1, N, N))
    rbar = np.zeros((n_t + 1, n_t + 1, N, N))
    for j in range(n_t + 1):
        kap = A0[j]
        for kappa in set(kap):
            cols = np.nonzero(kap == kappa)[0]
            z, fa, fk = tables[kappa]
            for i in range(j, n_t + 1):
                lag = i - j
                zc = z[:, cols, lag]
                zbar[i, j][:, cols] = zc
                blk = (kappa - A0[i])[:, None] * fa[:, cols, lag]
                for k, f in enumerate(fk):
                    blk -= AK[k][i][:, None] * f[:, cols, lag]
                blk -= B[i][:, None] * zc
                rbar[i, j][:, cols] = blk
    # successive approximations R_{m+1}(t, tau) = int_tau^t R(t, theta) R_m(theta, tau) d theta
    phi = rbar.copy()
    current = rbar
    norms = [_sup_norm(rbar)]
    for m in range(1, m_max):
        nxt = np.zeros_like(rbar)
        for j in range(n_t + 1):
            for i in range(j + 1, n_t + 1):
                wts = _trap_weights(j, i)[j: i + 1] * h
                nxt[i, j] = _weighted_product(wts, rbar[i, j: i + 1], current[j: i + 1, j])
        nrm = _sup_norm(nxt)
        if not np.isfinite(nrm) or nrm > 1e6 * max(norms[0], 1e-300):
            raise IterationDiverged(f"iterate {m + 1} has norm {nrm:.3g}")
        norms.append(nrm)
        phi += nxt
        current = nxt
        if nrm < ITER_TOL:
            break
    # W(t, tau) = int_tau^t Z(t - theta) phi(theta, tau) d theta
    w = np.zeros_like(rbar)
    for j in range(n_t + 1):
        for i in range(j + 1, n_t + 1):
            wts = _trap_weights(j, i)[j: i + 1] * h
            w[i, j] = _weighted_product(wts, zbar[i, j: i + 1], phi[j: i + 1, j])
    return ParametrixResult(coeffs, skel, times, zbar, rbar, phi, norms, w)


def _weighted_product(wts, left, right):
    """sum_k wts[k] left[k] @ right[k] as one matrix product."""
    return np.tensordot(left * wts[:, None, None], right, axes=([0, 2], [0, 1]))


def _sup_norm(arr: np.ndarray) -> float:
    return float(np.max(np.abs(arr).sum(axis=-1))) if arr.size else 0.0


def iterate_decay_factor(coeffs: CoefficientSet, m: int) -> float:
    """Gamma(nu / 2 alpha)^m / Gamma(m nu / 2 alpha), the decay factor of the m-th iterate."""
    e = coeffs.nu / (2 * coeffs.alpha)
    return gamma_fn(e) ** m / gamma_fn(m * e)


def iterate_ratios(res: ParametrixResult) -> list:
    n = res.iterate_norms
    return [b / a if a else 0.0 for a, b in zip(n, n[1:])]


# ---------------------------------------------------------------------------
# Gamma and solutions


def _time_index(res: ParametrixResult, t: float) -> int:
    i = int(round(t / res.step))
    if abs(i * res.step - t) > 1e-9 * max(1.0, t) or not 0 <= i < len(res.times):
        raise DomainViolation(f"t = {t} is not a node of the time grid (step {res.step})")
    return i


def gamma_solution(res: ParametrixResult, x: PAdicPoint, t: float, xi: PAdicPoint, tau: float):
    """Gamma(x, t, xi, tau) = Z(x - xi, t - tau; a0(xi, tau)) + W, W from the cell of (x, xi)."""
    i, j = _time_index(res, t), _time_index(res, tau)
    if not j < i:
        raise DomainViolation("need tau < t")
    z = parametrized_kernel(res.coeffs, x, t, xi, tau)
    a, b = res.skeleton.locate(x), res.skeleton.locate(xi)
    if a is None or b is None:
        return z.value, z.truncation_error
    return z.value + res.w[i, j, a, b] / res.skeleton.volumes[b], z.truncation_error


def cell_solution(res: ParametrixResult, phi0: np.ndarray, g: np.ndarray | None = None) -> np.ndarray:
    """u at every cell representative and node: u[i, a]; g[k, b] are source cell values."""
    n_t = len(res.times) - 1
    h = res.step
    u = np.zeros((n_t + 1, res.skeleton.size))
    u[0] = phi0
    for i in range(1, n_t + 1):
        u[i] = res.gamma_bar(i, 0) @ phi0
        if g is not None:
            wts = _trap_weights(0, i) * h
            for k in range(i + 1):
                if wts[k]:
                    gb = res.gamma_bar(i, k) if k < i else np.eye(res.skeleton.size)
                    u[i] += wts[k] * gb @ g[k]
    return u


@dataclass
class VariableSolution:
    times: np.ndarray
    cells: np.ndarray  # u[i, a]
    rows: list


def solve_variable(coeffs: CoefficientSet, phi0: StepFunction, g: TimeSource | None, eval_points,
                   skel: Skeleton | None = None, q: int = 5, m_max: int = 6, res: ParametrixResult | None = None):
    """u(x, t) = int Gamma phi0 + int int Gamma g on the skeleton; eval points snap to their cell."""
    lam = max([phi0.lam] + ([g.lam] if g is not None else []))
    limit = coeffs.lower[0].exponent if coeffs.lower else coeffs.alpha
    if lam >= limit:
        raise HypothesisViolation(f"need lam < {limit}, got {lam}")
    res = res or build_parametrix(coeffs, skel, q, m_max)
    sk = res.skeleton
    p0 = sk.sample(phi0)
    gv = None if g is None else np.array([sk.sample(g, t) for t in res.times])
    cells = cell_solution(res, p0, gv)
    rows = []
    for x, t in eval_points:
        i = _time_index(res, t)
        a = sk.locate(x)
        rows.append((x, t, 0.0 if a is None else cells[i, a]))
    return VariableSolution(res.times, cells, rows)


# ---------------------------------------------------------------------------
# independent reference: the semi-discrete system on the same cells


def operator_matrices(coeffs: CoefficientSet, skel: Skeleton):
    """Cell matrices of f(d, gamma) for gamma = alpha and each alpha_k."""
    fa = cell_matrix(skel, OperatorKernel(coeffs.form, coeffs.alpha))[..., 0]
    fk = [cell_matrix(skel, OperatorKernel(coeffs.form, c.exponent))[..., 0] for c in coeffs.lower]
    return fa, fk


def _sampler(skel: Skeleton, ts: TimeSource | None):
    """t -> cell values of a time-indexed step function, tabulated once per node."""
    if ts is None:
        zero = np.zeros(skel.size)
        return lambda t: zero
    table = [skel.sample(s) for s in ts.steps]
    nodes = np.asarray(ts.nodes)

    def at(t):
        k = max(int(np.searchsorted(nodes, t, side="right")) - 1, 0)
        if ts.interpolate and k + 1 < len(nodes):
            w = (t - nodes[k]) / (nodes[k + 1] - nodes[k])
            return (1 - w) * table[k] + w * table[k + 1]
        return table[k]

    return at


def ode_reference(coeffs: CoefficientSet, skel: Skeleton, phi0: np.ndarray, times, g=None, rtol: float = 1e-10):
    """du/dt = -A(t) u + g(t) with A = diag(a0) F_alpha + sum diag(a_k) F_alpha_k + diag(b)."""
    fa, fk = operator_matrices(coeffs, skel)
    a0 = _sampler(skel, coeffs.a0)
    ak = [_sampler(skel, c.field) for c in coeffs.lower]
    bb = _sampler(skel, coeffs.b)
    gg = _sampler(skel, g)

    def rhs(t, u):
        out = -(a0(t)[:, None] * fa) @ u
        for s, f in zip(ak, fk):
            out -= (s(t)[:, None] * f) @ u
        return out - bb(t) * u + gg(t)

    sol = solve_ivp(rhs, (0.0, float(times[-1])), phi0, t_eval=times, rtol=rtol, atol=1e-13, method="DOP853")
    return sol.y.T


def frozen_drift_constant(coeffs: CoefficientSet, skel: Skeleton, t_values) -> float:
    """sup over (t, cell) of |sum_c integral over c of dZ/dt(x_a - eta, t; a0(eta))| on a grid."""
    A0 = skel.sample(coeffs.a0, 0.0)
    worst = 0.0
    for kappa in set(A0):
        cols = np.nonzero(A0 == kappa)[0]
        fa = cell_matrix(skel, FamilyKernel(coeffs.params(kappa), coeffs.alpha, np.asarray(t_values)))
        worst = max(worst, float(np.max(np.abs(kappa * fa[:, cols].sum(axis=1)))))
    return worst
