"""Sampling the process whose transition density is Z(x, t).

Increments are drawn shell by shell: the pair (j, m) of
||X|| = p^j, |f(X)| = p^{2j-m} by inverse CDF over a :class:`RadialLaw`, then
X = p^{-j} u with u uniform among primitive digit vectors of length D whose
quadratic form has p-order m.  Every random number is a pure function of
(seed, path, step, counter), so ensembles do not depend on scheduling.

Positions are exact integer digit vectors X = p^{-E} N, N mod p^K, with a
common exponent E that only grows; the K coarsest digits are kept.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import _accel
from .errors import DomainViolation, RejectionBudgetExceeded
from .kernel import KernelParams, kernel_upper_bound, kernel_values
from .qform import Side
from .radial import compute_profile

DIGITS = 12
MAX_ATTEMPTS = None  # None: sized from the acceptance rate
CORE = -1  # m value used for the lumped central ball


@dataclass(frozen=True)
class RadialLaw:
    """P(||X|| = p^j, |f(X)| = p^{2j-m}) for X with density Z(., t).

    Entry ``m = CORE`` is the whole ball ||X|| <= p^j (the mass not resolved
    into shells); ``tail_mass`` bounds the mass beyond the last shell.
    """

    params: KernelParams
    t: float
    j: np.ndarray
    m: np.ndarray
    probs: np.ndarray
    tail_mass: float
    mass_error: float

    @property
    def prime(self) -> int:
        return self.params.prime

    @property
    def cdf(self) -> np.ndarray:
        c = np.cumsum(self.probs)
        return c / c[-1]

    def table(self) -> dict:
        return {(int(j), int(m)): float(q) for j, m, q in zip(self.j, self.m, self.probs)}

    def norm_cdf(self, j: int) -> float:
        """P(||X|| <= p^j)."""
        return float(self.probs[self.j <= j].sum())


def build_radial_law(params: KernelParams, t: float, eps: float = 1e-12) -> RadialLaw:
    if t <= 0 or eps <= 0:
        raise DomainViolation("need t > 0 and eps > 0")
    p, a = params.prime, params.alpha
    prof = compute_profile(params.form, Side.F)
    # natural scale: |f| ~ (kappa t)^{1/alpha}
    j0 = int(round(math.log(params.kappa * t) / (2 * a * math.log(p))))
    # inner cut: Z <= Z(0) there, so the ball mass is at most Z(0) p^{4 j}
    z0 = float(kernel_values(params, np.array([0.0]), t)[0][0])
    lo = j0
    while z0 * float(p) ** (4 * lo) > eps / 2:
        lo -= 1
    hi = j0
    while True:
        js = np.arange(hi + 1, hi + 41)
        tail = 0.0
        for mm in (0, 1):
            lv = np.power(float(p), 2.0 * js - mm)
            tail += float(np.sum(prof.volume_float(mm, js) * kernel_upper_bound(params, lv, t)))
        if tail < eps / 2:
            break
        hi += 1
    # last 40 shells bounded explicitly; beyond them a geometric remainder
    q = float(p) ** (-2 * a)
    tail *= 1 + q**40 / (1 - q)
    j, m, lv, vol = prof.levels(lo + 1, hi)
    z, zerr = kernel_values(params, lv, t)
    shell_p = vol * z
    # central ball: its own shells down to where Z(0) p^{4j} is negligible
    cj, cm, clv, cvol = prof.levels(lo - 30, lo)
    cz, czerr = kernel_values(params, clv, t)
    core = float(np.sum(cvol * cz)) + z0 * float(p) ** (4 * (lo - 30))
    err = float(np.sum(vol * zerr) + np.sum(cvol * czerr))
    j = np.concatenate([[lo], j])
    m = np.concatenate([[CORE], m])
    probs = np.concatenate([[core], shell_p])
    if np.any(probs < -err - 1e-300):
        raise DomainViolation("negative shell probability")
    # the mass identity gives the deficit; it has to agree with the tail bound
    err = max(err, abs(1.0 - probs.sum() - min(tail, 1.0 - probs.sum())))
    return RadialLaw(params, t, j.astype(np.int64), m.astype(np.int64), np.maximum(probs, 0.0), tail, err)


# ---------------------------------------------------------------------------
# sampling


def _keep_digits(p: int) -> int:
    """Largest K with 2 p^K < 2^63."""
    return int(math.floor(62 * math.log(2) / math.log(p) - 1e-12))


def attempt_budget(p: int, miss: float = 1e-15) -> int:
    """Attempts so that one draw fails with probability below ``miss``.

    A uniform vector of the unit sphere lands on the rarer level with
    probability (p^-2 - p^-4) / (1 - p^-4).
    """
    acc = (p**-2 - p**-4) / (1 - p**-4)
    return int(math.ceil(math.log(miss) / math.log1p(-acc)))


def _select_shells(law: RadialLaw, seed: int, paths: np.ndarray, step: int) -> np.ndarray:
    u = _accel.bits_to_unit(_accel.counter_bits_numpy(seed, paths, step, np.zeros(len(paths), dtype=np.uint64)))
    idx = np.searchsorted(law.cdf, u, side="right")
    return np.minimum(idx, len(law.probs) - 1)


def sample_digits(law: RadialLaw, seed: int, paths, step: int, digits: int = DIGITS):
    """Shell index and digit vector u (X = p^{-j} u) for each path id."""
    paths = np.asarray(paths, dtype=np.uint64)
    p = law.prime
    idx = _select_shells(law, seed, paths, step)
    m = law.m[idx]
    u = np.zeros((len(paths), 4), dtype=np.int64)
    core = m == CORE
    if core.any():
        mod = np.uint64(p**digits)
        for i in range(4):
            ctr = np.full(int(core.sum()), 1 + i, dtype=np.uint64)
            u[core, i] = (_accel.counter_bits_numpy(seed, paths[core], step, ctr) % mod).astype(np.int64)
    shell = ~core
    if shell.any():
        coefs = law.params.form.coefficients(Side.F)
        budget = MAX_ATTEMPTS or attempt_budget(p)
        got, _, ok = _accel.sample_level_digits(seed, paths[shell], step, m[shell], coefs, p, digits, budget)
        if not ok:
            raise RejectionBudgetExceeded(f"no acceptance within {budget} attempts")
        u[shell] = got
    return idx, u


def sample_increment(law: RadialLaw, seed: int, path: int = 0, step: int = 0):
    """One increment as a point of Q_p^4."""
    from .padic import point_from_integers

    idx, u = sample_digits(law, seed, [path], step)
    return point_from_integers(tuple(int(v) for v in u[0]), -int(law.j[idx[0]]), law.prime, DIGITS)


def _shell_of(N: np.ndarray, E: int, p: int, coefs) -> tuple[np.ndarray, np.ndarray]:
    """(j, m) of X = p^{-E} N per row; j = None-like sentinel for N = 0."""
    n = N.shape[0]
    v = np.full(n, -1, dtype=np.int64)
    work = N.copy()
    zero = ~(work != 0).any(axis=1)
    k = 0
    undecided = ~zero
    while undecided.any():
        div = (work[undecided] % p == 0).all(axis=1)
        ids = np.nonzero(undecided)[0]
        v[ids[~div]] = k
        work[ids[div]] //= p
        undecided[ids[~div]] = False
        k += 1
    prim = N // np.power(p, np.maximum(v, 0))[:, None].astype(np.int64)
    p2 = p * p
    w = prim % p2
    val = (w * w % p2 * np.asarray(coefs, dtype=np.int64)[None, :]).sum(axis=1) % p
    m = np.where(val != 0, 0, 1)
    j = E - v
    j[zero] = np.iinfo(np.int64).min
    return j, m


@dataclass
class Ensemble:
    """Positions X_k = p^{-E_k} N_k at times k T / steps (k = 0..steps)."""

    params: KernelParams
    times: np.ndarray
    seed: int
    exponents: list
    numerators: list = field(repr=False)
    increment_shells: np.ndarray = field(repr=False)  # law index per (path, step)

    @property
    def n_paths(self) -> int:
        return self.numerators[0].shape[0]

    def shells(self, k: int):
        return _shell_of(self.numerators[k], self.exponents[k], self.params.prime,
                         self.params.form.coefficients(Side.F))

    def trajectory(self, i: int) -> "Trajectory":
        from .padic import point_from_integers

        p = self.params.prime
        pts = [point_from_integers(tuple(int(v) for v in N[i]), -E, p, _keep_digits(p))
               for N, E in zip(self.numerators, self.exponents)]
        return Trajectory(self.times, pts, self.seed)


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    points: list
    seed: int


def _default_threads() -> int:
    env = os.environ.get("PADIC_HEAT_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def simulate(params: KernelParams, T: float, steps: int, n_paths: int, seed: int,
             threads: int | None = None, eps: float = 1e-12, chunk: int = 20000) -> Ensemble:
    if steps < 1:
        raise DomainViolation("steps must be at least 1")
    if n_paths < 1:
        raise DomainViolation("need at least one path")
    if T <= 0:
        raise DomainViolation("T must be positive")
    threads = threads or _default_threads()
    p = params.prime
    K = _keep_digits(p)
    modK = p**K
    law = build_radial_law(params, T / steps, eps)
    ids = np.arange(n_paths, dtype=np.uint64)
    chunks = [ids[i: i + chunk] for i in range(0, n_paths, chunk)]
    shells = np.zeros((n_paths, steps), dtype=np.int64)
    incs = []
    for s in range(steps):
        if threads > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(threads) as pool:
                parts = list(pool.map(lambda c: sample_digits(law, seed, c, s), chunks))
        else:
            parts = [sample_digits(law, seed, c, s) for c in chunks]
        idx = np.concatenate([a for a, _ in parts])
        u = np.concatenate([b for _, b in parts])
        shells[:, s] = idx
        incs.append((law.j[idx], u))
    # accumulate with a common exponent
    E = int(law.j.min())
    N = np.zeros((n_paths, 4), dtype=np.int64)
    exps, nums = [E], [N.copy()]
    for jv, u in incs:
        newE = max(E, int(jv.max()))
        N = _rescale(N, newE - E, p, K)
        E = newE
        shift = E - jv  # increment p^{-j} u = p^{-E} p^{E-j} u
        N = (N + _scaled(u, shift, p, K)) % modK
        exps.append(E)
        nums.append(N.copy())
    times = np.linspace(0.0, T, steps + 1)
    return Ensemble(params, times, seed, exps, nums, shells)


def _rescale(N: np.ndarray, d: int, p: int, K: int) -> np.ndarray:
    """p^d N mod p^K without overflow."""
    if d == 0:
        return N
    if d >= K:
        return np.zeros_like(N)
    return (N % p ** (K - d)) * p**d


def _scaled(u: np.ndarray, shift: np.ndarray, p: int, K: int) -> np.ndarray:
    out = np.zeros_like(u)
    ok = shift < K
    for s in np.unique(shift[ok]):
        rows = shift == s
        out[rows] = (u[rows] % p ** (K - s)) * p**s
    return out


# ---------------------------------------------------------------------------
# statistics


def _merge_bins(observed: np.ndarray, expected: np.ndarray, minimum: float = 5.0):
    """Merge adjacent bins until each expected count reaches ``minimum``."""
    obs, exp = [], []
    o_acc = e_acc = 0.0
    for o, e in zip(observed, expected):
        o_acc += o
        e_acc += e
        if e_acc >= minimum:
            obs.append(o_acc)
            exp.append(e_acc)
            o_acc = e_acc = 0.0
    if e_acc > 0 or o_acc > 0:
        if exp:
            obs[-1] += o_acc
            exp[-1] += e_acc
        else:
            obs.append(o_acc)
            exp.append(e_acc)
    return np.array(obs), np.array(exp)


def shell_histogram(law: RadialLaw, j: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Counts per law entry; points inside the core ball land on the core entry."""
    core_j = law.j[0]
    counts = np.zeros(len(law.probs))
    lookup = {(int(a), int(b)): i for i, (a, b) in enumerate(zip(law.j, law.m)) if b != CORE}
    inner = j <= core_j
    counts[0] += inner.sum()
    beyond = 0
    for (a, b), c in zip(*np.unique(np.stack([j[~inner], m[~inner]], axis=1), axis=0, return_counts=True)):
        i = lookup.get((int(a), int(b)))
        if i is None:
            beyond += c
        else:
            counts[i] += c
    counts[-1] += beyond  # mass past the table is merged with the last shell
    return counts


def chi_square(law: RadialLaw, j: np.ndarray, m: np.ndarray):
    """Pearson chi-square of observed shells against the law (merged bins); returns (stat, p-value)."""
    counts = shell_histogram(law, j, m)
    n = counts.sum()
    obs, exp = _merge_bins(counts, law.probs / law.probs.sum() * n)
    if len(obs) < 2:
        return 0.0, 1.0
    res = stats.chisquare(obs, exp * obs.sum() / exp.sum())
    return float(res.statistic), float(res.pvalue)


def increment_independence(ens: Ensemble, k: int = 0):
    """Contingency test between the shells of increments k and k + 1 (p-value)."""
    a, b = ens.increment_shells[:, k], ens.increment_shells[:, k + 1]
    ua, ia = np.unique(a, return_inverse=True)
    ub, ib = np.unique(b, return_inverse=True)
    table = np.zeros((len(ua), len(ub)))
    np.add.at(table, (ia, ib), 1)
    # merge sparse rows / columns into their neighbours
    table = _merge_axis(_merge_axis(table, 0), 1)
    if min(table.shape) < 2:
        return 1.0
    return float(stats.chi2_contingency(table)[1])


def _merge_axis(table: np.ndarray, axis: int, minimum: float = 50.0) -> np.ndarray:
    t = np.moveaxis(table, axis, 0)
    rows, acc = [], np.zeros(t.shape[1])
    for r in t:
        acc = acc + r
        if acc.sum() >= minimum:
            rows.append(acc)
            acc = np.zeros(t.shape[1])
    if acc.sum() > 0:
        if rows:
            rows[-1] = rows[-1] + acc
        else:
            rows.append(acc)
    return np.moveaxis(np.array(rows), 0, axis)


def digit_uniformity(u: np.ndarray, p: int, position: int = 1) -> float:
    """Chi-square p-value of the digit at ``position`` over all four coordinates."""
    d = (u // p**position) % p
    counts = np.bincount(d.ravel(), minlength=p)
    return float(stats.chisquare(counts).pvalue)


def two_sample_shells(a: tuple, b: tuple) -> float:
    """Contingency p-value that two (j, m) samples share one shell law."""
    keys = sorted(set(zip(*a)) | set(zip(*b)))
    pos = {k: i for i, k in enumerate(keys)}
    table = np.zeros((2, len(keys)))
    for row, (j, m) in enumerate((a, b)):
        np.add.at(table[row], [pos[k] for k in zip(j, m)], 1)
    table = _merge_axis(table, 1)
    if table.shape[1] < 2:
        return 1.0
    return float(stats.chi2_contingency(table)[1])


def shell_report(law: RadialLaw, ens: Ensemble) -> list[dict]:
    """Per step and shell: observed count, expected count and z-score."""
    rows = []
    n = ens.n_paths
    for k in range(1, len(ens.times)):
        ref = build_radial_law(law.params, float(ens.times[k]), law.tail_mass + law.mass_error + 1e-12)
        counts = shell_histogram(ref, *ens.shells(k))
        q = ref.probs / ref.probs.sum()
        for jj, mm, c, qq in zip(ref.j, ref.m, counts, q):
            sd = math.sqrt(n * qq * (1 - qq)) or 1.0
            rows.append({"step": k, "t": float(ens.times[k]), "j": int(jj), "m": int(mm),
                         "observed": int(c), "expected": n * qq, "z": (c - n * qq) / sd})
    return rows
