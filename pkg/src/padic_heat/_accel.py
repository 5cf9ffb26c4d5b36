"""Hot loops, each in a numba and a plain numpy flavour.

The numba versions are used when numba imports and the environment variable
``PADIC_HEAT_NUMBA`` is not set to ``0``/``false``/``no``.  Both flavours are
importable directly (``*_numpy`` / ``*_numba``) for parity tests and the
benchmark.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    _HAVE_NUMBA = False


def numba_enabled() -> bool:
    flag = os.environ.get("PADIC_HEAT_NUMBA", "1").strip().lower()
    return _HAVE_NUMBA and flag not in ("0", "false", "no", "off")


def _njit(fn):
    if not _HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


# ---------------------------------------------------------------------------
# level-resolved character sums over (Z / P)^4, P = p^L
#
#   sums[v]   = sum over n != 0 with ord_p(Q(n)) = v of exp(2 pi i (n . X) / P)
#   counts[v] = number of such n
#
# Q(n) = sum coefs[i] * n_i^2 is evaluated on the integer representatives.


def _valuation_array(values: np.ndarray, p: int, cap: int) -> np.ndarray:
    out = np.zeros(values.shape, dtype=np.int64)
    work = values.copy()
    live = work != 0
    for _ in range(cap):
        div = live & (work % p == 0)
        if not div.any():
            break
        out[div] += 1
        work[div] //= p
        live = div
    out[values == 0] = cap
    return np.minimum(out, cap)


def level_character_sums_numpy(coefs, shift, p: int, L: int):
    P = p**L
    nlev = 2 * L + 1
    coefs = np.asarray(coefs, dtype=np.int64)
    shift = np.asarray(shift, dtype=np.int64) % P
    sums_re = np.zeros(nlev)
    sums_im = np.zeros(nlev)
    counts = np.zeros(nlev, dtype=np.int64)
    r = np.arange(P, dtype=np.int64)
    n1, n2, n3 = np.meshgrid(r, r, r, indexing="ij")
    n1 = n1.ravel()
    n2 = n2.ravel()
    n3 = n3.ravel()
    tail_val = coefs[1] * n1 * n1 + coefs[2] * n2 * n2 + coefs[3] * n3 * n3
    tail_phase = (n1 * shift[1] + n2 * shift[2] + n3 * shift[3]) % P
    angle = 2.0 * np.pi / P
    for n0 in range(P):
        val = coefs[0] * n0 * n0 + tail_val
        phase = (n0 * shift[0] + tail_phase) % P
        lev = _valuation_array(val, p, nlev - 1)
        if n0 == 0:
            keep = np.ones(val.shape, dtype=bool)
            keep[0] = False
            lev = lev[keep]
            phase = phase[keep]
        ang = angle * phase
        sums_re += np.bincount(lev, weights=np.cos(ang), minlength=nlev)
        sums_im += np.bincount(lev, weights=np.sin(ang), minlength=nlev)
        counts += np.bincount(lev, minlength=nlev)
    return sums_re + 1j * sums_im, counts


@_njit
def _level_sums_kernel(coefs, shift, p, L):
    P = 1
    for _ in range(L):
        P *= p
    nlev = 2 * L + 1
    cos_t = np.empty(P)
    sin_t = np.empty(P)
    for k in range(P):
        cos_t[k] = np.cos(2.0 * np.pi * k / P)
        sin_t[k] = np.sin(2.0 * np.pi * k / P)
    sre = np.zeros(nlev)
    sim = np.zeros(nlev)
    cnt = np.zeros(nlev, dtype=np.int64)
    for n0 in range(P):
        v0 = coefs[0] * n0 * n0
        ph0 = (n0 * shift[0]) % P
        for n1 in range(P):
            v1 = v0 + coefs[1] * n1 * n1
            ph1 = (ph0 + n1 * shift[1]) % P
            for n2 in range(P):
                v2 = v1 + coefs[2] * n2 * n2
                ph2 = (ph1 + n2 * shift[2]) % P
                for n3 in range(P):
                    if n0 == 0 and n1 == 0 and n2 == 0 and n3 == 0:
                        continue
                    val = v2 + coefs[3] * n3 * n3
                    ph = (ph2 + n3 * shift[3]) % P
                    lev = 0
                    if val == 0:
                        lev = nlev - 1
                    else:
                        while val % p == 0 and lev < nlev - 1:
                            val //= p
                            lev += 1
                    sre[lev] += cos_t[ph]
                    sim[lev] += sin_t[ph]
                    cnt[lev] += 1
    return sre, sim, cnt


def level_character_sums_numba(coefs, shift, p: int, L: int):
    P = p**L
    coefs = np.asarray(coefs, dtype=np.int64)
    shift = np.asarray(shift, dtype=np.int64) % P
    sre, sim, cnt = _level_sums_kernel(coefs, shift, p, L)
    return sre + 1j * sim, cnt


def level_character_sums(coefs, shift, p: int, L: int):
    if numba_enabled():
        return level_character_sums_numba(coefs, shift, p, L)
    return level_character_sums_numpy(coefs, shift, p, L)


# ---------------------------------------------------------------------------
# counter based random bits (SplitMix64 finaliser applied to a key chain)

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix_numpy(z):
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def counter_bits_numpy(seed: int, path, step: int, counter) -> np.ndarray:
    """64 random bits for every (seed, path, step, counter) key."""
    with np.errstate(over="ignore"):
        path = np.asarray(path, dtype=np.uint64)
        counter = np.asarray(counter, dtype=np.uint64)
        h = _mix_numpy(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
        h = _mix_numpy(h ^ path)
        h = _mix_numpy(h ^ np.uint64(step))
        return _mix_numpy(h ^ counter)


@_njit
def _mix_nb(z):
    z = z + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@_njit
def _bits_nb(seed, path, step, counter):
    h = _mix_nb(seed)
    h = _mix_nb(h ^ path)
    h = _mix_nb(h ^ step)
    return _mix_nb(h ^ counter)


def bits_to_unit(bits: np.ndarray) -> np.ndarray:
    return (np.asarray(bits, dtype=np.uint64) >> np.uint64(11)).astype(np.float64) * 2.0**-53


# ---------------------------------------------------------------------------
# rejection sampling of primitive digit vectors on a prescribed level
#
# For each path draw u in (Z / p^D)^4, u != 0 mod p, with ord_p Q(u) = level.
# Draw ``a`` of coordinate ``i`` uses counter 1 + 4 a + i (counter 0 is left
# for the caller's shell selection).


def _level_of_digits_numpy(u, coefs, p):
    p2 = p * p
    w = u % p2
    val = (w * w % p2 * coefs[None, :] % p2).sum(axis=1) % p2
    lev = np.where(val % p != 0, 0, np.where(val == 0, 2, 1))
    return lev


def sample_level_digits_numpy(seed, paths, step, levels, coefs, p, D, max_attempts):
    paths = np.asarray(paths, dtype=np.uint64)
    levels = np.asarray(levels, dtype=np.int64)
    coefs = np.asarray(coefs, dtype=np.int64)
    n = paths.shape[0]
    out = np.zeros((n, 4), dtype=np.int64)
    attempts = np.zeros(n, dtype=np.int64)
    pending = np.arange(n)
    mod = np.uint64(p**D)
    for a in range(max_attempts):
        if pending.size == 0:
            break
        u = np.empty((pending.size, 4), dtype=np.int64)
        for i in range(4):
            ctr = np.full(pending.size, 1 + 4 * a + i, dtype=np.uint64)
            u[:, i] = (counter_bits_numpy(seed, paths[pending], step, ctr) % mod).astype(np.int64)
        prim = (u % p != 0).any(axis=1)
        ok = prim & (_level_of_digits_numpy(u, coefs, p) == levels[pending])
        out[pending[ok]] = u[ok]
        attempts[pending] += 1
        pending = pending[~ok]
    return out, attempts, pending.size == 0


@_njit
def _sample_kernel(seed, paths, step, levels, coefs, p, D, max_attempts, out, attempts):
    mod = np.uint64(1)
    for _ in range(D):
        mod *= np.uint64(p)
    p2 = p * p
    done_all = True
    u = np.zeros(4, dtype=np.int64)
    for k in range(paths.shape[0]):
        accepted = False
        for a in range(max_attempts):
            prim = False
            for i in range(4):
                b = _bits_nb(np.uint64(seed), paths[k], np.uint64(step), np.uint64(1 + 4 * a + i))
                u[i] = np.int64(b % mod)
                if u[i] % p != 0:
                    prim = True
            attempts[k] = a + 1
            if not prim:
                continue
            val = 0
            for i in range(4):
                w = u[i] % p2
                val = (val + (w * w % p2) * coefs[i]) % p2
            val = val % p2
            if val < 0:
                val += p2
            if val % p != 0:
                lev = 0
            elif val == 0:
                lev = 2
            else:
                lev = 1
            if lev == levels[k]:
                for i in range(4):
                    out[k, i] = u[i]
                accepted = True
                break
        if not accepted:
            done_all = False
    return done_all


def sample_level_digits_numba(seed, paths, step, levels, coefs, p, D, max_attempts):
    paths = np.asarray(paths, dtype=np.uint64)
    levels = np.asarray(levels, dtype=np.int64)
    coefs = np.asarray(coefs, dtype=np.int64)
    out = np.zeros((paths.shape[0], 4), dtype=np.int64)
    attempts = np.zeros(paths.shape[0], dtype=np.int64)
    ok = _sample_kernel(seed & 0xFFFFFFFFFFFFFFFF, paths, step, levels, coefs, p, D, max_attempts, out, attempts)
    return out, attempts, bool(ok)


def sample_level_digits(seed, paths, step, levels, coefs, p, D, max_attempts):
    if numba_enabled():
        return sample_level_digits_numba(seed, paths, step, levels, coefs, p, D, max_attempts)
    return sample_level_digits_numpy(seed, paths, step, levels, coefs, p, D, max_attempts)
