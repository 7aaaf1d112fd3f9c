"""JIT-compiled membrane-potential evaluators with a numpy fallback.

The simulator spends nearly all its time summing kernel contributions over
(grid time, ledger entry) pairs; these loops have no tails to vectorize
away, so they are compiled. Semantics match the numpy fallback: entries
contribute only while their age is positive and within the history window,
and exponents below -700 are treated as zero.
"""

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is normally available
    HAVE_NUMBA = False

    def njit(*a, **k):
        def deco(fn):
            return fn
        return deco


@njit(cache=True)
def psp_sum_grid(k_lo, n, dt, arr, coef, ba2, itau, dly, ups, out):
    """Sum PSP contributions at grid times (k_lo + 1 + i) * dt, i in [0, n)."""
    t0 = (k_lo + 1) * dt
    for e in range(arr.size):
        onset = arr[e] + dly[e]
        i_a = int(np.floor((onset - t0) / dt)) + 1
        if i_a < 0:
            i_a = 0
        i_b = int(np.floor((arr[e] + ups - t0) / dt))
        if i_b > n - 1:
            i_b = n - 1
        c = coef[e]
        b = ba2[e]
        it = itau[e]
        a0 = arr[e]
        d0 = dly[e]
        for i in range(i_a, i_b + 1):
            t = (k_lo + 1 + i) * dt
            age = t - a0
            if age > ups:
                continue
            tp = age - d0
            if tp <= 0.0:
                continue
            ex = -b / tp - tp * it
            if ex < -700.0:
                continue
            out[i] += c / np.sqrt(tp) * np.exp(ex)


@njit(cache=True)
def ahp_sum_grid(k_lo, n, dt, sp, amp, itau2, ups, out):
    t0 = (k_lo + 1) * dt
    for e in range(sp.size):
        i_a = int(np.floor((sp[e] - t0) / dt)) + 1
        if i_a < 0:
            i_a = 0
        i_b = int(np.floor((sp[e] + ups - t0) / dt))
        if i_b > n - 1:
            i_b = n - 1
        s0 = sp[e]
        for i in range(i_a, i_b + 1):
            t = (k_lo + 1 + i) * dt
            age = t - s0
            if age <= 0.0 or age > ups:
                continue
            ex = -age * itau2
            if ex < -700.0:
                continue
            out[i] -= amp * np.exp(ex)


@njit(cache=True)
def potential_scalar(t, arr, coef, ba2, itau, dly, sp, amp, itau2, ups):
    acc = 0.0
    for e in range(arr.size):
        age = t - arr[e]
        if age > ups:
            continue
        tp = age - dly[e]
        if tp <= 0.0:
            continue
        ex = -ba2[e] / tp - tp * itau[e]
        if ex < -700.0:
            continue
        acc += coef[e] / np.sqrt(tp) * np.exp(ex)
    for e in range(sp.size):
        age = t - sp[e]
        if age <= 0.0 or age > ups:
            continue
        ex = -age * itau2
        if ex >= -700.0:
            acc -= amp * np.exp(ex)
    return acc


def psp_sum_grid_np(k_lo, n, dt, arr, coef, ba2, itau, dly, ups, out):
    times = (np.arange(1, n + 1) + k_lo) * dt
    if arr.size:
        ages = times[:, None] - arr[None, :]
        tp = ages - dly[None, :]
        ok = (tp > 0) & (ages <= ups)
        tps = np.where(ok, tp, 1.0)
        ex = -ba2[None, :] / tps - tps * itau[None, :]
        val = coef[None, :] / np.sqrt(tps) * np.where(ex < -700.0, 0.0,
                                                      np.exp(np.maximum(ex, -745.0)))
        out += np.where(ok, val, 0.0).sum(axis=1)


def ahp_sum_grid_np(k_lo, n, dt, sp, amp, itau2, ups, out):
    times = (np.arange(1, n + 1) + k_lo) * dt
    if sp.size:
        sa = times[:, None] - sp[None, :]
        ok = (sa > 0) & (sa <= ups)
        out -= amp * np.where(ok, np.exp(-np.where(ok, sa, 1.0) * itau2), 0.0).sum(axis=1)


def potential_scalar_np(t, arr, coef, ba2, itau, dly, sp, amp, itau2, ups):
    out = np.zeros(1)
    # single grid point at (0 + 1 + 0) * t == t
    psp_sum_grid_np(0, 1, t, arr, coef, ba2, itau, dly, ups, out)
    ahp_sum_grid_np(0, 1, t, sp, amp, itau2, ups, out)
    return float(out[0])


if not HAVE_NUMBA:  # pragma: no cover
    psp_sum_grid = psp_sum_grid_np
    ahp_sum_grid = ahp_sum_grid_np
    potential_scalar = potential_scalar_np
