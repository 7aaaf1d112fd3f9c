"""Spike-time perturbation tapes and gradient-descent weight updates.

Every emitted spike gets a tape: the partial derivatives of its emission
time with respect to each live ledger entry's weight and arrival time. The
denominator of all partials is the rate of rise of the membrane potential at
the crossing. Recursive terms thread through the after-hyperpolarization:
shifting an earlier spike shifts its AHP, which shifts later spikes.

Coordinate convention: tapes differentiate *emission times* (wall clock).
The disparity functional differentiates spike *ages*, which run opposite to
wall time, so its gradient is negated exactly once, at the boundary where
the two meet (``error_grads_emission``). The descent-direction oracle guards
this sign.
"""

from dataclasses import dataclass

import math
import numpy as np

from .error import clamp_ages, error_grad_vector
from .kernels import EPSILON_MS, ImpactParams, _expz


@dataclass(frozen=True)
class LearnConfig:
    """Gradient-descent parameters for one learning network."""

    mu: float = 0.01
    cap: float = 0.05
    update_delay: float = 0.1

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("mu must be > 0")
        if not self.cap > 0:
            raise ValueError("cap must be > 0")
        if self.update_delay < 0:
            raise ValueError("update_delay must be >= 0")


@dataclass(frozen=True)
class SpikeTape:
    """Read-only view of one spike's stored partials, keyed (synapse, entry seq)."""

    neuron: int
    time: float
    denom: float
    flagged: bool
    dw: dict
    dt: dict


def _entry_kernel_terms(nrn, s):
    """Signed PSP values and slopes of the live ledger at emission time s."""
    sl = slice(nrn.e0, nrn.e1)
    ages = s - nrn.en_arr[sl]
    tp = ages - nrn.ek_delay[sl]
    ok = (tp > 0) & (ages <= nrn.cfg.upsilon)
    tps = np.where(ok, tp, 1.0)
    core = nrn.ek_snorm[sl] / np.sqrt(tps) * _expz(
        -nrn.ek_ba2[sl] / tps - tps * nrn.ek_itau[sl]
    )
    xi = np.where(ok, core, 0.0)
    slope = np.where(ok, core * (-0.5 / tps + nrn.ek_ba2[sl] / tps**2
                                 - nrn.ek_itau[sl]), 0.0)
    return xi, slope


def _ahp_slope_terms(nrn, s):
    """AHP slopes of prior efferent spikes at emission time s."""
    sl = slice(nrn.s0, nrn.s1)
    sa = s - nrn.sp_time[sl]
    ok = (sa > 0) & (sa <= nrn.cfg.upsilon)
    return np.where(ok, nrn.ahp_a / nrn.ahp_tau * _expz(-np.where(ok, sa, 1.0) / nrn.ahp_tau), 0.0)


def record_tape(nrn, s):
    """Compute and store the tape row for a spike about to be emitted at s.

    Must run before the spike itself is appended: the recursive sums read
    only earlier same-neuron spikes. Near-singular denominators (grazing
    crossings) are flagged and the partials clamped so a later capped update
    stays finite.
    """
    nrn._ensure_spikes(1)
    xi, slope = _entry_kernel_terms(nrn, s)
    etap = _ahp_slope_terms(nrn, s)
    sl = slice(nrn.e0, nrn.e1)
    denom = float((nrn.en_w[sl] * slope).sum() + etap.sum())
    floor = nrn.cfg.denom_floor
    flagged = abs(denom) < floor
    d_safe = denom if not flagged else math.copysign(floor, denom if denom != 0 else 1.0)
    if nrn.s1 > nrn.s0:
        rec_dw = etap @ nrn.tp_dw[nrn.s0:nrn.s1, sl]
        rec_dt = etap @ nrn.tp_dt[nrn.s0:nrn.s1, sl]
    else:
        rec_dw = 0.0
        rec_dt = 0.0
    dw_row = (-xi + rec_dw) / d_safe
    dt_row = (nrn.en_w[sl] * slope + rec_dt) / d_safe
    if flagged:
        lim = 1.0 / floor
        np.clip(dw_row, -lim, lim, out=dw_row)
        np.clip(dt_row, -lim, lim, out=dt_row)
    r = nrn.s1
    nrn.tp_dw[r, sl] = dw_row
    nrn.tp_dt[r, sl] = dt_row
    nrn.sp_denom[r] = denom
    nrn.sp_flag[r] = flagged


def approx_partials(nrn, s):
    """Tape partials with all AHP terms dropped (moderate-rate shortcut).

    Returns (dw_row, dt_row, denom) over the live ledger; diagnostic for how
    much the recursive AHP terms matter. Exact for a neuron's first spike.
    """
    xi, slope = _entry_kernel_terms(nrn, s)
    sl = slice(nrn.e0, nrn.e1)
    denom = float((nrn.en_w[sl] * slope).sum())
    floor = nrn.cfg.denom_floor
    d_safe = denom if abs(denom) >= floor else math.copysign(floor, denom if denom != 0 else 1.0)
    return -xi / d_safe, nrn.en_w[sl] * slope / d_safe, denom


def tape_view(nrn, live_row):
    """SpikeTape for the live_row-th in-window spike of a neuron."""
    r = nrn.s0 + live_row
    if not nrn.s0 <= r < nrn.s1:
        raise IndexError("no such in-window spike")
    s = float(nrn.sp_time[r])
    sl = slice(nrn.e0, nrn.e1)
    ok = (nrn.en_arr[sl] <= s) & (s - nrn.en_arr[sl] <= nrn.cfg.upsilon)
    keys = list(zip(nrn.en_syn[sl][ok].tolist(), nrn.en_seq[sl][ok].tolist()))
    dw = dict(zip(keys, nrn.tp_dw[r, sl][ok].tolist()))
    dt = dict(zip(keys, nrn.tp_dt[r, sl][ok].tolist()))
    return SpikeTape(nrn.idx, s, float(nrn.sp_denom[r]), bool(nrn.sp_flag[r]), dw, dt)


def error_grads_emission(desired_ages, output_ages, T: ImpactParams):
    """Disparity gradient per output spike, in emission-time coordinates.

    This is the single age-to-wall-time sign conversion. Output spikes whose
    age sits at the clamp floor get zero gradient: their timing is below
    resolution at this update instant.
    """
    ages = np.asarray(output_ages, dtype=np.float64)
    g = -error_grad_vector(desired_ages, ages, T)
    g[ages < EPSILON_MS] = 0.0
    return g


def backprop_spike_grads(net, desired_times, u, T: ImpactParams):
    """Propagate the disparity gradient through the spike DAG at update time u.

    Returns (g_spike, g_entry): per neuron, the gradient of the disparity
    with respect to each live spike's emission time, and with respect to each
    live ledger entry's weight. Entries and spikes outside the history window
    at u contribute nothing.
    """
    ups = net.cfg.upsilon
    g_spike = []
    g_entry = []
    for nrn in net.neurons:
        g_spike.append(np.zeros(nrn.s1 - nrn.s0))
        g_entry.append(np.zeros(nrn.e1 - nrn.e0))

    out = net.output_neuron
    out_times = out.sp_time[out.s0:out.s1]
    row_ok = (u - out_times) <= ups
    ages = np.maximum(u - out_times, 0.0)
    d_ages = clamp_ages([u - t for t in desired_times if 0.0 <= u - t <= ups])
    if len(out_times):
        g = error_grads_emission(d_ages, ages, T)
        g[~row_ok] = 0.0
        g_spike[out.idx] = g

    for nrn in reversed(net.neurons):
        g = g_spike[nrn.idx]
        if not g.size or not np.any(g):
            continue
        sl = slice(nrn.e0, nrn.e1)
        col_ok = (u - nrn.en_arr[sl]) <= ups
        if nrn.tp_dw is None:
            raise RuntimeError("network was built without tapes")
        gamma = g @ nrn.tp_dw[nrn.s0:nrn.s1, sl]
        gamma[~col_ok] = 0.0
        g_entry[nrn.idx] = gamma
        srcn = nrn.en_srcn[sl]
        if np.any(srcn >= 0):
            g_dt = g @ nrn.tp_dt[nrn.s0:nrn.s1, sl]
            for h in np.unique(srcn[srcn >= 0]):
                src = net.neurons[h]
                cols = np.nonzero((srcn == h) & col_ok)[0]
                rows = nrn.en_srcseq[sl][cols] - src.sp_seq[src.s0]
                np.add.at(g_spike[h], rows, g_dt[cols])
    return g_spike, g_entry


def weight_gradients(net, desired_times, u, T: ImpactParams):
    """Per-synapse disparity gradients: entry gradients summed per synapse."""
    _, g_entry = backprop_spike_grads(net, desired_times, u, T)
    grads = []
    for nrn, gamma in zip(net.neurons, g_entry):
        if gamma.size:
            grads.append(np.bincount(nrn.en_syn[nrn.e0:nrn.e1], weights=gamma,
                                     minlength=nrn.n_syn))
        else:
            grads.append(np.zeros(nrn.n_syn))
    return grads


def _entry_grad_map(net, neuron_idx, desired_times, u, T):
    _, g_entry = backprop_spike_grads(net, desired_times, u, T)
    nrn = net.neurons[neuron_idx]
    sl = slice(nrn.e0, nrn.e1)
    keys = zip(nrn.en_syn[sl].tolist(), nrn.en_seq[sl].tolist())
    return dict(zip(keys, g_entry[neuron_idx].tolist()))


def output_weight_grads(net, desired_times, u, T: ImpactParams):
    """Disparity gradient per (synapse, entry) of the output neuron."""
    return _entry_grad_map(net, net.topology.output_index, desired_times, u, T)


def intermediate_weight_grads(net, neuron_idx, desired_times, u, T: ImpactParams):
    """Disparity gradient per (synapse, entry) of an intermediate neuron.

    Composes the output neuron's arrival-time partials with the intermediate
    tapes along the causal DAG; works for any depth of feedforward stack.
    """
    if neuron_idx == net.topology.output_index:
        raise ValueError("use output_weight_grads for the output neuron")
    return _entry_grad_map(net, neuron_idx, desired_times, u, T)


def apply_update(net, grads, cfg: LearnConfig):
    """One delayed, capped gradient-descent step on the whole network.

    Stacks all per-synapse deltas into a single vector; if its Euclidean
    length exceeds the cap the vector is rescaled (direction preserved).
    Non-finite gradients abort the step with weights untouched.
    """
    flat = np.concatenate([np.asarray(g, dtype=np.float64) for g in grads])
    raw_norm = float(np.sqrt(np.sum(flat**2))) if np.all(np.isfinite(flat)) else float("nan")
    if not np.isfinite(raw_norm):
        return {"aborted": True, "raw_grad_norm": raw_norm, "applied_norm": 0.0,
                "capped": False, "deltas": None}
    delta = -cfg.mu * flat
    norm = float(np.linalg.norm(delta))
    capped = norm > cfg.cap
    if capped:
        delta *= cfg.cap / norm
    pos = 0
    deltas = []
    w_min = net.cfg.w_min
    for nrn in net.neurons:
        d = delta[pos:pos + nrn.n_syn]
        pos += nrn.n_syn
        nrn.weights[:] = np.maximum(nrn.weights + d, w_min)
        deltas.append(d.copy())
    return {"aborted": False, "raw_grad_norm": raw_norm,
            "applied_norm": float(np.linalg.norm(delta)), "capped": capped,
            "deltas": deltas}
