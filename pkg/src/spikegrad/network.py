"""Feedforward spiking network with fixed-step forward simulation.

Simulation state is kept in absolute time; spike ages are views computed on
demand. Each neuron owns a ledger of afferent spikes (one entry per arrival,
carrying the synapse weight frozen at arrival time) and a list of its own
efferent spikes. Both are pruned once entries age past the history window.

The simulator evaluates membrane potentials on a fixed global grid of step
``dt`` and refines every upward threshold crossing by bisection, so emitted
spike times are accurate to ``crossing_tol`` rather than ``dt``.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from ._fast import ahp_sum_grid, potential_scalar, psp_sum_grid
from .kernels import AhpParams, PspParams, _expz

_NEG_INF = float("-inf")


@dataclass(frozen=True)
class SimConfig:
    """Engine parameters shared by every neuron of a network."""

    dt: float = 0.05
    upsilon: float = 500.0
    crossing_tol: float = 1e-6
    theta: float = 1.0
    refractory: float = 1.0
    w_min: float = 1e-4
    denom_floor: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if not self.upsilon > 0:
            raise ValueError("upsilon must be > 0")
        if not 0 < self.crossing_tol < self.dt:
            raise ValueError("crossing_tol must lie in (0, dt)")
        if not self.theta > 0:
            raise ValueError("theta must be > 0")
        if not self.refractory > 0:
            raise ValueError("refractory must be > 0")


@dataclass(frozen=True)
class SynapseSpec:
    """Where a synapse listens and how its PSP looks."""

    source_kind: str  # "input" or "neuron"
    source_index: int
    params: PspParams

    def __post_init__(self):
        if self.source_kind not in ("input", "neuron"):
            raise ValueError(f"bad source kind {self.source_kind!r}")
        if self.source_index < 0:
            raise ValueError("source index must be >= 0")


@dataclass(frozen=True)
class NeuronSpec:
    synapses: tuple


@dataclass(frozen=True)
class Topology:
    """Strictly layered feedforward wiring with one supervised output neuron.

    Neurons are numbered flat in layer order; synapse sources must be input
    channels or neurons of strictly earlier layers.
    """

    input_channels: int
    layers: tuple
    ahp: AhpParams

    def __post_init__(self):
        if self.input_channels <= 0:
            raise ValueError("need at least one input channel")
        if not self.layers or len(self.layers[-1]) != 1:
            raise ValueError("final layer must contain exactly one output neuron")
        first = 0
        for li, layer in enumerate(self.layers):
            for spec in layer:
                for syn in spec.synapses:
                    if syn.source_kind == "input":
                        if syn.source_index >= self.input_channels:
                            raise ValueError("input source out of range")
                    else:
                        if syn.source_index >= first:
                            raise ValueError(
                                f"layer {li} neuron sources neuron "
                                f"{syn.source_index} from the same or a later layer"
                            )
            first += len(layer)

    @property
    def n_neurons(self):
        return sum(len(layer) for layer in self.layers)

    @property
    def output_index(self):
        return self.n_neurons - 1

    def neuron_specs(self):
        out = []
        for layer_idx, layer in enumerate(self.layers):
            for spec in layer:
                out.append((layer_idx, spec))
        return out


def _grow(arr, n_needed):
    cap = max(2 * len(arr), n_needed, 16)
    out = np.zeros(cap, dtype=arr.dtype)
    out[: len(arr)] = arr
    return out


class _Neuron:
    """Mutable per-neuron simulation state (ledger, efferent spikes, tapes).

    Ledger entries and tape columns share index space; efferent spikes and
    tape rows likewise. Both slide: old items are pruned from the front when
    they age out of the window, and trailing items can be rolled back when a
    block is re-simulated across a weight update.
    """

    def __init__(self, idx, layer, spec: NeuronSpec, weights, cfg: SimConfig,
                 ahp: AhpParams, record_tapes):
        self.idx = idx
        self.layer = layer
        self.cfg = cfg
        self.record_tapes = record_tapes
        n = len(spec.synapses)
        if len(weights) != n:
            raise ValueError("weight count does not match synapse count")
        self.n_syn = n
        self.src_kind = np.array(
            [0 if s.source_kind == "input" else 1 for s in spec.synapses], dtype=np.int64
        )
        self.src_idx = np.array([s.source_index for s in spec.synapses], dtype=np.int64)
        p = [s.params for s in spec.synapses]
        self.syn_alpha = np.array([q.alpha for q in p])
        self.syn_ba2 = np.array([q.beta * q.alpha**2 for q in p])
        self.syn_itau = np.array([1.0 / q.tau1 for q in p])
        self.syn_delay = np.array([q.delay for q in p])
        self.syn_sign = np.array([q.sign for q in p])
        self.weights = np.asarray(weights, dtype=np.float64).copy()
        if np.any(self.weights <= 0):
            raise ValueError("synapse weights must be positive")
        self.ahp_a = ahp.amplitude
        self.ahp_tau = ahp.tau2

        # ledger entry store, live span [e0, e1)
        cap = 64
        self.en_arr = np.zeros(cap)
        self.en_w = np.zeros(cap)
        self.en_syn = np.zeros(cap, dtype=np.int64)
        self.en_srcn = np.zeros(cap, dtype=np.int64)
        self.en_srcseq = np.zeros(cap, dtype=np.int64)
        self.en_seq = np.zeros(cap, dtype=np.int64)
        self.en_ord = np.zeros(cap, dtype=np.int64)  # per-synapse arrival ordinal
        self.syn_arrivals = np.zeros(n, dtype=np.int64)
        self.ek_coef = np.zeros(cap)   # sign * weight / alpha
        self.ek_snorm = np.zeros(cap)  # sign / alpha
        self.ek_ba2 = np.zeros(cap)
        self.ek_itau = np.zeros(cap)
        self.ek_delay = np.zeros(cap)
        self.e0 = self.e1 = 0
        self.entry_counter = 0

        # efferent spikes, live span [s0, s1)
        scap = 32
        self.sp_time = np.zeros(scap)
        self.sp_denom = np.zeros(scap)
        self.sp_flag = np.zeros(scap, dtype=bool)
        self.sp_seq = np.zeros(scap, dtype=np.int64)
        self.s0 = self.s1 = 0
        self.spike_counter = 0

        if record_tapes:
            self.tp_dw = np.zeros((scap, cap))
            self.tp_dt = np.zeros((scap, cap))
        else:
            self.tp_dw = self.tp_dt = None

        self.pulled_seq = np.zeros(n, dtype=np.int64)
        self.last_step = -1
        self.last_P = 0.0
        self.last_spike = _NEG_INF

    # -- capacity management -------------------------------------------------

    def _compact(self):
        ne = self.e1 - self.e0
        ns = self.s1 - self.s0
        for name in ("en_arr", "en_w", "ek_coef", "ek_snorm", "ek_ba2",
                     "ek_itau", "ek_delay"):
            a = getattr(self, name)
            a[:ne] = a[self.e0:self.e1]
        for name in ("en_syn", "en_srcn", "en_srcseq", "en_seq", "en_ord"):
            a = getattr(self, name)
            a[:ne] = a[self.e0:self.e1]
        for name in ("sp_time", "sp_denom", "sp_flag", "sp_seq"):
            a = getattr(self, name)
            a[:ns] = a[self.s0:self.s1]
        if self.record_tapes:
            block_dw = self.tp_dw[self.s0:self.s1, self.e0:self.e1].copy()
            block_dt = self.tp_dt[self.s0:self.s1, self.e0:self.e1].copy()
            self.tp_dw[:ns, :ne] = block_dw
            self.tp_dt[:ns, :ne] = block_dt
        self.e0, self.e1 = 0, ne
        self.s0, self.s1 = 0, ns

    def _ensure_entries(self, n_new):
        if self.e1 + n_new <= len(self.en_arr):
            return
        self._compact()
        if self.e1 + n_new <= len(self.en_arr):
            return
        need = self.e1 + n_new
        for name in ("en_arr", "en_w", "ek_coef", "ek_snorm", "ek_ba2",
                     "ek_itau", "ek_delay", "en_syn", "en_srcn", "en_srcseq",
                     "en_seq", "en_ord"):
            setattr(self, name, _grow(getattr(self, name), need))
        if self.record_tapes:
            cap = len(self.en_arr)
            for name in ("tp_dw", "tp_dt"):
                old = getattr(self, name)
                new = np.zeros((old.shape[0], cap))
                new[:, : old.shape[1]] = old
                setattr(self, name, new)

    def _ensure_spikes(self, n_new=1):
        if self.s1 + n_new <= len(self.sp_time):
            return
        self._compact()
        if self.s1 + n_new <= len(self.sp_time):
            return
        need = self.s1 + n_new
        for name in ("sp_time", "sp_denom", "sp_flag", "sp_seq"):
            setattr(self, name, _grow(getattr(self, name), need))
        if self.record_tapes:
            rcap = len(self.sp_time)
            for name in ("tp_dw", "tp_dt"):
                old = getattr(self, name)
                new = np.zeros((rcap, old.shape[1]))
                new[: old.shape[0], :] = old
                setattr(self, name, new)

    # -- ledger & efferent maintenance ---------------------------------------

    def append_arrivals(self, times, syns, srcn, srcseq, overrides=None):
        """Append a time-sorted batch of afferent arrivals to the ledger.

        Every entry freezes the synapse weight prevailing at its arrival.
        ``overrides`` maps (syn, per-synapse arrival ordinal) to a forced
        per-spike weight (perturbation harness hook).
        """
        k = len(times)
        if k == 0:
            return
        self._ensure_entries(k)
        a, b = self.e1, self.e1 + k
        self.en_arr[a:b] = times
        self.en_syn[a:b] = syns
        self.en_srcn[a:b] = srcn
        self.en_srcseq[a:b] = srcseq
        self.en_seq[a:b] = np.arange(self.entry_counter, self.entry_counter + k)
        self.entry_counter += k
        ords = np.empty(k, dtype=np.int64)
        for s in np.unique(syns):
            m = syns == s
            cnt = int(m.sum())
            ords[m] = np.arange(self.syn_arrivals[s], self.syn_arrivals[s] + cnt)
            self.syn_arrivals[s] += cnt
        self.en_ord[a:b] = ords
        w = self.weights[syns].copy()
        if overrides:
            for pos in range(k):
                key = (int(syns[pos]), int(ords[pos]))
                if key in overrides:
                    w[pos] = overrides[key]
        self.en_w[a:b] = w
        self.ek_snorm[a:b] = self.syn_sign[syns] / self.syn_alpha[syns]
        self.ek_coef[a:b] = w * self.ek_snorm[a:b]
        self.ek_ba2[a:b] = self.syn_ba2[syns]
        self.ek_itau[a:b] = self.syn_itau[syns]
        self.ek_delay[a:b] = self.syn_delay[syns]
        if self.record_tapes:
            self.tp_dw[self.s0:self.s1, a:b] = 0.0
            self.tp_dt[self.s0:self.s1, a:b] = 0.0
        self.e1 = b

    def prune(self, now):
        horizon = now - self.cfg.upsilon
        e = self.e0
        while e < self.e1 and self.en_arr[e] < horizon:
            e += 1
        self.e0 = e
        s = self.s0
        while s < self.s1 and self.sp_time[s] < horizon:
            s += 1
        self.s0 = s

    def rollback(self, t_keep):
        """Drop every spike and ledger entry strictly after t_keep."""
        s_new = self.s0 + int(
            np.searchsorted(self.sp_time[self.s0:self.s1], t_keep, side="right")
        )
        self.spike_counter -= self.s1 - s_new
        self.s1 = s_new
        self.last_spike = float(self.sp_time[self.s1 - 1]) if self.s1 > self.s0 else _NEG_INF
        e_new = self.e0 + int(
            np.searchsorted(self.en_arr[self.e0:self.e1], t_keep, side="right")
        )
        if e_new < self.e1:
            dropped = np.bincount(self.en_syn[e_new:self.e1], minlength=self.n_syn)
            self.syn_arrivals -= dropped
        self.entry_counter -= self.e1 - e_new
        self.e1 = e_new
        self.last_step = int(math.floor(t_keep / self.cfg.dt + 1e-9))
        self.last_P = self.potential_at(self.last_step * self.cfg.dt)

    def events_between(self, seq_from, t_hi):
        """Live efferent spikes with seq >= seq_from and time <= t_hi."""
        lo = self.s0 + int(np.searchsorted(self.sp_seq[self.s0:self.s1], seq_from))
        hi = self.s0 + int(
            np.searchsorted(self.sp_time[self.s0:self.s1], t_hi, side="right")
        )
        if hi <= lo:
            return np.empty(0), np.empty(0, dtype=np.int64)
        return self.sp_time[lo:hi].copy(), self.sp_seq[lo:hi].copy()

    # -- potential evaluation -------------------------------------------------

    def potential_grid(self, k_lo, n):
        """Membrane potential at grid times (k_lo + 1 + i) * dt, i in [0, n)."""
        out = np.zeros(n)
        psp_sum_grid(k_lo, n, self.cfg.dt, self.en_arr[self.e0:self.e1],
                     self.ek_coef[self.e0:self.e1], self.ek_ba2[self.e0:self.e1],
                     self.ek_itau[self.e0:self.e1], self.ek_delay[self.e0:self.e1],
                     self.cfg.upsilon, out)
        ahp_sum_grid(k_lo, n, self.cfg.dt, self.sp_time[self.s0:self.s1],
                     self.ahp_a, 1.0 / self.ahp_tau, self.cfg.upsilon, out)
        return out

    def potential_at(self, t):
        return float(potential_scalar(
            t, self.en_arr[self.e0:self.e1], self.ek_coef[self.e0:self.e1],
            self.ek_ba2[self.e0:self.e1], self.ek_itau[self.e0:self.e1],
            self.ek_delay[self.e0:self.e1], self.sp_time[self.s0:self.s1],
            self.ahp_a, 1.0 / self.ahp_tau, self.cfg.upsilon))

    # -- spiking ---------------------------------------------------------------

    def _bisect_crossing(self, lo, hi):
        theta = self.cfg.theta
        tol = self.cfg.crossing_tol
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            if self.potential_at(mid) >= theta:
                hi = mid
            else:
                lo = mid
        return 0.5 * (lo + hi)

    def _emit(self, s, history):
        from . import gradients

        if self.record_tapes:
            gradients.record_tape(self, s)
        else:
            self._ensure_spikes()
        r = self.s1
        self.sp_time[r] = s
        self.sp_seq[r] = self.spike_counter
        if not self.record_tapes:
            self.sp_denom[r] = np.nan
            self.sp_flag[r] = False
        self.spike_counter += 1
        self.s1 = r + 1
        self.last_spike = s
        history.append((self.idx, s))

    def scan_to(self, k_hi, history, stop_delay=None, stop_before=None):
        """Evaluate grid points (last_step, k_hi], emitting refined crossings.

        Crossing candidates are located vectorized; every emission injects
        the new AHP into the remaining grid values and rescans from there,
        since the potential landscape after the spike has changed.

        With ``stop_delay`` set, scanning halts right after an emission whose
        update trigger (spike time + stop_delay) falls before ``stop_before``;
        the trigger time is returned so the caller can run the update and
        re-simulate the remainder. Returns None when the scan ran to k_hi.
        """
        if k_hi <= self.last_step:
            return None
        dt = self.cfg.dt
        theta = self.cfg.theta
        refr = self.cfg.refractory
        k_lo = self.last_step
        n = k_hi - k_lo
        P = self.potential_grid(k_lo, n)
        start = 0
        while start < n:
            prev0 = P[start - 1] if start > 0 else self.last_P
            seg_prev = np.concatenate(([prev0], P[start:-1]))
            cands = np.flatnonzero((P[start:] >= theta) & (seg_prev < theta))
            emitted = False
            for c in cands:
                idx = start + int(c)
                t_i = (k_lo + 1 + idx) * dt
                if t_i - self.last_spike < refr:
                    continue
                grid_prev = (k_lo + idx) * dt
                lo = max(grid_prev, self.last_spike + refr)
                if lo > grid_prev and self.potential_at(lo) >= theta:
                    continue  # already above threshold at refractory exit
                s = self._bisect_crossing(lo, t_i)
                self._emit(s, history)
                sa = (np.arange(idx, n) + k_lo + 1) * dt - s
                ok = (sa > 0) & (sa <= self.cfg.upsilon)
                P[idx:][ok] -= self.ahp_a * np.exp(-sa[ok] / self.ahp_tau)
                if stop_delay is not None and s + stop_delay < stop_before:
                    self.last_step = k_lo + 1 + idx
                    self.last_P = P[idx]
                    return s + stop_delay
                start = idx
                emitted = True
                break
            if not emitted:
                break
        self.last_step = k_hi
        self.last_P = P[-1]
        return None

    # -- views -----------------------------------------------------------------

    def live_entries(self):
        """(arrival, weight, synapse, seq) arrays of the live ledger."""
        sl = slice(self.e0, self.e1)
        return (self.en_arr[sl], self.en_w[sl], self.en_syn[sl], self.en_seq[sl])

    def live_spikes(self):
        return self.sp_time[self.s0:self.s1]

    def ledger_sizes(self):
        if self.e1 == self.e0:
            return np.zeros(self.n_syn, dtype=np.int64)
        return np.bincount(self.en_syn[self.e0:self.e1], minlength=self.n_syn)


class Network:
    """A simulatable network instance: topology plus mutable weights/state.

    Single-threaded by design; distinct instances are independent. Input
    spike events are supplied per channel (``add_input_events``) before
    advancing past their times.
    """

    def __init__(self, topology: Topology, weights, cfg: SimConfig,
                 record_tapes=True):
        self.topology = topology
        self.cfg = cfg
        self.record_tapes = record_tapes
        specs = topology.neuron_specs()
        if len(weights) != len(specs):
            raise ValueError("need one weight vector per neuron")
        self.neurons = [
            _Neuron(i, layer, spec, weights[i], cfg, topology.ahp, record_tapes)
            for i, (layer, spec) in enumerate(specs)
        ]
        self.now = 0.0
        self.in_times = [np.empty(0) for _ in range(topology.input_channels)]
        self.history = []  # all emitted (neuron_idx, time), never pruned
        # optional {(neuron, syn, arrival ordinal): weight} for oracle runs
        self.entry_overrides = {}

    @property
    def output_neuron(self):
        return self.neurons[-1]

    def add_input_events(self, channel, times):
        times = np.asarray(times, dtype=np.float64)
        if times.size == 0:
            return
        prev = self.in_times[channel]
        if prev.size and times[0] <= prev[-1]:
            raise ValueError("input events must be strictly increasing per channel")
        self.in_times[channel] = np.concatenate([prev, times])

    # -- event pull ------------------------------------------------------------

    def _pull_arrivals(self, nrn: _Neuron, t_hi):
        batches = []
        for j in range(nrn.n_syn):
            if nrn.src_kind[j] == 0:
                buf = self.in_times[nrn.src_idx[j]]
                lo = nrn.pulled_seq[j]
                hi = int(np.searchsorted(buf, t_hi, side="right"))
                if hi > lo:
                    batches.append((
                        buf[lo:hi],
                        np.full(hi - lo, j, dtype=np.int64),
                        np.full(hi - lo, -1, dtype=np.int64),
                        np.arange(lo, hi, dtype=np.int64),
                    ))
                    nrn.pulled_seq[j] = hi
            else:
                src = self.neurons[nrn.src_idx[j]]
                times, seqs = src.events_between(nrn.pulled_seq[j], t_hi)
                if len(times):
                    batches.append((
                        times,
                        np.full(len(times), j, dtype=np.int64),
                        np.full(len(times), nrn.src_idx[j], dtype=np.int64),
                        seqs,
                    ))
                    nrn.pulled_seq[j] = int(seqs[-1]) + 1
        if not batches:
            return
        times = np.concatenate([b[0] for b in batches])
        syns = np.concatenate([b[1] for b in batches])
        srcn = np.concatenate([b[2] for b in batches])
        srcseq = np.concatenate([b[3] for b in batches])
        order = np.lexsort((syns, times))
        overrides = None
        if self.entry_overrides:
            overrides = {(s, o): w for (n, s, o), w in self.entry_overrides.items()
                         if n == nrn.idx}
        nrn.append_arrivals(times[order], syns[order], srcn[order], srcseq[order],
                            overrides)

    def _rewind_cursors(self, nrn: _Neuron, t_keep):
        for j in range(nrn.n_syn):
            if nrn.src_kind[j] == 0:
                buf = self.in_times[nrn.src_idx[j]]
                nrn.pulled_seq[j] = int(np.searchsorted(buf, t_keep, side="right"))
            else:
                nrn.pulled_seq[j] = self.neurons[nrn.src_idx[j]].spike_counter

    # -- advancing -------------------------------------------------------------

    def advance_block(self, t_hi, output_stop_delay=None):
        """Simulate (now, t_hi] in topological order; no weight changes inside.

        Returns the output neuron's spikes emitted in the block. With
        ``output_stop_delay`` the block ends early at the first output
        spike's update trigger: state past that instant is discarded (the
        caller applies a weight update there and re-simulates onward).
        """
        if t_hi < self.now:
            raise ValueError("cannot advance backwards")
        k_hi = int(math.floor(t_hi / self.cfg.dt + 1e-9))
        emitted_before = len(self.history)
        out_idx = self.topology.output_index
        stop_at = None
        for nrn in self.neurons:
            nrn.prune(self.now)
            self._pull_arrivals(nrn, t_hi)
            if output_stop_delay is not None and nrn.idx == out_idx:
                stop_at = nrn.scan_to(k_hi, self.history,
                                      stop_delay=output_stop_delay,
                                      stop_before=t_hi)
            else:
                nrn.scan_to(k_hi, self.history)
        self.now = t_hi
        if stop_at is not None:
            self.rollback(stop_at)
        return [t for (n, t) in self.history[emitted_before:] if n == out_idx]

    def rollback(self, t_keep):
        """Rewind all state strictly after t_keep (undone work is re-simulated)."""
        if t_keep > self.now:
            raise ValueError("rollback target is in the future")
        while self.history and self.history[-1][1] > t_keep:
            self.history.pop()
        for nrn in self.neurons:
            nrn.rollback(t_keep)
        for nrn in self.neurons:
            self._rewind_cursors(nrn, t_keep)
        self.now = t_keep

    def advance(self, until, input_events=None):
        """Plain advance with optional (channel, time) events; returns emissions.

        Convenience wrapper for fixed-weight simulation: splits the work into
        modest blocks so ledgers stay pruned.
        """
        if input_events:
            ev = sorted(input_events, key=lambda e: e[1])
            per = {}
            for ch, t in ev:
                per.setdefault(ch, []).append(t)
            for ch, ts in per.items():
                self.add_input_events(ch, ts)
        start = len(self.history)
        block = 1000.0 * self.cfg.dt
        while self.now < until:
            self.advance_block(min(until, self.now + block))
        return list(self.history[start:])

    # -- public views ----------------------------------------------------------

    def membrane_potential(self, neuron_idx, t):
        """Potential of one neuron at absolute time t, from live window state."""
        return self.neurons[neuron_idx].potential_at(t)

    def prune_window(self, now=None):
        for nrn in self.neurons:
            nrn.prune(self.now if now is None else now)

    def get_weights(self):
        return [nrn.weights.copy() for nrn in self.neurons]

    def set_weights(self, weights):
        for nrn, w in zip(self.neurons, weights):
            w = np.asarray(w, dtype=np.float64)
            if np.any(w <= 0):
                raise ValueError("weights must stay positive")
            nrn.weights[:] = w

    def output_spike_times(self):
        out_idx = self.topology.output_index
        return np.array([t for (n, t) in self.history if n == out_idx])


def write_raster(network: Network, path):
    """Dump the full emission history as ``neuron_id,time_ms`` CSV."""
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["neuron_id", "time_ms"])
        for n, t in network.history:
            w.writerow([n, f"{t:.6f}"])
