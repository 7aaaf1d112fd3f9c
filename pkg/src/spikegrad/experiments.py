"""Witness-based evaluation: input generation, pairing, learning runs, suites.

A witness network (random weights, then frozen) defines the target
transformation; a structurally identical learner starts from different
random weights and must acquire it online. Progress is tracked as the mean
absolute percentage error (MAPE) between learner and witness weights, per
neuron: 1.0 means 100%.

All randomness descends from one master seed: pair ``i`` uses
``SeedSequence([master_seed, i])`` whose spawned children drive, in order,
synapse delays, witness weights, learner weights, stratification draws, and
one input channel each. Calibration uses ``SeedSequence([master_seed,
0x5EED])``. Results are therefore reproducible for any worker count.
"""

import functools
import heapq
import math
import time as _time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .error import clamp_ages, error_value
from .gradients import LearnConfig, apply_update, weight_gradients
from .kernels import AhpParams, EPSILON_MS, ImpactParams, PspParams
from .network import Network, NeuronSpec, SimConfig, SynapseSpec, Topology

# Uniform weight ranges are parameterized by a single scale found by
# calibration; the spread keeps initial learner/witness disparities wide.
WEIGHT_RANGE_FACTORS = (0.2, 1.8)

MIN_INPUT_GAP = 0.1  # generator-side floor between spikes on one channel (ms)


@dataclass(frozen=True)
class PoissonSpec:
    """Input drive description: homogeneous or sinusoidally modulated rate."""

    kind: str = "homogeneous"  # or "sinusoidal"
    rate: float = 10.0          # Hz, homogeneous
    max_rate: float = 10.0      # Hz, sinusoidal peak
    mod_freq: float = 2.0       # Hz, sinusoidal modulation frequency

    def __post_init__(self):
        if self.kind not in ("homogeneous", "sinusoidal"):
            raise ValueError(f"unknown input kind {self.kind!r}")
        if self.rate < 0 or self.max_rate < 0 or self.mod_freq < 0:
            raise ValueError("rates must be >= 0")


def channel_phase(channel, n_channels):
    """Uniform phase grid for sinusoidally modulated channels."""
    return 2.0 * math.pi * channel / n_channels


class PoissonStream:
    """Incremental per-channel spike generator; deterministic per seed.

    The emitted sequence depends only on the seed, never on how generation
    is chunked, so simulations can extend the drive lazily.
    """

    def __init__(self, spec: PoissonSpec, phase, seed_seq):
        self.spec = spec
        self.phase = phase
        self.rng = np.random.default_rng(seed_seq)
        self._t = 0.0           # last candidate time (ms)
        self._last_emit = -math.inf

    def _rate_at(self, t_ms):
        s = self.spec
        return 0.5 * s.max_rate * (1.0 - math.cos(
            2.0 * math.pi * s.mod_freq * t_ms / 1000.0 + self.phase))

    def extend_to(self, t_end):
        """Generate events in (current position, t_end]; returns new times."""
        s = self.spec
        out = []
        if s.kind == "homogeneous":
            if s.rate <= 0:
                self._t = t_end
                return np.empty(0)
            mean_gap = 1000.0 / s.rate
            while True:
                gap = max(self.rng.exponential(mean_gap), MIN_INPUT_GAP)
                if self._t + gap > t_end:
                    break
                self._t += gap
                out.append(self._t)
        else:
            if s.max_rate <= 0:
                self._t = t_end
                return np.empty(0)
            mean_gap = 1000.0 / s.max_rate
            while True:
                gap = self.rng.exponential(mean_gap)
                if self._t + gap > t_end:
                    break
                self._t += gap
                accept = self.rng.uniform() < self._rate_at(self._t) / s.max_rate
                if accept and self._t - self._last_emit >= MIN_INPUT_GAP:
                    out.append(self._t)
                    self._last_emit = self._t
        return np.asarray(out)


def gen_poisson(spec: PoissonSpec, n_channels, duration_s, seed):
    """Full spike trains for every channel over a fixed duration (seconds)."""
    root = np.random.SeedSequence(seed)
    children = root.spawn(n_channels)
    trains = []
    for c in range(n_channels):
        phase = channel_phase(c, n_channels) if spec.kind == "sinusoidal" else 0.0
        stream = PoissonStream(spec, phase, children[c])
        trains.append(stream.extend_to(duration_s * 1000.0))
    return trains


# -- topology templates --------------------------------------------------------

# PSP parameter table per synapse variant; values are overridable via the
# run configuration but these match the fixed parameters used throughout.
DEFAULT_KERNELS = {
    "exc": dict(alpha=1.5, beta=1.0, tau1=20.0, sign=1.0),
    "inh": dict(alpha=1.2, beta=1.0, tau1=10.0, sign=-1.0),
    "nmda": dict(alpha=1.5, beta=5.0, tau1=80.0, sign=1.0),
    "gabab": dict(alpha=1.2, beta=50.0, tau1=100.0, sign=-1.0),
}

DEFAULT_AHP = AhpParams(amplitude=1000.0, tau2=1.2)
DELAY_RANGE = (0.4, 0.9)


@dataclass(frozen=True)
class NetworkTemplate:
    """Fully connected layered architecture with per-source synapse variants.

    ``input_variants`` gives the kernel variant of synapses fed by each input
    channel; ``neuron_variants`` the variant of synapses fed by each
    non-output neuron (flat order). The output neuron has no efferents.
    """

    input_channels: int
    layer_sizes: tuple
    input_variants: tuple
    neuron_variants: tuple = ()
    kernels: tuple = tuple(sorted((k, tuple(sorted(v.items())))
                                  for k, v in DEFAULT_KERNELS.items()))
    ahp: AhpParams = DEFAULT_AHP
    delay_range: tuple = DELAY_RANGE

    def __post_init__(self):
        if len(self.input_variants) != self.input_channels:
            raise ValueError("need one variant per input channel")
        n_hidden = sum(self.layer_sizes[:-1])
        if len(self.neuron_variants) != n_hidden:
            raise ValueError("need one variant per non-output neuron")
        if self.layer_sizes[-1] != 1:
            raise ValueError("final layer must have exactly one neuron")

    def kernel_table(self):
        return {k: dict(v) for k, v in self.kernels}

    @property
    def n_synapses(self):
        sizes = [self.input_channels, *self.layer_sizes]
        return sum(sizes[i] * sizes[i + 1] for i in range(len(sizes) - 1))

    @property
    def n_neurons(self):
        return sum(self.layer_sizes)


def single_neuron_template(variants=("exc",) * 10):
    return NetworkTemplate(len(variants), (1,), tuple(variants))


def two_layer_template(input_variants=("exc",) * 5, hidden_variants=("exc",) * 5):
    return NetworkTemplate(len(input_variants), (len(hidden_variants), 1),
                           tuple(input_variants), tuple(hidden_variants))


def mixed_single_template():
    """10 synapses: 4 fast + 4 slow excitatory, 1 fast + 1 slow inhibitory."""
    return single_neuron_template(
        ("exc", "exc", "exc", "exc", "nmda", "nmda", "nmda", "nmda", "inh", "gabab"))


def mixed_two_layer_template():
    """5-5-1 with two inhibitory inputs and two inhibitory intermediate neurons."""
    return two_layer_template(("exc", "exc", "exc", "inh", "inh"),
                              ("exc", "exc", "exc", "inh", "inh"))


def build_topology(template: NetworkTemplate, delays):
    """Instantiate the template with concrete per-synapse delays."""
    table = template.kernel_table()
    delays = iter(np.asarray(delays, dtype=np.float64))
    layers = []
    prev_kinds = [("input", c, template.input_variants[c])
                  for c in range(template.input_channels)]
    flat = 0
    for size in template.layer_sizes:
        layer = []
        for _ in range(size):
            syns = []
            for kind, idx, variant in prev_kinds:
                k = table[variant]
                syns.append(SynapseSpec(kind, idx, PspParams(
                    alpha=k["alpha"], beta=k["beta"], tau1=k["tau1"],
                    delay=float(next(delays)), sign=k["sign"])))
            layer.append(NeuronSpec(tuple(syns)))
        layers.append(tuple(layer))
        prev_kinds = [("neuron", flat + i,
                       template.neuron_variants[flat + i]
                       if flat + i < len(template.neuron_variants) else "exc")
                      for i in range(size)]
        flat += size
    return Topology(template.input_channels, tuple(layers), template.ahp)


# -- pairs ----------------------------------------------------------------------


@dataclass
class WitnessPair:
    """A frozen witness network plus a learner sharing everything but weights."""

    template: NetworkTemplate
    topology: Topology
    witness_weights: list
    learner_weights: list
    input_spec: PoissonSpec
    sim: SimConfig
    learn: LearnConfig
    impact: ImpactParams
    master_seed: int
    pair_index: int


def pair_seed_seq(master_seed, pair_index):
    return np.random.SeedSequence([int(master_seed), int(pair_index)])


def _split_weights(template, flat):
    out = []
    pos = 0
    sizes = [template.input_channels, *template.layer_sizes]
    for i in range(1, len(sizes)):
        for _ in range(sizes[i]):
            out.append(np.asarray(flat[pos:pos + sizes[i - 1]], dtype=np.float64))
            pos += sizes[i - 1]
    return out


def _stratified_scales(rng, n, bin_lo, bin_hi):
    target = 0.5 * (bin_lo + bin_hi)
    amp = 2.0 * target
    for _ in range(50):
        s = 1.0 + rng.choice([-1.0, 1.0], n) * rng.uniform(0.0, amp, n)
        s = np.maximum(s, 0.05)
        m = float(np.mean(np.abs(s - 1.0)))
        if bin_lo <= m < bin_hi:
            return s
        amp *= target / max(m, 1e-6)
    signs = np.where(rng.uniform(size=n) < 0.5, -1.0, 1.0)
    return np.maximum(1.0 + signs * target, 0.05)


def make_pair(template: NetworkTemplate, weight_range, master_seed, pair_index,
              input_spec: PoissonSpec, sim: SimConfig, learn: LearnConfig,
              impact: ImpactParams, stratified_bin=None) -> WitnessPair:
    """Draw one witness/learner pair; deterministic in (master_seed, pair_index).

    With ``stratified_bin=(lo, hi)`` the learner is constructed by
    multiplicatively perturbing the witness so the initial MAPE lands in the
    requested bin (used for the spread-initial-disparity convergence suites).
    """
    if weight_range is None:
        raise ValueError("weight range missing: run calibration first")
    lo, hi = weight_range
    if not 0 < lo < hi:
        raise ValueError("invalid weight range")
    ss = pair_seed_seq(master_seed, pair_index)
    kids = ss.spawn(4 + template.input_channels)
    rng_delay = np.random.default_rng(kids[0])
    rng_wit = np.random.default_rng(kids[1])
    rng_lrn = np.random.default_rng(kids[2])
    rng_strat = np.random.default_rng(kids[3])
    n_syn = template.n_synapses
    delays = rng_delay.uniform(template.delay_range[0], template.delay_range[1], n_syn)
    wit = rng_wit.uniform(lo, hi, n_syn)
    if stratified_bin is None:
        lrn = rng_lrn.uniform(lo, hi, n_syn)
    else:
        lrn = np.maximum(wit * _stratified_scales(rng_strat, n_syn, *stratified_bin),
                         sim.w_min)
    topo = build_topology(template, delays)
    return WitnessPair(template, topo, _split_weights(template, wit),
                       _split_weights(template, lrn), input_spec, sim, learn,
                       impact, master_seed, pair_index)


def mape(learner_weights, witness_weights):
    """Per-neuron mean |w - w*| / w*; zero iff the weight vectors coincide."""
    out = []
    for lw, ww in zip(learner_weights, witness_weights):
        ww = np.asarray(ww, dtype=np.float64)
        if np.any(ww <= 0):
            raise ValueError("witness weights must be positive")
        out.append(float(np.mean(np.abs(np.asarray(lw) - ww) / ww)))
    return np.array(out)


# -- calibration ------------------------------------------------------------------


def _witness_rate(template, weight_range, input_spec, sim, seed, pair_index,
                  duration_s):
    pair = make_pair(template, weight_range, seed, pair_index, input_spec, sim,
                     LearnConfig(), ImpactParams())
    net = Network(pair.topology, pair.witness_weights, sim, record_tapes=False)
    ss = pair_seed_seq(seed, pair_index).spawn(4 + template.input_channels)
    t_end = duration_s * 1000.0
    for c in range(template.input_channels):
        phase = channel_phase(c, template.input_channels) \
            if input_spec.kind == "sinusoidal" else 0.0
        stream = PoissonStream(input_spec, phase, ss[4 + c])
        net.add_input_events(c, stream.extend_to(t_end))
    net.advance(t_end)
    return len(net.output_spike_times()) / duration_s


@functools.lru_cache(maxsize=32)
def calibrate(template: NetworkTemplate, sim: SimConfig, master_seed,
              input_spec=None, n_samples=50, duration_s=5.0,
              target_band=(10.0, 30.0), max_iters=40):
    """Find a uniform weight range whose random witnesses fire 5-50 Hz.

    Binary-searches a scale c with the range fixed at ``(0.2 c, 1.8 c)``;
    the median output rate of ``n_samples`` random witnesses under a 10 Hz
    homogeneous drive must land inside ``target_band`` (chosen inside
    5-50 Hz so the population spread stays within the band too). Raises
    RuntimeError if the search fails within ``max_iters`` bisections.
    """
    if input_spec is None:
        input_spec = PoissonSpec(kind="homogeneous", rate=10.0)
    seed = int(np.random.default_rng(
        np.random.SeedSequence([int(master_seed), 0x5EED])).integers(2**31))

    def median_rate(c):
        rng_range = (WEIGHT_RANGE_FACTORS[0] * c, WEIGHT_RANGE_FACTORS[1] * c)
        rates = [
            _witness_rate(template, rng_range, input_spec, sim, seed, i, duration_s)
            for i in range(n_samples)
        ]
        return float(np.median(rates))

    c_lo, c_hi = 1e-2, 1.0
    while median_rate(c_lo) > target_band[0] and c_lo > 1e-8:
        c_lo *= 0.25
    while median_rate(c_hi) < target_band[1] and c_hi < 1e6:
        c_hi *= 2.0
    for _ in range(max_iters):
        mid = math.sqrt(c_lo * c_hi)
        r = median_rate(mid)
        if target_band[0] <= r <= target_band[1]:
            return (WEIGHT_RANGE_FACTORS[0] * mid, WEIGHT_RANGE_FACTORS[1] * mid)
        if r < target_band[0]:
            c_lo = mid
        else:
            c_hi = mid
    raise RuntimeError("calibration failed to converge")


# -- learning runs ----------------------------------------------------------------


@dataclass
class RunReport:
    pair_index: int
    master_seed: int
    initial_mape: np.ndarray       # per neuron
    final_mape: np.ndarray
    mape_series: list              # (update_idx, per-neuron mape array)
    error_series: list             # (update_idx, error value)
    outcome: str                   # converged | diverged | slow
    updates_done: int
    aborted_updates: int
    wall_time_s: float
    converged_at: int | None = None
    trace_rows: list | None = None
    update_states: list | None = None

    @property
    def initial_avg(self):
        return float(np.mean(self.initial_mape))

    @property
    def final_avg(self):
        return float(np.mean(self.final_mape))


def run_pair(pair: WitnessPair, n_updates, record_every=100,
             conv_threshold=0.02, conv_window=1000, stop_on_convergence=True,
             max_sim_s=20000.0, collect_trace=False,
             collect_update_states=False, blowup_mape=50.0) -> RunReport:
    """Stream shared Poisson input through witness and learner on one clock.

    Witness output spikes feed the learner's desired train; a network-wide
    update runs ``update_delay`` after every learner output spike and every
    desired spike. Weight changes apply only to subsequently arriving
    spikes, so the simulation history never needs retiming; blocks that
    overshoot an update trigger are rolled back and re-simulated.
    """
    t0 = _time.perf_counter()
    sim = pair.sim
    lc = pair.learn
    witness = Network(pair.topology, pair.witness_weights, sim, record_tapes=False)
    learner = Network(pair.topology, pair.learner_weights, sim, record_tapes=True)
    C = pair.template.input_channels
    kids = pair_seed_seq(pair.master_seed, pair.pair_index).spawn(4 + C)
    streams = []
    for c in range(C):
        phase = channel_phase(c, C) if pair.input_spec.kind == "sinusoidal" else 0.0
        streams.append(PoissonStream(pair.input_spec, phase, kids[4 + c]))

    witness_w = [w.copy() for w in pair.witness_weights]
    initial = mape(learner.get_weights(), witness_w)
    mape_series = [(0, initial.copy())]
    error_series = []
    trace_rows = [] if collect_trace else None
    update_states = [] if collect_update_states else None

    pending = []  # (time, kind, spike_time); kind 0 = desired, 1 = own output
    updates_done = 0
    aborted = 0
    conv_run = 0
    converged_at = None
    feed_to = 0.0
    BLOCK = 25.0
    max_ms = max_sim_s * 1000.0

    def feed(to_ms):
        nonlocal feed_to
        if to_ms <= feed_to:
            return
        to_ms = feed_to + max(1000.0, to_ms - feed_to)
        for c, st in enumerate(streams):
            ev = st.extend_to(to_ms)
            if ev.size:
                witness.add_input_events(c, ev)
                learner.add_input_events(c, ev)
        feed_to = to_ms

    outcome = None
    while updates_done < n_updates:
        if learner.now >= max_ms:
            break
        h = learner.now + BLOCK
        if pending:
            h = min(h, pending[0][0])
        while witness.now < h:
            # the witness runs ahead in full blocks; its spikes become
            # desired-train update triggers for the learner
            feed(witness.now + BLOCK + 1.0)
            for s in witness.advance_block(witness.now + BLOCK):
                heapq.heappush(pending, (s + lc.update_delay, 0, s))
        feed(h + 1.0)
        if pending:
            h = min(h, pending[0][0])
        if h > learner.now:
            out_spikes = learner.advance_block(h, output_stop_delay=lc.update_delay)
            for s in out_spikes:
                heapq.heappush(pending, (s + lc.update_delay, 1, s))
        while pending and pending[0][0] <= learner.now and updates_done < n_updates:
            u, kind, trig = heapq.heappop(pending)
            wl = witness.output_neuron.live_spikes()
            desired = wl[wl <= u]
            out = learner.output_neuron.live_spikes()
            out = out[out <= u]
            grads = weight_gradients(learner, desired, u, pair.impact)
            info = apply_update(learner, grads, lc)
            updates_done += 1
            if info["aborted"]:
                aborted += 1
            e_val = error_value(clamp_ages(u - desired), clamp_ages(u - out),
                                pair.impact)
            cur = mape(learner.get_weights(), witness_w)
            avg = float(np.mean(cur))
            if avg < conv_threshold:
                conv_run += 1
                if conv_run >= conv_window and converged_at is None:
                    converged_at = updates_done
            else:
                conv_run = 0
            if updates_done % record_every == 0 or updates_done == n_updates:
                mape_series.append((updates_done, cur))
                error_series.append((updates_done, e_val))
            if collect_trace:
                trace_rows.append((updates_done, u, e_val, info["raw_grad_norm"],
                                   info["applied_norm"], int(info["capped"])))
            if collect_update_states:
                update_states.append((u, np.sort(u - desired)))
            if converged_at is not None and stop_on_convergence:
                break
            if avg > blowup_mape:
                outcome = "diverged"
                break
        if converged_at is not None and stop_on_convergence:
            break
        if outcome == "diverged":
            break

    final = mape(learner.get_weights(), witness_w)
    if mape_series[-1][0] != updates_done:
        mape_series.append((updates_done, final.copy()))
    if outcome is None:
        if converged_at is not None:
            outcome = "converged"
        elif float(np.mean(final)) > float(np.mean(initial)):
            outcome = "diverged"
        else:
            outcome = "slow"
    assert all(np.array_equal(a, b) for a, b in
               zip(witness.get_weights(), witness_w)), "witness weights mutated"
    return RunReport(pair.pair_index, pair.master_seed, initial, final,
                     mape_series, error_series, outcome, updates_done, aborted,
                     _time.perf_counter() - t0, converged_at, trace_rows,
                     update_states)


# -- suites -----------------------------------------------------------------------


@dataclass
class SuiteConfig:
    template: NetworkTemplate
    input_spec: PoissonSpec
    sim: SimConfig = field(default_factory=SimConfig)
    learn: LearnConfig = field(default_factory=LearnConfig)
    impact: ImpactParams = field(default_factory=ImpactParams)
    master_seed: int = 1
    n_pairs: int = 20
    n_updates: int = 10000
    record_every: int = 100
    weight_range: tuple | None = None
    stratified: bool = False
    stop_on_convergence: bool = True
    conv_threshold: float = 0.02
    conv_window: int = 1000
    jobs: int = 1
    pair_indices: tuple | None = None
    max_sim_s: float = 20000.0
    trace: bool = False


@dataclass
class SuiteResult:
    config: SuiteConfig
    weight_range: tuple
    reports: list

    @property
    def improvement_fraction(self):
        if not self.reports:
            return float("nan")
        return float(np.mean([r.initial_avg - r.final_avg > 0 for r in self.reports]))

    @property
    def converged_count(self):
        return sum(r.outcome == "converged" for r in self.reports)

    @property
    def diverged_count(self):
        return sum(r.outcome == "diverged" for r in self.reports)

    def scatter_rows(self):
        rows = []
        for r in self.reports:
            rows.append((r.pair_index, r.pair_index, r.initial_avg, r.final_avg,
                         r.initial_avg - r.final_avg, r.outcome))
        return rows

    def trajectory_rows(self):
        rows = []
        for r in self.reports:
            for upd, per_neuron in r.mape_series:
                for n, v in enumerate(per_neuron):
                    rows.append((r.pair_index, n, upd, float(v)))
        return rows


def _stratified_bin(cfg: SuiteConfig, ordinal):
    n_bins = 10
    per_bin = max(1, cfg.n_pairs // n_bins)
    b = min(ordinal // per_bin, n_bins - 1)
    return (b / n_bins, (b + 1) / n_bins)


def _run_one(args):
    cfg, pair_index, ordinal, weight_range = args
    pair = make_pair(cfg.template, weight_range, cfg.master_seed, pair_index,
                     cfg.input_spec, cfg.sim, cfg.learn, cfg.impact,
                     stratified_bin=_stratified_bin(cfg, ordinal)
                     if cfg.stratified else None)
    return run_pair(pair, cfg.n_updates, cfg.record_every, cfg.conv_threshold,
                    cfg.conv_window, cfg.stop_on_convergence, cfg.max_sim_s,
                    collect_trace=cfg.trace)


def run_suite(cfg: SuiteConfig) -> SuiteResult:
    """Run all pairs of a suite (in parallel when jobs > 1); order-independent."""
    weight_range = cfg.weight_range
    if weight_range is None:
        weight_range = calibrate(cfg.template, cfg.sim, cfg.master_seed)
    indices = cfg.pair_indices if cfg.pair_indices is not None \
        else tuple(range(cfg.n_pairs))
    tasks = [(cfg, idx, k, weight_range) for k, idx in enumerate(indices)]
    if cfg.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as ex:
            reports = list(ex.map(_run_one, tasks))
    else:
        reports = [_run_one(t) for t in tasks]
    reports.sort(key=lambda r: r.pair_index)
    return SuiteResult(cfg, weight_range, reports)
