"""Independent oracles: quadrature, finite differences, re-simulation.

Everything here validates the analytic paths by a slower route that shares
no code with them: the pair kernel against 2-D quadrature of its defining
integral, kernel slopes against central differences, tape partials and
chain-rule gradients against perturb-and-re-simulate runs, and the update
direction against a re-simulated disparity decrease.

Re-simulation oracles only assert when the perturbed runs preserve every
neuron's spike count; appearing/disappearing spikes invalidate first-order
prediction and are counted separately.
"""

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate

from .error import clamp_ages, error_value
from .gradients import LearnConfig, apply_update, weight_gradients
from .kernels import AhpParams, EPSILON_MS, ImpactParams, PspParams
from .network import Network, NeuronSpec, SimConfig, SynapseSpec, Topology
from .experiments import (DEFAULT_AHP, PoissonSpec, PoissonStream,
                          build_topology, single_neuron_template,
                          two_layer_template)

# Oracle runs refine crossings far below the default tolerance so that
# finite-difference quotients are not drowned by bisection noise.
ORACLE_SIM = SimConfig(dt=0.05, crossing_tol=1e-11)


def impact_product_quadrature(t1, t2, horizon, tail_factor=60.0):
    """2-D quadrature of the product of two impact kernels over (beta, tau)."""
    b_max = tail_factor * t1 * t2 / (t1 + t2)

    def integrand(beta, tau):
        return (np.exp(-beta / t1 - t1 / tau) / tau
                * np.exp(-beta / t2 - t2 / tau) / tau)

    val, _ = integrate.dblquad(integrand, 1e-9, horizon, 0.0, b_max,
                               epsabs=1e-13, epsrel=1e-9)
    return val


def error_value_quadrature(t_desired, t_output, horizon, tail_factor=60.0):
    """Quadrature of the squared impact difference defining the disparity."""
    td = np.asarray(t_desired, dtype=np.float64)
    to = np.asarray(t_output, dtype=np.float64)
    all_t = np.concatenate([td, to])
    b_max = tail_factor * all_t.min() / 2.0 * 2.0

    def integrand(beta, tau):
        fd = np.sum(np.exp(-beta / td - td / tau)) / tau
        fo = np.sum(np.exp(-beta / to - to / tau)) / tau
        return (fd - fo) ** 2

    val, _ = integrate.dblquad(integrand, 1e-9, horizon, 0.0, b_max,
                               epsabs=1e-14, epsrel=1e-8)
    return val


def central_difference(f, x, h):
    return (f(x + h) - f(x - h)) / (2.0 * h)


# -- re-simulation scenarios --------------------------------------------------


@dataclass
class Scenario:
    """A frozen, re-runnable simulation: topology, weights, input, horizon."""

    topology: Topology
    weights: list
    input_trains: list          # per channel, absolute ms
    t_end: float
    sim: SimConfig = ORACLE_SIM


def simulate(scn: Scenario, synapse_weight_scale=None, entry_override=None,
             input_shift=None, record_tapes=True):
    """Run a scenario, optionally perturbed.

    synapse_weight_scale: {(neuron, syn): new_weight} applied from t = 0.
    entry_override: {(neuron, syn, arrival_ordinal): new_weight} applied to
        one ledger entry at its arrival (the per-spike weight).
    input_shift: (channel, event_index, delta_ms) moving one input spike.
    """
    weights = [w.copy() for w in scn.weights]
    if synapse_weight_scale:
        for (n, j), w in synapse_weight_scale.items():
            weights[n][j] = w
    net = Network(scn.topology, weights, scn.sim, record_tapes=record_tapes)
    if entry_override:
        net.entry_overrides = dict(entry_override)
    for c, train in enumerate(scn.input_trains):
        t = np.asarray(train, dtype=np.float64)
        if input_shift and input_shift[0] == c:
            t = t.copy()
            t[input_shift[1]] += input_shift[2]
            if np.any(np.diff(t) <= 0):
                raise ValueError("input shift broke channel ordering")
        net.add_input_events(c, t)
    net.advance(scn.t_end)
    return net


def spike_counts(net):
    counts = {}
    for n, _t in net.history:
        counts[n] = counts.get(n, 0) + 1
    return counts


def _spike_time(net, neuron_idx, ordinal):
    times = [t for (n, t) in net.history if n == neuron_idx]
    return times[ordinal]


def fd_entry_weight_partial(scn, neuron_idx, syn, ordinal, spike_ordinal,
                            base_w, delta=1e-5):
    """Emission-time shift of one spike per unit change of one entry weight.

    Returns (slope, counts_preserved). Central difference across two
    re-simulations with the single ledger entry's weight overridden.
    """
    up = simulate(scn, entry_override={(neuron_idx, syn, ordinal): base_w + delta},
                  record_tapes=False)
    dn = simulate(scn, entry_override={(neuron_idx, syn, ordinal): base_w - delta},
                  record_tapes=False)
    if spike_counts(up) != spike_counts(dn):
        return float("nan"), False
    s_up = _spike_time(up, neuron_idx, spike_ordinal)
    s_dn = _spike_time(dn, neuron_idx, spike_ordinal)
    return (s_up - s_dn) / (2.0 * delta), True


def fd_input_time_partial(scn, channel, event_index, neuron_idx, spike_ordinal,
                          delta=1e-4):
    """Emission-time shift of one spike per unit shift of one input arrival."""
    up = simulate(scn, input_shift=(channel, event_index, +delta),
                  record_tapes=False)
    dn = simulate(scn, input_shift=(channel, event_index, -delta),
                  record_tapes=False)
    if spike_counts(up) != spike_counts(dn):
        return float("nan"), False
    s_up = _spike_time(up, neuron_idx, spike_ordinal)
    s_dn = _spike_time(dn, neuron_idx, spike_ordinal)
    return (s_up - s_dn) / (2.0 * delta), True


def window_error(net, desired_times, u, impact: ImpactParams):
    """Disparity of the net's output train against a fixed desired train at u."""
    out = net.output_neuron.live_spikes()
    out = out[out <= u]
    desired = np.asarray(desired_times, dtype=np.float64)
    desired = desired[(desired <= u) & (u - desired <= net.cfg.upsilon)]
    return error_value(clamp_ages(u - desired), clamp_ages(u - out), impact)


def fd_synapse_error_gradient(scn, neuron_idx, syn, desired_times, u,
                              impact, delta=1e-5):
    """dE/dw for one synapse by re-simulating with the weight nudged at t=0."""
    w0 = scn.weights[neuron_idx][syn]
    up = simulate(scn, synapse_weight_scale={(neuron_idx, syn): w0 + delta},
                  record_tapes=False)
    dn = simulate(scn, synapse_weight_scale={(neuron_idx, syn): w0 - delta},
                  record_tapes=False)
    if spike_counts(up) != spike_counts(dn):
        return float("nan"), False
    e_up = window_error(up, desired_times, u, impact)
    e_dn = window_error(dn, desired_times, u, impact)
    return (e_up - e_dn) / (2.0 * delta), True


def descent_check(scn, desired_times, impact, mu0=0.1, cap=1e9,
                  max_halvings=10):
    """One capped update must reduce the re-simulated disparity for small mu.

    Computes gradients on the frozen window, applies the network-wide update
    at a trial learning rate, re-simulates the same window with the shifted
    synapse weights, and accepts when the disparity drops with all spike
    counts preserved. Halves mu up to max_halvings times.
    """
    base = simulate(scn, record_tapes=True)
    u = scn.t_end
    counts0 = spike_counts(base)
    e0 = window_error(base, desired_times, u, impact)
    grads = weight_gradients(base, np.asarray(desired_times), u, impact)
    flat = np.concatenate(grads)
    if not np.any(flat) or e0 <= 0:
        return None  # nothing to descend; caller should pick another scenario
    mu = mu0
    for _ in range(max_halvings):
        probe = Network(scn.topology, [w.copy() for w in scn.weights], scn.sim,
                        record_tapes=False)
        apply_update(probe, grads, LearnConfig(mu=mu, cap=cap))
        new_w = probe.get_weights()
        override = {(n, j): new_w[n][j]
                    for n in range(len(new_w)) for j in range(len(new_w[n]))}
        trial = simulate(scn, synapse_weight_scale=override, record_tapes=False)
        if spike_counts(trial) == counts0:
            e1 = window_error(trial, desired_times, u, impact)
            if e1 < e0:
                return True
        mu *= 0.5
    return False


# -- random scenario builders ---------------------------------------------------


def _poisson_trains(n_channels, rate_hz, t_end, seed, kind="homogeneous"):
    from .experiments import channel_phase
    spec = PoissonSpec(kind=kind, rate=rate_hz, max_rate=rate_hz)
    kids = np.random.SeedSequence(seed).spawn(n_channels)
    out = []
    for c in range(n_channels):
        phase = channel_phase(c, n_channels) if kind == "sinusoidal" else 0.0
        out.append(PoissonStream(spec, phase, kids[c]).extend_to(t_end))
    return out


def _scale_for_rate(topology, weights, trains, t_end, sim,
                    target=(4, 40), max_iter=24):
    """Deterministically scale all weights until the output spikes in band."""
    scale = 1.0
    for _ in range(max_iter):
        w = [scale * x for x in weights]
        net = Network(topology, w, sim, record_tapes=False)
        for c, tr in enumerate(trains):
            net.add_input_events(c, tr)
        net.advance(t_end)
        n = len(net.output_spike_times())
        lo, hi = target
        if lo <= n <= hi:
            return [scale * x for x in weights]
        scale *= 1.4 if n < lo else 1 / 1.4
    raise RuntimeError("could not scale scenario into firing band")


def random_single_neuron_scenario(seed, n_syn=8, rate_hz=12.0, t_end=400.0,
                                  sim=ORACLE_SIM):
    """Single neuron driven by one Poisson channel per synapse."""
    rng = np.random.default_rng(seed)
    template = single_neuron_template(("exc",) * n_syn)
    delays = rng.uniform(0.4, 0.9, template.n_synapses)
    topo = build_topology(template, delays)
    weights = [rng.uniform(0.5, 1.5, n_syn)]
    trains = _poisson_trains(n_syn, rate_hz, t_end, seed + 1000)
    weights = _scale_for_rate(topo, weights, trains, t_end, sim)
    return Scenario(topo, weights, trains, t_end, sim)


def random_two_layer_scenario(seed, shape=(2, 2), rate_hz=12.0, t_end=400.0,
                              sim=ORACLE_SIM):
    """Small layered net (default 2-2-1) for cross-layer chain-rule checks."""
    rng = np.random.default_rng(seed)
    n_in, n_hidden = shape
    template = two_layer_template(("exc",) * n_in, ("exc",) * n_hidden)
    delays = rng.uniform(0.4, 0.9, template.n_synapses)
    topo = build_topology(template, delays)
    weights = []
    for spec in [s for layer in topo.layers for s in layer]:
        weights.append(rng.uniform(0.5, 1.5, len(spec.synapses)))
    trains = _poisson_trains(n_in, rate_hz, t_end, seed + 2000)
    weights = _scale_for_rate(topo, weights, trains, t_end, sim)
    return Scenario(topo, weights, trains, t_end, sim)


def jittered_desired(scn, seed, jitter_ms=4.0):
    """A plausible desired train: the scenario's own output, jittered."""
    rng = np.random.default_rng(seed)
    base = simulate(scn, record_tapes=False)
    out = base.output_spike_times()
    d = np.sort(out + rng.uniform(-jitter_ms, jitter_ms, out.size))
    return np.clip(d, 0.0, scn.t_end)
