"""Membrane-response kernels and the closed-form spike-pair kernel.

All times are in milliseconds. Potentials are dimensionless (the firing
threshold sets the scale). Every function accepts scalars or numpy arrays
for the time argument and is stateless.
"""

from dataclasses import dataclass

import numpy as np

# Sign classes for synapses. Inhibitory synapses keep a positive weight;
# the kernel itself is negated.
EXCITATORY = 1.0
INHIBITORY = -1.0

# Lower bound on spike ages entering the disparity functional; the impact
# kernel has a 0/0 form at age 0.
EPSILON_MS = 1e-3

# Exponents below this are treated as exact zeros instead of subnormals.
_EXP_FLOOR = -700.0


def _expz(x):
    """exp(x) with hard zero below the underflow floor."""
    x = np.asarray(x, dtype=np.float64)
    with np.errstate(under="ignore"):
        out = np.where(x < _EXP_FLOOR, 0.0, np.exp(np.maximum(x, _EXP_FLOOR)))
    return out


@dataclass(frozen=True)
class PspParams:
    """Shape of the postsynaptic potential elicited by one afferent spike.

    alpha scales inversely with amplitude (distance from the soma), beta sets
    the rise, tau1 the decay, and delay shifts the whole kernel right so the
    response is exactly zero until the transmission delay has elapsed.
    """

    alpha: float
    beta: float
    tau1: float
    delay: float = 0.0
    sign: float = EXCITATORY

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if not self.tau1 > 0:
            raise ValueError(f"tau1 must be > 0, got {self.tau1}")
        if self.delay < 0:
            raise ValueError(f"delay must be >= 0, got {self.delay}")
        if self.sign not in (EXCITATORY, INHIBITORY):
            raise ValueError(f"sign must be +1 or -1, got {self.sign}")


@dataclass(frozen=True)
class AhpParams:
    """After-hyperpolarization kick a neuron applies to itself after spiking."""

    amplitude: float
    tau2: float

    def __post_init__(self):
        if not self.amplitude > 0:
            raise ValueError(f"amplitude must be > 0, got {self.amplitude}")
        if not self.tau2 > 0:
            raise ValueError(f"tau2 must be > 0, got {self.tau2}")


@dataclass(frozen=True)
class ImpactParams:
    """Integration horizon for the decay parameter of the impact kernel."""

    t_horizon: float = 150.0

    def __post_init__(self):
        if not self.t_horizon > 0:
            raise ValueError(f"t_horizon must be > 0, got {self.t_horizon}")


def psp_value_raw(age, alpha, ba2, tau1, delay, sign):
    """PSP value from broadcastable parameter arrays; ba2 is beta * alpha**2."""
    age = np.asarray(age, dtype=np.float64)
    tp = age - delay
    pos = tp > 0
    tps = np.where(pos, tp, 1.0)
    val = sign / (alpha * np.sqrt(tps)) * _expz(-ba2 / tps - tps / tau1)
    return np.where(pos, val, 0.0)


def psp_deriv_raw(age, alpha, ba2, tau1, delay, sign):
    """Time derivative of psp_value_raw; zero before onset, no onset check."""
    age = np.asarray(age, dtype=np.float64)
    tp = age - delay
    pos = tp > 0
    tps = np.where(pos, tp, 1.0)
    base = sign / (alpha * np.sqrt(tps)) * _expz(-ba2 / tps - tps / tau1)
    slope = base * (-0.5 / tps + ba2 / tps**2 - 1.0 / tau1)
    return np.where(pos, slope, 0.0)


def psp_value(p: PspParams, t):
    """PSP value at time t since afferent arrival (0 for t <= delay)."""
    out = psp_value_raw(t, p.alpha, p.beta * p.alpha**2, p.tau1, p.delay, p.sign)
    return float(out) if np.isscalar(t) else out


def psp_deriv(p: PspParams, t):
    """Analytic derivative of psp_value; undefined exactly at onset.

    Raises ValueError if any t equals the delay: the simulation never
    evaluates a slope at the kernel onset, so hitting it means a scheduling
    bug upstream.
    """
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr == p.delay):
        raise ValueError(f"psp_deriv undefined at onset t == delay == {p.delay}")
    out = psp_deriv_raw(t_arr, p.alpha, p.beta * p.alpha**2, p.tau1, p.delay, p.sign)
    return float(out) if np.isscalar(t) else out


def ahp_value(p: AhpParams, t):
    """AHP value at time t since the efferent spike: -A*exp(-t/tau2) for t > 0."""
    t_arr = np.asarray(t, dtype=np.float64)
    out = np.where(t_arr > 0, -p.amplitude * _expz(-t_arr / p.tau2), 0.0)
    return float(out) if np.isscalar(t) else out


def ahp_deriv(p: AhpParams, t):
    """Analytic derivative of ahp_value; raises at exactly t == 0."""
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr == 0.0):
        raise ValueError("ahp_deriv undefined at t == 0")
    out = np.where(t_arr > 0, p.amplitude / p.tau2 * _expz(-t_arr / p.tau2), 0.0)
    return float(out) if np.isscalar(t) else out


def ahp_deriv_raw(age, amplitude, tau2):
    """ahp_deriv without the onset check; zero for age <= 0."""
    age = np.asarray(age, dtype=np.float64)
    return np.where(age > 0, amplitude / tau2 * _expz(-age / tau2), 0.0)


def impact_kernel(beta, tau, t):
    """PSP-shaped impact of a spike of age t on a virtual downstream neuron.

    Defined only for ages above EPSILON_MS; the formula has an essential
    singularity at age 0.
    """
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr <= EPSILON_MS):
        raise ValueError(f"impact kernel requires t > {EPSILON_MS}")
    if beta < 0 or not tau > 0:
        raise ValueError("impact kernel requires beta >= 0 and tau > 0")
    out = _expz(-beta / t_arr - t_arr / tau) / tau
    return float(out) if np.isscalar(t) else out


def pair_kernel(t1, t2, T: ImpactParams):
    """Closed form of the double integral of impact_kernel(t1)*impact_kernel(t2)
    over all rise factors and decay constants up to the horizon.

    Symmetric in (t1, t2), bounded by 1/4, strictly positive for positive ages.
    """
    a = np.asarray(t1, dtype=np.float64)
    b = np.asarray(t2, dtype=np.float64)
    if np.any(a <= 0) or np.any(b <= 0):
        raise ValueError("pair_kernel requires strictly positive ages")
    out = a * b / (a + b) ** 2 * _expz(-(a + b) / T.t_horizon)
    if np.isscalar(t1) and np.isscalar(t2):
        return float(out)
    return out
