"""Closed-form disparity between two spike-age vectors and its gradient.

A spike train inside the bounded history window is represented by the vector
of its spike ages (ms since each spike, measured at the evaluation instant).
The disparity is the integrated squared difference of the putative impact of
the two trains on a virtual downstream neuron, which collapses to three
double sums over the pair kernel. It is zero exactly when the two age
vectors coincide as multisets.
"""

import numpy as np

from .kernels import EPSILON_MS, ImpactParams, _expz


def clamp_ages(ages):
    """Return ages as a float array with the near-zero guard applied."""
    a = np.asarray(ages, dtype=np.float64).ravel()
    return np.maximum(a, EPSILON_MS)


def _kernel_sum(a, b, T):
    if a.size == 0 or b.size == 0:
        return 0.0
    aa = a[:, None]
    bb = b[None, :]
    return float(np.sum(aa * bb / (aa + bb) ** 2 * _expz(-(aa + bb) / T)))


def error_value(t_desired, t_output, T: ImpactParams) -> float:
    """Disparity between desired and output age vectors (>= 0, symmetric)."""
    # canonical form (sorted ages, fixed argument order) makes the symmetry
    # and permutation invariances bitwise exact; the sums are order-sensitive
    # only at the last ulp
    d = np.sort(clamp_ages(t_desired))
    o = np.sort(clamp_ages(t_output))
    if (d.size, d.tobytes()) > (o.size, o.tobytes()):
        d, o = o, d
    Th = T.t_horizon
    return _kernel_sum(d, d, Th) + _kernel_sum(o, o, Th) - 2.0 * _kernel_sum(d, o, Th)


def _pair_grad_terms(partners, x, T):
    # d/dx of pair_kernel(x, partner), summed over partners
    if partners.size == 0:
        return 0.0
    s = partners + x
    num = partners * ((partners - x) - (x / T) * s)
    return float(np.sum(num / s**3 * _expz(-s / T)))


def error_grad_vector(t_desired, t_output, T: ImpactParams):
    """Gradient of error_value with respect to every output-spike age.

    Ages grow as wall time advances, so a positive component means the
    disparity rises as that output spike recedes into the past.
    """
    d = clamp_ages(t_desired)
    o = clamp_ages(t_output)
    Th = T.t_horizon
    out = np.empty(o.size, dtype=np.float64)
    for i, x in enumerate(o):
        out[i] = 2.0 * (_pair_grad_terms(o, x, Th) - _pair_grad_terms(d, x, Th))
    return out


def error_grad(i: int, t_desired, t_output, T: ImpactParams) -> float:
    """Single component of error_grad_vector (age derivative of output spike i)."""
    o = clamp_ages(t_output)
    if not 0 <= i < o.size:
        raise IndexError(f"output spike index {i} out of range for {o.size} spikes")
    d = clamp_ages(t_desired)
    Th = T.t_horizon
    return 2.0 * (_pair_grad_terms(o, o[i], Th) - _pair_grad_terms(d, o[i], Th))
