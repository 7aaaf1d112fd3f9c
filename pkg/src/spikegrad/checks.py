"""Named verification checks run by the gradcheck command.

Each check compares an analytic quantity against an independent oracle
(finite differences, quadrature, or perturb-and-re-simulate) and reports
its worst relative error against a fixed tolerance. Comparisons whose
oracle value is below a magnitude floor are not scored: there the
finite-difference quotient is noise-dominated. Re-simulation comparisons
that change any spike count are skipped and counted.
"""

from dataclasses import dataclass

import numpy as np

from . import gradients, oracles
from .error import error_grad_vector, error_value
from .kernels import (AhpParams, EPSILON_MS, ImpactParams, PspParams,
                      ahp_deriv, ahp_value, pair_kernel, psp_deriv, psp_value)


@dataclass
class CheckResult:
    name: str
    n: int
    max_err: float
    tol: float
    passed: bool
    skipped: int = 0
    note: str = ""

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        extra = f" skipped={self.skipped}" if self.skipped else ""
        return (f"{status}  {self.name:<24} cases={self.n:<6} "
                f"max_rel={self.max_err:.3e} tol={self.tol:.0e}{extra} {self.note}")


def _rel(a, b, floor):
    return abs(a - b) / max(abs(b), floor)


_PSP_GRID = [
    PspParams(1.5, 1.0, 20.0, 0.5, 1.0),
    PspParams(1.2, 1.0, 10.0, 0.7, -1.0),
    PspParams(1.5, 5.0, 80.0, 0.4, 1.0),
    PspParams(1.2, 50.0, 100.0, 0.9, -1.0),
    PspParams(2.0, 0.2, 35.0, 0.0, 1.0),
]


def check_psp_deriv(n_points=200):
    h = 1e-5
    errs = []
    for p in _PSP_GRID:
        ages = p.delay + 10 ** np.linspace(-2, 2, n_points // len(_PSP_GRID))
        ages = ages[ages - p.delay > 1e-3 + h]
        for t in ages:
            fd = (psp_value(p, t + h) - psp_value(p, t - h)) / (2 * h)
            errs.append(_rel(psp_deriv(p, t), fd, 1e-12))
    return CheckResult("psp_deriv_fd", len(errs), max(errs), 1e-5,
                       max(errs) <= 1e-5)


def check_ahp_deriv(n_points=100):
    p = AhpParams(1000.0, 1.2)
    h = 1e-5
    errs = []
    for t in 10 ** np.linspace(-2, 1.2, n_points):
        fd = (ahp_value(p, t + h) - ahp_value(p, t - h)) / (2 * h)
        errs.append(_rel(ahp_deriv(p, t), fd, 1e-12))
    return CheckResult("ahp_deriv_fd", len(errs), max(errs), 1e-5,
                       max(errs) <= 1e-5)


def check_pair_kernel(grid=4, horizon=150.0):
    T = ImpactParams(horizon)
    ts = np.linspace(1.0, 400.0, grid)
    errs = []
    for t1 in ts:
        for t2 in ts:
            q = oracles.impact_product_quadrature(t1, t2, horizon)
            errs.append(_rel(pair_kernel(t1, t2, T), q, 1e-300))
    return CheckResult("pair_kernel_quadrature", len(errs), max(errs), 1e-4,
                       max(errs) <= 1e-4)


def check_error_basics(n=2000, seed=7):
    rng = np.random.default_rng(seed)
    T = ImpactParams(150.0)
    worst = 0.0
    for _ in range(n):
        x = rng.uniform(EPSILON_MS, 500.0, rng.integers(1, 11))
        y = rng.uniform(EPSILON_MS, 500.0, rng.integers(1, 11))
        worst = max(worst, abs(error_value(x, x, T)))
        if error_value(x, y, T) != error_value(y, x, T):
            return CheckResult("error_basics", n, float("inf"), 1e-12, False,
                               note="symmetry broken")
        if error_value(x, y, T) < -1e-12:
            return CheckResult("error_basics", n, float("inf"), 1e-12, False,
                               note="negative disparity")
    return CheckResult("error_basics", n, worst, 1e-12, worst <= 1e-12,
                       note="|E(x,x)|")


def check_error_grad_fd(n_pairs=200, seed=11):
    rng = np.random.default_rng(seed)
    T = ImpactParams(150.0)
    h = 1e-4
    errs = []
    for _ in range(n_pairs):
        tO = rng.uniform(1.0, 500.0, rng.integers(1, 11))
        tD = rng.uniform(1.0, 500.0, rng.integers(1, 11))
        g = error_grad_vector(tD, tO, T)
        for i in range(tO.size):
            up = tO.copy(); up[i] += h
            dn = tO.copy(); dn[i] -= h
            fd = (error_value(tD, up, T) - error_value(tD, dn, T)) / (2 * h)
            if abs(g[i]) < 1e-8:
                if abs(g[i] - fd) > 1e-12:
                    errs.append(abs(g[i] - fd) / 1e-12)
            else:
                errs.append(_rel(g[i], fd, 1e-12))
    return CheckResult("error_grad_fd", len(errs), max(errs), 1e-4,
                       max(errs) <= 1e-4)


def _tape_cases(n_triples, seed0, rng):
    """Yield (scenario, base_net) with tapes, cycling over random seeds."""
    made = 0
    seed = seed0
    while made < n_triples:
        try:
            scn = oracles.random_single_neuron_scenario(seed)
        except RuntimeError:
            seed += 1
            continue
        net = oracles.simulate(scn, record_tapes=True)
        nrn = net.output_neuron
        if nrn.s1 - nrn.s0 >= 2:
            yield scn, net
            made += 1
        seed += 1


def check_tape_dw(n_triples=10, seed=100, tol=1e-3, mag_floor=5e-2):
    errs, skipped = [], 0
    rng = np.random.default_rng(seed)
    for scn, net in _tape_cases(n_triples, seed, rng):
        nrn = net.output_neuron
        row = int(rng.integers(1, nrn.s1 - nrn.s0))
        cols = np.nonzero(np.abs(nrn.tp_dw[nrn.s0 + row, nrn.e0:nrn.e1]) > mag_floor)[0]
        if cols.size == 0:
            skipped += 1
            continue
        col = int(cols[rng.integers(cols.size)])
        syn = int(nrn.en_syn[nrn.e0 + col])
        ordn = int(nrn.en_ord[nrn.e0 + col])
        base_w = float(nrn.en_w[nrn.e0 + col])
        analytic = float(nrn.tp_dw[nrn.s0 + row, nrn.e0 + col])
        fd, ok = oracles.fd_entry_weight_partial(scn, nrn.idx, syn, ordn, row, base_w)
        if not ok:
            skipped += 1
            continue
        errs.append(_rel(analytic, fd, mag_floor))
    worst = max(errs) if errs else 0.0
    return CheckResult("tape_dw_resim", len(errs), worst, tol,
                       bool(errs) and worst <= tol, skipped)


def check_tape_dt(n_triples=10, seed=200, tol=1e-3, mag_floor=5e-2):
    errs, skipped = [], 0
    rng = np.random.default_rng(seed)
    for scn, net in _tape_cases(n_triples, seed, rng):
        nrn = net.output_neuron
        row = int(rng.integers(1, nrn.s1 - nrn.s0))
        cols = np.nonzero(np.abs(nrn.tp_dt[nrn.s0 + row, nrn.e0:nrn.e1]) > mag_floor)[0]
        if cols.size == 0:
            skipped += 1
            continue
        col = int(cols[rng.integers(cols.size)])
        syn = int(nrn.en_syn[nrn.e0 + col])
        channel = int(nrn.src_idx[syn])
        event_idx = int(nrn.en_srcseq[nrn.e0 + col])
        analytic = float(nrn.tp_dt[nrn.s0 + row, nrn.e0 + col])
        fd, ok = oracles.fd_input_time_partial(scn, channel, event_idx, nrn.idx, row)
        if not ok:
            skipped += 1
            continue
        errs.append(_rel(analytic, fd, mag_floor))
    worst = max(errs) if errs else 0.0
    return CheckResult("tape_dt_resim", len(errs), worst, tol,
                       bool(errs) and worst <= tol, skipped)


def _chain_errs(scn, seed, tol_floor=1e-5):
    desired = oracles.jittered_desired(scn, seed + 1)
    u = scn.t_end
    impact = ImpactParams(150.0)
    net = oracles.simulate(scn, record_tapes=True)
    grads = gradients.weight_gradients(net, desired, u, impact)
    errs, skipped = [], 0
    for n, g in enumerate(grads):
        for j in range(len(g)):
            fd, ok = oracles.fd_synapse_error_gradient(scn, n, j, desired, u, impact)
            if not ok:
                skipped += 1
                continue
            if abs(fd) < tol_floor:
                continue
            errs.append(_rel(float(g[j]), fd, tol_floor))
    return errs, skipped


def check_chain_single(n_cases=4, seed=300, tol=1e-2):
    errs, skipped = [], 0
    for k in range(n_cases):
        scn = oracles.random_single_neuron_scenario(seed + 17 * k)
        e, s = _chain_errs(scn, seed + 17 * k)
        errs += e
        skipped += s
    worst = max(errs) if errs else 0.0
    return CheckResult("chain_rule_single", len(errs), worst, tol,
                       bool(errs) and worst <= tol, skipped)


def check_chain_two_layer(n_cases=3, seed=400, tol=1e-2):
    errs, skipped = [], 0
    k = 0
    made = 0
    while made < n_cases and k < 10 * n_cases + 20:
        try:
            scn = oracles.random_two_layer_scenario(seed + k)
        except RuntimeError:
            k += 1
            continue
        e, s = _chain_errs(scn, seed + k)
        errs += e
        skipped += s
        made += 1
        k += 1
    worst = max(errs) if errs else 0.0
    return CheckResult("chain_rule_two_layer", len(errs), worst, tol,
                       bool(errs) and worst <= tol, skipped)


def check_descent(n_cases=4, seed=500):
    ok = 0
    tried = 0
    k = 0
    while tried < n_cases and k < 10 * n_cases + 20:
        try:
            scn = oracles.random_single_neuron_scenario(seed + 31 * k)
        except RuntimeError:
            k += 1
            continue
        desired = oracles.jittered_desired(scn, seed + 31 * k + 1)
        res = oracles.descent_check(scn, desired, ImpactParams(150.0))
        k += 1
        if res is None:
            continue
        tried += 1
        ok += bool(res)
    return CheckResult("descent_direction", tried, float(tried - ok), 0.0,
                       tried > 0 and ok == tried,
                       note=f"{ok}/{tried} instances descended")


def run_checks(cfg, only=None):
    g = cfg["gradcheck"]
    all_checks = [
        lambda: check_psp_deriv(g["kernel_points"]),
        lambda: check_ahp_deriv(max(g["kernel_points"] // 2, 10)),
        lambda: check_pair_kernel(g["quad_grid"]),
        lambda: check_error_basics(g["error_pairs"]),
        lambda: check_error_grad_fd(g["error_pairs"]),
        lambda: check_tape_dw(g["tape_triples"]),
        lambda: check_tape_dt(g["tape_triples"]),
        lambda: check_chain_single(g["chain_cases"]),
        lambda: check_chain_two_layer(max(g["chain_cases"] - 1, 1)),
        lambda: check_descent(g["descent_cases"]),
    ]
    names = ["psp_deriv_fd", "ahp_deriv_fd", "pair_kernel_quadrature",
             "error_basics", "error_grad_fd", "tape_dw_resim", "tape_dt_resim",
             "chain_rule_single", "chain_rule_two_layer", "descent_direction"]
    results = []
    for name, fn in zip(names, all_checks):
        if only is not None and not any(sub in name for sub in only):
            continue
        results.append(fn())
    return results
