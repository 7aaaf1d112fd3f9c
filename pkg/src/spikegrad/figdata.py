"""Desk-scale regeneration of the CSV data behind each result figure."""

import numpy as np

from . import config as cfgmod
from .error import error_grad_vector
from .experiments import (PoissonSpec, SuiteConfig, mixed_single_template,
                          mixed_two_layer_template, run_suite,
                          single_neuron_template, two_layer_template, calibrate)
from .kernels import EPSILON_MS, ImpactParams

SCATTER_HEADER = ["pair_id", "seed", "initial_mape", "final_mape",
                  "delta_mape", "outcome"]
TRAJ_HEADER = ["pair_id", "neuron_id", "update_idx", "mape"]

FIGURE_IDS = ("fig1d", "fig2a", "fig2b", "fig2c", "fig2d", "fig3a", "fig3b",
              "fig3c", "fig3d", "fig4a", "fig4b", "fig5a", "fig5b")


def build_suite(cfg, template=None, input_spec=None, **overrides):
    """SuiteConfig from a validated run config, with weight range resolved."""
    if template is None:
        template = cfgmod.template(cfg)
    if input_spec is None:
        input_spec = cfgmod.poisson_spec(cfg)
    sim = cfgmod.sim_config(cfg)
    s = cfg["suite"]
    weight_range = overrides.pop("weight_range", None) or s["weight_range"]
    if weight_range is None:
        weight_range = calibrate(template, sim, cfg["master_seed"])
    learn = cfgmod.learn_config(cfg, cfgmod.resolve_cap(cfg, weight_range))
    kw = dict(
        template=template, input_spec=input_spec, sim=sim, learn=learn,
        impact=cfgmod.impact_params(cfg), master_seed=cfg["master_seed"],
        n_pairs=s["n_pairs"], n_updates=s["n_updates"],
        record_every=s["record_every"], weight_range=tuple(weight_range),
        stratified=s["stratified"], stop_on_convergence=s["stop_on_convergence"],
        conv_threshold=s["conv_threshold"], conv_window=s["conv_window"],
        jobs=cfg["jobs"], max_sim_s=s["max_sim_s"], trace=s["trace"],
    )
    kw.update(overrides)
    return SuiteConfig(**kw)


def _sizes(cfg, default_pairs, default_updates):
    n_pairs = cfg["figdata"]["n_pairs"] or default_pairs
    n_updates = cfg["figdata"]["n_updates"] or default_updates
    return n_pairs, n_updates


def fig1d_rows(cfg):
    """|disparity gradient| against output-spike age, random vector pairs."""
    n, _ = _sizes(cfg, 10000, 0)
    rng = np.random.default_rng(np.random.SeedSequence([cfg["master_seed"], 0xF16]))
    T = cfgmod.impact_params(cfg)
    ups = cfg["sim"]["upsilon"]
    rows = []
    for _ in range(n):
        tO = np.maximum(rng.uniform(0.0, ups, rng.integers(1, 11)), EPSILON_MS)
        tD = np.maximum(rng.uniform(0.0, ups, rng.integers(1, 11)), EPSILON_MS)
        g = np.abs(error_grad_vector(tD, tO, T))
        rows.extend(zip(tO.tolist(), g.tolist()))
    return ["t_ms", "abs_dE_dt"], rows


def _single_suite(cfg, kind, template, n_pairs, n_updates, stratified=False):
    spec = (PoissonSpec(kind="homogeneous", rate=10.0) if kind == "homogeneous"
            else PoissonSpec(kind="sinusoidal", max_rate=10.0, mod_freq=2.0))
    suite = build_suite(cfg, template=template, input_spec=spec,
                        n_pairs=n_pairs, n_updates=n_updates,
                        stratified=stratified)
    return run_suite(suite)


def fig2a_rows(cfg):
    n_pairs, n_updates = _sizes(cfg, 200, 10000)
    res = _single_suite(cfg, "homogeneous", single_neuron_template(),
                        n_pairs, n_updates)
    return SCATTER_HEADER, res.scatter_rows()


def fig2b_rows(cfg):
    n_pairs, n_updates = _sizes(cfg, 200, 10000)
    res = _single_suite(cfg, "sinusoidal", single_neuron_template(),
                        n_pairs, n_updates)
    return SCATTER_HEADER, res.scatter_rows()


def fig2c_rows(cfg):
    n_pairs, n_updates = _sizes(cfg, 20, 30000)
    res = _single_suite(cfg, "sinusoidal", single_neuron_template(),
                        n_pairs, n_updates, stratified=True)
    return TRAJ_HEADER, res.trajectory_rows()


def fig2d_rows(cfg):
    n_pairs, n_updates = _sizes(cfg, 20, 30000)
    res = _single_suite(cfg, "sinusoidal", mixed_single_template(),
                        n_pairs, n_updates, stratified=True)
    return TRAJ_HEADER, res.trajectory_rows()


def _two_layer_result(cfg, max_rate=10.0, pair_indices=None, n_pairs=None,
                      n_updates=None, template=None):
    dp, du = _sizes(cfg, 20, 30000)
    spec = PoissonSpec(kind="sinusoidal", max_rate=max_rate, mod_freq=2.0)
    suite = build_suite(cfg, template=template or two_layer_template(),
                        input_spec=spec, n_pairs=n_pairs or dp,
                        n_updates=n_updates or du, pair_indices=pair_indices)
    return run_suite(suite)


def _filter_traj(res, keep):
    rows = []
    for r in res.reports:
        if not keep(r):
            continue
        for upd, per_neuron in r.mape_series:
            for n, v in enumerate(per_neuron):
                rows.append((r.pair_index, n, upd, float(v)))
    return rows


def fig3a_rows(cfg):
    res = _two_layer_result(cfg)
    return TRAJ_HEADER, _filter_traj(res, lambda r: r.outcome == "converged")


def fig3b_rows(cfg):
    res = _two_layer_result(cfg)
    conv = [r.pair_index for r in res.reports if r.outcome == "converged"]
    first = conv[0] if conv else -1
    return TRAJ_HEADER, _filter_traj(res, lambda r: r.pair_index == first)


def fig3c_rows(cfg):
    res = _two_layer_result(cfg)
    return TRAJ_HEADER, _filter_traj(res, lambda r: r.outcome != "converged")


def fig3d_rows(cfg):
    res = _two_layer_result(cfg)
    div = [r.pair_index for r in res.reports if r.outcome != "converged"]
    first = div[0] if div else -1
    return TRAJ_HEADER, _filter_traj(res, lambda r: r.pair_index == first)


def fig4a_rows(cfg):
    base = _two_layer_result(cfg)
    div = tuple(r.pair_index for r in base.reports if r.outcome != "converged")
    if not div:
        return TRAJ_HEADER, []
    res = _two_layer_result(cfg, max_rate=2.0, pair_indices=div,
                            n_pairs=len(div))
    return TRAJ_HEADER, _filter_traj(res, lambda r: True)


def fig4b_rows(cfg):
    base = _two_layer_result(cfg)
    div = [r.pair_index for r in base.reports if r.outcome != "converged"]
    if not div:
        return TRAJ_HEADER, []
    res = _two_layer_result(cfg, max_rate=2.0, pair_indices=(div[0],),
                            n_pairs=1)
    return TRAJ_HEADER, _filter_traj(res, lambda r: True)


def fig5_rows(cfg):
    res = _two_layer_result(cfg, template=mixed_two_layer_template())
    conv = [r.pair_index for r in res.reports if r.outcome == "converged"]
    first = conv[0] if conv else -1
    return TRAJ_HEADER, _filter_traj(res, lambda r: r.pair_index == first)


def figure_rows(fig_id, cfg):
    """(header, rows) for a known figure id; KeyError for unknown ids."""
    table = {
        "fig1d": fig1d_rows, "fig2a": fig2a_rows, "fig2b": fig2b_rows,
        "fig2c": fig2c_rows, "fig2d": fig2d_rows, "fig3a": fig3a_rows,
        "fig3b": fig3b_rows, "fig3c": fig3c_rows, "fig3d": fig3d_rows,
        "fig4a": fig4a_rows, "fig4b": fig4b_rows,
        "fig5a": fig5_rows, "fig5b": fig5_rows,
    }
    return table[fig_id](cfg)
