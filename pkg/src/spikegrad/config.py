"""Run configuration: one YAML document drives any experiment.

The schema is a nested whitelist; unknown keys are rejected by full path so
typos never silently fall back to defaults. All defaults are the fixed
parameter values used throughout the experiments (potential is
dimensionless with threshold 1; times in ms).
"""

import copy
import os

import yaml

from .experiments import NetworkTemplate, PoissonSpec
from .gradients import LearnConfig
from .kernels import AhpParams, ImpactParams
from .network import SimConfig


class ConfigError(Exception):
    """Invalid or unreadable run configuration."""


DEFAULTS = {
    "master_seed": 1,
    "out_dir": "out",
    "jobs": 1,
    "experiment": {
        "kind": "single",          # single | two_layer
        "n_synapses": 10,
        "variants": None,          # explicit per-channel kernel variants
        "inputs": 5,               # two_layer sizes
        "hidden": 5,
        "input_variants": None,
        "hidden_variants": None,
    },
    "suite": {
        "n_pairs": 4,
        "n_updates": 2000,
        "record_every": 100,
        "stratified": False,
        "stop_on_convergence": True,
        "conv_threshold": 0.02,
        "conv_window": 1000,
        "weight_range": None,      # null -> calibrate
        "max_sim_s": 20000.0,
        "trace": False,
    },
    "input": {
        "kind": "sinusoidal",
        "rate": 10.0,
        "max_rate": 10.0,
        "mod_freq": 2.0,
    },
    "sim": {
        "dt": 0.05,
        "upsilon": 500.0,
        "crossing_tol": 1.0e-6,
        "theta": 1.0,
        "refractory": 1.0,
        "w_min": 1.0e-4,
        "denom_floor": 1.0e-6,
    },
    "learn": {
        "mu": 0.01,
        "cap": None,               # null -> 0.05 * mean calibrated weight
        "update_delay": 0.1,
    },
    "kernels": {
        "exc": {"alpha": 1.5, "beta": 1.0, "tau1": 20.0},
        "inh": {"alpha": 1.2, "beta": 1.0, "tau1": 10.0},
        "nmda": {"alpha": 1.5, "beta": 5.0, "tau1": 80.0},
        "gabab": {"alpha": 1.2, "beta": 50.0, "tau1": 100.0},
        "ahp": {"amplitude": 1000.0, "tau2": 1.2},
        "impact_horizon": 150.0,
        "delay_range": [0.4, 0.9],
    },
    "gradcheck": {
        "kernel_points": 200,
        "quad_grid": 4,
        "error_pairs": 200,
        "tape_triples": 10,
        "chain_cases": 4,
        "descent_cases": 4,
    },
    "figdata": {
        "n_pairs": None,
        "n_updates": None,
    },
}


def _merge(defaults, user, path=""):
    out = copy.deepcopy(defaults)
    if user is None:
        return out
    if not isinstance(user, dict):
        raise ConfigError(f"section '{path or '<root>'}' must be a mapping")
    for key, val in user.items():
        full = f"{path}.{key}" if path else str(key)
        if key not in defaults:
            raise ConfigError(f"unknown config key '{full}'")
        if isinstance(defaults[key], dict):
            out[key] = _merge(defaults[key], val, full)
        else:
            out[key] = val
    return out


def load_config(path):
    """Read, merge with defaults and validate; raises ConfigError."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if doc is None:
        doc = {}
    cfg = _merge(DEFAULTS, doc)
    validate(cfg)
    return cfg


def validate(cfg):
    """Cross-field checks beyond the dataclass invariants."""
    try:
        sim_config(cfg)
        impact_params(cfg)
        poisson_spec(cfg)
        template(cfg)
        if cfg["learn"]["cap"] is not None:
            learn_config(cfg, cfg["learn"]["cap"])
        else:
            LearnConfig(mu=cfg["learn"]["mu"], cap=1.0,
                        update_delay=cfg["learn"]["update_delay"])
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    if cfg["suite"]["weight_range"] is not None:
        lo, hi = cfg["suite"]["weight_range"]
        if not 0 < lo < hi:
            raise ConfigError("suite.weight_range must be [lo, hi] with 0 < lo < hi")
    if cfg["suite"]["n_pairs"] < 0 or cfg["suite"]["n_updates"] < 0:
        raise ConfigError("suite sizes must be >= 0")
    if cfg["jobs"] < 1:
        raise ConfigError("jobs must be >= 1")


def sim_config(cfg) -> SimConfig:
    s = cfg["sim"]
    return SimConfig(dt=s["dt"], upsilon=s["upsilon"],
                     crossing_tol=s["crossing_tol"], theta=s["theta"],
                     refractory=s["refractory"], w_min=s["w_min"],
                     denom_floor=s["denom_floor"], seed=cfg["master_seed"])


def impact_params(cfg) -> ImpactParams:
    return ImpactParams(t_horizon=cfg["kernels"]["impact_horizon"])


def poisson_spec(cfg) -> PoissonSpec:
    i = cfg["input"]
    return PoissonSpec(kind=i["kind"], rate=i["rate"], max_rate=i["max_rate"],
                       mod_freq=i["mod_freq"])


def learn_config(cfg, cap) -> LearnConfig:
    l = cfg["learn"]
    return LearnConfig(mu=l["mu"], cap=cap, update_delay=l["update_delay"])


def resolve_cap(cfg, weight_range):
    """Explicit cap, or 5% of the mean calibrated weight scale."""
    if cfg["learn"]["cap"] is not None:
        return cfg["learn"]["cap"]
    return 0.05 * 0.5 * (weight_range[0] + weight_range[1])


def kernel_tuple(cfg):
    k = cfg["kernels"]
    table = {}
    for name, sign in (("exc", 1.0), ("inh", -1.0), ("nmda", 1.0), ("gabab", -1.0)):
        table[name] = dict(alpha=k[name]["alpha"], beta=k[name]["beta"],
                           tau1=k[name]["tau1"], sign=sign)
    return tuple(sorted((k2, tuple(sorted(v.items()))) for k2, v in table.items()))


def template(cfg) -> NetworkTemplate:
    e = cfg["experiment"]
    k = cfg["kernels"]
    ahp = AhpParams(amplitude=k["ahp"]["amplitude"], tau2=k["ahp"]["tau2"])
    delay_range = tuple(k["delay_range"])
    kern = kernel_tuple(cfg)
    if e["kind"] == "single":
        variants = e["variants"] or ["exc"] * e["n_synapses"]
        return NetworkTemplate(len(variants), (1,), tuple(variants),
                               (), kern, ahp, delay_range)
    if e["kind"] == "two_layer":
        iv = e["input_variants"] or ["exc"] * e["inputs"]
        hv = e["hidden_variants"] or ["exc"] * e["hidden"]
        return NetworkTemplate(len(iv), (len(hv), 1), tuple(iv), tuple(hv),
                               kern, ahp, delay_range)
    raise ConfigError(f"unknown experiment.kind '{e['kind']}'")


def dump_config(cfg, path):
    from .cli import atomic_write
    atomic_write(path, yaml.safe_dump(cfg, sort_keys=True))
