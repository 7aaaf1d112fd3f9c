"""Command-line entry points: run, gradcheck, figdata.

Exit codes: 0 success, 1 failing gradcheck oracles, 2 configuration or I/O
errors. All files are written atomically (temp file + rename) and all
numeric CSV fields use fixed 6-decimal formatting so identical configs
yield identical bytes.
"""

import argparse
import json
import os
import sys
import tempfile
import time

import yaml

from . import checks, figdata
from .config import ConfigError, load_config
from .experiments import run_suite


def atomic_write(path, text):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp_", text=True)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def write_csv(path, header, rows):
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    atomic_write(path, "\n".join(lines) + "\n")


def _apply_overrides(cfg, args):
    if args.seed is not None:
        cfg["master_seed"] = args.seed
    if args.jobs is not None:
        cfg["jobs"] = args.jobs
    if args.out_dir is not None:
        cfg["out_dir"] = args.out_dir
    return cfg


def cmd_run(args):
    cfg = _apply_overrides(load_config(args.config), args)
    t0 = time.perf_counter()
    suite = figdata.build_suite(cfg)
    result = run_suite(suite)
    out = cfg["out_dir"]
    write_csv(os.path.join(out, "scatter.csv"), figdata.SCATTER_HEADER,
              result.scatter_rows())
    write_csv(os.path.join(out, "trajectories.csv"), figdata.TRAJ_HEADER,
              result.trajectory_rows())
    if suite.trace:
        for r in result.reports:
            if r.trace_rows:
                write_csv(os.path.join(out, f"trace_{r.pair_index}.csv"),
                          ["update_idx", "trigger_time_ms", "error_value",
                           "raw_grad_norm", "applied_norm", "capped"],
                          r.trace_rows)
    summary = {
        "n_pairs": len(result.reports),
        "improvement_fraction": result.improvement_fraction,
        "converged": result.converged_count,
        "diverged": result.diverged_count,
        "slow": sum(r.outcome == "slow" for r in result.reports),
        "aborted_updates": sum(r.aborted_updates for r in result.reports),
        "weight_range": list(result.weight_range),
        "master_seed": cfg["master_seed"],
        "runtime_s": round(time.perf_counter() - t0, 3),
    }
    atomic_write(os.path.join(out, "summary.json"),
                 json.dumps(summary, indent=2, sort_keys=True) + "\n")
    from .config import dump_config
    dump_config(cfg, os.path.join(out, "config_echo.yaml"))
    print(f"{len(result.reports)} pairs: improvement "
          f"{result.improvement_fraction:.3f}, converged "
          f"{result.converged_count}, diverged {result.diverged_count}")
    return 0


def cmd_gradcheck(args):
    cfg = _apply_overrides(load_config(args.config), args)
    only = args.only if args.only else None
    results = checks.run_checks(cfg, only)
    if not results:
        print("0 checks run (selection matched nothing)")
        return 0
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} of {len(results)} checks FAILED: "
              + ", ".join(r.name for r in failed))
        return 1
    print(f"all {len(results)} checks passed")
    return 0


def cmd_figdata(args):
    cfg = _apply_overrides(load_config(args.config), args)
    if args.figure not in figdata.FIGURE_IDS:
        print(f"unknown figure id '{args.figure}'; known: "
              + " ".join(figdata.FIGURE_IDS), file=sys.stderr)
        return 2
    header, rows = figdata.figure_rows(args.figure, cfg)
    path = os.path.join(cfg["out_dir"], f"{args.figure}.csv")
    write_csv(path, header, rows)
    print(f"wrote {len(rows)} rows to {path}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="spikegrad",
        description="Witness-based spike-train transformation learning runs")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=None,
                        help="override master_seed")
        sp.add_argument("--jobs", type=int, default=None,
                        help="parallel pair workers")
        sp.add_argument("--out-dir", default=None, help="output directory")

    sp = sub.add_parser("run", help="run the configured suite")
    sp.add_argument("config")
    common(sp)
    sp.set_defaults(fn=cmd_run)

    sp = sub.add_parser("gradcheck", help="run oracle verification checks")
    sp.add_argument("config")
    sp.add_argument("--only", action="append", default=None,
                    help="substring filter on check names (repeatable)")
    common(sp)
    sp.set_defaults(fn=cmd_gradcheck)

    sp = sub.add_parser("figdata", help="emit the CSV behind one figure")
    sp.add_argument("figure")
    sp.add_argument("config")
    common(sp)
    sp.set_defaults(fn=cmd_figdata)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
