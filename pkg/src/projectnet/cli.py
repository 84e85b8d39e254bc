"""Command line: ``projectnet run|bench|validate CONFIG``.

Exit codes: 0 ok, 1 config error, 2 training/solver divergence,
3 infeasible problem or second stage.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys

import numpy as np

from . import experiments as ex
from .autodiff import NonFiniteError
from .end2end import InfeasibleSecondStageError
from .metatrain import TrainingDivergedError
from .problems import EmptyFeasibleRegionError, build_problem

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_INFEASIBLE = 0, 1, 2, 3

log = logging.getLogger("projectnet")


def load_config(path):
    with open(path) as fh:
        return json.load(fh)


def _apply_flags(cfg, args):
    cfg = dict(cfg)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.threads is not None:
        cfg["threads"] = args.threads
    if args.out is not None:
        cfg["out"] = args.out
    return cfg


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else repr(float(v))
    return str(v)


def write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(columns)
        for r in rows:
            vals = [r.get(c) for c in columns] if isinstance(r, dict) else r
            wr.writerow([_fmt(v) for v in vals])


def _jsonable(o):
    if isinstance(o, dict):
        return {k: _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, (np.bool_, bool)):
        return bool(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (float, np.floating)):
        return None if not np.isfinite(o) else float(o)
    return o


def write_result(out, cfg, res: ex.Result):
    os.makedirs(out, exist_ok=True)
    write_csv(os.path.join(out, "metrics.csv"), ex.METRIC_COLUMNS, res.metrics)
    for name, (cols, rows) in res.tables.items():
        write_csv(os.path.join(out, f"{name}.csv"), cols, rows)
    for name, obj in res.checkpoints.items():
        with open(os.path.join(out, f"{name}.json"), "w") as fh:
            json.dump(obj.to_dict(), fh)
    report = {"experiment": cfg["experiment"], "seed": cfg["seed"], "table": res.table, "checks": res.checks,
              "config": cfg}
    with open(os.path.join(out, "report.json"), "w") as fh:
        json.dump(_jsonable(report), fh, indent=1)


def _guard(fn):
    """Run fn() mapping known failures onto exit codes."""
    try:
        return fn()
    except (ex.ConfigError, OSError, json.JSONDecodeError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingDivergedError, NonFiniteError, FloatingPointError) as e:
        print(f"diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (EmptyFeasibleRegionError, InfeasibleSecondStageError) as e:
        print(f"infeasible: {e}", file=sys.stderr)
        inst = getattr(e, "instance", None)
        if inst:
            print(json.dumps(_jsonable(inst)), file=sys.stderr)
        return EXIT_INFEASIBLE


def cmd_run(args):
    def go():
        cfg = ex.merge_config(_apply_flags(load_config(args.config), args))
        diags = validate_config(cfg, merged=True)
        if diags:
            raise ex.ConfigError("; ".join(diags))
        res = ex.EXPERIMENTS[cfg["experiment"]](cfg)
        write_result(cfg["out"], cfg, res)
        for row in res.table:
            print("  ".join(f"{k}={_fmt(v)}" for k, v in row.items()))
        print(f"wrote {cfg['out']}")
        return EXIT_OK

    return _guard(go)


def cmd_bench(args):
    def go():
        cfg = ex.merge_config(_apply_flags(load_config(args.config), args))
        if "bench" not in cfg:
            raise ex.ConfigError(f"experiment {cfg['experiment']!r} has no size sweep; use electricity-e2e")
        rows, slopes = ex.bench(cfg)
        out = cfg["out"]
        os.makedirs(out, exist_ok=True)
        write_csv(os.path.join(out, "bench.csv"),
                  ["size", "samples", "projectnet_epoch_time", "oracle_in_loop_epoch_time"], rows)
        with open(os.path.join(out, "bench.json"), "w") as fh:
            json.dump(_jsonable({"loglog_slope": slopes, "rows": rows}), fh, indent=1)
        for r in rows:
            print(f"size={r[0]}  projectnet={r[2]:.4g}s  oracle_in_loop={r[3]:.4g}s")
        print(f"log-log slopes: projectnet={slopes['projectnet']:.3g}  oracle_in_loop={slopes['oracle_in_loop']:.3g}")
        return EXIT_OK

    return _guard(go)


_PROBLEM = {
    "matching-regret": lambda c: build_problem("matching", n=c["problem"]["n"]),
    "newsvendor-e2e": lambda c: build_problem("capacitated-newsvendor", K=c["problem"]["K"],
                                              C=c["problem"]["C"] if c["problem"]["C"] is not None else np.inf,
                                              h=c["problem"]["h"], b=c["problem"]["b"]),
    "newsvendor-nofeature": lambda c: [build_problem("capacitated-newsvendor", K=c["problem"]["K"], C=C)
                                       for C in c["problem"]["capacities"]],
    "newsvendor-quadratic": lambda c: build_problem("quadratic-newsvendor", **c["problem"]),
    "crossfulfill-2stage": lambda c: [build_problem("crossfulfill-first-stage", n=c["problem"]["n"]),
                                      build_problem("crossfulfill-second-stage", n=c["problem"]["n"],
                                                    m=c["problem"]["n"])],
    "electricity-e2e": lambda c: build_problem("electricity", **c["problem"]),
    "shortestpath-e2e": lambda c: build_problem("shortest-path", side=c["problem"]["side"]),
    "toy-viz": lambda c: build_problem("toy-polytope"),
}


def validate_config(cfg, merged=False):
    """Diagnostics (list of strings, empty when valid).  Never raises."""
    try:
        diags = [] if merged else ex.config_errors(cfg)
        if diags:
            return diags
        c = cfg if merged else ex.merge_config(cfg)
    except Exception as e:  # noqa: BLE001 - validate reports, never throws
        return [f"config: {e}"]
    try:
        probs = _PROBLEM[c["experiment"]](c)
        for p in probs if isinstance(probs, list) else [probs]:
            if p.witness is None:
                continue
            if p.rhs_set is None and p.violation(p.witness) > 1e-8:
                diags.append(f"problem {p.kind}: witness violates constraints by {p.violation(p.witness):.3g}")
    except EmptyFeasibleRegionError as e:
        diags.append(f"problem: empty feasible region ({e})")
    except Exception as e:  # noqa: BLE001
        diags.append(f"problem: {e}")
    try:
        ex._scfg(c, c["threads"]) if "solver" in c else None
    except Exception as e:  # noqa: BLE001
        diags.append(f"solver: {e}")
    path = c.get("data", {}).get("csv")
    if path and not os.path.isfile(path):
        diags.append(f"data.csv: file not found: {path}")
    return diags


def cmd_validate(args):
    try:
        cfg = _apply_flags(load_config(args.config), args)
    except FileNotFoundError:
        diags = [f"config: file not found: {args.config}"]
    except Exception as e:  # noqa: BLE001
        diags = [f"config: {e}"]
    else:
        diags = validate_config(cfg)
    for d in diags:
        print(d)
    if not diags:
        print("ok")
    return EXIT_OK if not diags else EXIT_CONFIG


def build_parser():
    ap = argparse.ArgumentParser(prog="projectnet", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn in (("run", cmd_run), ("bench", cmd_bench), ("validate", cmd_validate)):
        sp = sub.add_parser(name)
        sp.add_argument("config_pos", nargs="?", metavar="CONFIG")
        sp.add_argument("--config")
        sp.add_argument("--out")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int)
        sp.add_argument("-v", "--verbose", action="store_true")
        sp.set_defaults(fn=fn)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    args.config = args.config or args.config_pos
    if not args.config:
        ap.error("a config file is required")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
