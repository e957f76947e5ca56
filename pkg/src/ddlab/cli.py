"""Command-line entry point: ``ddlab <subcommand> [--config FILE] [--seed N] ...``.

Outputs go to ``--out`` (default ``runs/<subcommand>``): ``results.csv`` and
``meta.json``. Failures exit nonzero with a JSON object on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import selftest as selftest_mod
from .config import EXPERIMENTS, config_from_dict, default_config, load_config
from .errors import ConfigError
from .experiments import run_experiment

CSV_SCHEMAS = """\
CSV schemas (every row ends with config_hash):
  track-likelihood  path,x0,aux0,logp0,max_abs_error
  bias-bounds       estimator_id,value,std_error,n,seed
  mode-curve        lambda_s,s,y_ode,y_grid,cells_off
  nonsmooth-demo    found,lambda_star,left_mode,right_mode,displacement,grid_cell
  hp-sample         threshold_lambda,path,y0_0..,logp_y0,seed
  tradeoff          threshold_lambda,n,spread,mean_logp_y0,mean_logp_exact
  hp-vs-samples     threshold_lambda,anchor,fraction
  beta-invariance   beta_ref,beta,n,ks_statistic,p_value
  selftest          check,passed,value,threshold
Vector entries inside one CSV field are joined with ';'.
Environment: DDLAB_THREADS caps the number of worker threads (default 1).
"""


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ddlab",
        description="Density-tracking diffusion experiments on analytic Gaussian mixtures.",
        epilog=CSV_SCHEMAS,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = p.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        sp = sub.add_parser(name, help=f"run the {name} experiment", epilog=CSV_SCHEMAS,
                            formatter_class=argparse.RawDescriptionHelpFormatter)
        _common(sp)
    sp = sub.add_parser("print-config", help="print the default config of an experiment as JSON")
    sp.add_argument("experiment", nargs="?", default="track-likelihood", choices=EXPERIMENTS)
    sp = sub.add_parser("selftest", help="fast deterministic self-checks")
    _common(sp)
    return p


def _common(sp):
    sp.add_argument("--config", help="JSON config file (keys as printed by print-config)")
    sp.add_argument("--seed", type=int, help="unsigned 64-bit seed")
    sp.add_argument("--out", help="output directory")
    sp.add_argument("--steps", type=int, help="integrator steps (n_steps)")
    sp.add_argument("--paths", type=int, help="number of paths or samples (n_paths)")


def _resolve_config(args, experiment: str):
    if args.config:
        cfg = load_config(args.config)
        if cfg.experiment != experiment:
            raise ConfigError("experiment", f"config is for {cfg.experiment!r}, command is {experiment!r}")
        data = cfg.to_dict()
    else:
        data = default_config(experiment).to_dict()
    for flag, key in (("seed", "seed"), ("steps", "n_steps"), ("paths", "n_paths")):
        v = getattr(args, flag)
        if v is not None:
            data[key] = v
    return config_from_dict(data)


def write_outputs(out: Path, header, rows, meta: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "results.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        w.writerows(rows)
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=str) + "\n")


def _versions():
    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__}


def _fail(exc: Exception, code: int) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ConfigError):
        payload["field"] = exc.field
    node = getattr(exc, "node", None)
    if node is not None:
        payload["node"] = node
    sys.stderr.write(json.dumps(payload) + "\n")
    return code


def main(argv=None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "print-config":
            print(default_config(args.experiment).to_json())
            return 0
        if args.command == "selftest":
            cfg = _resolve_config_selftest(args)
            header, rows, ok = selftest_mod.run(cfg["seed"])
            out = Path(args.out or "runs/selftest")
            meta = {"command": "selftest", "seed": cfg["seed"], "passed": ok, "versions": _versions(),
                    "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S")}
            write_outputs(out, header, rows, meta)
            for r in rows:
                print(f"{'PASS' if r[1] == 'true' else 'FAIL'} {r[0]} value={r[2]} threshold={r[3]}")
            return 0 if ok else 1
        cfg = _resolve_config(args, args.command)
        start = time.perf_counter()
        result = run_experiment(cfg)
        meta = {
            "command": args.command,
            "config": cfg.to_dict(),
            "config_hash": cfg.hash(),
            "seed": cfg.seed,
            "summary": result.summary,
            "versions": _versions(),
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
            "elapsed_seconds": round(time.perf_counter() - start, 3),
        }
        out = Path(args.out or f"runs/{args.command}")
        write_outputs(out, result.header, result.rows, meta)
        print(json.dumps({"out": str(out), "config_hash": cfg.hash(), "summary": result.summary}, default=str))
        return 0
    except ConfigError as exc:
        return _fail(exc, 2)
    except Exception as exc:  # every failure leaves a machine-readable record
        return _fail(exc, 1)


def _resolve_config_selftest(args):
    seed = 0 if args.seed is None else int(args.seed)
    if not 0 <= seed < 2**64:
        raise ConfigError("seed", "must be an unsigned 64-bit integer")
    return {"seed": seed}


if __name__ == "__main__":
    sys.exit(main())
