"""Command line driver: ``plaplab <command> --config run.json --out results/``.

Each command writes ``<command>.json`` (summary and rows, sorted keys) and
``<command>.csv`` (one line per row) into the output directory.  ``solve``
also writes the solution as ``u.plf`` and a mid-plane slice ``u_slice.csv``.
The exit status is 0 when every row passed, 1 when any check failed or the
solver diverged, and 2 for configuration errors.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import experiments
from .config import ConfigError, ExperimentConfig, load_config
from .estimates import load_caps
from .fields import write_csv_slice, write_field

COMMANDS = ("solve", "potential", "lorentz", "verify", "hodge", "sweep")
THREADS_ENV = "PLAPLAB_THREADS"

log = logging.getLogger("plaplab")


def _plain(x):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_plain(v) for v in x.tolist()]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    return x


def _cell(v):
    v = _plain(v)
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, dict)):
        return json.dumps(v, sort_keys=True)
    return str(v)


def write_json(path, data):
    with open(path, "w") as fh:
        json.dump(_plain(data), fh, sort_keys=True, indent=2, allow_nan=False)
        fh.write("\n")


def write_rows(path, rows):
    cols = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_cell(r.get(c)) for c in cols])


def thread_count(flag, cfg):
    """Flag, then the environment variable, then the config, then 1."""
    if flag is not None:
        return flag
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV}: not an integer: {env!r}") from None
        if n < 1:
            raise ConfigError(f"{THREADS_ENV}: must be at least 1, got {n}")
        return n
    return cfg.threads or 1


def run(command, cfg, out, base=".", threads=1, cap_file=None):
    """Execute one command and write its artifacts; returns the exit status."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}; expected one of {COMMANDS}")
    caps = load_caps(cap_file)
    if command == "solve":
        result = experiments.run_solve(cfg, base, threads)
    elif command == "potential":
        result = experiments.run_potential(cfg, base, threads)
    elif command == "lorentz":
        result = experiments.run_lorentz(cfg, base, threads)
    elif command == "verify":
        result = experiments.run_verify(cfg, caps, base, threads)
    elif command == "hodge":
        result = experiments.run_hodge(cfg, caps, base, threads)
    else:
        result = experiments.run_sweep(cfg, base, threads)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / f"{command}.json", {"command": command, "seed": cfg.seed, "passed": result["passed"],
                                         "summary": result["summary"], "rows": result["rows"]})
    write_rows(out / f"{command}.csv", result["rows"])
    for name, f in result.get("fields", {}).items():
        write_field(out / f"{name}.plf", f)
        axis = f.grid.dim - 1
        write_csv_slice(out / f"{name}_slice.csv", f, axis, f.grid.shape[axis] // 2)
    failed = [r for r in result["rows"] if not r.get("passed", True)]
    if failed:
        log.warning("%s: %d of %d rows failed", command, len(failed), len(result["rows"]))
    return 0 if result["passed"] else 1


def build_parser():
    ap = argparse.ArgumentParser(prog="plaplab", description="Batch experiments for p-Laplacian type problems.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="JSON experiment config (defaults apply when omitted)")
    ap.add_argument("--out", help="output directory (default: config 'output' or the working directory)")
    ap.add_argument("--seed", type=int, help="override the config seed")
    ap.add_argument("--threads", type=int, help=f"worker threads (overrides {THREADS_ENV})")
    ap.add_argument("--cap-file", help="JSON table of acceptance caps (default: bundled table)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        if args.config:
            cfg = load_config(args.config)
            base = Path(args.config).parent
        else:
            cfg, base = ExperimentConfig(), Path(".")
        if args.seed is not None:
            cfg = cfg.model_copy(update={"seed": args.seed})
        if args.threads is not None and args.threads < 1:
            raise ConfigError(f"--threads: must be at least 1, got {args.threads}")
        if args.cap_file and not Path(args.cap_file).exists():
            raise ConfigError(f"--cap-file: file not found: {args.cap_file}")
        threads = thread_count(args.threads, cfg)
        out = experiments.output_dir(cfg, args.out)
        return run(args.command, cfg, out, base, threads, args.cap_file)
    except (ConfigError, ValueError, OSError) as err:
        print(f"plaplab: error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
