"""Command-line entry point: ``zrp <experiment> [--config PATH] [...]``.

Every run writes its CSV tables and a ``manifest.json`` into ``--out``.
Floats are written with 17 significant digits so they round-trip exactly.
"""
from __future__ import annotations

import argparse
import csv
import json
import platform
import sys
import time
from pathlib import Path

import numba
import numpy as np
import scipy

from . import __version__
from .config import EXPERIMENTS, ConfigError, ExperimentConfig, parse_config
from .experiments import ExperimentResult, Table, run_experiment, worker_count


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path: Path, table: Table) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(table.header)
        for row in table.rows:
            w.writerow([format_value(v) for v in row])


def write_outputs(result: ExperimentResult, cfg: ExperimentConfig, out: Path, wall: float,
                  workers: int) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    for name, table in result.tables.items():
        write_csv(out / name, table)
    manifest = {
        "experiment": result.name,
        "config": cfg.to_dict(),
        "files": sorted(result.tables),
        "checks": [
            {"name": c.name, "passed": bool(c.passed), "value": float(c.value),
             "threshold": float(c.threshold), "detail": c.detail}
            for c in result.checks
        ],
        "summary": {k: (float(v) if isinstance(v, (float, np.floating)) else v)
                    for k, v in result.summary.items()},
        "versions": {"zrp": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__},
        "workers": workers,
        "wall_time_s": wall,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zrp", description="Zero-range process experiments.")
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="INI configuration file")
        p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        p.add_argument("--replicas", type=int, help="number of replicas R")
        p.add_argument("--out", type=Path, default=Path("out") / name, help="output directory")
        p.add_argument("--assert", dest="check", action="store_true",
                       help="exit nonzero if any acceptance comparison fails")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text = args.config.read_text() if args.config else ""
        cfg = parse_config(text, args.experiment, seed=args.seed, replicas=args.replicas)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    workers = worker_count(max(cfg.replicas, 1))
    t0 = time.perf_counter()
    result = run_experiment(cfg, workers)
    wall = time.perf_counter() - t0
    write_outputs(result, cfg, args.out, wall, workers)
    for c in result.checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.value:.6g} vs {c.threshold:.6g} {c.detail}".rstrip())
    print(f"wrote {len(result.tables)} table(s) to {args.out} in {wall:.1f} s")
    if args.check and not result.passed:
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
