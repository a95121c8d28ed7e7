"""Summarise variance.csv from a fluctuation run as observed vs predicted per mode.

Usage: python3 scripts/variance_report.py out/fluct_eq_e1 [more run dirs ...]
"""
import csv
import json
import sys
from pathlib import Path


def report(run: Path) -> None:
    manifest = json.loads((run / "manifest.json").read_text())
    print(f"{run}: {manifest['experiment']}, R={manifest['config']['replicas']}, "
          f"rate={manifest['config']['rate_family']}")
    with open(run / "variance.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            var, pred, se = float(row["var"]), float(row["predicted"]), float(row["se_var"])
            print(f"  t={float(row['t']):<6g} {row['field']:<11} z={row['z']:<3} "
                  f"var={var:.5f} pred={pred:.5f} se={se:.5f} z-score={float(row['z_score']):+.2f}")


if __name__ == "__main__":
    for arg in sys.argv[1:] or ["out/fluct_eq_e1"]:
        report(Path(arg))
