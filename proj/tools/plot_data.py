#!/usr/bin/env python3
"""Aggregate metrics.jsonl files into per-step mean/std tables across seeds.

Reads OUT/<experiment>/<divergence>/<seed>/metrics.jsonl and writes one CSV
with columns experiment, divergence, step, n_seeds and <metric>_mean /
<metric>_std for every numeric metric.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import pandas as pd

METRICS = [
    "forward_kl",
    "reverse_kl",
    "total_variation",
    "jensen_shannon",
    "kl_from_base",
    "alignment",
    "entropy",
    "reward_mean",
    "reward_std",
    "z_hat",
]


def _number(v):
    if v is None:
        return np.nan
    if v == "inf":
        return np.inf
    return float(v)


def load_rows(root: Path) -> pd.DataFrame:
    records = []
    for path in sorted(root.glob("*/*/*/metrics.jsonl")):
        seed_dir = path.parent
        experiment, divergence, seed = seed_dir.parent.parent.name, seed_dir.parent.name, seed_dir.name
        with path.open() as fh:
            for line in fh:
                row = json.loads(line)
                if row.get("type") != "metrics":
                    continue
                rec = {"experiment": experiment, "divergence": divergence, "seed": seed, "step": row["step"]}
                rec.update({m: _number(row.get(m)) for m in METRICS})
                records.append(rec)
    return pd.DataFrame.from_records(records)


def aggregate(df: pd.DataFrame) -> pd.DataFrame:
    grouped = df.groupby(["experiment", "divergence", "step"], sort=True)
    stats = grouped[METRICS].agg(["mean", "std"])
    stats.columns = [f"{m}_{s}" for m, s in stats.columns]
    stats.insert(0, "n_seeds", grouped["seed"].nunique())
    return stats.reset_index()


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("root", type=Path, nargs="?", default=Path("out"), help="output root of run/sweep")
    ap.add_argument("-o", "--output", type=Path, help="CSV path (default: stdout)")
    ap.add_argument("--experiment", help="restrict to one experiment")
    args = ap.parse_args()

    df = load_rows(args.root)
    if df.empty:
        print(f"no metrics.jsonl files under {args.root}", file=sys.stderr)
        return 1
    if args.experiment:
        df = df[df["experiment"] == args.experiment]
    table = aggregate(df)
    table.to_csv(args.output if args.output else sys.stdout, index=False)
    return 0


if __name__ == "__main__":
    sys.exit(main())
