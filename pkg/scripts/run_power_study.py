#!/usr/bin/env python3
"""Desk-scale reproduction of the nine-scenario power study.

Runs all three model classes under all three data configurations across
the standard sample sizes and writes rates.csv + manifest.json.  At the
default desk scale (200 datasets, B=99) expect a few hours on one core,
most of it in the random-intercept cells; use --quick for a coarse pass,
or restrict --models / --sizes.  Set ENVDIAG_THREADS to parallelize.

Full-scale settings from the original design (1000 datasets, B=999) are
available via --full, flagged as long-running for a reason.
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from envdiag.io import run_power_study  # noqa: E402


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="power_study_out")
    ap.add_argument("--models", default="lm,poisson,poisson-ri")
    ap.add_argument("--violations", default="null,mixture,quadratic")
    ap.add_argument("--sizes", default="10,20,40,80")
    ap.add_argument("--n-datasets", type=int, default=200)
    ap.add_argument("--B", type=int, default=99)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--quick", action="store_true",
                    help="50 datasets, B=49, sizes 20 and 40 only")
    ap.add_argument("--full", action="store_true",
                    help="1000 datasets, B=999 (very long-running)")
    args = ap.parse_args()

    n_datasets, B = args.n_datasets, args.B
    sizes = [int(s) for s in args.sizes.split(",")]
    if args.quick:
        n_datasets, B, sizes = 50, 49, [20, 40]
    if args.full:
        n_datasets, B = 1000, 999

    config = {
        "models": args.models.split(","),
        "violations": args.violations.split(","),
        "sample_sizes": sizes,
        "n_datasets": n_datasets,
        "B": B,
        "alpha": 0.05,
        "seed": args.seed,
    }
    t0 = time.time()
    csv_path, manifest_path = run_power_study(config, args.out)
    print(f"rates    -> {csv_path}")
    print(f"manifest -> {manifest_path}")
    print(f"elapsed  {time.time() - t0:.0f}s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
