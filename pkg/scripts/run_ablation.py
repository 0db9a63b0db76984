"""Full model vs MIN-off and FSN-off (and temporal augmentation) under shared seeds and budget.

Usage: python scripts/run_ablation.py [--small] [--results DIR] [--cache DIR] [--jobs N]

The default runs the acceptance-size ablation into results/ablation. ``--small``
runs all four variants on the quicker setup into results/ablation_small.
"""
import argparse
import json
import logging
from pathlib import Path

from bmpkit.experiments import ablation_setup, run_ablation, small_ablation_setup
from bmpkit.fusion import ModelConfig

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--small", action="store_true")
    ap.add_argument("--results", type=Path, default=ROOT / "results")
    ap.add_argument("--cache", type=Path, default=ROOT / ".cache" / "datasets")
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    if args.small:
        res = run_ablation(small_ablation_setup(), ModelConfig(), args.cache, args.results / "ablation_small",
                           jobs=args.jobs, variants=("full", "min_off", "fsn_off", "temporal_aug"))
    else:
        res = run_ablation(ablation_setup(), ModelConfig(), args.cache, args.results / "ablation", jobs=args.jobs)
    print(json.dumps({k: v["mean"] for k, v in res.items()}, indent=1))


if __name__ == "__main__":
    main()
