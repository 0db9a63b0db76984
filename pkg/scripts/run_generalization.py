"""Train on RGB-like renders at acceptance size and report zero-shot accuracies.

Usage: python scripts/run_generalization.py [--results DIR] [--cache DIR] [--seed N] [--jobs N]
"""
import argparse
import json
import logging
from pathlib import Path

from bmpkit.experiments import CHANCE, generalization_setup, run_generalization
from bmpkit.fusion import ModelConfig

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--results", type=Path, default=ROOT / "results")
    ap.add_argument("--cache", type=Path, default=ROOT / ".cache" / "datasets")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--force", action="store_true", help="retrain even if a matching result exists")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    res = run_generalization(generalization_setup(), ModelConfig(), args.cache, args.results / "generalization",
                             train_seed=args.seed, jobs=args.jobs, reuse=not args.force)
    print(json.dumps(res["accuracy"], indent=1))
    print(f"chance {CHANCE:.3f}; best epoch {res['best_epoch']}; training {res['train_seconds'] / 60:.1f} min")


if __name__ == "__main__":
    main()
