"""PMN versus the autoencoder + MLP baseline: test accuracy and R_rps per noise level and seed.

    python3 scripts/compare_baseline.py --noise 0-0 0.1-100 0.2-100 0.2-200 --seeds 0 1 2
"""
import argparse

import numpy as np

from pmn.config import RunConfig
from pmn.signals import AugmentConfig
from pmn.train import load_data, train_model

VARIANTS = ("pmn", "ae-mlp-baseline")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--noise", nargs="+", default=["0.2-200"])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epochs", type=int, default=50)
    args = ap.parse_args()

    print(f"{'noise':>8} {'seed':>4} {'variant':>16} {'test_acc':>9} {'r_rps':>7}")
    for label in args.noise:
        aug = AugmentConfig.from_label(label)
        summary = {v: [] for v in VARIANTS}
        for seed in args.seeds:
            for variant in VARIANTS:
                cfg = RunConfig(seed=seed, epochs=args.epochs, variant=variant,
                                augmentation=(aug.v, aug.d, aug.probability))
                last = train_model(cfg, *load_data(cfg)).history[-1]
                summary[variant].append((last.test_acc, last.r_rps))
                print(f"{label:>8} {seed:>4} {variant:>16} {last.test_acc:9.4f} {last.r_rps:7.4f}")
        for variant, vals in summary.items():
            acc, rps = np.mean(vals, axis=0)
            print(f"{label:>8} {'mean':>4} {variant:>16} {acc:9.4f} {rps:7.4f}")
        wins = sum(p[1] < b[1] for p, b in zip(summary["pmn"], summary["ae-mlp-baseline"]))
        print(f"{label:>8} PMN has the lower R_rps in {wins}/{len(args.seeds)} seeds")


if __name__ == "__main__":
    main()
