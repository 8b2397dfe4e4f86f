"""Effect of the number of prototypes (m >= K) on accuracy, R_rps and decoded-prototype fidelity.

    python3 scripts/prototype_count_study.py --counts 4 8 12 --seeds 0 1
"""
import argparse

import numpy as np

from pmn.config import RunConfig
from pmn.interpret import prototype_fidelity
from pmn.signals import AugmentConfig, clean_template, default_fault_specs
from pmn.train import load_data, train_model


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--counts", type=int, nargs="+", default=[4, 8, 12])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1])
    ap.add_argument("--noise", default="0.1-100")
    ap.add_argument("--epochs", type=int, default=50)
    args = ap.parse_args()

    aug = AugmentConfig.from_label(args.noise)
    templates = np.array([clean_template(s) for s in default_fault_specs()])
    print(f"{'m':>3} {'test_acc':>9} {'r_rps':>7} {'min_cos':>8}")
    for m in args.counts:
        stats = []
        for seed in args.seeds:
            cfg = RunConfig(seed=seed, epochs=args.epochs, num_prototypes=m,
                            augmentation=(aug.v, aug.d, aug.probability))
            res = train_model(cfg, *load_data(cfg))
            last = res.history[-1]
            stats.append((last.test_acc, last.r_rps, prototype_fidelity(res.model, templates).min()))
        acc, rps, cos = np.mean(stats, axis=0)
        print(f"{m:>3} {acc:9.4f} {rps:7.4f} {cos:8.3f}")


if __name__ == "__main__":
    main()
