#!/usr/bin/env python3
"""Mean AMOTA of the built-in affinity ablation variants on noisy crossing scenarios.

For custom sweeps use ``qd3dt ablate --config configs/ablation_crossing.toml``.
"""
import argparse

from qd3dt.experiments import crossing_ablation


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=20)
    args = ap.parse_args()
    scores = crossing_ablation(range(args.seeds))
    width = max(map(len, scores))
    for name, value in scores.items():
        print(f"{name:<{width}}  {value:.4f}")


if __name__ == "__main__":
    main()
