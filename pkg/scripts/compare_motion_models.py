#!/usr/bin/env python3
"""Position RMSE of each motion model's refined states against raw detections on the synthetic motion corpus."""
import argparse

import numpy as np

from qd3dt.experiments import refinement_trial
from qd3dt.motion import load_params, make_motion_factory


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=20)
    ap.add_argument("--model", help="VeloLSTM parameter file; adds a velolstm row")
    args = ap.parse_args()

    factories = {name: make_motion_factory(name) for name in ("none", "momentum", "kf3d")}
    if args.model:
        factories["velolstm"] = make_motion_factory("velolstm", params=load_params(args.model))
    seeds = [1000 + s for s in range(args.trials)]
    raw = None
    print(f"{'model':<10} {'rmse_m':>8} {'wins_vs_raw':>12}")
    for name, factory in factories.items():
        trials = [refinement_trial(s, factory) for s in seeds]
        raw = [r for _, r in trials]
        wins = sum(m < r for m, r in trials)
        print(f"{name:<10} {np.mean([m for m, _ in trials]):8.4f} {wins:>8}/{len(seeds)}")
    print(f"{'raw':<10} {np.mean(raw):8.4f}")


if __name__ == "__main__":
    main()
