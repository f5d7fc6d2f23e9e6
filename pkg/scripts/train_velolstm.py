#!/usr/bin/env python3
"""Train VeloLSTM on the synthetic motion corpus and compare against the zero-motion baseline on a holdout."""
import argparse
import time

from qd3dt.experiments import velolstm_holdout
from qd3dt.motion import OptimizerConfig, save_params


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--train-seeds", type=int, default=8, help="number of training scenarios")
    ap.add_argument("--holdout-seeds", type=int, default=4)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--hidden", type=int, default=128)
    ap.add_argument("--lr", type=float, default=0.01)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--output", default="velolstm.vlstm")
    args = ap.parse_args()

    opt = OptimizerConfig(learning_rate=args.lr, epochs=args.epochs, batch_size=32, dt=1.0 / 12.0, seed=args.seed)
    t0 = time.perf_counter()
    params, trained, baseline, curve = velolstm_holdout(range(args.train_seeds),
                                                        range(100, 100 + args.holdout_seeds),
                                                        hidden=args.hidden, config=opt)
    save_params(params, args.output)
    print(f"train loss {curve[0]:.5f} -> {curve[-1]:.5f} over {args.epochs} epochs")
    print(f"holdout L_predict {trained:.5f} vs zero-motion {baseline:.5f} (ratio {trained / baseline:.3f})")
    print(f"{time.perf_counter() - t0:.1f} s, model written to {args.output}")


if __name__ == "__main__":
    main()
