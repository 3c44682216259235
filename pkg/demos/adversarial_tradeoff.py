"""Adversarially train LeNet at growing PGD budgets and watch rotation invariance fall.

    python3 demos/adversarial_tradeoff.py --epsilons 0.1 0.3 --out runs/adversarial
"""

import argparse
import os

from tradeoff_lab.experiments import adversarial_run, adversarial_setting, desk_splits, profile_pair
from tradeoff_lab.plots import curve_chart


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epsilons", type=float, nargs="+", default=[0.1, 0.3])
    ap.add_argument("--epochs", type=int, default=5)
    ap.add_argument("--train-steps", type=int, default=3, help="PGD steps per training minibatch")
    ap.add_argument("--train-n", type=int, default=10_000)
    ap.add_argument("--test-n", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/adversarial")
    args = ap.parse_args()

    os.makedirs(args.out, exist_ok=True)
    splits = desk_splits(train_n=args.train_n, test_n=args.test_n, seed=args.seed)
    inv_curves, rob_curves = [], []
    for eps in args.epsilons:
        model, report = adversarial_run("lenet", eps, splits, epochs=args.epochs, seed=args.seed,
                                        train_steps=args.train_steps)
        setting = adversarial_setting(eps)
        inv, rob, _ = profile_pair(model, splits.test, theta_grid=[0, 30, 60, 90, 120, 150, 180],
                                   epsilon_grid=[0.0, 0.1, 0.2, 0.3, 0.4], seed=args.seed, model_id="lenet",
                                   setting=setting)
        inv_curves.append(inv)
        rob_curves.append(rob)
        print(f"{setting:>7}: test acc {report.test_accuracy:.3f}  robustness@0.3 {rob.value_at(0.3):.3f}  "
              f"invariance@90 {inv.value_at(90):.3f}  ({report.wall_clock:.0f}s)", flush=True)

    for name, curves in (("invariance", inv_curves), ("robustness", rob_curves)):
        with open(os.path.join(args.out, f"{name}.svg"), "w") as f:
            f.write(curve_chart(curves, f"lenet {name} profile"))
    print(f"charts written to {args.out}")


if __name__ == "__main__":
    main()
