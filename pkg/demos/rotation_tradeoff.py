"""Train with growing rotation augmentation and watch invariance rise while robustness falls.

For each training angle A the model sees random rotations in [-A, A]. The
script prints the rate of invariance at test angle 180 and the PGD
robustness at a few budgets, then writes both profiles as CSV and SVG.

    python3 demos/rotation_tradeoff.py --arch stdcnn --thetas 0 60 120 180 --out runs/rotation
"""

import argparse
import os

from tradeoff_lab.experiments import desk_splits, profile_pair, rotation_run, rotation_setting
from tradeoff_lab.plots import curve_chart


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--arch", default="stdcnn", choices=["stdcnn", "gcnn"])
    ap.add_argument("--thetas", type=float, nargs="+", default=[0, 60, 120, 180])
    ap.add_argument("--epochs", type=int, default=5)
    ap.add_argument("--train-n", type=int, default=10_000)
    ap.add_argument("--test-n", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/rotation")
    args = ap.parse_args()

    os.makedirs(args.out, exist_ok=True)
    splits = desk_splits(train_n=args.train_n, test_n=args.test_n, seed=args.seed)
    inv_curves, rob_curves = [], []
    for theta in args.thetas:
        model, report = rotation_run(args.arch, theta, splits, epochs=args.epochs, seed=args.seed)
        setting = rotation_setting(theta)
        inv, rob, _ = profile_pair(model, splits.test, epsilon_grid=[0.0, 0.05, 0.1, 0.2, 0.3], seed=args.seed,
                                   model_id=args.arch, setting=setting)
        inv_curves.append(inv)
        rob_curves.append(rob)
        print(f"{setting:>7}: test acc {report.test_accuracy:.3f}  invariance@180 {inv.value_at(180):.3f}  "
              f"robustness@0.1 {rob.value_at(0.1):.3f}  ({report.wall_clock:.0f}s)", flush=True)

    for name, curves in (("invariance", inv_curves), ("robustness", rob_curves)):
        with open(os.path.join(args.out, f"{name}.csv"), "w") as f:
            f.write(curves[0].to_csv())
            for c in curves[1:]:
                f.write(c.to_csv().split("\n", 1)[1])
        with open(os.path.join(args.out, f"{name}.svg"), "w") as f:
            f.write(curve_chart(curves, f"{args.arch} {name} profile"))
    print(f"profiles written to {args.out}")


if __name__ == "__main__":
    main()
