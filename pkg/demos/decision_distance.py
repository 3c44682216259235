"""Average DeepFool distance to the decision boundary before and after rotation training.

Models trained with larger rotations sit closer to their decision boundary
on rotated inputs, which is one way to see why they are easier to attack.

    python3 demos/decision_distance.py --thetas 0 180
"""

import argparse

from tradeoff_lab.experiments import deepfool_distance, desk_splits, rotated_points, rotation_run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--thetas", type=float, nargs="+", default=[0, 180])
    ap.add_argument("--test-rotation", type=float, default=180.0)
    ap.add_argument("--epochs", type=int, default=5)
    ap.add_argument("--points", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    splits = desk_splits(test_n=args.points, seed=args.seed)
    rotated = rotated_points(splits.test.images, args.test_rotation, seed=args.seed + 7)
    for theta in args.thetas:
        model, _ = rotation_run("stdcnn", theta, splits, epochs=args.epochs, seed=args.seed)
        plain, n_plain = deepfool_distance(model, splits.test.images)
        rot, n_rot = deepfool_distance(model, rotated)
        print(f"trained rot{theta:g}: mean l2 distance {plain:.3f} on test ({n_plain} converged), "
              f"{rot:.3f} on rotated test ({n_rot} converged)", flush=True)


if __name__ == "__main__":
    main()
