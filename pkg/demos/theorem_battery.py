"""Monte Carlo check of the invariance-vs-robustness bound on the synthetic distribution.

Prints the three accuracies of each classifier in the battery and whether
the bound, the mixture decomposition and the impossibility clause hold.

    python3 demos/theorem_battery.py --d 100 --n 100000
"""

import argparse

from tradeoff_lab.theorem import SyntheticParams, f_star_accuracy, f_star_classifier, run_battery, tradeoff_check


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--d", type=int, default=100)
    ap.add_argument("--n", type=int, default=100_000)
    ap.add_argument("--p", type=float, nargs="+", default=[0.6, 0.7, 0.9])
    ap.add_argument("--delta", type=float, default=0.05)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    print("closed form for f*: clean %.5f, after A %.5f, after r %.3f"
          % tuple(f_star_accuracy(e) for e in ("clean", "after_A", "after_r")))
    print(f"{'classifier':<12}{'p':>5}{'P(f(X)=Y)':>12}{'after A':>10}{'after r':>10}{'lhs':>9}{'rhs':>8}  verdict")
    for v in run_battery(args.p, (args.d,), args.n, args.seed, args.delta):
        print(f"{v.classifier:<12}{v.p:>5}{v.prob_clean:>12.4f}{v.prob_A:>10.4f}{v.prob_r:>10.4f}"
              f"{v.lhs:>9.4f}{v.rhs:>8.3f}  {'pass' if v.passed else v.failure()}")

    # With p = 0.9 and delta = 0.2 even the Bayes-optimal f* cannot stay above 1 - delta after r.
    v = tradeoff_check(f_star_classifier(), SyntheticParams(d=args.d, p=0.9, delta=0.2), args.n, args.seed)
    print(f"f* at p=0.9, delta=0.2: P(f(r(X))=Y) = {v.prob_r:.4f} vs 1 - delta = 0.8")


if __name__ == "__main__":
    main()
