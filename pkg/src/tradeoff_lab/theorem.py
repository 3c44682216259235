"""Monte Carlo laboratory for the invariance-vs-robustness impossibility bound.

Synthetic law over (X, Y) with X in R^(2d+1), Y uniform on {-1, +1}:

    X_0      | Y=y  =  y with probability p, -y otherwise
    X_(2t-1) | Y=y  ~  N( 3y/sqrt(d), 1)     t = 1..d
    X_(2t)   | Y=y  ~  N(-3y/sqrt(d), 1)

The perturbation A shifts odd coordinates by -6y/sqrt(d) and even ones by
+6y/sqrt(d) (l-inf norm 6/sqrt(d)); the random transform r swaps every
(odd, even) pair with probability 1/2. For every classifier f,

    P(f(r(X)) = Y) + (2p-1)/(2(1-p)) P(f(X+A(X)) = Y) <= p/(2(1-p)),

so when p < 1 - delta the two accuracies cannot both exceed 1 - delta.

Random numbers come from numpy's PCG64 ``Generator``; normals use its
ziggurat sampler. Every estimate is a function of (params, n, seed) only.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

EVENTS = ("clean", "after_A", "after_r")
VERDICT_HEADER = ("classifier", "p", "d", "n", "prob_r", "prob_A", "lhs", "rhs", "pass")
Z = 3.0  # standard errors allowed on every statistical comparison


@dataclass(frozen=True)
class SyntheticParams:
    d: int = 100
    p: float = 0.9
    delta: float = 0.2

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if not 0.5 <= self.p < 1:
            raise ValueError(f"p must lie in [1/2, 1), got {self.p}")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")

    @property
    def coefficient(self):
        return (2 * self.p - 1) / (2 * (1 - self.p))

    @property
    def bound(self):
        return self.p / (2 * (1 - self.p))


@dataclass(frozen=True)
class SyntheticBatch:
    X: np.ndarray  # n x (2d+1)
    Y: np.ndarray  # n, values in {-1, +1}

    @property
    def d(self):
        return (self.X.shape[1] - 1) // 2


@dataclass(frozen=True)
class BinaryClassifier:
    name: str
    fn: object  # (n, 2d+1) array -> (n,) array of +-1

    def __call__(self, X):
        return self.fn(np.atleast_2d(X))


def _sign(v):
    return np.where(v >= 0, 1, -1)


def sample(params, n, seed):
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    d, p = params.d, params.p
    Y = rng.choice(np.array([-1, 1]), size=n)
    agree = rng.random(n) < p
    X = np.empty((n, 2 * d + 1))
    X[:, 0] = np.where(agree, Y, -Y)
    mu = 3.0 * Y[:, None] / np.sqrt(d)
    X[:, 1::2] = mu + rng.standard_normal((n, d))
    X[:, 2::2] = -mu + rng.standard_normal((n, d))
    return SyntheticBatch(X, Y)


def f_star(X):
    """sign of the sum of the odd coordinates; sign(0) = +1."""
    X = np.atleast_2d(X)
    return _sign(X[:, 1::2].sum(axis=1))


def perturb_A(X, Y, d=None):
    """X + A(X): coordinate 0 fixed, odd coordinates -6y/sqrt(d), even +6y/sqrt(d)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.broadcast_to(np.asarray(Y), (len(X),))
    if np.any(np.abs(Y) != 1):
        raise ValueError("labels must be +-1")
    d = (X.shape[1] - 1) // 2 if d is None else d
    shift = 6.0 * Y[:, None] / np.sqrt(d)
    out = X.copy()
    out[:, 1::2] -= shift
    out[:, 2::2] += shift
    return out


def swap_pairs(X):
    """(x0, x1, x2, ..., x_(2d-1), x_2d) -> (x0, x2, x1, ..., x_2d, x_(2d-1))."""
    X = np.atleast_2d(X)
    out = X.copy()
    out[:, 1::2] = X[:, 2::2]
    out[:, 2::2] = X[:, 1::2]
    return out


def transform_r(X, rng=None, swap=None):
    """Swap all odd/even pairs of each row with probability 1/2.

    ``swap`` (bool per row, or a single bool) forces the coin.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if swap is None:
        swap = rng.random(len(X)) < 0.5
    swap = np.broadcast_to(np.asarray(swap, dtype=bool), (len(X),))
    return np.where(swap[:, None], swap_pairs(X), X)


def _event_inputs(event, params, n, seed):
    """(inputs to the classifier, labels) for one Monte Carlo event."""
    if event not in EVENTS:
        raise ValueError(f"event must be one of {EVENTS}")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    data_seed, coin_seed = ss.spawn(2)
    batch = sample(params, n, data_seed)
    X = batch.X
    if event == "after_A":
        X = perturb_A(X, batch.Y, params.d)
    elif event == "after_r":
        X = transform_r(X, np.random.default_rng(coin_seed))
    return X, batch.Y


def _hit_rate(classifier, X, Y):
    est = float(np.mean(classifier(X) == Y))
    return est, float(np.sqrt(est * (1 - est) / len(Y)))


def estimate_prob(classifier, event, params, n, seed):
    """Monte Carlo P(f(event(X)) = Y); returns (estimate, standard error)."""
    return _hit_rate(classifier, *_event_inputs(event, params, n, seed))


# ---------------------------------------------------------------------------
# closed forms


def f_star_accuracy(event):
    """Exact P(f*(.) = Y): the odd-coordinate sum is N(3y sqrt(d), d)."""
    return {"clean": norm.cdf(3.0), "after_A": norm.cdf(-3.0), "after_r": 0.5}[event]


# ---------------------------------------------------------------------------
# classifier battery


def constant_classifier(value=1):
    return BinaryClassifier(f"constant{value:+d}", lambda X: np.full(len(X), value))


def sign_x0():
    return BinaryClassifier("sign_x0", lambda X: _sign(X[:, 0]))


def f_star_classifier():
    return BinaryClassifier("f_star", f_star)


def logistic_classifier(params, n=10_000, seed=0):
    """Logistic regression fitted on ``n`` clean samples."""
    from sklearn.linear_model import LogisticRegression

    batch = sample(params, n, seed)
    clf = LogisticRegression(max_iter=1000).fit(batch.X, batch.Y)
    w, b = clf.coef_[0].copy(), float(clf.intercept_[0])
    return BinaryClassifier("logistic", lambda X: _sign(X @ w + b))


def battery(params, seed=0):
    return [f_star_classifier(), sign_x0(), constant_classifier(1), logistic_classifier(params, seed=seed)]


# ---------------------------------------------------------------------------
# verdicts


@dataclass
class Verdict:
    classifier: str
    p: float
    d: int
    n: int
    delta: float
    prob_clean: float
    prob_A: float
    prob_r: float
    se_clean: float
    se_A: float
    se_r: float
    lhs: float
    rhs: float
    inequality_ok: bool
    decomposition_gap: float
    decomposition_se: float
    decomposition_ok: bool
    impossibility_applies: bool
    impossibility_ok: bool

    @property
    def passed(self):
        return self.inequality_ok and self.decomposition_ok and self.impossibility_ok

    def failure(self):
        if self.passed:
            return None
        parts = []
        if not self.inequality_ok:
            parts.append(f"inequality lhs={self.lhs:.6f} > rhs={self.rhs:.6f}")
        if not self.decomposition_ok:
            parts.append(f"decomposition gap {self.decomposition_gap:.6f} (se {self.decomposition_se:.6f})")
        if not self.impossibility_ok:
            parts.append(f"both accuracies above 1-delta={1 - self.delta:.3f}")
        return f"{self.classifier} p={self.p} d={self.d}: " + "; ".join(parts)


def tradeoff_check(classifier, params, n, seed):
    """Estimate the three accuracies on independent samples and test

    (i) the final inequality of the bound within Z propagated standard errors,
    (ii) P(f(r(X))=Y) = (P(f(X)=Y) + P(f(X+A(X))=Y)) / 2 within Z errors,
    (iii) when p < 1 - delta, that the r and A accuracies are not both
         above 1 - delta by more than Z errors each.
    """
    return tradeoff_checks([classifier], params, n, seed)[0]


def tradeoff_checks(classifiers, params, n, seed):
    """tradeoff_check for several classifiers on one shared set of event samples."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    events = [_event_inputs(e, params, n, s) for e, s in zip(("clean", "after_A", "after_r"), ss.spawn(3))]
    return [_verdict(clf, params, n, *[_hit_rate(clf, X, Y) for X, Y in events]) for clf in classifiers]


def _verdict(classifier, params, n, clean, after_a, after_r):
    (pc, sc), (pa, sa), (pr, sr) = clean, after_a, after_r
    c = params.coefficient
    lhs = pr + c * pa
    rhs = params.bound
    se_lhs = np.sqrt(sr**2 + (c * sa) ** 2)
    gap = pr - 0.5 * (pc + pa)
    se_gap = np.sqrt(sr**2 + 0.25 * (sc**2 + sa**2))
    applies = params.p < 1 - params.delta
    floor = 1 - params.delta
    both_high = (pr - Z * sr > floor) and (pa - Z * sa > floor)
    return Verdict(
        classifier.name, params.p, params.d, n, params.delta,
        pc, pa, pr, sc, sa, sr, lhs, rhs,
        bool(lhs <= rhs + Z * se_lhs),
        float(gap), float(se_gap), bool(abs(gap) <= Z * se_gap),
        applies, bool(not (applies and both_high)),
    )


def verdict_csv(verdicts):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(VERDICT_HEADER)
    for v in verdicts:
        w.writerow([v.classifier, repr(v.p), v.d, v.n, repr(v.prob_r), repr(v.prob_A), repr(v.lhs), repr(v.rhs),
                    "pass" if v.passed else "fail"])
    return buf.getvalue()


def run_battery(p_values=(0.6, 0.7, 0.9), d_values=(4, 100), n=100_000, seed=0, delta=0.05):
    verdicts = []
    for d in d_values:
        for p in p_values:
            params = SyntheticParams(d=d, p=p, delta=delta)
            verdicts += tradeoff_checks(battery(params, seed=seed), params, n, [seed, d, int(round(p * 1000))])
    return verdicts
