"""Rotation invariance profiles, robustness profiles, fooling rate and
average DeepFool distance."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .attacks import AttackConfig, deepfool_l2, pgd
from .data import rotate_images
from .models import predict

DEFAULT_THETA_GRID = tuple(range(0, 181, 15))
DEFAULT_EPSILON_GRID = tuple(round(0.1 * i, 1) for i in range(11))
CSV_HEADER = ("sweep", "metric", "stderr", "n", "model_id", "setting", "seed")


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float
    n: int


def _bernoulli(hits):
    hits = np.asarray(hits, dtype=bool).ravel()
    n = hits.size
    if n == 0:
        return Estimate(float("nan"), float("nan"), 0)
    v = float(hits.mean())
    return Estimate(v, float(np.sqrt(v * (1 - v) / n)), n)


@dataclass
class ProfileCurve:
    metric: str
    sweep: list
    values: list
    stderr: list
    n: list
    model_id: str = ""
    setting: str = ""
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.sweep, self.sweep[1:])):
            raise ValueError("sweep values must be strictly increasing")

    @property
    def points(self):
        return list(zip(self.sweep, self.values))

    def value_at(self, s):
        return self.values[self.sweep.index(s)]

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for s, v, e, n in zip(self.sweep, self.values, self.stderr, self.n):
            w.writerow([repr(float(s)), repr(float(v)), repr(float(e)), n, self.model_id, self.setting, self.seed])
        return buf.getvalue()


def _unit_draws(seed, k_draws, n):
    return np.random.default_rng(seed).uniform(-1.0, 1.0, size=(k_draws, n))


def rate_of_invariance(model, images, theta, k_draws=4, seed=0, angle_grid=None, clean_pred=None):
    """Fraction of (image, draw) pairs whose prediction survives a random rotation.

    Angles are ``theta * u`` with u ~ U[-1, 1] drawn from ``seed``, so curves
    over theta share their random numbers. With ``angle_grid`` the angles are
    drawn uniformly from that finite set instead (diagnostic mode).
    """
    if not 0 <= theta <= 180:
        raise ValueError(f"theta must lie in [0, 180], got {theta}")
    if k_draws < 1:
        raise ValueError("k_draws must be >= 1")
    images = np.asarray(images, dtype=np.float64)
    n = len(images)
    base = predict(model, images) if clean_pred is None else clean_pred
    if angle_grid is not None:
        grid = np.asarray(angle_grid, dtype=np.float64)
        angles = grid[np.random.default_rng(seed).integers(len(grid), size=(k_draws, n))]
    else:
        angles = theta * _unit_draws(seed, k_draws, n)
    hits = np.empty((k_draws, n), dtype=bool)
    for k in range(k_draws):
        if theta == 0 and angle_grid is None:
            hits[k] = True
            continue
        hits[k] = predict(model, rotate_images(images, angles[k])) == base
    return _bernoulli(hits)


def rotation_invariance_profile(model, images, theta_grid=DEFAULT_THETA_GRID, k_draws=4, seed=0,
                                model_id="", setting=""):
    grid = list(theta_grid)
    if any(not 0 <= t <= 180 for t in grid):
        raise ValueError("theta grid must lie in [0, 180]")
    clean = predict(model, images)
    ests = [rate_of_invariance(model, images, t, k_draws, seed, clean_pred=clean) for t in grid]
    return ProfileCurve("rate_of_invariance", grid, [e.value for e in ests], [e.stderr for e in ests],
                        [e.n for e in ests], model_id, setting, seed, {"k_draws": k_draws})


def fooling_rate(model, attack, images, clean_pred=None):
    """Fraction of inputs whose prediction changes under ``attack`` (a map x -> x')."""
    images = np.asarray(images, dtype=np.float64)
    base = predict(model, images) if clean_pred is None else clean_pred
    return _bernoulli(predict(model, attack(images)) != base)


def robustness_profile(model, images, labels, epsilon_grid=DEFAULT_EPSILON_GRID, attack_cfg=None,
                       nested=False, model_id="", setting=""):
    """(1 - fooling rate) under PGD for each budget, plus adversarial accuracy.

    Returns ``(robustness_curve, adversarial_accuracy_curve)``. In nested
    mode each budget continues from the previous budget's iterate and a point
    already fooled keeps its earlier perturbation, which makes the curve
    non-increasing by construction.
    """
    cfg = attack_cfg or AttackConfig()
    grid = list(epsilon_grid)
    if any(not 0 <= e <= 1 for e in grid):
        raise ValueError("epsilon grid must lie in [0, 1]")
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels)
    clean = predict(model, images)
    rob, acc = [], []
    prev_x, prev_fooled = None, None
    for eps in grid:
        c = cfg.with_epsilon(eps)
        if nested and prev_x is not None:
            x_adv = pgd(model, images, labels, c, x_init=prev_x)
            pred = predict(model, x_adv)
            keep = prev_fooled & (pred == clean)
            x_adv[keep] = prev_x[keep]
            pred[keep] = prev_pred[keep]
        else:
            x_adv = pgd(model, images, labels, c)
            pred = predict(model, x_adv)
        fooled = pred != clean
        rob.append(_bernoulli(~fooled))
        acc.append(_bernoulli(pred == labels))
        prev_x, prev_fooled, prev_pred = x_adv, fooled, pred
    meta = {"attack": "pgd", "steps": cfg.steps, "step_size": "2.5*eps/steps" if cfg.step_size is None else cfg.step_size,
            "random_start": cfg.random_start, "nested": nested}
    mk = lambda name, ests: ProfileCurve(name, grid, [e.value for e in ests], [e.stderr for e in ests],
                                         [e.n for e in ests], model_id, setting, cfg.seed, dict(meta))
    return mk("robustness", rob), mk("adversarial_accuracy", acc)


def avg_perturbation_distance(model, images, max_iter=50, overshoot=0.02):
    """Mean DeepFool l2 norm over converged points, and the converged count."""
    res = deepfool_l2(model, images, max_iter, overshoot)
    norms = res.norms[res.converged]
    count = int(res.converged.sum())
    return (float(norms.mean()) if count else float("nan")), count
