"""FGSM, l-inf PGD and multiclass l2 DeepFool.

A model is anything with ``forward(x_tensor, track_params=False)`` returning
[B, C] logits. Attack gradients are taken of the mean cross-entropy against
the true labels; the batch mean only rescales each row so the sign steps
are unaffected.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .models import argmax_lowest, predict_logits


@dataclass(frozen=True)
class DeepFoolConfig:
    max_iter: int = 50
    overshoot: float = 0.02


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 0.3
    steps: int = 40
    step_size: float | None = None  # None: 2.5 * epsilon / steps
    random_start: bool = True
    seed: int = 0
    deepfool: DeepFoolConfig = field(default_factory=DeepFoolConfig)

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.step_size is not None and self.step_size <= 0:
            raise ValueError("step_size must be > 0")

    @property
    def alpha(self):
        return self.step_size if self.step_size is not None else 2.5 * self.epsilon / self.steps

    def with_epsilon(self, epsilon):
        return AttackConfig(epsilon, self.steps, self.step_size, self.random_start, self.seed, self.deepfool)


def input_gradient(model, x, y):
    """d(mean cross-entropy)/dx for a batch, with parameters held constant."""
    xt = T.Tensor(x, requires_grad=True)
    loss = T.softmax_cross_entropy(model.forward(xt, track_params=False), y)
    (g,) = T.grad(loss, [xt])
    return g


def per_sample_loss(model, x, y, batch_size=500):
    logits = predict_logits(model, x, batch_size)
    logp = T.log_softmax(logits)
    return -logp[np.arange(len(y)), np.asarray(y)]


def _batched(fn, x, y, batch_size):
    out = np.empty_like(x)
    for i in range(0, len(x), batch_size):
        out[i:i + batch_size] = fn(x[i:i + batch_size], y[i:i + batch_size])
    return out


def ball_bounds(x0, eps):
    """Per-pixel [lo, hi] of the l-inf ball intersected with the [0, 1] box.

    The bounds are nudged by one ulp where rounding would otherwise put
    ``x0 + eps`` (or ``x0 - eps``) a hair farther than ``eps`` from ``x0``.
    """
    lo, hi = x0 - eps, x0 + eps
    lo = np.where(x0 - lo > eps, np.nextafter(lo, np.inf), lo)
    hi = np.where(hi - x0 > eps, np.nextafter(hi, -np.inf), hi)
    return np.clip(lo, 0.0, 1.0), np.clip(hi, 0.0, 1.0)


def fgsm(model, x, y, epsilon, batch_size=128):
    """x' = clip(x + epsilon * sign(grad_x J), 0, 1); sign(0) = 0."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if epsilon == 0:
        return x.copy()
    lo, hi = ball_bounds(x, epsilon)
    step = lambda xb, yb: xb + epsilon * np.sign(input_gradient(model, xb, yb))
    return np.minimum(np.maximum(_batched(step, x, y, batch_size), lo), hi)


def pgd(model, x, y, cfg, x_init=None, batch_size=128):
    """Projected sign-gradient ascent inside the l-inf ball around ``x``
    intersected with the [0, 1] box. Returns the final iterate.

    ``x_init`` replaces the random start (used to continue an attack from a
    smaller budget).
    """
    x0 = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    eps = cfg.epsilon
    if eps == 0:
        return x0.copy()
    lo, hi = ball_bounds(x0, eps)
    if x_init is not None:
        start = np.clip(np.asarray(x_init, dtype=np.float64), lo, hi)
    elif cfg.random_start:
        rng = np.random.default_rng(cfg.seed)
        start = np.clip(x0 + rng.uniform(-eps, eps, size=x0.shape), lo, hi)
    else:
        start = x0.copy()
    alpha = cfg.alpha
    out = np.empty_like(x0)
    for i in range(0, len(x0), batch_size):
        sl = slice(i, i + batch_size)
        xb, lob, hib = start[sl], lo[sl], hi[sl]
        for _ in range(cfg.steps):
            g = input_gradient(model, xb, y[sl])
            xb = np.minimum(np.maximum(xb + alpha * np.sign(g), lob), hib)
        out[sl] = xb
    return out


@dataclass
class DeepFoolResult:
    perturbation: np.ndarray  # r, same shape as the input batch
    converged: np.ndarray  # bool per point
    iterations: np.ndarray  # int per point

    @property
    def norms(self):
        return np.sqrt((self.perturbation.reshape(len(self.perturbation), -1) ** 2).sum(axis=1))


def _class_gradients(model, x):
    """Logits [B, C] and per-class input gradients [C, B, ...]."""
    xt = T.Tensor(x, requires_grad=True)
    logits = model.forward(xt, track_params=False)
    B, C = logits.shape
    grads = np.empty((C,) + x.shape)
    for k in range(C):
        onehot = np.zeros((B, C))
        onehot[:, k] = 1.0
        (grads[k],) = T.grad(T.dot_const(logits, onehot), [xt])
    return logits.data, grads


def deepfool_l2(model, x, max_iter=50, overshoot=0.02, labels=None, batch_size=128):
    """Multiclass DeepFool on a batch.

    Each iteration linearises every competing logit difference and steps
    exactly onto the nearest linearised boundary. The iterate tested is
    x + (1 + overshoot) * r; points whose prediction already differs from
    ``labels`` (default: the clean prediction) return r = 0 immediately.
    """
    x = np.asarray(x, dtype=np.float64)
    N = len(x)
    r = np.zeros_like(x)
    converged = np.zeros(N, dtype=bool)
    iterations = np.zeros(N, dtype=int)
    for i in range(0, N, batch_size):
        sl = slice(i, min(i + batch_size, N))
        k0 = argmax_lowest(predict_logits(model, x[sl])) if labels is None else np.asarray(labels)[sl]
        _deepfool_batch(model, x[sl], k0, max_iter, overshoot, r[sl], converged[sl], iterations[sl])
    return DeepFoolResult(r, converged, iterations)


def _deepfool_batch(model, x, k0, max_iter, overshoot, r, converged, iterations):
    n = len(x)
    active = np.ones(n, dtype=bool)
    for it in range(max_iter + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            return
        xi = x[idx] + (1.0 + overshoot) * r[idx]
        if it == max_iter:
            pred = argmax_lowest(predict_logits(model, xi))
            converged[idx] = pred != k0[idx]
            return
        logits, grads = _class_gradients(model, xi)
        pred = argmax_lowest(logits)
        done = pred != k0[idx]
        converged[idx[done]] = True
        active[idx[done]] = False
        for j in np.flatnonzero(~done):
            p = idx[j]
            k = k0[p]
            w = grads[:, j] - grads[k, j]
            f = logits[j] - logits[j, k]
            wn = np.sqrt((w.reshape(len(w), -1) ** 2).sum(axis=1))
            with np.errstate(divide="ignore", invalid="ignore"):
                dist = np.where(wn > 0, np.abs(f) / wn, np.inf)
            dist[k] = np.inf
            l = int(np.argmin(dist))
            if not np.isfinite(dist[l]):
                active[p] = False  # flat logits: no direction to follow
                continue
            r[p] += (np.abs(f[l]) / wn[l] ** 2) * w[l]
            iterations[p] += 1


def fooling_perturbation_norms(model, x, max_iter=50, overshoot=0.02):
    """DeepFool l2 norms of the converged points and how many converged."""
    res = deepfool_l2(model, x, max_iter, overshoot)
    norms = res.norms[res.converged]
    return norms, int(res.converged.sum())
