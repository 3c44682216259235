"""Minibatch SGD with optional random-rotation augmentation or PGD adversarial training."""

from __future__ import annotations

import csv
import dataclasses
import io
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .attacks import AttackConfig, pgd
from .data import AugmentationPolicy, rotate_images, sample_angles
from .models import predict


class TrainingDiverged(RuntimeError):
    pass


def training_attack(epsilon, steps=10, seed=0):
    """PGD settings used inside adversarial training (fewer steps than evaluation)."""
    return AttackConfig(epsilon=epsilon, steps=steps, random_start=True, seed=seed)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5
    batch_size: int = 64
    lr: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    augmentation: AugmentationPolicy = field(default_factory=AugmentationPolicy)
    adversarial: AttackConfig | None = None
    mix_clean: bool = False  # adversarial arm: average clean and perturbed loss

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.augmentation.max_angle > 0 and self.adversarial is not None:
            raise ValueError("rotation augmentation and adversarial training are separate arms; enable one")

    def echo(self):
        return dataclasses.asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    val_acc: float


@dataclass
class TrainReport:
    history: list
    config: dict
    test_accuracy: float | None = None
    wall_clock: float = 0.0

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "loss", "val_acc"])
        for rec in self.history:
            w.writerow([rec.epoch, repr(rec.loss), repr(rec.val_acc)])
        return buf.getvalue()


def accuracy(model, ds, batch_size=500):
    if len(ds) == 0:
        return float("nan")
    return float(np.mean(predict(model, ds.images, batch_size) == ds.labels))


def train(model, ds, cfg, val=None, test=None):
    """Train a copy of ``model`` on ``ds``; the input model and dataset are untouched.

    Streams (shuffling + rotation angles, dropout masks, attack seeds) are
    independent children of ``cfg.seed``, so switching the adversarial arm
    on with epsilon 0 leaves the trajectory bit-identical.
    """
    t0 = time.perf_counter()
    model = model.copy()
    data_ss, drop_ss, attack_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    data_rng = np.random.default_rng(data_ss)
    drop_rng = np.random.default_rng(drop_ss)
    attack_rng = np.random.default_rng(attack_ss)
    opt = T.SGDMomentum(cfg.lr, cfg.momentum)
    names = list(model.params)
    theta = cfg.augmentation.max_angle
    history = []
    N = len(ds)
    for epoch in range(1, cfg.epochs + 1):
        order = data_rng.permutation(N)
        angles = sample_angles(data_rng, N, theta) if theta > 0 else None
        total, seen = 0.0, 0
        for start in range(0, N, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb = ds.images[idx]
            yb = ds.labels[idx]
            if angles is not None:
                xb = rotate_images(xb, angles[start:start + len(idx)])
            if cfg.adversarial is not None:
                atk = dataclasses.replace(cfg.adversarial, seed=int(attack_rng.integers(2**63)))
                x_adv = pgd(model, xb, yb, atk)
                xb = np.concatenate([xb, x_adv]) if cfg.mix_clean else x_adv
                yb = np.concatenate([yb, yb]) if cfg.mix_clean else yb
            try:
                loss = T.softmax_cross_entropy(model.forward(T.Tensor(xb), train=True, rng=drop_rng), yb)
            except FloatingPointError as exc:
                raise TrainingDiverged(f"non-finite activations in epoch {epoch}, batch at {start}") from exc
            if not np.isfinite(loss.data):
                raise TrainingDiverged(f"loss became {loss.data} in epoch {epoch}")
            grads = T.grad(loss, [model.params[n] for n in names])
            opt.step(model.params, dict(zip(names, grads)))
            total += float(loss.data) * len(idx)
            seen += len(idx)
        val_acc = accuracy(model, val) if val is not None else float("nan")
        history.append(EpochRecord(epoch, total / max(seen, 1), val_acc))
    report = TrainReport(history, cfg.echo())
    if test is not None:
        report.test_accuracy = accuracy(model, test)
    report.wall_clock = time.perf_counter() - t0
    return model, report


def adversarial_train(model, ds, cfg, val=None, test=None):
    """PGD adversarial training: every minibatch is replaced by its PGD
    perturbation against the current parameters (true labels)."""
    if cfg.adversarial is None:
        raise ValueError("adversarial_train needs cfg.adversarial")
    return train(model, ds, cfg, val, test)
