"""Desk-scale experiment building blocks shared by the runner, the demos and
the acceptance tests.

Defaults: 10k stratified training subset, 1k validation subset, 500 test
points, 5 epochs, batch 64, lr 0.01, momentum 0.9.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attacks import AttackConfig
from .data import VALIDATION_SIZE, AugmentationPolicy, load_mnist, rotate_images, sample_angles, subset
from .models import build_model
from .profiles import (DEFAULT_EPSILON_GRID, DEFAULT_THETA_GRID, avg_perturbation_distance, robustness_profile,
                       rotation_invariance_profile)
from .train import TrainConfig, train, training_attack


@dataclass(frozen=True)
class Splits:
    train: object
    val: object
    test: object


def desk_splits(directory=None, train_n=10_000, val_n=1_000, test_n=500, seed=0, validation_size=VALIDATION_SIZE):
    """Stratified subsets of the train / validation / test splits."""
    tr, va, te = load_mnist(directory, validation_size)
    return Splits(subset(tr, min(train_n, len(tr)), seed), subset(va, min(val_n, len(va)), seed),
                  subset(te, min(test_n, len(te)), seed + 1))


def rotation_setting(theta):
    return f"rot{theta:g}"


def adversarial_setting(epsilon):
    return f"pgd{epsilon:g}"


def rotation_run(arch, theta, splits, epochs=5, seed=0, **kw):
    """Train ``arch`` with random rotations in [-theta, theta]."""
    cfg = TrainConfig(epochs=epochs, seed=seed, augmentation=AugmentationPolicy(theta, seed), **kw)
    return train(build_model(arch, seed), splits.train, cfg, val=splits.val, test=splits.test)


def adversarial_run(arch, epsilon, splits, epochs=5, seed=0, train_steps=10, **kw):
    """PGD adversarial training at budget ``epsilon`` with ``train_steps`` inner steps."""
    cfg = TrainConfig(epochs=epochs, seed=seed, adversarial=training_attack(epsilon, train_steps, seed), **kw)
    return train(build_model(arch, seed), splits.train, cfg, val=splits.val, test=splits.test)


def profile_pair(model, test, theta_grid=DEFAULT_THETA_GRID, epsilon_grid=DEFAULT_EPSILON_GRID, k_draws=4,
                 seed=0, attack_cfg=None, model_id="", setting=""):
    """Invariance profile, robustness profile and adversarial-accuracy curve for one model."""
    inv = rotation_invariance_profile(model, test.images, theta_grid, k_draws, seed, model_id, setting)
    rob, acc = robustness_profile(model, test.images, test.labels, epsilon_grid,
                                  attack_cfg or AttackConfig(seed=seed), model_id=model_id, setting=setting)
    return inv, rob, acc


def rotated_points(images, max_angle, seed=0):
    """Each image rotated once by an angle drawn from U[-max_angle, max_angle]."""
    if max_angle == 0:
        return np.asarray(images, dtype=np.float64)
    return rotate_images(images, sample_angles(np.random.default_rng(seed), len(images), max_angle))


def deepfool_distance(model, images, rotation=0.0, seed=0, max_iter=50, overshoot=0.02):
    """Mean DeepFool l2 distance (converged points) on optionally rotated inputs."""
    return avg_perturbation_distance(model, rotated_points(images, rotation, seed), max_iter, overshoot)
