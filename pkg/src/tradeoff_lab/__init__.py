"""Invariance versus adversarial robustness laboratory.

A small numpy autodiff engine, standard and p4 group-equivariant CNNs,
rotation augmentation, FGSM/PGD/DeepFool attacks, invariance and
robustness profiles, and a Monte Carlo check of the trade-off bound on a
synthetic distribution.
"""

__version__ = "0.1.0"

from .attacks import AttackConfig, DeepFoolConfig, deepfool_l2, fgsm, pgd
from .data import AugmentationPolicy, LabeledDataset, load_mnist, rotate_images, subset
from .models import build_gcnn, build_lenet, build_model, build_stdcnn, load_checkpoint, save_checkpoint
from .profiles import ProfileCurve, avg_perturbation_distance, rotation_invariance_profile, robustness_profile
from .theorem import SyntheticParams, run_battery, tradeoff_check, tradeoff_checks
from .train import TrainConfig, adversarial_train, train
