import os

import numpy as np
import pytest

from tradeoff_lab.data import MNIST_FILES, default_mnist_dir, load_mnist


def central_difference(f, x, coords, h=1e-5):
    """Central finite differences of scalar f at the flat indices ``coords`` of x (in place, restored)."""
    flat = x.reshape(-1)
    out = np.empty(len(coords))
    for i, c in enumerate(coords):
        orig = flat[c]
        flat[c] = orig + h
        fp = f()
        flat[c] = orig - h
        fm = f()
        flat[c] = orig
        out[i] = (fp - fm) / (2 * h)
    return out


def relative_error(analytic, numeric, floor=1e-8):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def _have_mnist():
    d = default_mnist_dir()
    return all(os.path.exists(os.path.join(d, f)) for pair in MNIST_FILES.values() for f in pair)


requires_mnist = pytest.mark.skipif(not _have_mnist(), reason="MNIST IDX files missing; run tools/prepare_mnist.py")


@pytest.fixture(scope="session")
def mnist():
    if not _have_mnist():
        pytest.skip("MNIST IDX files missing; run tools/prepare_mnist.py")
    return load_mnist()


@pytest.fixture(scope="session")
def small_trained_stdcnn(mnist):
    """StdCNN after one epoch on 2000 training images (a few seconds)."""
    from tradeoff_lab.data import subset
    from tradeoff_lab.models import build_stdcnn
    from tradeoff_lab.train import TrainConfig, train

    model, _ = train(build_stdcnn(0), subset(mnist[0], 2000, 0), TrainConfig(epochs=1))
    return model
