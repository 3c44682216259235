"""MNIST IDX ingestion, bilinear rotation and random-rotation augmentation."""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class IdxParseError(ValueError):
    pass


class IdxMagicError(IdxParseError):
    pass


class IdxTruncatedError(IdxParseError):
    pass


class IdxCountMismatchError(IdxParseError):
    pass


@dataclass(frozen=True)
class LabeledDataset:
    images: np.ndarray  # [N, 1, 28, 28] float64 in [0, 1]
    labels: np.ndarray  # [N] int64
    split: str = "train"

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")

    def __len__(self):
        return len(self.labels)

    def take(self, idx, split=None):
        return LabeledDataset(self.images[idx], self.labels[idx], split or self.split)


@dataclass(frozen=True)
class AugmentationPolicy:
    max_angle: float = 0.0  # degrees, rotations drawn from [-max_angle, max_angle]
    seed: int = 0
    draws_per_image: int = 1

    def __post_init__(self):
        if not 0 <= self.max_angle <= 180:
            raise ValueError(f"max_angle must lie in [0, 180], got {self.max_angle}")
        if self.draws_per_image < 1:
            raise ValueError("draws_per_image must be >= 1")


# ---------------------------------------------------------------------------
# IDX files


def _read_bytes(path):
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw, magic, ndim, path):
    if len(raw) < 4:
        raise IdxTruncatedError(f"{path}: file too short for an IDX header")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise IdxMagicError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxTruncatedError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    n = int(np.prod(dims))
    if len(raw) - header < n:
        raise IdxTruncatedError(f"{path}: expected {n} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=n, offset=header).reshape(dims)


def read_idx_images(path):
    return _parse_idx(_read_bytes(path), IMAGE_MAGIC, 3, path)


def read_idx_labels(path):
    return _parse_idx(_read_bytes(path), LABEL_MAGIC, 1, path)


def load_mnist_idx(images_path, labels_path, split="train"):
    """Parse an image/label IDX pair (optionally gzipped); pixels scaled by 1/255."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise IdxCountMismatchError(f"{len(images)} images in {images_path} but {len(labels)} labels in {labels_path}")
    x = images.astype(np.float64)[:, None] / 255.0
    return LabeledDataset(x, labels.astype(np.int64), split)


def write_idx_images(path, images):
    images = np.asarray(images, dtype=np.uint8)
    data = struct.pack(">IIII", IMAGE_MAGIC, *images.shape) + images.tobytes()
    _write(path, data)


def write_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    _write(path, struct.pack(">II", LABEL_MAGIC, len(labels)) + labels.tobytes())


def _write(path, data):
    if str(path).endswith(".gz"):
        # mtime=0 keeps the archive byte-identical across writes
        data = gzip.compress(data, mtime=0)
    with open(path, "wb") as f:
        f.write(data)


MNIST_FILES = {
    "train": ("train-images-idx3-ubyte.gz", "train-labels-idx1-ubyte.gz"),
    "test": ("t10k-images-idx3-ubyte.gz", "t10k-labels-idx1-ubyte.gz"),
}
VALIDATION_SIZE = 5000


def default_mnist_dir():
    env = os.environ.get("MNIST_DIR")
    if env:
        return env
    return os.path.join(os.path.dirname(__file__), "..", "..", "data", "mnist")


def load_mnist(directory=None, validation_size=VALIDATION_SIZE):
    """Return (train, val, test): 55000 / 5000 / 10000 images.

    The validation split is the first ``validation_size`` images of the IDX
    training file.
    """
    directory = directory or default_mnist_dir()
    full = load_mnist_idx(*(os.path.join(directory, f) for f in MNIST_FILES["train"]), split="train")
    test = load_mnist_idx(*(os.path.join(directory, f) for f in MNIST_FILES["test"]), split="test")
    if not 0 <= validation_size < len(full):
        raise ValueError(f"validation_size {validation_size} leaves no training images out of {len(full)}")
    val = full.take(slice(0, validation_size), "val")
    train = full.take(slice(validation_size, None), "train")
    return train, val, test


def subset(ds, n, seed=0):
    """Seeded class-stratified sample of ``n`` items, returned in shuffled order.

    Per-class quotas are proportional to class frequency (largest remainder).
    """
    N = len(ds)
    if n > N:
        raise ValueError(f"cannot take {n} items from a dataset of {N}")
    rng = np.random.default_rng(seed)
    classes, counts = np.unique(ds.labels, return_counts=True)
    exact = counts * n / N
    quota = np.floor(exact).astype(int)
    short = n - quota.sum()
    order = np.lexsort((classes, -(exact - quota)))
    quota[order[:short]] += 1
    picked = []
    for c, q in zip(classes, quota):
        members = np.flatnonzero(ds.labels == c)
        picked.append(rng.choice(members, size=q, replace=False))
    idx = rng.permutation(np.concatenate(picked)) if picked else np.zeros(0, dtype=int)
    return ds.take(idx)


# ---------------------------------------------------------------------------
# rotation


def _cos_sin(deg):
    deg = np.asarray(deg, dtype=np.float64)
    rad = np.deg2rad(deg)
    c, s = np.cos(rad), np.sin(rad)
    # exact values on the quarter turns so 90/180/270 are pure permutations
    quarter = np.mod(deg, 90.0) == 0
    k = np.mod(np.round(deg / 90.0), 4).astype(int)
    c = np.where(quarter, np.array([1.0, 0.0, -1.0, 0.0])[k], c)
    s = np.where(quarter, np.array([0.0, 1.0, 0.0, -1.0])[k], s)
    return c, s


def rotate_images(images, angles):
    """Rotate each [.., H, W] image counter-clockwise by its angle in degrees.

    Rotation is about ((H-1)/2, (W-1)/2) with bilinear interpolation; source
    points outside the grid read as 0. ``images`` is [N, ..., H, W] and
    ``angles`` is [N].
    """
    images = np.asarray(images, dtype=np.float64)
    angles = np.broadcast_to(np.asarray(angles, dtype=np.float64), (images.shape[0],))
    N = images.shape[0]
    H, W = images.shape[-2:]
    flat = images.reshape(N, -1, H, W)
    cy, cx = (H - 1) / 2.0, (W - 1) / 2.0
    rows, cols = np.mgrid[0:H, 0:W].astype(np.float64)
    dx = cols - cx
    dy_up = cy - rows
    c, s = _cos_sin(angles)
    c, s = c[:, None, None], s[:, None, None]
    # inverse map: rotate output coordinates clockwise to find the source
    src_x = c * dx + s * dy_up
    src_y = -s * dx + c * dy_up
    src_c = cx + src_x
    src_r = cy - src_y
    r0 = np.floor(src_r)
    c0 = np.floor(src_c)
    fr = src_r - r0
    fc = src_c - c0
    r0 = r0.astype(np.int64)
    c0 = c0.astype(np.int64)
    out = np.zeros_like(flat)
    base = np.arange(N)[:, None, None]
    for dr, dc, wgt in ((0, 0, (1 - fr) * (1 - fc)), (0, 1, (1 - fr) * fc), (1, 0, fr * (1 - fc)), (1, 1, fr * fc)):
        rr, cc = r0 + dr, c0 + dc
        valid = (rr >= 0) & (rr < H) & (cc >= 0) & (cc < W) & (wgt > 0)
        vals = flat[base, :, np.clip(rr, 0, H - 1), np.clip(cc, 0, W - 1)]  # N, H, W, ch
        out += np.moveaxis(np.where(valid[..., None], vals * wgt[..., None], 0.0), -1, 1)
    lo, hi = min(0.0, images.min(initial=0.0)), max(0.0, images.max(initial=0.0))
    return np.clip(out, lo, hi).reshape(images.shape)


def rotate_image(img, angle):
    """Rotate one [C, H, W] (or [H, W]) image counter-clockwise by ``angle`` degrees."""
    img = np.asarray(img, dtype=np.float64)
    return rotate_images(img[None], [angle])[0]


def sample_angles(rng, n, max_angle):
    return rng.uniform(-max_angle, max_angle, size=n)


def random_rotation_augment(ds, policy):
    """Replace each image by ``draws_per_image`` copies rotated by U[-theta, theta]."""
    if policy.max_angle == 0:
        if policy.draws_per_image == 1:
            return ds
        reps = np.repeat(np.arange(len(ds)), policy.draws_per_image)
        return ds.take(reps)
    rng = np.random.default_rng(policy.seed)
    reps = np.repeat(np.arange(len(ds)), policy.draws_per_image)
    angles = sample_angles(rng, len(reps), policy.max_angle)
    return LabeledDataset(rotate_images(ds.images[reps], angles), ds.labels[reps].copy(), ds.split)
