"""StdCNN, GCNN and LeNet classifiers for 28x28 grayscale digits.

StdCNN and GCNN follow the two columns of the MNIST architecture table:

    Conv(10,3,3)+Relu        P4ConvZ2(10,3,3)+Relu
    Conv(10,3,3)+Relu        P4ConvP4(10,3,3)+Relu
    MaxPool(2,2)             GroupSpatialMaxPool(2,2)
    Conv(20,3,3)+Relu        P4ConvP4(20,3,3)+Relu
    Conv(20,3,3)+Relu        P4ConvP4(20,3,3)+Relu
    MaxPool(2,2)             GroupSpatialMaxPool(2,2)
    FC(50)+Relu              FC(50)+Relu
    Dropout(0.5)             Dropout(0.5)
    FC(10)+Softmax           FC(10)+Softmax

All convolutions use valid padding (28 -> 26 -> 24 -> 12 -> 10 -> 8 -> 4).
The GCNN max-pools over the four rotated copies of its last feature map
before flattening (C, 4, H, W) into FC(50), which makes its logits exactly
invariant to 90-degree input rotations. LeNet uses conv(32,5,5) and
conv(64,5,5) with padding 2, 2x2 max pooling after each, FC(1024), FC(10).

The softmax of the last row lives in the loss; ``forward`` returns logits.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .groupconv import group_conv_p4_to_p4, group_spatial_maxpool, lift_conv_z2_to_p4, orbit_maxpool

ARCHITECTURES = ("stdcnn", "gcnn", "lenet")
INPUT_SHAPE = (1, 28, 28)
DROPOUT_RATE = 0.5

_LAYERS = {
    "stdcnn": (
        "Conv(10,3,3)+Relu", "Conv(10,3,3)+Relu", "MaxPool(2,2)",
        "Conv(20,3,3)+Relu", "Conv(20,3,3)+Relu", "MaxPool(2,2)",
        "FC(50)+Relu", "Dropout(0.5)", "FC(10)+Softmax",
    ),
    "gcnn": (
        "P4ConvZ2(10,3,3)+Relu", "P4ConvP4(10,3,3)+Relu", "GroupSpatialMaxPool(2,2)",
        "P4ConvP4(20,3,3)+Relu", "P4ConvP4(20,3,3)+Relu", "GroupSpatialMaxPool(2,2)",
        "OrbitMaxPool", "FC(50)+Relu", "Dropout(0.5)", "FC(10)+Softmax",
    ),
    "lenet": (
        "Conv(32,5,5,pad=2)+Relu", "MaxPool(2,2)", "Conv(64,5,5,pad=2)+Relu", "MaxPool(2,2)",
        "FC(1024)+Relu", "FC(10)+Softmax",
    ),
}

_SHAPES = {
    "stdcnn": {
        "conv1": (10, 1, 3, 3), "conv2": (10, 10, 3, 3),
        "conv3": (20, 10, 3, 3), "conv4": (20, 20, 3, 3),
        "fc1": (50, 20 * 4 * 4), "fc2": (10, 50),
    },
    "gcnn": {
        "conv1": (10, 1, 3, 3), "conv2": (10, 10, 4, 3, 3),
        "conv3": (20, 10, 4, 3, 3), "conv4": (20, 20, 4, 3, 3),
        "fc1": (50, 20 * 4 * 4 * 4), "fc2": (10, 50),
    },
    "lenet": {
        "conv1": (32, 1, 5, 5), "conv2": (64, 32, 5, 5),
        "fc1": (1024, 64 * 7 * 7), "fc2": (10, 1024),
    },
}

_PADDING = {"stdcnn": 0, "gcnn": 0, "lenet": 2}


@dataclass(frozen=True)
class ModelSpec:
    arch: str
    seed: int
    layers: tuple = ()
    padding: int = 0
    shapes: dict = field(default_factory=dict, compare=False)

    @property
    def param_count(self):
        total = 0
        for shape in self.shapes.values():
            total += int(np.prod(shape)) + shape[0]
        return total


def model_spec(arch, seed=0):
    if arch not in ARCHITECTURES:
        raise ValueError(f"unknown architecture {arch!r}; expected one of {ARCHITECTURES}")
    return ModelSpec(arch, int(seed), _LAYERS[arch], _PADDING[arch], dict(_SHAPES[arch]))


def _fans(shape):
    if len(shape) == 2:
        return shape[1], shape[0]
    receptive = int(np.prod(shape[2:]))
    return shape[1] * receptive, shape[0] * receptive


def init_params(spec):
    """Uniform +-sqrt(6 / (fan_in + fan_out)) weights, zero biases."""
    rng = np.random.default_rng(spec.seed)
    params = {}
    for name, shape in spec.shapes.items():
        fan_in, fan_out = _fans(shape)
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        params[f"{name}.weight"] = rng.uniform(-bound, bound, size=shape)
        params[f"{name}.bias"] = np.zeros(shape[0])
    return params


class Classifier:
    """A network architecture plus its parameter tensors."""

    num_classes = 10

    def __init__(self, spec, params=None):
        self.spec = spec
        arrays = init_params(spec) if params is None else params
        self.params = {k: T.Tensor(np.array(v, dtype=np.float64), requires_grad=True) for k, v in arrays.items()}

    @property
    def arch(self):
        return self.spec.arch

    def copy(self):
        return Classifier(self.spec, {k: p.data.copy() for k, p in self.params.items()})

    def state(self):
        return {k: p.data for k, p in self.params.items()}

    def forward(self, x, train=False, rng=None, track_params=True):
        """Logits for a [B, 1, 28, 28] batch.

        With ``track_params=False`` the parameters enter the graph as
        constants, so only input gradients are computed (attacks).
        """
        if not isinstance(x, T.Tensor):
            x = T.Tensor(x)
        if tuple(x.shape[1:]) != INPUT_SHAPE:
            raise T.ShapeError(f"expected input [B, 1, 28, 28], got {x.shape}")
        if track_params:
            p = self.params
        else:
            p = {k: T.Tensor(v.data) for k, v in self.params.items()}
        return _FORWARD[self.spec.arch](x, p, train, rng)


def _conv(x, p, name, padding=0):
    return T.relu(T.conv2d(x, p[f"{name}.weight"], p[f"{name}.bias"], padding))


def _head(h, p, train, rng, dropout=True):
    h = T.relu(T.linear(h, p["fc1.weight"], p["fc1.bias"]))
    if dropout:
        h = T.dropout(h, DROPOUT_RATE, train, rng)
    return T.linear(h, p["fc2.weight"], p["fc2.bias"])


def _forward_stdcnn(x, p, train, rng):
    h = _conv(x, p, "conv1")
    h = T.maxpool2x2(_conv(h, p, "conv2"))
    h = _conv(h, p, "conv3")
    h = T.maxpool2x2(_conv(h, p, "conv4"))
    h = T.reshape(h, (h.shape[0], -1))
    return _head(h, p, train, rng)


def _forward_gcnn(x, p, train, rng):
    h = T.relu(lift_conv_z2_to_p4(x, p["conv1.weight"], p["conv1.bias"]))
    h = T.relu(group_conv_p4_to_p4(h, p["conv2.weight"], p["conv2.bias"]))
    h = group_spatial_maxpool(h)
    h = T.relu(group_conv_p4_to_p4(h, p["conv3.weight"], p["conv3.bias"]))
    h = T.relu(group_conv_p4_to_p4(h, p["conv4.weight"], p["conv4.bias"]))
    h = orbit_maxpool(group_spatial_maxpool(h))
    h = T.reshape(h, (h.shape[0], -1))
    return _head(h, p, train, rng)


def _forward_lenet(x, p, train, rng):
    h = T.maxpool2x2(_conv(x, p, "conv1", padding=2))
    h = T.maxpool2x2(_conv(h, p, "conv2", padding=2))
    h = T.reshape(h, (h.shape[0], -1))
    return _head(h, p, train, rng, dropout=False)


_FORWARD = {"stdcnn": _forward_stdcnn, "gcnn": _forward_gcnn, "lenet": _forward_lenet}


def build_model(arch, seed=0):
    return Classifier(model_spec(arch, seed))


def build_stdcnn(seed=0):
    return build_model("stdcnn", seed)


def build_gcnn(seed=0):
    return build_model("gcnn", seed)


def build_lenet(seed=0):
    return build_model("lenet", seed)


def argmax_lowest(logits):
    """Row-wise argmax; exact ties resolve to the lowest class index."""
    return np.argmax(np.asarray(logits), axis=1)


def predict_logits(model, x, batch_size=500):
    x = np.asarray(x, dtype=np.float64)
    chunks = [model.forward(x[i:i + batch_size], track_params=False).data for i in range(0, len(x), batch_size)]
    if not chunks:
        return np.zeros((0, model.num_classes))
    return np.concatenate(chunks)


def predict(model, x, batch_size=500):
    """Eval-mode class predictions for a batch of images."""
    return argmax_lowest(predict_logits(model, x, batch_size))


# ---------------------------------------------------------------------------
# checkpoints
#
# "ERLB" | u32 version | u32 len + arch id (utf-8) | u64 seed | records...
# record: u32 len + name (utf-8) | u32 rank | u32 extent * rank | f64 values
# All integers and floats are little-endian; records run to end of file.

MAGIC = b"ERLB"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _pack_str(s):
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def checkpoint_bytes(model):
    out = [MAGIC, struct.pack("<I", FORMAT_VERSION), _pack_str(model.spec.arch), struct.pack("<Q", model.spec.seed)]
    for name, p in model.params.items():
        arr = np.ascontiguousarray(p.data, dtype="<f8")
        out.append(_pack_str(name))
        out.append(struct.pack("<I", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def save_checkpoint(model, path):
    with open(path, "wb") as f:
        f.write(checkpoint_bytes(model))


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CheckpointError("truncated checkpoint")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def string(self):
        return self.take(self.u32()).decode("utf-8")


def checkpoint_from_bytes(buf):
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise CheckpointError("not a checkpoint: bad magic, expected b'ERLB'")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    arch = r.string()
    seed = struct.unpack("<Q", r.take(8))[0]
    spec = model_spec(arch, seed)
    params = {}
    while r.pos < len(buf):
        name = r.string()
        rank = r.u32()
        shape = struct.unpack(f"<{rank}I", r.take(4 * rank))
        n = int(np.prod(shape))
        params[name] = np.frombuffer(r.take(8 * n), dtype="<f8").reshape(shape).astype(np.float64)
    expected = init_params(spec)
    if set(params) != set(expected):
        raise CheckpointError(f"parameter names do not match architecture {arch}")
    for k, v in expected.items():
        if params[k].shape != v.shape:
            raise CheckpointError(f"{k}: shape {params[k].shape}, expected {v.shape}")
    return Classifier(spec, {k: params[k] for k in expected})


def load_checkpoint(path):
    with open(path, "rb") as f:
        return checkpoint_from_bytes(f.read())


class AffineClassifier:
    """logits = W @ flatten(x) + b. Closed-form oracle target for the attacks."""

    def __init__(self, weight, bias, input_shape=None):
        self.weight = np.asarray(weight, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)
        self.num_classes = self.weight.shape[0]
        self.input_shape = tuple(input_shape) if input_shape is not None else (self.weight.shape[1],)
        if int(np.prod(self.input_shape)) != self.weight.shape[1]:
            raise T.ShapeError(f"input shape {self.input_shape} does not match weight {self.weight.shape}")
        self.params = {"weight": T.Tensor(self.weight, requires_grad=True), "bias": T.Tensor(self.bias, requires_grad=True)}

    def forward(self, x, train=False, rng=None, track_params=True):
        if not isinstance(x, T.Tensor):
            x = T.Tensor(x)
        if tuple(x.shape[1:]) != self.input_shape:
            raise T.ShapeError(f"expected input [B, {self.input_shape}], got {x.shape}")
        p = self.params if track_params else {k: T.Tensor(v.data) for k, v in self.params.items()}
        flat = T.reshape(x, (x.shape[0], -1))
        return T.linear(flat, p["weight"], p["bias"])
