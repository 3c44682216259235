"""Dense float64 tensors with reverse-mode differentiation.

Every op builds a node holding its parents and a closure that maps the
upstream gradient to per-parent gradients. ``backward`` walks the nodes in
reverse topological order. Only the ops needed by the CNNs, the attacks and
the gradient checks are provided; there is no implicit broadcasting except
for bias addition.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when an op receives operands that violate its shape contract."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "op")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None, op="leaf"):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError(f"non-finite value produced by {op}")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    def numpy(self):
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op})"

    def backward(self):
        backward(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn, op):
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, parents=parents, backward_fn=backward_fn, op=op)


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss, wrt=None):
    """Accumulate d(loss)/d(node) for every node upstream of ``loss``.

    Leaves that require grad get their ``.grad`` set (overwritten, not summed
    across calls). If ``wrt`` is given, the matching gradients are returned
    in order; a tensor unreachable from ``loss`` gets zeros.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    order = _topo_order(loss) if loss.requires_grad else [loss]
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node.parents:
            node.grad = g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = grads.get(id(parent))
            grads[id(parent)] = pg if prev is None else prev + pg
    if wrt is None:
        return None
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in wrt]


def grad(loss, wrt):
    """Gradients of scalar ``loss`` w.r.t. the leaf tensors in ``wrt``."""
    for t in wrt:
        t.grad = None
    return backward(loss, wrt)


# ---------------------------------------------------------------------------
# elementwise / reductions


def add(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"add: {a.shape} vs {b.shape}")
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"sub: {a.shape} vs {b.shape}")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"mul: {a.shape} vs {b.shape}")
    return _make(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def scale(a, c):
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def tsum(a):
    return _make(np.sum(a.data), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),), "sum")


def dot_const(a, coeffs):
    """Scalar sum(a * coeffs) with ``coeffs`` held constant."""
    c = np.asarray(coeffs, dtype=np.float64)
    if c.shape != a.shape:
        raise ShapeError(f"dot_const: {a.shape} vs {c.shape}")
    return _make(np.sum(a.data * c), (a,), lambda g: (g * c,), "dot_const")


def reshape(a, shape):
    shape = tuple(shape)
    src = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),), "reshape")


def relu(a):
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def gather(a, index):
    """out = a.flat[index]; backward scatters with summation."""
    index = np.asarray(index)
    size = a.data.size

    def bw(g):
        flat = np.bincount(index.ravel(), weights=g.ravel(), minlength=size)
        return (flat.reshape(a.shape),)

    return _make(a.data.reshape(-1)[index], (a,), bw, "gather")


# ---------------------------------------------------------------------------
# layers


def _check_conv(x, w, b, padding):
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and weight, got {x.shape}, {w.shape}")
    B, C, H, W = x.shape
    F, Cw, kh, kw = w.shape
    if Cw != C:
        raise ShapeError(f"conv2d: input has {C} channels, weight expects {Cw}")
    if b is not None and b.shape != (F,):
        raise ShapeError(f"conv2d: bias shape {b.shape}, expected ({F},)")
    if padding < 0:
        raise ShapeError("conv2d: negative padding")
    if H + 2 * padding - kh + 1 < 1 or W + 2 * padding - kw + 1 < 1:
        raise ShapeError("conv2d: kernel larger than padded input")


def conv2d(x, w, b=None, padding=0):
    """Cross-correlation, stride 1, zero padding.

    Columns are laid out as [C*kh*kw, B*Ho*Wo] so that building them and
    scattering their gradient back only copies contiguous image rows.
    """
    _check_conv(x, w, b, padding)
    B, C, H, W = x.shape
    F, _, kh, kw = w.shape
    Hp, Wp = H + 2 * padding, W + 2 * padding
    Ho, Wo = Hp - kh + 1, Wp - kw + 1
    xt = np.zeros((C, B, Hp, Wp))
    xt[:, :, padding:padding + H, padding:padding + W] = x.data.transpose(1, 0, 2, 3)
    cols = np.empty((C, kh, kw, B, Ho, Wo))
    for u in range(kh):
        for v in range(kw):
            cols[:, u, v] = xt[:, :, u:u + Ho, v:v + Wo]
    cols = cols.reshape(C * kh * kw, B * Ho * Wo)
    wmat = w.data.reshape(F, -1)
    out = wmat @ cols
    if b is not None:
        out += b.data[:, None]
    out = out.reshape(F, B, Ho, Wo).transpose(1, 0, 2, 3)

    def bw(g):
        gt = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(F, B * Ho * Wo)
        gx = gw = gb = None
        if w.requires_grad:
            gw = (gt @ cols.T).reshape(w.shape)
        if b is not None and b.requires_grad:
            gb = gt.sum(axis=1)
        if x.requires_grad:
            gcols = (wmat.T @ gt).reshape(C, kh, kw, B, Ho, Wo)
            gxt = np.zeros((C, B, Hp, Wp))
            for u in range(kh):
                for v in range(kw):
                    gxt[:, :, u:u + Ho, v:v + Wo] += gcols[:, u, v]
            gx = gxt[:, :, padding:padding + H, padding:padding + W].transpose(1, 0, 2, 3)
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return _make(np.ascontiguousarray(out), parents, bw, "conv2d")


def maxpool2x2(x):
    """Non-overlapping 2x2 max over the last two axes; ties go to the first
    element in row-major order."""
    H, W = x.shape[-2:]
    if H % 2 or W % 2:
        raise ShapeError(f"maxpool2x2 needs even spatial extents, got {H}x{W}")
    lead = x.shape[:-2]
    blocks = x.data.reshape(*lead, H // 2, 2, W // 2, 2)
    blocks = np.moveaxis(blocks, -3, -2).reshape(*lead, H // 2, W // 2, 4)
    arg = np.argmax(blocks, axis=-1)  # first max wins
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        gb = np.zeros(blocks.shape)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gb = gb.reshape(*lead, H // 2, W // 2, 2, 2)
        return (np.moveaxis(gb, -2, -3).reshape(x.shape),)

    return _make(out, (x,), bw, "maxpool2x2")


def linear(x, w, b=None):
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {w.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"linear: bias {b.shape} vs weight {w.shape}")
    out = x.data @ w.data.T
    if b is not None:
        out = out + b.data

    def bw(g):
        gx = g @ w.data if x.requires_grad else None
        gw = g.T @ x.data if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    parents = (x, w, b) if b is not None else (x, w)
    return _make(out, parents, bw, "linear")


def dropout(x, rate, train, rng=None):
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not train or rate == 0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _make(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


def log_softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax_cross_entropy(logits, labels):
    """Mean over the batch of -log softmax(logits)[label]."""
    if logits.data.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy expects [B, C] logits, got {logits.shape}")
    labels = np.asarray(labels)
    B, C = logits.shape
    if labels.shape != (B,):
        raise ShapeError(f"labels shape {labels.shape}, expected ({B},)")
    if np.any(labels < 0) or np.any(labels >= C):
        raise ValueError(f"labels must lie in [0, {C})")
    logp = log_softmax(logits.data)
    rows = np.arange(B)
    loss = -logp[rows, labels].mean()

    def bw(g):
        d = np.exp(logp)
        d[rows, labels] -= 1.0
        return (g * d / B,)

    return _make(loss, (logits,), bw, "softmax_cross_entropy")


# ---------------------------------------------------------------------------
# optimiser


class SGDMomentum:
    """v <- momentum * v + grad; p <- p - lr * v. Updates param data in place."""

    def __init__(self, lr=0.01, momentum=0.9):
        if lr <= 0:
            raise ValueError("lr must be positive")
        if not 0 <= momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        self.lr = lr
        self.momentum = momentum
        self.velocity = {}

    def step(self, params, grads):
        for name, p in params.items():
            v = self.velocity.get(name)
            v = grads[name].copy() if v is None else self.momentum * v + grads[name]
            self.velocity[name] = v
            p.data = p.data - self.lr * v


def sgd_momentum_step(params, grads, lr, momentum, state):
    """Functional form of one momentum step; ``state`` maps name -> velocity."""
    new = {}
    for name, p in params.items():
        v = momentum * state.get(name, np.zeros_like(p)) + grads[name]
        state[name] = v
        new[name] = p - lr * v
    return new


def max_axis(a, axis):
    """Max along one axis; gradient goes to the first maximiser."""
    arg = np.expand_dims(np.argmax(a.data, axis=axis), axis)
    out = np.take_along_axis(a.data, arg, axis=axis).squeeze(axis)

    def bw(g):
        ga = np.zeros(a.shape)
        np.put_along_axis(ga, arg, np.expand_dims(g, axis), axis=axis)
        return (ga,)

    return _make(out, (a,), bw, "max_axis")
