"""p4 group convolutions (rotations by multiples of 90 degrees).

Group feature maps have shape [B, C, 4, H, W]; group index g stands for a
counter-clockwise rotation by 90*g degrees. Filters are expanded into an
ordinary conv2d filter bank through precomputed index maps, so the backward
pass is the gather/scatter already provided by the tensor core.
"""

import numpy as np

from .tensor import ShapeError, conv2d, gather, max_axis, maxpool2x2, reshape

GROUP_ORDER = 4


def rot90_plane(x, quarter_turns):
    """Rotate the last two axes counter-clockwise by 90 * quarter_turns degrees."""
    return np.rot90(x, quarter_turns % 4, axes=(-2, -1))


def transform_group_map(x, quarter_turns=1):
    """Action of a rotation on a group feature map: spatial rot90 plus a
    cyclic shift of the group axis."""
    k = quarter_turns % 4
    return rot90_plane(np.roll(x, k, axis=-3), k)


def _lift_index(shape):
    F, C, k, k2 = shape
    if k != k2:
        raise ShapeError(f"p4 filters must be square, got {k}x{k2}")
    idx = np.arange(F * C * k * k).reshape(shape)
    full = np.stack([rot90_plane(idx, g) for g in range(GROUP_ORDER)], axis=1)
    return full.reshape(F * GROUP_ORDER, C, k, k)


def _group_index(shape):
    F, C, G, k, k2 = shape
    if G != GROUP_ORDER:
        raise ShapeError(f"group axis must have length 4, got {G}")
    if k != k2:
        raise ShapeError(f"p4 filters must be square, got {k}x{k2}")
    idx = np.arange(F * C * G * k * k).reshape(shape)
    # filter for output rotation g: spatially rotated by g, group axis shifted by g
    full = np.stack([rot90_plane(np.roll(idx, g, axis=2), g) for g in range(GROUP_ORDER)], axis=1)
    return full.reshape(F * GROUP_ORDER, C * GROUP_ORDER, k, k)


def _bias_index(n):
    return np.repeat(np.arange(n), GROUP_ORDER)


def lift_conv_z2_to_p4(x, weight, bias, padding=0):
    """[B, C, H, W] -> [B, F, 4, H', W']; slice g uses the filter rotated by g."""
    if weight.data.ndim != 4:
        raise ShapeError(f"lifting filter must be [F, C, k, k], got {weight.shape}")
    F = weight.shape[0]
    w_full = gather(weight, _lift_index(weight.shape))
    b_full = gather(bias, _bias_index(F)) if bias is not None else None
    out = conv2d(x, w_full, b_full, padding)
    B, _, Ho, Wo = out.shape
    return reshape(out, (B, F, GROUP_ORDER, Ho, Wo))


def group_conv_p4_to_p4(x, weight, bias, padding=0):
    """[B, C, 4, H, W] -> [B, F, 4, H', W'] with a [F, C, 4, k, k] filter."""
    if x.data.ndim != 5 or x.shape[2] != GROUP_ORDER:
        raise ShapeError(f"group conv input must be [B, C, 4, H, W], got {x.shape}")
    if weight.data.ndim != 5:
        raise ShapeError(f"group filter must be [F, C, 4, k, k], got {weight.shape}")
    B, C, _, H, W = x.shape
    if weight.shape[1] != C:
        raise ShapeError(f"group conv: input has {C} channels, filter expects {weight.shape[1]}")
    F = weight.shape[0]
    w_full = gather(weight, _group_index(weight.shape))
    b_full = gather(bias, _bias_index(F)) if bias is not None else None
    out = conv2d(reshape(x, (B, C * GROUP_ORDER, H, W)), w_full, b_full, padding)
    _, _, Ho, Wo = out.shape
    return reshape(out, (B, F, GROUP_ORDER, Ho, Wo))


def group_spatial_maxpool(x):
    """2x2 spatial max pool applied independently to every (channel, group) slice."""
    if x.data.ndim != 5 or x.shape[2] != GROUP_ORDER:
        raise ShapeError(f"expected [B, C, 4, H, W], got {x.shape}")
    return maxpool2x2(x)


def orbit_maxpool(x):
    """Elementwise max over the four rotated copies of a square group map.

    The result is invariant to the group action, so a dense layer applied to
    it sees identical inputs for an image and its 90-degree rotations.
    """
    if x.data.ndim != 5 or x.shape[2] != GROUP_ORDER or x.shape[3] != x.shape[4]:
        raise ShapeError(f"orbit pooling needs [B, C, 4, S, S], got {x.shape}")
    B = x.shape[0]
    n = int(np.prod(x.shape[1:]))
    base = np.arange(n).reshape(x.shape[1:])
    maps = np.stack([transform_group_map(base, k).reshape(-1) for k in range(GROUP_ORDER)])
    index = np.arange(B)[:, None, None] * n + maps[None]
    return reshape(max_axis(gather(x, index), axis=1), x.shape)
