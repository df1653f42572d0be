"""Differentiable 3D primitives on (batch, channels, z, y, x) arrays.

Every ``*_forward`` returns ``(output, cache)`` and the matching ``*_backward``
takes the upstream gradient plus that cache. All reductions run in a fixed order
so results are bit-reproducible for identical inputs.
"""
from __future__ import annotations

import numpy as np

LOGIT_CLAMP = 30.0
GN_EPS = 1e-5
_CHUNK = 512


class ShapeError(ValueError):
    pass


# --------------------------------------------------------------------------- conv3d


def _offsets(hp, wp):
    return [dz * hp * wp + dy * wp + dx for dz in range(3) for dy in range(3) for dx in range(3)]


def _conv3x3_single(x, wmat):
    """Same-padded 3x3x3 correlation of one sample.

    Works on the flattened zero-padded volume: output voxel (z, y, x) sits at flat
    index z*Hp*Wp + y*Wp + x and its 27 taps are contiguous shifts of that index,
    so im2col reduces to slice copies done chunk by chunk to stay cache-resident.
    """
    c, d, h, w = x.shape
    hp, wp = h + 2, w + 2
    xf = np.pad(x, ((0, 0), (1, 1), (1, 1), (1, 1))).reshape(c, -1)
    span = (d - 1) * hp * wp + (h - 1) * wp + w
    offs = _offsets(hp, wp)
    out = np.zeros((wmat.shape[0], d * hp * wp), dtype=x.dtype)
    cols = np.empty((c, 27, _CHUNK), dtype=x.dtype)
    for s in range(0, span, _CHUNK):
        n = min(_CHUNK, span - s)
        for k, o in enumerate(offs):
            cols[:, k, :n] = xf[:, s + o : s + o + n]
        np.matmul(wmat, cols.reshape(c * 27, _CHUNK)[:, :n], out=out[:, s : s + n])
    return out.reshape(-1, d, hp, wp)[:, :, :h, :w]


def _conv3x3_weight_grad(x, dy):
    c, d, h, w = x.shape
    cout = dy.shape[0]
    hp, wp = h + 2, w + 2
    xf = np.pad(x, ((0, 0), (1, 1), (1, 1), (1, 1))).reshape(c, -1)
    dyf = np.zeros((cout, d, hp, wp), dtype=x.dtype)
    dyf[:, :, :h, :w] = dy
    dyf = dyf.reshape(cout, -1)
    span = (d - 1) * hp * wp + (h - 1) * wp + w
    offs = _offsets(hp, wp)
    grad = np.zeros((cout, c * 27), dtype=x.dtype)
    cols = np.empty((c, 27, _CHUNK), dtype=x.dtype)
    for s in range(0, span, _CHUNK):
        n = min(_CHUNK, span - s)
        for k, o in enumerate(offs):
            cols[:, k, :n] = xf[:, s + o : s + o + n]
        grad += dyf[:, s : s + n] @ cols.reshape(c * 27, _CHUNK)[:, :n].T
    return grad.reshape(cout, c, 3, 3, 3)


def conv3d_forward(x, w, b):
    """Stride-1 convolution with a 3x3x3 (padding 1) or 1x1x1 (no padding) kernel."""
    if x.ndim != 5 or w.ndim != 5:
        raise ShapeError("conv3d expects 5D input and weight")
    cout, cin, k = w.shape[0], w.shape[1], w.shape[2]
    if x.shape[1] != cin or w.shape[2:] not in ((3, 3, 3), (1, 1, 1)) or b.shape != (cout,):
        raise ShapeError(f"conv3d shapes incompatible: x {x.shape}, w {w.shape}, b {b.shape}")
    if k == 1:
        y = np.einsum("oc,bczyx->bozyx", w.reshape(cout, cin), x, optimize=False)
    else:
        wmat = w.reshape(cout, cin * 27)
        y = np.stack([_conv3x3_single(xi, wmat) for xi in x])
    y = y + b.reshape(1, -1, 1, 1, 1)
    return y, (x, w)


def conv3d_backward(dy, cache):
    x, w = cache
    cout, cin, k = w.shape[0], w.shape[1], w.shape[2]
    db = dy.sum(axis=(0, 2, 3, 4))
    if k == 1:
        wm = w.reshape(cout, cin)
        dx = np.einsum("oc,bozyx->bczyx", wm, dy, optimize=False)
        dw = np.einsum("bozyx,bczyx->oc", dy, x, optimize=False).reshape(w.shape)
        return dx, dw, db
    # input gradient is a same-padded correlation with the flipped, transposed kernel
    wflip = np.ascontiguousarray(w[:, :, ::-1, ::-1, ::-1].transpose(1, 0, 2, 3, 4)).reshape(cin, cout * 27)
    dx = np.stack([_conv3x3_single(dyi, wflip) for dyi in dy])
    dw = np.zeros_like(w)
    for xi, dyi in zip(x, dy):
        dw += _conv3x3_weight_grad(xi, dyi)
    return dx, dw, db


# --------------------------------------------------------------------------- group norm


def groupnorm_forward(x, gamma, beta, groups, eps=GN_EPS):
    b, c = x.shape[:2]
    if c % groups:
        raise ShapeError(f"{c} channels not divisible into {groups} groups")
    xg = x.reshape(b, groups, -1)
    mean = xg.mean(axis=2, keepdims=True)
    centred = xg - mean
    var = (centred * centred).mean(axis=2, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (centred * inv_std).reshape(x.shape)
    y = xhat * gamma.reshape(1, -1, 1, 1, 1) + beta.reshape(1, -1, 1, 1, 1)
    return y, (xhat, inv_std, gamma, groups)


def groupnorm_backward(dy, cache):
    xhat, inv_std, gamma, groups = cache
    b = dy.shape[0]
    dgamma = (dy * xhat).sum(axis=(0, 2, 3, 4))
    dbeta = dy.sum(axis=(0, 2, 3, 4))
    dxhat = (dy * gamma.reshape(1, -1, 1, 1, 1)).reshape(b, groups, -1)
    xh = xhat.reshape(b, groups, -1)
    dx = inv_std * (dxhat - dxhat.mean(axis=2, keepdims=True) - xh * (dxhat * xh).mean(axis=2, keepdims=True))
    return dx.reshape(dy.shape), dgamma, dbeta


# --------------------------------------------------------------------------- pointwise


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dy, mask):
    return dy * mask


def sigmoid_forward(z):
    """Logistic function on logits clamped to +-30 so outputs stay strictly inside (0, 1)."""
    zc = np.clip(z, -LOGIT_CLAMP, LOGIT_CLAMP)
    p = 1.0 / (1.0 + np.exp(-zc))
    return p, (p, np.abs(z) <= LOGIT_CLAMP)


def sigmoid_backward(dp, cache):
    p, inside = cache
    return dp * p * (1.0 - p) * inside


def sigmoid(z):
    return sigmoid_forward(z)[0]


# --------------------------------------------------------------------------- resampling


def _check_even(x, op):
    if any(s % 2 for s in x.shape[2:]):
        raise ShapeError(f"{op} needs even spatial dims, got {x.shape[2:]}")


def maxpool2_forward(x):
    _check_even(x, "maxpool2")
    b, c, d, h, w = x.shape
    win = x.reshape(b, c, d // 2, 2, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 6, 3, 5, 7).reshape(
        b, c, d // 2, h // 2, w // 2, 8
    )
    idx = win.argmax(axis=-1)  # first maximum wins ties
    y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return y, (idx, x.shape)


def maxpool2_backward(dy, cache):
    idx, shape = cache
    b, c, d, h, w = shape
    win = np.zeros(dy.shape + (8,), dtype=dy.dtype)
    np.put_along_axis(win, idx[..., None], dy[..., None], axis=-1)
    return (
        win.reshape(b, c, d // 2, h // 2, w // 2, 2, 2, 2)
        .transpose(0, 1, 2, 5, 3, 6, 4, 7)
        .reshape(shape)
    )


def upsample2_forward(x):
    """Nearest-neighbour upsampling by 2 along each spatial axis."""
    return x.repeat(2, axis=2).repeat(2, axis=3).repeat(2, axis=4), x.shape


def upsample2_backward(dy, shape):
    b, c, d, h, w = shape
    return dy.reshape(b, c, d, 2, h, 2, w, 2).sum(axis=(3, 5, 7))


def concat_forward(tensors):
    return np.concatenate(tensors, axis=1), [t.shape[1] for t in tensors]


def concat_backward(dy, sizes):
    return np.split(dy, np.cumsum(sizes)[:-1], axis=1)
