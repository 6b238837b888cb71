"""Forward and backward passes of the network's building blocks.

Activations use ``(N, H, W, C)`` layout in float64.  Convolution weights
are ``(C_in, k_h, k_w, C_out)``; reordered to ``(k_h*k_w*C_in, C_out)`` they
multiply the circular im2col (2-D Hankel) matrix.  The result is
the same correlation as :func:`convframelet.hankel.conv2d` with
``coefficients[j, i, a, b] = w[j, a, b, i]``.
"""
from __future__ import annotations

import numpy as np

BN_EPS = 1e-5


def im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Circular patch matrix ``(N, H, W, kh*kw*C)``, columns ordered ``(a, b, c)``."""
    n, h, w, c = x.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)), mode="wrap")
    return np.concatenate([xp[:, a:a + h, b:b + w, :] for a in range(kh) for b in range(kw)], axis=-1)


def _fold_padding(dxp: np.ndarray, h: int, w: int, ph: int, pw: int) -> np.ndarray:
    """Adjoint of circular padding: add the margins back onto the opposite edges."""
    if pw:
        dxp[:, :, w:w + pw] += dxp[:, :, :pw]
        dxp[:, :, pw:2 * pw] += dxp[:, :, w + pw:]
    dx = dxp[:, :, pw:pw + w]
    if ph:
        dx[:, h:h + ph] += dx[:, :ph]
        dx[:, ph:2 * ph] += dx[:, h + ph:]
    return np.ascontiguousarray(dx[:, ph:ph + h])


def _offsets(kh: int, kw: int, wp: int) -> list[int]:
    return [a * wp + b for a in range(kh) for b in range(kw)]


def conv_forward(x, weight, bias=None):
    """Circular 'same' correlation; returns the output and the cache for :func:`conv_backward`.

    The input is wrap-padded and flattened, so the window tap ``(a, b)`` is
    a contiguous row range shifted by ``a*W_pad + b``.  Outputs are formed on
    the padded grid (rows past the valid region are discarded), so each tap
    is a single matrix product without building the patch matrix.
    """
    c_in, kh, kw, c_out = weight.shape
    n, h, w, _ = x.shape
    ph, pw = kh // 2, kw // 2
    hp, wp = h + 2 * ph, w + 2 * pw
    flat = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)), mode="wrap").reshape(-1, c_in)
    span = flat.shape[0] - _offsets(kh, kw, wp)[-1]
    acc = np.zeros((n * hp * wp, c_out))
    for off, (a, b) in zip(_offsets(kh, kw, wp), np.ndindex(kh, kw)):
        acc[:span] += flat[off:off + span] @ weight[:, a, b, :]
    y = acc.reshape(n, hp, wp, c_out)[:, :h, :w, :]
    if bias is not None:
        y = y + bias
    return np.ascontiguousarray(y), (flat, x.shape)


def conv_backward(dy, cache, weight, need_bias: bool):
    flat, (n, h, w, _) = cache
    c_in, kh, kw, c_out = weight.shape
    ph, pw = kh // 2, kw // 2
    hp, wp = h + 2 * ph, w + 2 * pw
    dacc = np.zeros((n, hp, wp, c_out))
    dacc[:, :h, :w, :] = dy
    dacc = dacc.reshape(-1, c_out)
    offsets = _offsets(kh, kw, wp)
    span = flat.shape[0] - offsets[-1]
    dw = np.empty_like(weight)
    dflat = np.zeros_like(flat)
    for off, (a, b) in zip(offsets, np.ndindex(kh, kw)):
        dw[:, a, b, :] = flat[off:off + span].T @ dacc[:span]
        dflat[off:off + span] += dacc[:span] @ weight[:, a, b, :].T
    dx = _fold_padding(dflat.reshape(n, hp, wp, c_in), h, w, ph, pw)
    db = dy.sum(axis=(0, 1, 2)) if need_bias else None
    return dx, dw, db


def bn_forward_train(x, gamma, beta):
    mean = x.mean(axis=(0, 1, 2))
    var = x.var(axis=(0, 1, 2))
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean) * inv_std
    return gamma * xhat + beta, (xhat, inv_std, gamma), mean, var


def bn_forward_eval(x, gamma, beta, running_mean, running_var):
    return gamma * (x - running_mean) / np.sqrt(running_var + BN_EPS) + beta


def bn_backward(dy, cache):
    xhat, inv_std, gamma = cache
    m = dy.shape[0] * dy.shape[1] * dy.shape[2]
    dgamma = np.sum(dy * xhat, axis=(0, 1, 2))
    dbeta = np.sum(dy, axis=(0, 1, 2))
    dxhat = dy * gamma
    dx = inv_std / m * (m * dxhat - dxhat.sum(axis=(0, 1, 2)) - xhat * np.sum(dxhat * xhat, axis=(0, 1, 2)))
    return dx, dgamma, dbeta


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dy, mask):
    return dy * mask
