"""Hoyer sparsity measure, its gradient, and the Hoyer extremum."""

from __future__ import annotations

from enum import Enum

import numpy as np


class ExtremumMode(str, Enum):
    TENSOR = "tensor"
    CHANNEL = "channel"


def _reduce_axes(u: np.ndarray, channel_axis: int) -> tuple:
    if u.ndim < 2:
        raise ValueError("channel-wise extremum needs an input with a channel axis")
    ca = channel_axis % u.ndim
    return tuple(a for a in range(u.ndim) if a != ca)


def _unit(u: np.ndarray):
    """``(u / s, s)`` in double precision with ``s`` the power of two nearest
    below max|u|. Guards the fourth power of the L2 norm against under- and
    overflow; power-of-two scaling is exact, so values are not perturbed."""
    m = float(np.max(np.abs(u))) if u.size else 0.0
    if m == 0.0 or not np.isfinite(m):
        return None, m
    s = float(np.ldexp(1.0, np.frexp(m)[1] - 1))
    return np.asarray(u, dtype=np.float64) / s, s


def hoyer_square(u: np.ndarray) -> float:
    """(||u||_1 / ||u||_2)^2, defined as 0 for the zero tensor."""
    v, s = _unit(u)
    if v is None:
        return 0.0
    l1 = np.abs(v).sum()
    return float(l1 * l1 / np.square(v).sum())


def hoyer_grad(u: np.ndarray) -> np.ndarray:
    """Elementwise gradient of :func:`hoyer_square`.

    2*sign(u) * ||u||_1 / ||u||_2^4 * (||u||_2^2 - ||u||_1 * |u|)
    """
    v, s = _unit(u)
    if v is None:
        return np.zeros_like(u)
    absv = np.abs(v)
    l1 = absv.sum()
    l2sq = np.square(v).sum()
    g = 2.0 * np.sign(v) * (l1 / (l2sq * l2sq)) * (l2sq - l1 * absv) / s
    return g.astype(u.dtype, copy=False)


def hoyer_extremum(u: np.ndarray, mode=ExtremumMode.TENSOR, channel_axis: int = 1):
    """||u||_2^2 / ||u||_1 over the whole tensor or per channel.

    Channel mode pools the batch and spatial axes of each channel.

    An all-zero reduction group yields ``None`` (tensor mode) or NaN in that
    channel's slot (channel mode); callers substitute their own fallback.
    """
    mode = ExtremumMode(mode)
    if mode is ExtremumMode.TENSOR:
        v, s = _unit(u)
        if v is None:
            return None
        return float(np.square(v).sum() / np.abs(v).sum() * s)
    axes = _reduce_axes(u, channel_axis)
    m = np.abs(u).max(axis=axes, keepdims=True).astype(np.float64)
    s = np.ldexp(1.0, np.frexp(m)[1] - 1)
    v = np.divide(u, s, out=np.zeros(u.shape), where=s > 0)
    l1 = np.abs(v).sum(axis=axes)
    l2sq = np.square(v).sum(axis=axes)
    out = np.full(l1.shape, np.nan)
    np.divide(l2sq, l1, out=out, where=l1 > 0)
    return out * s.reshape(out.shape)


def clip_unit(z: np.ndarray) -> np.ndarray:
    return np.clip(z, 0, 1)
