"""One-time-step Hoyer spike activation.

The layer normalizes its input by a trainable threshold ``v_th`` and fires
wherever the normalized potential reaches the Hoyer extremum of its clipped
copy. That extremum never exceeds 1, so the effective firing level is at
most ``v_th``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .hoyer import ExtremumMode, clip_unit, hoyer_extremum

VTH_FLOOR = 1e-3


@dataclass
class HoyerSpikeState:
    v_th: np.ndarray = field(default_factory=lambda: np.array(1.0, dtype=np.float32))
    ema_ext: Optional[np.ndarray] = None
    ema_momentum: float = 0.9
    mode: ExtremumMode = ExtremumMode.CHANNEL
    surrogate_scale: float = 1.0
    # False reproduces the plain trainable-threshold neuron (fire at z >= 1).
    use_extremum: bool = True

    def __post_init__(self):
        self.v_th = np.asarray(self.v_th)
        self.mode = ExtremumMode(self.mode)


@dataclass
class SpikeCache:
    u: np.ndarray
    z: np.ndarray
    threshold_used: np.ndarray
    v_th: float


def _broadcast(t, ndim: int, channel_axis: int):
    t = np.asarray(t)
    if t.ndim == 0:
        return t
    shape = [1] * ndim
    shape[channel_axis % ndim] = -1
    return t.reshape(shape)


def batch_extremum(z: np.ndarray, mode, channel_axis: int = 1) -> np.ndarray:
    """Extremum of ``clip_unit(z)`` with degenerate groups mapped to 1."""
    ext = hoyer_extremum(clip_unit(z), mode, channel_axis)
    if ext is None:
        return np.array(1.0)
    if isinstance(ext, float):
        return np.array(ext)
    return np.where(np.isnan(ext), 1.0, ext)


def ema_update(state: HoyerSpikeState, batch_ext) -> HoyerSpikeState:
    batch_ext = np.asarray(batch_ext, dtype=np.float64)
    if state.ema_ext is None or state.ema_ext.shape != batch_ext.shape:
        state.ema_ext = batch_ext.copy()
    else:
        m = state.ema_momentum
        state.ema_ext = m * state.ema_ext + (1.0 - m) * batch_ext
    return state


def spike_forward(u: np.ndarray, state: HoyerSpikeState, phase: str = "train", track: bool = True,
                  channel_axis: int = 1):
    """Binary spikes for membrane potential ``u``.

    Train phase fires against the current batch's extremum and folds it into
    the running average (when ``track``); infer phase fires against the
    running average and leaves ``state`` untouched.
    """
    v_th = float(state.v_th)
    z = u / u.dtype.type(v_th)
    if not state.use_extremum:
        thr = np.array(1.0)
    elif phase == "train":
        thr = batch_extremum(z, state.mode, channel_axis)
        if track:
            ema_update(state, thr)
    elif phase == "infer":
        thr = state.ema_ext if state.ema_ext is not None else np.array(1.0)
    else:
        raise ValueError(f"unknown phase {phase!r}")
    o = (z >= _broadcast(thr, z.ndim, channel_axis).astype(z.dtype)).astype(u.dtype)
    return o, SpikeCache(u, z, thr, v_th)


def surrogate_grad(z: np.ndarray, scale: float = 1.0) -> np.ndarray:
    if scale <= 0:
        raise ValueError("scale must be positive")
    return np.where((z > 0) & (z < 2), z.dtype.type(scale), z.dtype.type(0))


def surrogate_ramp(z: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """Antiderivative of :func:`surrogate_grad`; stands in for the step when
    a finite-difference oracle needs a differentiable forward map."""
    return scale * np.clip(z, 0, 2)


def spike_backward(grad_o: np.ndarray, cache: SpikeCache, state: HoyerSpikeState):
    """Return ``(grad_u, grad_vth)``; the extremum is treated as a constant."""
    grad_z = grad_o * surrogate_grad(cache.z, state.surrogate_scale)
    v_th = cache.v_th
    grad_u = grad_z / grad_z.dtype.type(v_th)
    grad_vth = -float(np.sum(grad_z * cache.u, dtype=np.float64)) / (v_th * v_th)
    return grad_u, grad_vth
