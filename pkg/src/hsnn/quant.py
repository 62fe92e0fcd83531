"""Symmetric per-layer weight quantization with a straight-through gradient."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

VALID_BITS = (2, 3, 4, 5, 6)


@dataclass(frozen=True)
class QuantConfig:
    bits: int

    def __post_init__(self):
        if self.bits not in VALID_BITS:
            raise ValueError(f"bits must be one of {VALID_BITS}, got {self.bits}")

    @property
    def levels(self) -> int:
        return 2 ** (self.bits - 1) - 1


def quantize_weights(w: np.ndarray, bits: int):
    """Round ``w`` onto ``2**bits - 1`` evenly spaced levels in [-s, s], s = max|w|.

    Returns ``(w_q, s)``; an all-zero tensor comes back unchanged with s = 0.
    """
    levels = QuantConfig(bits).levels
    s = float(np.max(np.abs(w))) if w.size else 0.0
    if s == 0.0:
        return w.copy(), 0.0
    sc = w.dtype.type(s)
    k = np.round(w / sc * levels)
    np.clip(k, -levels, levels, out=k)
    # (k/L)*s maps the extreme level back onto s exactly, which keeps the
    # grid (and therefore quantization) stable under repetition
    return ((k / levels) * sc).astype(w.dtype, copy=False), s


def qat_forward_hook(layer, bits: int):
    """Switch ``layer`` to quantized forward / straight-through backward.

    ``bits = 0`` turns quantization off again; the layer always keeps its
    full-precision master weights.
    """
    from .network import Conv2d

    if not isinstance(layer, Conv2d):
        raise TypeError(f"only convolutional layers are quantized, got {type(layer).__name__}")
    if bits:
        QuantConfig(bits)
    layer.quant_bits = int(bits)
    return layer
