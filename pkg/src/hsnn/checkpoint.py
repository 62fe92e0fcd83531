"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"HSNN" | u32 version | u32 len + utf-8 descriptor | u32 len + utf-8 config
    then per parameterized layer, in layer order, then per projection shortcut:
        u32 tensor count
        per tensor: u8 dtype tag | u8 ndim | ndim * u32 dims | raw data

Dtype tags: 0 = float32, 1 = float64. Spike layers hold ``v_th`` (0-d) and
the EMA extremum (shape (0,) before the first training batch). Weights are
always the full-precision masters; quantization is re-derived on load from
the stored config.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .network import BatchNorm, Conv2d, HoyerSpike, Linear, NetworkModel

MAGIC = b"HSNN"
VERSION = 1
_TAGS = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_DTYPES = {v: k for k, v in _TAGS.items()}


class CheckpointError(Exception):
    pass


class CheckpointMagicError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


def _blocks(model: NetworkModel) -> list:
    """Ordered list of ``(owner, tensor names)`` for every parameterized layer."""
    out = []
    for layer in model.layers:
        if isinstance(layer, Conv2d):
            out.append((layer, ["w", "b"] if "b" in layer.params else ["w"]))
        elif isinstance(layer, Linear):
            out.append((layer, ["w", "b"]))
        elif isinstance(layer, BatchNorm):
            out.append((layer, ["gamma", "beta", "running_mean", "running_var"]))
        elif isinstance(layer, HoyerSpike):
            out.append((layer, ["v_th", "ema_ext"]))
    for sc in model.shortcuts:
        if sc.proj is not None:
            out.append((sc.proj, ["w"]))
    return out


def _get(layer, name):
    if name in layer.params:
        return layer.params[name]
    if name == "ema_ext":
        e = layer.state.ema_ext
        return np.zeros(0, dtype=np.float64) if e is None else np.asarray(e, dtype=np.float64)
    return getattr(layer, name)


def _set(layer, name, value):
    if name in layer.params:
        cur = layer.params[name]
        if cur.shape != value.shape:
            raise CheckpointError(f"{type(layer).__name__}.{name}: stored shape {value.shape} != {cur.shape}")
        layer.params[name] = value
        if name == "v_th":
            layer.state.v_th = value
    elif name == "ema_ext":
        layer.state.ema_ext = None if value.size == 0 and value.ndim == 1 else value
    else:
        cur = getattr(layer, name)
        if cur.shape != value.shape:
            raise CheckpointError(f"{type(layer).__name__}.{name}: stored shape {value.shape} != {cur.shape}")
        setattr(layer, name, value)


def _write_str(buf, s: str):
    b = s.encode("utf-8")
    buf.write(struct.pack("<I", len(b)))
    buf.write(b)


def _write_tensor(buf, a: np.ndarray):
    a = np.asarray(a)
    dt = a.dtype.newbyteorder("<")
    if dt not in _TAGS:
        raise CheckpointError(f"unsupported dtype {a.dtype}")
    buf.write(struct.pack("<BB", _TAGS[dt], a.ndim))
    buf.write(struct.pack(f"<{a.ndim}I", *a.shape))
    buf.write(np.ascontiguousarray(a, dtype=dt).tobytes())


def serialize(model: NetworkModel, config) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    _write_str(buf, model.descriptor)
    _write_str(buf, config.to_record())
    for owner, names in _blocks(model):
        buf.write(struct.pack("<I", len(names)))
        for n in names:
            _write_tensor(buf, _get(owner, n))
    return buf.getvalue()


def checkpoint_save(model: NetworkModel, config, path) -> None:
    Path(path).write_bytes(serialize(model, config))


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointTruncatedError(f"need {n} bytes at offset {self.pos}, file has {len(self.data)}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")

    def tensor(self) -> np.ndarray:
        tag, ndim = struct.unpack("<BB", self.take(2))
        if tag not in _DTYPES:
            raise CheckpointError(f"unknown dtype tag {tag} at offset {self.pos - 2}")
        dims = struct.unpack(f"<{ndim}I", self.take(4 * ndim))
        dt = _DTYPES[tag]
        n = int(np.prod(dims)) if ndim else 1
        raw = self.take(n * dt.itemsize)
        return np.frombuffer(raw, dtype=dt).reshape(dims).astype(dt.newbyteorder("="))


def deserialize(data: bytes):
    """Parse checkpoint bytes into ``(model, config)``; nothing is built
    until the header checks pass."""
    from .network import build_from_descriptor
    from .optim import TrainConfig, spike_config

    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointMagicError("not an HSNN checkpoint (bad magic at offset 0)")
    version = r.u32()
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint version {version}, this build reads {VERSION}")
    desc = r.string()
    config = TrainConfig.from_record(r.string())
    blocks_raw = []
    while r.pos < len(data):
        count = r.u32()
        blocks_raw.append([r.tensor() for _ in range(count)])
    model = build_from_descriptor(desc, spike=spike_config(config), seed=config.seed)
    blocks = _blocks(model)
    if len(blocks) != len(blocks_raw):
        raise CheckpointTruncatedError(f"expected {len(blocks)} parameter blocks, found {len(blocks_raw)}")
    for (owner, names), tensors in zip(blocks, blocks_raw):
        if len(names) != len(tensors):
            raise CheckpointError(f"{type(owner).__name__}: expected {len(names)} tensors, found {len(tensors)}")
        for n, t in zip(names, tensors):
            _set(owner, n, t)
    if config.quant_bits:
        model.set_quant_bits(config.quant_bits)
    return model, config


def checkpoint_load(path):
    return deserialize(Path(path).read_bytes())
