"""SGD / Adam updates, the step learning-rate schedule, and epoch loops."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Callable, Optional

import numpy as np

from .data import Dataset, augment_flip_crop, batches
from .hoyer import ExtremumMode
from .network import NetworkModel, backward, forward, total_loss
from .quant import VALID_BITS
from .spike import VTH_FLOOR

OPTIMIZERS = ("adam", "sgd")


def is_threshold(name: str) -> bool:
    return name.endswith(".v_th")


@dataclass
class OptimizerState:
    kind: str = "adam"
    lr: float = 1e-4
    momentum: float = 0.9
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    buffers: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")


def _check(params: dict, grads: dict):
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if np.shape(g) != np.shape(params[name]):
            raise ValueError(f"{name}: gradient shape {np.shape(g)} != parameter shape {np.shape(params[name])}")


def _decayed(name, p, g, wd):
    if wd and not is_threshold(name):
        return g + p.dtype.type(wd) * p
    return g


def _clamp(name, p):
    if is_threshold(name):
        np.maximum(p, p.dtype.type(VTH_FLOOR), out=p)


def sgd_step(params: dict, grads: dict, state: OptimizerState) -> OptimizerState:
    """In-place ``v <- mu*v + g + wd*p ; p <- p - lr*v``; thresholds skip decay
    and are clamped to the floor afterwards."""
    _check(params, grads)
    state.step += 1
    for name, g in grads.items():
        p = params[name]
        t = p.dtype.type
        d = _decayed(name, p, g, state.weight_decay)
        v = state.buffers.get(name)
        if v is None:
            v = state.buffers[name] = np.zeros_like(p)
        v *= t(state.momentum)
        v += d
        p -= t(state.lr) * v
        _clamp(name, p)
    return state


def adam_step(params: dict, grads: dict, state: OptimizerState) -> OptimizerState:
    """Bias-corrected Adam with ``g += wd*p`` folded in before the moments."""
    _check(params, grads)
    state.step += 1
    b1, b2 = state.betas
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, g in grads.items():
        p = params[name]
        t = p.dtype.type
        d = _decayed(name, p, g, state.weight_decay)
        buf = state.buffers.get(name)
        if buf is None:
            buf = state.buffers[name] = (np.zeros_like(p), np.zeros_like(p))
        m, v = buf
        m *= t(b1)
        m += t(1 - b1) * d
        v *= t(b2)
        v += t(1 - b2) * np.square(d)
        p -= t(state.lr / c1) * m / (np.sqrt(v / t(c2)) + t(state.eps))
        _clamp(name, p)
    return state


def optimizer_step(params, grads, state):
    return (adam_step if state.kind == "adam" else sgd_step)(params, grads, state)


def lr_at_epoch(base_lr: float, epoch: int, total_epochs: int) -> float:
    """Divide by 5 at floor(0.6T), floor(0.8T) and floor(0.9T) (inclusive)."""
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    drops = sum(epoch >= b and b > 0 for b in
                (math.floor(0.6 * total_epochs), math.floor(0.8 * total_epochs), math.floor(0.9 * total_epochs)))
    return base_lr / 5 ** drops


@dataclass
class TrainConfig:
    dataset: str = "mnist"
    arch: str = "vgg-s"
    epochs: int = 10
    batch_size: int = 128
    base_lr: float = 1e-4
    optimizer: str = "adam"
    lambda_h: float = 1e-8
    surrogate_scale: float = 1.0
    ema_momentum: float = 0.9
    extremum_mode: str = "channel"
    dropout: float = 0.1
    weight_decay: float = 1e-4
    seed: int = 0
    quant_bits: int = 0
    hoyer_spike: bool = True
    augment: bool = False
    deterministic: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        if self.quant_bits != 0 and self.quant_bits not in VALID_BITS:
            raise ValueError(f"quant_bits must be 0 or one of {VALID_BITS}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if not 0 <= self.ema_momentum < 1:
            raise ValueError("ema_momentum must lie in [0, 1)")
        if self.surrogate_scale <= 0:
            raise ValueError("surrogate_scale must be positive")
        self.extremum_mode = ExtremumMode(self.extremum_mode).value

    def to_record(self) -> str:
        """Flat ``key = value`` lines, one per field, in declaration order."""
        return "".join(f"{f.name} = {_fmt(getattr(self, f.name))}\n" for f in fields(self))

    @classmethod
    def from_record(cls, text: str) -> "TrainConfig":
        return cls(**parse_record(text))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def parse_record(text: str) -> dict:
    """Parse ``key = value`` lines into typed TrainConfig keyword arguments.

    Blank lines and ``#`` comments are ignored; dashes in keys are accepted.
    """
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        k = k.replace("-", "_")
        if k not in _TYPES:
            raise ValueError(f"line {lineno}: unknown key {k!r}")
        out[k] = _coerce(_TYPES[k], v, lineno)
    return out


def _coerce(typ, v: str, lineno: int):
    try:
        if typ in ("bool", bool):
            if v.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(v)
            return v.lower() in ("true", "1", "yes")
        if typ in ("int", int):
            return int(v)
        if typ in ("float", float):
            return float(v)
        return v
    except ValueError:
        raise ValueError(f"line {lineno}: bad value {v!r} for a {typ} field") from None


@dataclass
class EpochMetrics:
    loss: float
    ce: float
    hoyer: float
    accuracy: float
    activity: dict            # spike layer index -> S_l over the epoch
    extremums: dict           # spike layer index -> current EMA extremum

    @property
    def mean_activity(self) -> float:
        return mean_activity(self.activity)


def mean_activity(activity: dict) -> float:
    """Unweighted mean of the per-layer activities."""
    return float(np.mean(list(activity.values()))) if activity else 0.0


def train_epoch(model: NetworkModel, dataset: Dataset, config: TrainConfig, opt: OptimizerState,
                rng: np.random.Generator, include_ce: bool = True) -> EpochMetrics:
    """One shuffled pass of forward/backward/update; ``opt.lr`` is used as is."""
    params = dict(model.named_parameters())
    tot_loss = tot_ce = tot_h = 0.0
    correct = seen = 0
    spikes: dict = {}
    neurons: dict = {}
    for x, y in batches(dataset, config.batch_size, shuffle=True, seed=rng):
        if config.augment:
            x = augment_flip_crop(x, rng)
        logits, trace = forward(model, x, "train", rng=rng)
        lb = total_loss(logits, y, trace, config.lambda_h)
        grads = backward(model, trace, y, config.lambda_h, include_ce=include_ce)
        optimizer_step(params, grads, opt)
        model.version += 1
        n = len(y)
        tot_loss += lb.total * n
        tot_ce += lb.ce * n
        tot_h += lb.hoyer * n
        correct += int((logits.argmax(axis=1) == y).sum())
        seen += n
        for i, (s, per) in trace.spike_counts.items():
            spikes[i] = spikes.get(i, 0.0) + s
            neurons[i] = neurons.get(i, 0) + per * n
    ext = {}
    for i in model.spike_layers:
        e = model.layers[i].state.ema_ext
        ext[i] = None if e is None else np.array(e, copy=True)
    return EpochMetrics(tot_loss / seen, tot_ce / seen, tot_h / seen, correct / seen,
                        {i: spikes[i] / neurons[i] for i in spikes}, ext)


def evaluate(model: NetworkModel, dataset: Dataset, batch_size: int = 500) -> tuple:
    """Inference-phase ``(accuracy, {layer: S_l})``."""
    correct = 0
    spikes: dict = {}
    neurons: dict = {}
    for x, y in batches(dataset, batch_size):
        logits, trace = forward(model, x, "infer")
        correct += int((logits.argmax(axis=1) == y).sum())
        for i, (s, per) in trace.spike_counts.items():
            spikes[i] = spikes.get(i, 0.0) + s
            neurons[i] = neurons.get(i, 0) + per * len(y)
    return correct / len(dataset), {i: spikes[i] / neurons[i] for i in spikes}


def make_optimizer(config: TrainConfig) -> OptimizerState:
    return OptimizerState(kind=config.optimizer, lr=config.base_lr, weight_decay=config.weight_decay)


def fit(model: NetworkModel, train: Dataset, config: TrainConfig,
        on_epoch: Optional[Callable[[int, EpochMetrics], None]] = None) -> list:
    """Train for ``config.epochs`` with the step schedule; returns per-epoch metrics."""
    from .tensor import make_rng

    if config.quant_bits:
        model.set_quant_bits(config.quant_bits)
    rng = make_rng(config.seed + 1)
    opt = make_optimizer(config)
    history = []
    for epoch in range(config.epochs):
        opt.lr = lr_at_epoch(config.base_lr, epoch, config.epochs)
        m = train_epoch(model, train, config, opt, rng)
        history.append(m)
        if on_epoch is not None:
            on_epoch(epoch, m)
    return history


def spike_config(config: TrainConfig):
    from .network import SpikeConfig

    return SpikeConfig(ExtremumMode(config.extremum_mode), config.ema_momentum, config.surrogate_scale,
                       config.hoyer_spike, config.dropout)


def build_model(config: TrainConfig, input_shape, classes: int, dtype=np.float32) -> NetworkModel:
    """Model for ``config.arch`` (a named architecture or a descriptor),
    initialized from ``config.seed``; QAT is switched on when requested."""
    from .network import build_from_descriptor, resolve_arch

    desc = resolve_arch(config.arch, tuple(input_shape), classes)
    model = build_from_descriptor(desc, spike=spike_config(config), seed=config.seed, dtype=dtype)
    if config.quant_bits:
        model.set_quant_bits(config.quant_bits)
    return model
