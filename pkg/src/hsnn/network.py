"""Layer graph, architecture builders, forward tracing and the manual backward pass.

A :class:`NetworkModel` is an ordered list of layers plus additive shortcut
edges. Inputs arrive as NCHW; inside the graph activations are channels-last.
``forward`` records everything the reverse sweep needs in a
:class:`ForwardTrace`; ``backward`` then propagates the gradient of
``CE + lambda_h * sum(H(u_l))`` through the whole graph in one pass, adding
``lambda_h * hoyer_grad(u_l)`` at the input of every spike layer.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from . import tensor as T
from .hoyer import ExtremumMode, hoyer_grad, hoyer_square
from .quant import quantize_weights
from .spike import (
    VTH_FLOOR,
    HoyerSpikeState,
    spike_backward,
    spike_forward,
    surrogate_ramp,
)

SPIKE_MODES = ("step", "ramp", "identity")


class StaleTraceError(RuntimeError):
    """The trace was recorded before the latest parameter update."""


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}

    def out_shape(self, in_shape: tuple) -> tuple:
        return in_shape

    def astype(self, dtype):
        for k, v in self.params.items():
            self.params[k] = v.astype(dtype)
        return self


class Conv2d(Layer):
    kind = "conv"

    def __init__(self, in_ch, out_ch, k=3, stride=1, pad=1, bias=True, rng=None, dtype=np.float32):
        super().__init__()
        self.in_ch, self.out_ch, self.k, self.stride, self.pad = in_ch, out_ch, k, stride, pad
        self.quant_bits = 0
        fan_in = in_ch * k * k
        rng = rng if rng is not None else T.make_rng(0)
        self.params["w"] = T.kaiming_uniform_init((out_ch, in_ch, k, k), fan_in, rng, dtype)
        if bias:
            self.params["b"] = np.zeros(out_ch, dtype=dtype)

    def effective_weight(self):
        w = self.params["w"]
        if self.quant_bits:
            return quantize_weights(w, self.quant_bits)[0]
        return w

    def out_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.in_ch:
            raise T.DimensionError(f"conv expects {self.in_ch} channels, got {c}")
        ho = (h + 2 * self.pad - self.k) // self.stride + 1
        wo = (w + 2 * self.pad - self.k) // self.stride + 1
        if ho < 1 or wo < 1:
            raise T.DimensionError(f"conv collapses spatial size {h}x{w}")
        return (self.out_ch, ho, wo)

    def forward(self, x, ctx):
        w = self.effective_weight()
        y, cols = T.conv2d_forward_nhwc(x, w, self.params.get("b"), self.stride, self.pad)
        return y, (x.shape, cols, w)

    def backward(self, g, cache, grads, need_input_grad=True):
        x_shape, cols, w = cache
        gx, gw, gb = T.conv2d_backward_nhwc(g, x_shape, w, self.stride, self.pad, cols=cols,
                                            need_grad_x=need_input_grad)
        # straight-through: the quantized weight's gradient lands on the master copy
        grads["w"] = gw
        if "b" in self.params:
            grads["b"] = gb
        return gx


class Linear(Layer):
    kind = "linear"

    def __init__(self, in_f, out_f, rng=None, dtype=np.float32):
        super().__init__()
        self.in_f, self.out_f = in_f, out_f
        rng = rng if rng is not None else T.make_rng(0)
        self.params["w"] = T.kaiming_uniform_init((out_f, in_f), in_f, rng, dtype)
        self.params["b"] = np.zeros(out_f, dtype=dtype)

    def out_shape(self, in_shape):
        if in_shape != (self.in_f,):
            raise T.DimensionError(f"linear expects ({self.in_f},), got {in_shape}")
        return (self.out_f,)

    def forward(self, x, ctx):
        return T.matmul(x, self.params["w"].T) + self.params["b"], x

    def backward(self, g, x, grads, need_input_grad=True):
        grads["w"] = g.T @ x
        grads["b"] = g.sum(axis=0)
        return g @ self.params["w"] if need_input_grad else None


class BatchNorm(Layer):
    kind = "batchnorm"

    def __init__(self, channels, dtype=np.float32):
        super().__init__()
        self.channels = channels
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = T.BN_MOMENTUM
        self.eps = T.BN_EPS

    def astype(self, dtype):
        super().astype(dtype)
        self.running_mean = self.running_mean.astype(dtype)
        self.running_var = self.running_var.astype(dtype)
        return self

    def out_shape(self, in_shape):
        if in_shape[0] != self.channels:
            raise T.DimensionError(f"batchnorm expects {self.channels} channels, got {in_shape[0]}")
        return in_shape

    def forward(self, x, ctx):
        return T.batchnorm_forward(
            x, self.params["gamma"], self.params["beta"], self.running_mean, self.running_var,
            ctx.phase, self.momentum, self.eps, track=ctx.track, channel_axis=-1,
        )

    def backward(self, g, cache, grads, need_input_grad=True):
        gx, grads["gamma"], grads["beta"] = T.batchnorm_backward(g, cache)
        return gx


class MaxPool(Layer):
    kind = "maxpool"

    def __init__(self, k=2, s=2):
        super().__init__()
        self.k, self.s = k, s

    def out_shape(self, in_shape):
        c, h, w = in_shape
        if self.k > h or self.k > w:
            raise T.DimensionError(f"pool window {self.k} larger than {h}x{w}")
        return (c, (h - self.k) // self.s + 1, (w - self.k) // self.s + 1)

    def forward(self, x, ctx):
        y, idx = T.maxpool2d_nhwc(x, self.k, self.s)
        return y, (idx, x.shape)

    def backward(self, g, cache, grads, need_input_grad=True):
        idx, shape = cache
        return T.maxpool2d_backward_nhwc(g, idx, shape, self.k, self.s)


class HoyerSpike(Layer):
    kind = "hoyer_spike"

    def __init__(self, state: Optional[HoyerSpikeState] = None, dtype=np.float32):
        super().__init__()
        self.state = state if state is not None else HoyerSpikeState()
        self.params["v_th"] = np.asarray(self.state.v_th, dtype=dtype)
        self.state.v_th = self.params["v_th"]

    def astype(self, dtype):
        super().astype(dtype)
        self.state.v_th = self.params["v_th"]
        return self

    def forward(self, x, ctx):
        self.state.v_th = self.params["v_th"]
        if ctx.spike_mode == "identity":
            return x, None
        o, cache = spike_forward(x, self.state, ctx.phase, track=ctx.track, channel_axis=-1)
        if ctx.spike_mode == "ramp":
            o = surrogate_ramp(cache.z, self.state.surrogate_scale).astype(x.dtype)
        return o, cache

    def backward(self, g, cache, grads, need_input_grad=True):
        if cache is None:
            grads["v_th"] = np.zeros_like(self.params["v_th"])
            return g
        gu, gv = spike_backward(g, cache, self.state)
        grads["v_th"] = np.asarray(gv, dtype=self.params["v_th"].dtype)
        return gu


class Flatten(Layer):
    kind = "flatten"

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, ctx):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, g, shape, grads, need_input_grad=True):
        return g.reshape(shape)


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, p=0.1):
        super().__init__()
        if not 0 <= p < 1:
            raise ValueError("dropout rate must lie in [0, 1)")
        self.p = p

    def forward(self, x, ctx):
        if ctx.phase != "train" or self.p == 0 or ctx.rng is None:
            return x, None
        keep = (ctx.rng.random(x.shape) >= self.p).astype(x.dtype) / x.dtype.type(1 - self.p)
        return x * keep, keep

    def backward(self, g, keep, grads, need_input_grad=True):
        return g if keep is None else g * keep


@dataclass
class Shortcut:
    """Adds layer ``src``'s output to layer ``dst``'s input, through an
    optional 1x1 projection conv when the shapes differ."""
    src: int
    dst: int
    proj: Optional[Conv2d] = None


# ---------------------------------------------------------------------------
# model and trace
# ---------------------------------------------------------------------------

@dataclass
class RunContext:
    phase: str = "train"
    track: bool = True
    rng: Optional[np.random.Generator] = None
    spike_mode: str = "step"


@dataclass
class NetworkModel:
    layers: list
    shortcuts: list = field(default_factory=list)
    input_shape: tuple = ()
    descriptor: str = ""
    version: int = 0

    def __post_init__(self):
        heads = [i for i, l in enumerate(self.layers) if isinstance(l, Linear)]
        if not heads or heads[-1] != len(self.layers) - 1:
            raise ValueError("the last layer must be the linear classifier head")
        if self.input_shape:
            self.shapes()

    @property
    def dtype(self):
        return self.layers[-1].params["w"].dtype

    @property
    def spike_layers(self) -> list:
        return [i for i, l in enumerate(self.layers) if isinstance(l, HoyerSpike)]

    def shapes(self) -> list:
        """Per-sample output shape of every layer (validates composition)."""
        out, cur = [], tuple(self.input_shape)
        by_dst = self._by_dst()
        for i, layer in enumerate(self.layers):
            for sc in by_dst.get(i, []):
                src_shape = out[sc.src]
                if sc.proj is not None:
                    src_shape = sc.proj.out_shape(src_shape)
                if src_shape != cur:
                    raise T.DimensionError(f"shortcut {sc.src}->{sc.dst} shape {src_shape} != {cur}")
            cur = layer.out_shape(cur)
            out.append(cur)
        return out

    def _by_dst(self) -> dict:
        d: dict = {}
        for sc in self.shortcuts:
            d.setdefault(sc.dst, []).append(sc)
        return d

    def named_parameters(self) -> Iterator[tuple]:
        for i, layer in enumerate(self.layers):
            for name, p in layer.params.items():
                yield f"{i}.{name}", p
        for j, sc in enumerate(self.shortcuts):
            if sc.proj is not None:
                for name, p in sc.proj.params.items():
                    yield f"sc{j}.{name}", p

    def parameter_count(self) -> int:
        return sum(p.size for _, p in self.named_parameters())

    def astype(self, dtype):
        for layer in self.layers:
            layer.astype(dtype)
        for sc in self.shortcuts:
            if sc.proj is not None:
                sc.proj.astype(dtype)
        return self

    def clamp_thresholds(self):
        for i in self.spike_layers:
            v = self.layers[i].params["v_th"]
            np.maximum(v, VTH_FLOOR, out=v)

    def set_quant_bits(self, bits: int):
        from .quant import qat_forward_hook

        for layer in self.conv_layers():
            qat_forward_hook(layer, bits)

    def conv_layers(self) -> list:
        convs = [l for l in self.layers if isinstance(l, Conv2d)]
        return convs + [sc.proj for sc in self.shortcuts if sc.proj is not None]


@dataclass
class ForwardTrace:
    caches: list
    logits: np.ndarray
    potentials: dict          # spike layer index -> membrane potential u_l
    spike_counts: dict        # spike layer index -> (spikes emitted, neurons per sample)
    phase: str
    version: int
    batch_size: int
    ctx: RunContext
    shortcut_caches: dict = field(default_factory=dict)


@dataclass
class LossBreakdown:
    total: float
    ce: float
    hoyer: float
    lambda_h: float


def forward(model: NetworkModel, x: np.ndarray, phase: str = "train", rng=None,
            track: bool = True, spike_mode: str = "step"):
    """Run ``x`` through the model; returns ``(logits, ForwardTrace)``.

    ``spike_mode`` is a debugging switch: ``"ramp"`` replaces each spike by
    the integral of its surrogate derivative (used by gradient checks) and
    ``"identity"`` passes potentials through unchanged.
    """
    if spike_mode not in SPIKE_MODES:
        raise ValueError(f"spike_mode must be one of {SPIKE_MODES}")
    if model.input_shape and tuple(x.shape[1:]) != tuple(model.input_shape):
        raise T.DimensionError(f"model expects input {model.input_shape}, got {x.shape[1:]}")
    ctx = RunContext(phase, track, rng, spike_mode)
    if x.ndim == 4:
        x = np.ascontiguousarray(x.transpose(0, 2, 3, 1))
    by_dst = model._by_dst()
    sources = {sc.src for sc in model.shortcuts}
    outs: dict = {}
    caches, potentials, counts = [], {}, {}
    sc_caches: dict = {}
    cur = x
    for i, layer in enumerate(model.layers):
        for sc in by_dst.get(i, []):
            src = outs[sc.src]
            if sc.proj is not None:
                src, sc_caches[id(sc)] = sc.proj.forward(src, ctx)
            cur = cur + src
        if isinstance(layer, HoyerSpike):
            potentials[i] = cur
        y, cache = layer.forward(cur, ctx)
        if isinstance(layer, HoyerSpike):
            counts[i] = (float(y.sum(dtype=np.float64)), int(np.prod(y.shape[1:])))
        caches.append(cache)
        if i in sources:
            outs[i] = y
        cur = y
    trace = ForwardTrace(caches, cur, potentials, counts, phase, model.version, x.shape[0], ctx, sc_caches)
    return cur, trace


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _check_labels(labels, n_classes):
    labels = np.asarray(labels)
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= n_classes:
        raise ValueError(f"labels must lie in [0, {n_classes})")
    return labels


def cross_entropy(logits: np.ndarray, labels) -> float:
    labels = _check_labels(labels, logits.shape[1])
    z = logits.astype(np.float64) - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(z).sum(axis=1))
    return float(np.mean(logz - z[np.arange(len(labels)), labels]))


def total_loss(logits, labels, trace: ForwardTrace, lambda_h: float) -> LossBreakdown:
    ce = cross_entropy(logits, labels)
    hoyer = float(sum(hoyer_square(u) for u in trace.potentials.values()))
    return LossBreakdown(ce + lambda_h * hoyer, ce, hoyer, lambda_h)


def backward(model: NetworkModel, trace: ForwardTrace, labels, lambda_h: float,
             include_ce: bool = True) -> dict:
    """Gradients of ``CE + lambda_h * sum H(u_l)`` keyed like ``named_parameters``.

    ``include_ce=False`` drops the cross-entropy term (debug switch for
    studying the regularizer alone).
    """
    if trace.version != model.version:
        raise StaleTraceError("trace predates the latest parameter update")
    if trace.phase != "train":
        raise ValueError("backward needs a train-phase trace")
    labels = _check_labels(labels, trace.logits.shape[1])
    logits = trace.logits
    if include_ce:
        g = softmax(logits.astype(np.float64))
        g[np.arange(len(labels)), labels] -= 1.0
        g = (g / len(labels)).astype(logits.dtype)
    else:
        g = np.zeros_like(logits)

    by_dst = model._by_dst()
    sc_caches = trace.shortcut_caches
    pending: dict = {}
    grads: dict = {}
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        if i in pending:
            g = g + pending.pop(i)
        lg: dict = {}
        g = layer.backward(g, trace.caches[i], lg, need_input_grad=i > 0)
        if isinstance(layer, HoyerSpike) and lambda_h:
            u = trace.potentials[i]
            g = g + (lambda_h * hoyer_grad(u)).astype(g.dtype)
        for name, v in lg.items():
            grads[f"{i}.{name}"] = v
        for sc in by_dst.get(i, []):
            gs = g
            if sc.proj is not None:
                pg: dict = {}
                gs = sc.proj.backward(g, sc_caches[id(sc)], pg)
                j = model.shortcuts.index(sc)
                for name, v in pg.items():
                    grads[f"sc{j}.{name}"] = v
            pending[sc.src] = pending.get(sc.src, 0) + gs
    return grads


def measure_spiking_activity(model: NetworkModel, images: np.ndarray, batch_size: int = 500) -> dict:
    """Fraction of neurons firing per inference, per spike layer (infer phase)."""
    if len(images) == 0:
        raise ValueError("empty dataset")
    spikes: dict = {}
    neurons: dict = {}
    for start in range(0, len(images), batch_size):
        _, trace = forward(model, images[start:start + batch_size], phase="infer")
        for i, (s, n) in trace.spike_counts.items():
            spikes[i] = spikes.get(i, 0.0) + s
            neurons[i] = n
    return {i: spikes[i] / (neurons[i] * len(images)) for i in spikes}


# ---------------------------------------------------------------------------
# architecture descriptors and builders
# ---------------------------------------------------------------------------

@dataclass
class SpikeConfig:
    mode: ExtremumMode = ExtremumMode.CHANNEL
    ema_momentum: float = 0.9
    surrogate_scale: float = 1.0
    use_extremum: bool = True
    dropout: float = 0.1

    def make_state(self, dtype):
        return HoyerSpikeState(np.array(1.0, dtype=dtype), None, self.ema_momentum,
                               self.mode, self.surrogate_scale, self.use_extremum)


_DESC = re.compile(
    r"^(?P<family>vgg-s|resnet-s|mlp):(?P<features>[^|]*)\|(?P<fc>[^|]*)\|(?P<classes>\d+)"
    r"(?:@(?P<c>\d+)x(?P<h>\d+)x(?P<w>\d+))?$"
)
_CONV = re.compile(r"^c(\d+)(?:s(\d+))?$")
_BLOCK = re.compile(r"^b(\d+)(?:s(\d+))?$")
_FC = re.compile(r"^fc(\d+)$")


def parse_descriptor(desc: str) -> dict:
    m = _DESC.match(desc.strip())
    if not m:
        raise ValueError(f"malformed architecture descriptor {desc!r}")
    feats = [t for t in m["features"].split("-") if t]
    fcs = []
    for t in (t for t in m["fc"].split("-") if t):
        fm = _FC.match(t)
        if not fm:
            raise ValueError(f"bad classifier token {t!r}")
        fcs.append(int(fm[1]))
    for t in feats:
        if t != "p" and not _CONV.match(t) and not _BLOCK.match(t):
            raise ValueError(f"bad feature token {t!r}")
    shape = (int(m["c"]), int(m["h"]), int(m["w"])) if m["c"] else None
    return {"family": m["family"], "features": feats, "fc": fcs,
            "classes": int(m["classes"]), "input_shape": shape}


def build_from_descriptor(desc: str, input_shape=None, spike: Optional[SpikeConfig] = None,
                          seed: int = 0, dtype=np.float32) -> NetworkModel:
    """Build a model from e.g. ``vgg-s:c16-p-c32-p-c64-c64|fc256-fc128|10@1x28x28``.

    Feature tokens: ``cN[sS]`` 3x3 conv with N outputs (stride S), ``p`` 2x2
    max pool, ``bN[sS]`` residual block (BN, spike, conv) bypassed by a
    shortcut. ``fcN`` tokens are hidden linear layers; the third field is the
    class count and ``@CxHxW`` the per-sample input shape.
    """
    spec = parse_descriptor(desc)
    shape = spec["input_shape"] or (tuple(input_shape) if input_shape else None)
    if shape is None:
        raise ValueError("input shape missing from descriptor and arguments")
    spike = spike or SpikeConfig()
    rng = T.make_rng(seed)
    family, feats = spec["family"], spec["features"]
    layers: list = []
    shortcuts: list = []
    cur = tuple(shape)

    def add(layer):
        nonlocal cur
        cur = layer.out_shape(cur)
        layers.append(layer)

    def spike_layer():
        return HoyerSpike(spike.make_state(dtype), dtype)

    if family == "mlp" and feats:
        raise ValueError("mlp descriptors take no feature tokens")
    k = 0
    while k < len(feats):
        tok = feats[k]
        pool_next = k + 1 < len(feats) and feats[k + 1] == "p"
        cm, bm = _CONV.match(tok), _BLOCK.match(tok)
        if tok == "p":
            if family == "vgg-s":
                raise ValueError("vgg-s pools must follow a conv token")
            add(MaxPool(2, 2))
        elif cm and family == "vgg-s":
            add(Conv2d(cur[0], int(cm[1]), 3, int(cm[2] or 1), 1, rng=rng, dtype=dtype))
            if pool_next:
                add(MaxPool(2, 2))
                k += 1
            add(BatchNorm(cur[0], dtype))
            add(spike_layer())
        elif cm and family == "resnet-s":
            if layers:
                raise ValueError("resnet-s allows a single stem conv")
            add(Conv2d(cur[0], int(cm[1]), 3, int(cm[2] or 1), 1, rng=rng, dtype=dtype))
        elif bm and family == "resnet-s":
            if not layers:
                raise ValueError("resnet-s needs a stem conv before its blocks")
            src, in_shape = len(layers) - 1, cur
            add(BatchNorm(cur[0], dtype))
            add(spike_layer())
            add(Conv2d(cur[0], int(bm[1]), 3, int(bm[2] or 1), 1, rng=rng, dtype=dtype))
            proj = None
            if cur != in_shape:
                proj = Conv2d(in_shape[0], int(bm[1]), 1, int(bm[2] or 1), 0, bias=False, rng=rng, dtype=dtype)
                if proj.out_shape(in_shape) != cur:
                    raise T.DimensionError(f"block {tok} cannot be bypassed")
            shortcuts.append(Shortcut(src, len(layers), proj))
        else:
            raise ValueError(f"token {tok!r} not valid for {family}")
        k += 1
    if family == "resnet-s":
        add(BatchNorm(cur[0], dtype))
        add(spike_layer())
    add(Flatten())
    for width in spec["fc"]:
        add(Linear(cur[0], width, rng=rng, dtype=dtype))
        add(spike_layer())
        if spike.dropout > 0:
            add(Dropout(spike.dropout))
    add(Linear(cur[0], spec["classes"], rng=rng, dtype=dtype))
    canonical = format_descriptor(spec, shape)
    return NetworkModel(layers, shortcuts, tuple(shape), canonical)


def format_descriptor(spec: dict, input_shape) -> str:
    c, h, w = input_shape
    return (f"{spec['family']}:{'-'.join(spec['features'])}|"
            f"{'-'.join(f'fc{n}' for n in spec['fc'])}|{spec['classes']}@{c}x{h}x{w}")


def build_vgg_s(input_channels=1, class_count=10, width_multiplier=1, input_size=(28, 28),
                spike=None, seed=0, dtype=np.float32) -> NetworkModel:
    """Four conv blocks (conv, [pool], BN, spike) and two hidden linear layers."""
    if width_multiplier < 1:
        raise ValueError("width_multiplier must be >= 1")
    m = int(width_multiplier)
    feats = f"c{16 * m}-p-c{32 * m}-p-c{64 * m}-c{64 * m}"
    desc = f"vgg-s:{feats}|fc256-fc128|{class_count}@{input_channels}x{input_size[0]}x{input_size[1]}"
    return build_from_descriptor(desc, spike=spike, seed=seed, dtype=dtype)


def build_resnet_s(input_channels=3, class_count=10, blocks=3, input_size=(32, 32),
                   spike=None, seed=0, dtype=np.float32) -> NetworkModel:
    """Stem conv then pre-activation blocks (BN, spike, conv), each bypassed
    by a shortcut; channels double and resolution halves after the first block."""
    if blocks < 1:
        raise ValueError("blocks must be >= 1")
    toks = ["c16"] + [f"b{16 * 2 ** i}" + ("s2" if i else "") for i in range(blocks)]
    desc = f"resnet-s:{'-'.join(toks)}|fc256-fc128|{class_count}@{input_channels}x{input_size[0]}x{input_size[1]}"
    return build_from_descriptor(desc, spike=spike, seed=seed, dtype=dtype)


NAMED_ARCHS = {
    "vgg-s": "vgg-s:c16-p-c32-p-c64-c64|fc256-fc128|{classes}@{shape}",
    "resnet-s": "resnet-s:c16-b16-b32s2-b64s2|fc256-fc128|{classes}@{shape}",
    "mlp": "mlp:|fc256-fc128|{classes}@{shape}",
}


def resolve_arch(arch: str, input_shape, classes: int) -> str:
    if arch in NAMED_ARCHS:
        return NAMED_ARCHS[arch].format(classes=classes, shape="x".join(map(str, input_shape)))
    spec = parse_descriptor(arch)
    return format_descriptor(spec, spec["input_shape"] or input_shape)
