"""MAC / comparison counting and the analytic compute-energy model.

Each compute layer (conv or linear) becomes one row. Its comparison count is
the neuron count of the spike layer that thresholds its output; the head has
no spike layer, so its comparisons are the class-score comparisons (one per
logit). The activity attached to a row is that of the spike layer feeding
the layer's input. Rows with analog input (the first layer, projection
shortcuts) are charged as dense MACs.

Arithmetic is done in exact rationals so that totals are reproducible from
the rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

from .network import Conv2d, HoyerSpike, Linear, NetworkModel, measure_spiking_activity
from .tensor import DimensionError

E_MAC = Fraction("4.6")
E_AC = Fraction("0.9")
E_CMP_FIRST = Fraction("0.4")
E_CMP = Fraction("0.7")

CONSTANTS = {"mac_pj": E_MAC, "ac_pj": E_AC, "cmp_first_pj": E_CMP_FIRST, "cmp_pj": E_CMP}

CSV_HEADER = "layer,kind,flops,comparisons,activity,snn_pj,dnn_pj"


@dataclass(frozen=True)
class LayerCostProfile:
    layer: str
    kind: str
    flops: int
    comparisons: int
    is_first_layer: bool = False
    dense_input: bool = False          # analog input: charged at the MAC rate
    input_spike: Optional[int] = None  # spike layer whose activity scales this row

    def __post_init__(self):
        if self.flops < 0 or self.comparisons < 0:
            raise ValueError("counts must be non-negative")


def conv_macs(in_shape, out_ch: int, k: int, stride: int = 1, pad: int = 0) -> int:
    c, h, w = in_shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    if ho < 1 or wo < 1:
        raise DimensionError(f"kernel {k} does not fit input {h}x{w}")
    return ho * wo * out_ch * k * k * c


def linear_macs(in_f: int, out_f: int) -> int:
    return in_f * out_f


def _neurons(shape) -> int:
    n = 1
    for d in shape:
        n *= int(d)
    return n


def count_flops(model: NetworkModel, input_shape=None) -> list:
    """One :class:`LayerCostProfile` per conv/linear layer, then one per
    projection shortcut."""
    if input_shape is not None and tuple(input_shape) != tuple(model.input_shape):
        model = NetworkModel(model.layers, model.shortcuts, tuple(input_shape), model.descriptor)
    shapes = model.shapes()
    in_shapes = [tuple(model.input_shape)] + shapes[:-1]
    compute = [i for i, l in enumerate(model.layers) if isinstance(l, (Conv2d, Linear))]
    rows = []
    for n, i in enumerate(compute):
        layer = model.layers[i]
        if isinstance(layer, Conv2d):
            flops = conv_macs(in_shapes[i], layer.out_ch, layer.k, layer.stride, layer.pad)
        else:
            flops = linear_macs(layer.in_f, layer.out_f)
        nxt = compute[n + 1] if n + 1 < len(compute) else len(model.layers)
        spikes_after = [j for j in range(i + 1, nxt) if isinstance(model.layers[j], HoyerSpike)]
        if spikes_after:
            comps = _neurons(shapes[spikes_after[0]])
        elif i == len(model.layers) - 1:
            comps = layer.out_f
        else:
            comps = 0
        feeding = [j for j in range(i) if isinstance(model.layers[j], HoyerSpike)]
        first = n == 0
        rows.append(LayerCostProfile(str(i), layer.kind, flops, comps, first, first,
                                     None if first or not feeding else feeding[-1]))
    for j, sc in enumerate(model.shortcuts):
        if sc.proj is not None:
            p = sc.proj
            rows.append(LayerCostProfile(f"sc{j}", "proj", conv_macs(shapes[sc.src], p.out_ch, p.k, p.stride, p.pad),
                                         0, False, True, None))
    return rows


def _as_fraction(s) -> Fraction:
    f = Fraction(s)
    if not 0 <= f <= 1:
        raise ValueError(f"activity {float(s)} outside [0, 1]")
    return f


def row_energy(p: LayerCostProfile, activity) -> Fraction:
    """SNN energy of one row in pJ."""
    if p.dense_input:
        mac = p.flops * E_MAC
    else:
        mac = _as_fraction(activity) * p.flops * E_AC
    return mac + p.comparisons * (E_CMP_FIRST if p.is_first_layer else E_CMP)


def _activity_list(profiles, activities) -> list:
    if isinstance(activities, dict):
        return [activities.get(p.layer, 1) for p in profiles]
    activities = list(activities)
    if len(activities) != len(profiles):
        raise ValueError(f"{len(activities)} activities for {len(profiles)} layers")
    return activities


def snn_energy(profiles: Sequence[LayerCostProfile], activities, exact: bool = False):
    """E = F1*4.6 + C1*0.4 + sum_{l>=2} (S_l*F_l*0.9 + C_l*0.7), in pJ.

    ``activities`` is a list aligned with ``profiles`` or a dict keyed by row
    id; first-layer entries are ignored (that layer sees analog input).
    """
    acts = _activity_list(profiles, activities)
    total = sum((row_energy(p, s) for p, s in zip(profiles, acts)), Fraction(0))
    return total if exact else float(total)


def dnn_energy(profiles: Sequence[LayerCostProfile], exact: bool = False):
    total = sum(p.flops for p in profiles) * E_MAC
    return Fraction(total) if exact else float(total)


@dataclass
class EnergyReport:
    profiles: list
    activities: list                   # per row, as a Fraction-compatible value
    snn_rows: list = field(default_factory=list)
    dnn_rows: list = field(default_factory=list)
    constants: dict = field(default_factory=lambda: dict(CONSTANTS))

    def __post_init__(self):
        if not self.snn_rows:
            self.snn_rows = [row_energy(p, s) for p, s in zip(self.profiles, self.activities)]
            self.dnn_rows = [p.flops * E_MAC for p in self.profiles]

    @property
    def snn_energy_pj(self) -> Fraction:
        return sum(self.snn_rows, Fraction(0))

    @property
    def dnn_energy_pj(self) -> Fraction:
        return sum(self.dnn_rows, Fraction(0))

    def to_csv(self) -> str:
        lines = [CSV_HEADER]
        for p, s, e, d in zip(self.profiles, self.activities, self.snn_rows, self.dnn_rows):
            act = 1 if p.dense_input else s
            lines.append(",".join([p.layer, p.kind, str(p.flops), str(p.comparisons),
                                   _g(act), _g(e), _g(d)]))
        lines.append(",".join(["TOTAL", "", str(sum(p.flops for p in self.profiles)),
                               str(sum(p.comparisons for p in self.profiles)), "",
                               _g(self.snn_energy_pj), _g(self.dnn_energy_pj)]))
        return "\n".join(lines) + "\n"


def _g(x) -> str:
    return format(float(x), ".6g")


def parse_report_csv(text: str) -> dict:
    """Read an emitted report back into ``{"rows": [...], "total": {...}}``."""
    lines = text.strip().splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError("not an energy report")
    keys = CSV_HEADER.split(",")
    rows = [dict(zip(keys, ln.split(","))) for ln in lines[1:]]
    total = [r for r in rows if r["layer"] == "TOTAL"]
    if len(total) != 1 or rows[-1] is not total[0]:
        raise ValueError("report must end with exactly one TOTAL row")
    return {"rows": rows[:-1], "total": total[0]}


def report_from_activity(model: NetworkModel, activity: dict) -> EnergyReport:
    """Build a report from ``{spike layer index: S_l}``."""
    profiles = count_flops(model)
    acts = [1 if p.input_spike is None else activity[p.input_spike] for p in profiles]
    return EnergyReport(profiles, acts)


def emit_report(model: NetworkModel, dataset, batch_size: int = 500) -> EnergyReport:
    """Measure S_l on ``dataset`` (inference phase) and cost every layer."""
    images = getattr(dataset, "images", dataset)
    return report_from_activity(model, measure_spiking_activity(model, images, batch_size))
