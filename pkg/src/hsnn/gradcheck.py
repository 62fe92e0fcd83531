"""Finite-difference check of the analytic gradients.

The step nonlinearity has no useful derivative, so the check runs the model
in ``ramp`` mode: each spike is replaced by ``scale * clip(z, 0, 2)``, whose
derivative is exactly the surrogate used by the backward pass. Evaluations
use ``track=False`` so BN running statistics and EMA extremums stay put.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import NetworkModel, backward, build_from_descriptor, forward, total_loss
from .tensor import make_rng

TINY_ARCH = "vgg-s:c2||10@1x6x6"
REL_FLOOR = 1e-6


@dataclass
class GroupResult:
    name: str
    max_rel_err: float
    size: int
    passed: bool


def rel_error(a, n, floor: float = REL_FLOOR) -> np.ndarray:
    a, n = np.asarray(a, dtype=np.float64), np.asarray(n, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def _loss(model, x, y, lambda_h, include_ce=True) -> float:
    logits, trace = forward(model, x, "train", track=False, spike_mode="ramp")
    lb = total_loss(logits, y, trace, lambda_h)
    return lb.total if include_ce else lambda_h * lb.hoyer


def analytic_grads(model, x, y, lambda_h, include_ce=True) -> dict:
    _, trace = forward(model, x, "train", track=False, spike_mode="ramp")
    return backward(model, trace, y, lambda_h, include_ce=include_ce)


def numeric_grads(model: NetworkModel, x, y, lambda_h: float, h: float = 1e-5, include_ce=True) -> dict:
    out = {}
    for name, p in model.named_parameters():
        g = np.zeros(p.shape, dtype=np.float64)
        flat = p.reshape(-1)
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + h
            up = _loss(model, x, y, lambda_h, include_ce)
            flat[k] = old - h
            dn = _loss(model, x, y, lambda_h, include_ce)
            flat[k] = old
            g.reshape(-1)[k] = (up - dn) / (2 * h)
        out[name] = g
    return out


def kink_margin(model, x) -> float:
    """Smallest distance of any normalized potential from the ramp's corners
    at 0 and 2; FD steps must stay well inside it."""
    _, trace = forward(model, x, "train", track=False, spike_mode="ramp")
    m = np.inf
    for i, u in trace.potentials.items():
        z = u / float(model.layers[i].params["v_th"])
        m = min(m, float(np.min(np.abs(z))), float(np.min(np.abs(z - 2))))
    return m


def tiny_problem(arch: str = TINY_ARCH, seed: int = 0, batch: int = 4):
    model = build_from_descriptor(arch, seed=seed, dtype=np.float64)
    rng = make_rng(seed + 1000)
    x = rng.standard_normal((batch,) + tuple(model.input_shape))
    y = rng.integers(0, model.layers[-1].out_f, batch)
    return model, x, y


def _group(name: str) -> str:
    idx, pname = name.split(".", 1)
    if idx.startswith("sc"):
        return f"shortcut.{pname}"
    return pname


def gradcheck(arch: str = TINY_ARCH, seed: int = 0, lambda_h: float = 1e-2, tol: float = 1e-4,
              batch: int = 4, h: float = 1e-5) -> list:
    """Max relative error per parameter group plus a ``hoyer-term`` group
    covering the regularizer's contribution on its own."""
    model, x, y = tiny_problem(arch, seed, batch)
    results = []
    for include_ce, label in ((True, "{}"), (False, "hoyer-term.{}")):
        ana = analytic_grads(model, x, y, lambda_h, include_ce)
        num = numeric_grads(model, x, y, lambda_h, h, include_ce)
        groups: dict = {}
        for name, n in num.items():
            a = ana.get(name, np.zeros_like(n))
            e = rel_error(a, n)
            key = label.format(f"{model.layers[int(name.split('.')[0])].kind}.{name.split('.', 1)[1]}"
                               if not name.startswith("sc") else _group(name))
            worst, size = groups.get(key, (0.0, 0))
            groups[key] = (max(worst, float(e.max(initial=0.0))), size + n.size)
        results += [GroupResult(k, w, s, w < tol) for k, (w, s) in groups.items()]
    return results
