import math

import numpy as np
import pytest

from hsnn.gradcheck import analytic_grads, gradcheck, numeric_grads, rel_error
from hsnn.hoyer import hoyer_grad, hoyer_square
from hsnn.network import (
    BatchNorm, Conv2d, HoyerSpike, Linear, MaxPool, StaleTraceError, backward, build_from_descriptor,
    build_resnet_s, build_vgg_s, cross_entropy, forward, measure_spiking_activity, parse_descriptor,
    resolve_arch, total_loss,
)
from hsnn.tensor import DimensionError, make_rng


def test_vgg_shapes_and_block_order():
    m = build_vgg_s()
    kinds = [type(l).__name__ for l in m.layers]
    assert kinds[:4] == ["Conv2d", "MaxPool", "BatchNorm", "HoyerSpike"]
    assert kinds[-1] == "Linear" and kinds.count("Conv2d") == 4 and kinds.count("Linear") == 3
    x = make_rng(0).standard_normal((3, 1, 28, 28)).astype(np.float32)
    logits, trace = forward(m, x, "train", rng=make_rng(1))
    assert logits.shape == (3, 10)
    assert len(trace.caches) == len(m.layers)
    # hidden spike outputs are binary
    _, t2 = forward(m, x, "infer")
    for i in m.spike_layers:
        o, _ = m.layers[i].forward(t2.potentials[i], t2.ctx)
        assert set(np.unique(o)) <= {0.0, 1.0}


def test_vgg_collapse_and_width():
    with pytest.raises(DimensionError):
        build_vgg_s(input_size=(3, 3))
    with pytest.raises(ValueError):
        build_vgg_s(width_multiplier=0)
    assert build_vgg_s(width_multiplier=2).layers[0].out_ch == 32


def test_resnet_shapes_order_and_live_shortcuts():
    m = build_resnet_s(blocks=2)
    x = make_rng(2).standard_normal((2, 3, 32, 32)).astype(np.float32)
    logits, _ = forward(m, x, "train", track=False)
    assert logits.shape == (2, 10)
    for sc in m.shortcuts:
        block = m.layers[sc.src + 1:sc.dst]
        assert [type(l) for l in block] == [BatchNorm, HoyerSpike, Conv2d]
    m.shortcuts.pop()
    logits2, _ = forward(m, x, "train", track=False)
    assert not np.allclose(logits, logits2)
    with pytest.raises(ValueError):
        build_resnet_s(blocks=0)


def test_descriptor_round_trip_and_errors():
    d = "vgg-s:c16-p-c32-p-c64-c64|fc256-fc128|10"
    spec = parse_descriptor(d)
    assert spec["features"] == ["c16", "p", "c32", "p", "c64", "c64"] and spec["input_shape"] is None
    m = build_from_descriptor(d, input_shape=(1, 28, 28))
    assert m.descriptor == d + "@1x28x28"
    assert build_from_descriptor(m.descriptor).descriptor == m.descriptor
    assert resolve_arch("vgg-s", (1, 28, 28), 10) == m.descriptor
    for bad in ("vgg:c16||10", "vgg-s:c16-q||10", "vgg-s:p-c16||10", "mlp:c4||10", "vgg-s:c4|fcx|10"):
        with pytest.raises(ValueError):
            build_from_descriptor(bad, input_shape=(1, 8, 8))
    with pytest.raises(ValueError):
        build_from_descriptor("vgg-s:c4||10")


def test_head_must_be_last():
    m = build_vgg_s()
    from hsnn.network import NetworkModel
    with pytest.raises(ValueError):
        NetworkModel(m.layers[:-1], [], m.input_shape)


def test_input_shape_checked():
    m = build_vgg_s()
    with pytest.raises(DimensionError):
        forward(m, np.zeros((1, 1, 27, 28), dtype=np.float32))


def test_zero_input_emits_no_spikes():
    m = build_from_descriptor("vgg-s:c4-p-c4||3@1x8x8")
    logits, trace = forward(m, np.zeros((2, 1, 8, 8), dtype=np.float32), "train")
    first = m.spike_layers[0]
    assert trace.spike_counts[first][0] == 0
    assert np.allclose(logits[0], logits[1])


def test_identical_images_identical_rows_and_deterministic_infer():
    m = build_vgg_s()
    x = make_rng(3).standard_normal((1, 1, 28, 28)).astype(np.float32)
    x2 = np.concatenate([x, x])
    forward(m, make_rng(9).standard_normal((8, 1, 28, 28)).astype(np.float32), "train")
    a, ta = forward(m, x2, "infer")
    b, tb = forward(m, x2, "infer")
    assert np.array_equal(a[0], a[1]) and np.array_equal(a, b)
    for i in ta.potentials:
        assert np.array_equal(ta.potentials[i], tb.potentials[i])


def test_cross_entropy_examples():
    assert cross_entropy(np.zeros((3, 7)), [0, 3, 6]) == pytest.approx(math.log(7))
    assert cross_entropy(np.array([[2.0, 0.0]]), [0]) == pytest.approx(math.log1p(math.exp(-2)), rel=1e-12)
    assert cross_entropy(np.array([[2.0, 0.0]]), [0]) == pytest.approx(0.1269, abs=1e-4)
    with pytest.raises(ValueError):
        cross_entropy(np.zeros((1, 3)), [3])
    with pytest.raises(ValueError):
        cross_entropy(np.zeros((1, 3)), [-1])


def test_total_loss_breakdown():
    m = build_from_descriptor("vgg-s:c4-p-c4|fc8|3@1x8x8", dtype=np.float64)
    x = make_rng(4).standard_normal((4, 1, 8, 8))
    y = np.array([0, 1, 2, 0])
    logits, trace = forward(m, x, "train")
    lb = total_loss(logits, y, trace, 0.3)
    assert lb.hoyer == pytest.approx(sum(hoyer_square(u) for u in trace.potentials.values()))
    assert lb.total == pytest.approx(lb.ce + 0.3 * lb.hoyer, rel=1e-12)
    lb0 = total_loss(logits, y, trace, 0.0)
    assert lb0.total == lb0.ce
    # the head's output is not regularized
    assert len(m.layers) - 1 not in trace.potentials
    for u in trace.potentials.values():
        assert hoyer_square(3.7 * u) == pytest.approx(hoyer_square(u), rel=1e-12)


def test_backward_rejects_stale_and_infer_traces():
    m = build_from_descriptor("mlp:|fc4|2@1x1x5")
    x = np.ones((2, 1, 1, 5), dtype=np.float32)
    _, trace = forward(m, x, "train")
    m.version += 1
    with pytest.raises(StaleTraceError):
        backward(m, trace, [0, 1], 0.0)
    _, trace = forward(m, x, "infer")
    with pytest.raises(ValueError):
        backward(m, trace, [0, 1], 0.0)


def test_identity_spikes_give_plain_cnn_gradients():
    m = build_from_descriptor("vgg-s:c3-p-c2|fc5|4@1x6x6", seed=5, dtype=np.float64)
    x = make_rng(6).standard_normal((3, 1, 6, 6))
    y = np.array([0, 3, 1])

    def loss():
        lg, tr = forward(m, x, "train", track=False, spike_mode="identity")
        return total_loss(lg, y, tr, 0.0).total

    _, tr = forward(m, x, "train", track=False, spike_mode="identity")
    ana = backward(m, tr, y, 0.0)
    for name, p in m.named_parameters():
        if name.endswith("v_th"):
            assert ana[name] == 0
            continue
        num = np.zeros(p.shape)
        flat = p.reshape(-1)
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + 1e-6
            up = loss()
            flat[k] = old - 1e-6
            dn = loss()
            flat[k] = old
            num.reshape(-1)[k] = (up - dn) / 2e-6
        assert np.allclose(ana[name], num, rtol=1e-5, atol=1e-8), name


def test_tiny_network_gradcheck():
    for r in gradcheck(seed=0, lambda_h=1e-2):
        assert r.passed, r


@pytest.mark.parametrize("arch", ["resnet-s:c2-b2|fc4|3@1x4x4", "resnet-s:c2-b2-b3s2|fc4|3@1x4x4"])
def test_shortcut_gradients(arch):
    # the stem output fans out to the block and the shortcut; its gradient is
    # only right if both paths are summed
    for r in gradcheck(arch, seed=1, lambda_h=1e-2, batch=3):
        assert r.passed, r


def test_hoyer_term_alone_with_inactive_windows():
    lam = 0.5
    m = build_from_descriptor("mlp:|fc4-fc3|2@1x1x5", dtype=np.float64)
    m = type(m)([l for l in m.layers if l.kind != "dropout"], [], m.input_shape, m.descriptor)
    l1, s1, l2, s2 = m.layers[1], m.layers[2], m.layers[3], m.layers[4]
    rng = make_rng(7)
    x = np.abs(rng.standard_normal((3, 1, 1, 5))) + 0.1
    # spike 1 sees potentials >= 2 or <= 0 (window closed)
    l1.params["w"][:] = np.array([[3, 3, 3, 3, 3], [-1, -1, -1, -1, -1], [5, 0, 5, 0, 5], [-2, 0, 0, 0, 0]], float)
    l1.params["b"][:] = 0
    l2.params["w"][:] = rng.standard_normal((3, 4))
    _, trace = forward(m, x, "train", track=False)
    z1 = trace.potentials[2] / float(s1.params["v_th"])
    assert np.all((z1 >= 2) | (z1 <= 0))
    g = backward(m, trace, [0, 1, 0], lam, include_ce=False)
    o1 = (trace.potentials[2] >= trace.caches[2].threshold_used).astype(float)
    gu2 = lam * hoyer_grad(trace.potentials[4])
    assert np.allclose(g["3.w"], gu2.T @ o1)
    gu1 = lam * hoyer_grad(trace.potentials[2])
    assert np.allclose(g["1.w"], gu1.T @ x.reshape(3, 5))


def test_measure_spiking_activity():
    m = build_from_descriptor("mlp:|fc12|2@1x1x12", dtype=np.float64)
    lin, sp = m.layers[1], m.layers[2]
    lin.params["w"][:] = np.eye(12)
    lin.params["b"][:] = 0
    sp.state.ema_ext = np.array(0.5)
    x = np.zeros((1, 1, 1, 12))
    x[0, 0, 0, :3] = 1.0
    assert measure_spiking_activity(m, x) == {2: 0.25}
    assert measure_spiking_activity(m, -np.ones((4, 1, 1, 12))) == {2: 0.0}
    with pytest.raises(ValueError):
        measure_spiking_activity(m, np.zeros((0, 1, 1, 12)))


def test_parameters_and_dtype_cast():
    m = build_vgg_s()
    assert m.parameter_count() == sum(p.size for _, p in m.named_parameters())
    m.astype(np.float64)
    assert all(p.dtype == np.float64 for _, p in m.named_parameters())
    assert all(m.layers[i].state.v_th is m.layers[i].params["v_th"] for i in m.spike_layers)


def test_train_forward_updates_running_state_only_when_tracking():
    m = build_from_descriptor("vgg-s:c2||3@1x5x5")
    bn = m.layers[1]
    x = make_rng(8).standard_normal((4, 1, 5, 5)).astype(np.float32)
    forward(m, x, "train", track=False)
    assert not bn.running_mean.any() and m.layers[2].state.ema_ext is None
    forward(m, x, "train")
    assert bn.running_mean.any() and m.layers[2].state.ema_ext is not None


def test_pool_layer_kinds():
    assert isinstance(build_vgg_s().layers[1], MaxPool)
    assert isinstance(build_vgg_s().layers[-1], Linear)


def test_ramp_mode_grads_match_fd_in_single_precision_model_cast():
    m = build_from_descriptor("vgg-s:c2||4@1x5x5", seed=3).astype(np.float64)
    x = make_rng(9).standard_normal((2, 1, 5, 5))
    y = np.array([1, 3])
    ana = analytic_grads(m, x, y, 1e-2)
    num = numeric_grads(m, x, y, 1e-2)
    for k in num:
        assert rel_error(ana[k], num[k]).max() < 1e-4, k
