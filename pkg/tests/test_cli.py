import numpy as np
import pytest

from hsnn import cli
from hsnn.checkpoint import checkpoint_load, checkpoint_save
from hsnn.data import MNIST_MEAN, MNIST_STD, write_idx_images, write_idx_labels
from hsnn.energy import parse_report_csv
from hsnn.network import build_from_descriptor
from hsnn.optim import TrainConfig
from hsnn.quant import quantize_weights
from hsnn.tensor import make_rng

ARCH = "vgg-s:c4-p||10"


@pytest.fixture
def mnist_dir(tmp_path):
    rng = make_rng(0)
    d = tmp_path / "data"
    d.mkdir()
    for split, n in (("train", 48), ("t10k", 20)):
        write_idx_images(d / f"{split}-images-idx3-ubyte", rng.integers(0, 256, (n, 28, 28), dtype=np.uint8))
        write_idx_labels(d / f"{split}-labels-idx1-ubyte", rng.integers(0, 10, n, dtype=np.uint8))
    return d


def train(d, tmp_path, name, *extra):
    ck = tmp_path / f"{name}.ckpt"
    log = tmp_path / f"{name}.csv"
    rc = cli.main(["train", "--dataset", "mnist", "--data-dir", str(d), "--arch", ARCH, "--epochs", "2",
                   "--batch-size", "16", "--seed", "7", "--deterministic", "--checkpoint", str(ck),
                   "--out", str(log), *extra])
    assert rc == 0
    return ck, log


def test_train_is_deterministic(mnist_dir, tmp_path):
    a, la = train(mnist_dir, tmp_path, "a")
    b, lb = train(mnist_dir, tmp_path, "b")
    assert a.read_bytes() == b.read_bytes()
    assert la.read_text() == lb.read_text()
    lines = la.read_text().splitlines()
    assert lines[0].startswith("epoch,loss,ce,hoyer,acc,mean_activity,S")
    assert len(lines) == 3


def test_lambda_zero_still_logs_hoyer(mnist_dir, tmp_path):
    _, log = train(mnist_dir, tmp_path, "z", "--lambda-h", "0")
    row = log.read_text().splitlines()[1].split(",")
    assert float(row[3]) > 0 and float(row[1]) == pytest.approx(float(row[2]), rel=1e-5)


def test_quant_bits_grid(mnist_dir, tmp_path):
    ck, _ = train(mnist_dir, tmp_path, "q", "--quant-bits", "2")
    model, cfg = checkpoint_load(ck)
    assert cfg.quant_bits == 2
    for conv in model.conv_layers():
        assert len(np.unique(quantize_weights(conv.params["w"], cfg.quant_bits)[0])) <= 3


def test_eval_twice_identical(mnist_dir, tmp_path, capsys):
    ck, _ = train(mnist_dir, tmp_path, "e")
    outs = []
    for _ in range(2):
        assert cli.main(["eval", "--checkpoint", str(ck), "--data-dir", str(mnist_dir)]) == 0
        outs.append(capsys.readouterr().out)
    assert outs[0] == outs[1]
    lines = outs[0].splitlines()
    assert lines[0].startswith("accuracy,") and lines[-1] == cli.REFERENCE_ROW
    acts = [float(l.split(",")[1]) for l in lines[2:-2]]
    assert acts and all(0 <= s <= 1 for s in acts)


def test_config_file_with_flag_override(mnist_dir, tmp_path):
    cfgf = tmp_path / "run.cfg"
    cfgf.write_text(f"arch = {ARCH}\nepochs = 1\nbatch-size = 16\nseed = 3\nlambda_h = 0.001\n"
                    f"data_dir = {mnist_dir}\nhoyer_spike = false\n")
    ck = tmp_path / "c.ckpt"
    rc = cli.main(["train", "--config", str(cfgf), "--seed", "4", "--checkpoint", str(ck), "--out", str(tmp_path / "l")])
    assert rc == 0
    _, cfg = checkpoint_load(ck)
    assert (cfg.seed, cfg.epochs, cfg.lambda_h, cfg.hoyer_spike) == (4, 1, 0.001, False)
    cfgf.write_text("bogus = 1\n")
    assert cli.main(["train", "--config", str(cfgf)]) == 2


def test_every_train_flag_has_a_config_key():
    p = cli.make_parser()
    train = p._subparsers._group_actions[0].choices["train"]
    fields = set(TrainConfig.__dataclass_fields__) | cli._CLI_ONLY | {"lr"}
    for a in train._actions:
        if a.dest not in ("help", "config"):
            assert a.dest in fields, a.dest


@pytest.fixture
def toy_checkpoint(tmp_path):
    # fc10 with identity weights feeding one spike layer, then a 20-way head
    m = build_from_descriptor("mlp:|fc10|20@1x1x10")
    lin, sp = m.layers[1], m.layers[2]
    lin.params["w"][:] = np.eye(10)
    lin.params["b"][:] = 0
    sp.state.ema_ext = np.array(0.5, dtype=np.float32)
    ck = tmp_path / "toy.ckpt"
    checkpoint_save(m, TrainConfig(arch=m.descriptor, dropout=0.1), ck)
    d = tmp_path / "toydata"
    d.mkdir()
    pix = np.zeros((2, 1, 10), dtype=np.uint8)
    pix[0, 0, :3] = 255
    pix[1, 0, 5:7] = 255
    write_idx_images(d / "t10k-images-idx3-ubyte", pix)
    write_idx_labels(d / "t10k-labels-idx1-ubyte", np.array([1, 2], dtype=np.uint8))
    # normalized pixels: 255 -> well above the 0.5 threshold, 0 -> below zero
    assert (1 - MNIST_MEAN[0]) / MNIST_STD[0] > 0.5 > -MNIST_MEAN[0] / MNIST_STD[0]
    return ck, d


def test_analyze_toy_model(toy_checkpoint, tmp_path, capsys):
    ck, d = toy_checkpoint
    assert cli.main(["analyze", "--checkpoint", str(ck), "--data-dir", str(d)]) == 0
    text = capsys.readouterr().out
    assert text.splitlines()[-1] == "TOTAL,,300,30,,523,1380"
    parsed = parse_report_csv(text)
    assert float(parsed["rows"][1]["activity"]) == 0.25
    out = tmp_path / "r.csv"
    assert cli.main(["analyze", "--checkpoint", str(ck), "--data-dir", str(d), "--out", str(out)]) == 0
    assert out.read_text() == text


def test_unwritable_out_and_missing_inputs(toy_checkpoint, tmp_path):
    ck, d = toy_checkpoint
    bad = tmp_path / "no" / "such" / "dir" / "r.csv"
    assert cli.main(["analyze", "--checkpoint", str(ck), "--data-dir", str(d), "--out", str(bad)]) == 1
    assert cli.main(["eval", "--checkpoint", str(tmp_path / "missing.ckpt"), "--data-dir", str(d)]) == 1
    assert cli.main(["eval", "--data-dir", str(d)]) == 2
    raw = bytearray(ck.read_bytes())
    raw[4] = 2
    ck.write_bytes(bytes(raw))
    assert cli.main(["eval", "--checkpoint", str(ck), "--data-dir", str(d)]) == 1


def test_bad_flags_exit_2(mnist_dir):
    with pytest.raises(SystemExit) as e:
        cli.main(["train", "--quant-bits", "7"])
    assert e.value.code == 2
    assert cli.main(["train", "--data-dir", str(mnist_dir), "--epochs", "0"]) == 2


def test_data_errors_exit_1(tmp_path):
    assert cli.main(["train", "--data-dir", str(tmp_path), "--epochs", "1"]) == 1


def test_gradcheck_command(capsys):
    assert cli.main(["gradcheck", "--seed", "0"]) == 0
    first = capsys.readouterr().out
    assert cli.main(["gradcheck", "--seed", "0"]) == 0
    assert capsys.readouterr().out == first
    rows = [l.split(",") for l in first.splitlines()]
    assert all(r[2] == "pass" and float(r[1]) < 1e-4 for r in rows)
    assert any(r[0].startswith("hoyer-term.") for r in rows)
    assert cli.main(["gradcheck", "--lambda-h", "0"]) == 0
    assert all(l.endswith("pass") for l in capsys.readouterr().out.splitlines())


def test_gradcheck_failure_names_group(monkeypatch, capsys):
    from hsnn.gradcheck import GroupResult

    monkeypatch.setattr(cli, "gradcheck", lambda *a, **k: [GroupResult("conv.w", 0.5, 3, False)])
    assert cli.main(["gradcheck"]) == 1
    assert "conv.w" in capsys.readouterr().err
