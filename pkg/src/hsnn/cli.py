"""Command line: ``hsnn {train,eval,analyze,gradcheck}``.

Every flag can also come from a ``--config`` file of ``key = value`` lines
(keys use the flag names with underscores); flags given on the command line
win over the file.
"""

from __future__ import annotations

import argparse
import contextlib
import os
import sys
from pathlib import Path

from . import checkpoint as ckpt
from .data import DataConsistencyError, DataFormatError, load_dataset
from .energy import emit_report
from .gradcheck import TINY_ARCH, gradcheck
from .optim import TrainConfig, build_model, evaluate, fit, mean_activity

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

# context row printed by `eval` for comparison (VGG16 on CIFAR-10, T = 1)
REFERENCE_ROW = "reference,vgg16-cifar10,0.9344,0.2187"

# flag dest -> TrainConfig field, where the names differ
_FIELD_OF = {"lr": "base_lr"}
_CLI_ONLY = {"data_dir", "out", "checkpoint", "train_limit", "eval_limit"}


class UsageError(Exception):
    pass


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--dataset", choices=["mnist", "cifar10"])
    p.add_argument("--data-dir")
    p.add_argument("--out")
    p.add_argument("--checkpoint")
    p.add_argument("--eval-limit", type=int, help="use only the first N test samples")


def _add_train(p: argparse.ArgumentParser):
    p.add_argument("--arch", help="vgg-s, resnet-s, mlp or a descriptor")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--optimizer", choices=["adam", "sgd"])
    p.add_argument("--lambda-h", type=float)
    p.add_argument("--surrogate-scale", type=float)
    p.add_argument("--ema-momentum", type=float)
    p.add_argument("--extremum-mode", choices=["tensor", "channel"])
    p.add_argument("--dropout", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--quant-bits", type=int, choices=[0, 2, 3, 4, 5, 6])
    p.add_argument("--seed", type=int)
    p.add_argument("--deterministic", action="store_const", const=True)
    p.add_argument("--no-hoyer-spike", dest="hoyer_spike", action="store_const", const=False,
                   help="fire at z >= 1 instead of at the Hoyer extremum")
    p.add_argument("--augment", action="store_const", const=True)
    p.add_argument("--train-limit", type=int, help="use only the first N training samples")


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hsnn", description="One-time-step spiking networks with Hoyer spike layers")
    sub = ap.add_subparsers(dest="command", required=True)
    t = sub.add_parser("train", help="train a model and write a checkpoint")
    _add_common(t)
    _add_train(t)
    t.set_defaults(_sub=t)
    for name, hlp in (("eval", "accuracy and per-layer activity"), ("analyze", "energy report CSV")):
        p = sub.add_parser(name, help=hlp)
        _add_common(p)
        p.set_defaults(_sub=p)
    g = sub.add_parser("gradcheck", help="finite-difference check of the analytic gradients")
    g.set_defaults(_sub=g)
    g.add_argument("--config")
    g.add_argument("--arch", default=None)
    g.add_argument("--seed", type=int)
    g.add_argument("--lambda-h", type=float)
    return ap


def _file_values(path) -> dict:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


def resolve_options(args: argparse.Namespace) -> dict:
    """Merge config-file values under explicit flags; file values are
    converted with the matching flag's own type."""
    opts = {k: v for k, v in vars(args).items() if v is not None and k not in ("config", "command", "_sub")}
    if args.config:
        actions = {a.dest: a for a in args._sub._actions}
        tc_fields = set(TrainConfig.__dataclass_fields__)
        for k, v in _file_values(args.config).items():
            if k == "base_lr":
                k = "lr"
            if k not in actions and k not in tc_fields:
                raise UsageError(f"unknown config key {k!r}")
            if k in opts:
                continue
            a = actions.get(k)
            if a is not None and a.const is not None and a.nargs == 0:
                # the dest is the config field itself, so the file value is used as is
                opts[k] = v.lower() in ("true", "1", "yes")
            elif a is not None and a.type is not None:
                try:
                    opts[k] = a.type(v)
                except ValueError:
                    raise UsageError(f"bad value {v!r} for {k}") from None
            else:
                opts[k] = v
    return opts


def config_from(opts: dict) -> TrainConfig:
    kw = {}
    for k, v in opts.items():
        if k in _CLI_ONLY:
            continue
        kw[_FIELD_OF.get(k, k)] = v
    try:
        return TrainConfig(**kw)
    except (TypeError, ValueError) as e:
        raise UsageError(str(e)) from None


def _data_dir(opts) -> str:
    return opts.get("data_dir") or os.environ.get("HSNN_DATA_DIR", "data")


def _limit(ds, n):
    return ds.subset(n) if n else ds


@contextlib.contextmanager
def _sink(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w") as f:
            yield f


def _thread_limit(deterministic: bool):
    env = os.environ.get("HSNN_THREADS")
    limit = 1 if deterministic else (int(env) if env else None)
    if limit is None:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=limit)


def cmd_train(opts: dict) -> int:
    config = config_from(opts)
    train = _limit(load_dataset(config.dataset, _data_dir(opts), "train"), opts.get("train_limit"))
    model = build_model(config, train.sample_shape, train.class_count)
    layers = model.spike_layers
    with _thread_limit(config.deterministic), _sink(opts.get("out")) as log:
        log.write("epoch,loss,ce,hoyer,acc,mean_activity" + "".join(f",S{i}" for i in layers) + "\n")

        def on_epoch(epoch, m):
            acts = "".join(f",{m.activity[i]:.6g}" for i in layers)
            log.write(f"{epoch},{m.loss:.6g},{m.ce:.6g},{m.hoyer:.6g},{m.accuracy:.6g},"
                      f"{m.mean_activity:.6g}{acts}\n")
            log.flush()

        fit(model, train, config, on_epoch)
    ckpt.checkpoint_save(model, config, opts.get("checkpoint") or "hsnn.ckpt")
    return EXIT_OK


def _load(opts):
    path = opts.get("checkpoint")
    if not path:
        raise UsageError("--checkpoint is required")
    model, config = ckpt.checkpoint_load(path)
    dataset = opts.get("dataset") or config.dataset
    test = _limit(load_dataset(dataset, _data_dir(opts), "test"), opts.get("eval_limit"))
    return model, config, test


def cmd_eval(opts: dict) -> int:
    model, config, test = _load(opts)
    with _thread_limit(config.deterministic):
        acc, act = evaluate(model, test)
    lines = [f"accuracy,{acc:.6g}", "layer,activity"]
    lines += [f"{i},{s:.6g}" for i, s in act.items()]
    lines += [f"mean_activity,{mean_activity(act):.6g}", REFERENCE_ROW]
    with _sink(opts.get("out")) as f:
        f.write("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_analyze(opts: dict) -> int:
    model, config, test = _load(opts)
    with _thread_limit(config.deterministic):
        report = emit_report(model, test)
    with _sink(opts.get("out")) as f:
        f.write(report.to_csv())
    return EXIT_OK


def cmd_gradcheck(opts: dict) -> int:
    arch = opts.get("arch") or TINY_ARCH
    lam = opts.get("lambda_h", 1e-2)
    results = gradcheck(arch, seed=opts.get("seed", 0), lambda_h=lam)
    failed = [r for r in results if not r.passed]
    for r in results:
        print(f"{r.name},{r.max_rel_err:.3e},{'pass' if r.passed else 'FAIL'}")
    if failed:
        print(f"gradient check failed for: {', '.join(r.name for r in failed)}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "analyze": cmd_analyze, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        opts = resolve_options(args)
        return COMMANDS[args.command](opts)
    except UsageError as e:
        print(f"hsnn: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, DataFormatError, DataConsistencyError, ckpt.CheckpointError, ValueError) as e:
        print(f"hsnn: {e}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
