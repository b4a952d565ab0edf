"""``myoshift`` command line.

Exit codes: 0 success, 1 generic failure, 2 invalid configuration,
3 shape/compatibility mismatch. Settings resolve as built-in defaults,
overridden by ``--config FILE.json``, overridden by explicit flags; the
effective configuration is written to ``config.json`` in every output
directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .data import Dataset, load_dataset, make_sequences, preprocess_dataset, save_dataset, split_intra_session
from .errors import (
    ChannelMismatchError,
    InvalidArgumentError,
    LoadError,
    MyoShiftError,
    ShapeError,
    UnsupportedModeError,
)
from .evaluation import EvalReport, accuracy, adapt_scenario, confusion_matrix, data_budget_sweep, scenario_sets
from .model import Model, init_model
from .signal import Sequence, ms_to_frames
from .synth import SHIFT_KINDS, SynthSpec, apply_domain_shift, generate_synthetic, make_shift
from .training import TrainConfig, grad_check_groups, train_stage1

log = logging.getLogger("myoshift")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_SHAPE = 0, 1, 2, 3
GRADCHECK_TOL = 1e-4

DEFAULTS = {
    "seed": 0,
    "epochs": None,  # per-command default below
    "batch": 64,
    "lr": 1e-3,
    "window_ms": 150.0,
    "stride_ms": None,  # half the window
    "scenario": None,
    "fraction": 0.5,
    "fractions": [0.2, 0.4, 0.6, 0.8, 1.0],
    "shift": None,
    "precision": "f64",
    "hidden": 512,
    "layers": 2,
    "head_units": 512,
    "dropout": 0.5,
    "subject": None,
    "session": None,
    "split": "all",
    "bandstop": False,
    "middle_frames": None,
    "smooth_frames": None,
    # synth
    "gestures": 5,
    "channels": 8,
    "subjects": 3,
    "sessions": 2,
    "trials": 10,
    "frames": 400,
    "rate": 200.0,
    "noise": 0.1,
}

EPOCH_DEFAULTS = {"pretrain": 100, "adapt": 100, "finetune": 100, "sweep": 5}


class ConfigError(MyoShiftError):
    pass


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with default settings")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--precision", choices=["f64", "f32"])


def _add_data(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="dataset manifest (or its directory)")
    p.add_argument("--subject", type=int)
    p.add_argument("--session", type=int)
    p.add_argument("--window-ms", type=float, dest="window_ms")
    p.add_argument("--stride-ms", type=float, dest="stride_ms")
    p.add_argument("--bandstop", action="store_true", default=None, help="apply the 45-55 Hz band-stop to raw data")
    p.add_argument("--middle-frames", type=int, dest="middle_frames")
    p.add_argument("--smooth-frames", type=int, dest="smooth_frames")


def _add_train(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="myoshift", description="Two-stage RNN domain adaptation for sEMG gestures")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset (and optionally a shifted copy)")
    _add_common(p)
    p.add_argument("--shift", choices=SHIFT_KINDS)
    for name, typ in (("gestures", int), ("channels", int), ("subjects", int), ("sessions", int),
                      ("trials", int), ("frames", int), ("rate", float), ("noise", float)):
        p.add_argument(f"--{name}", type=typ)

    p = sub.add_parser("pretrain", help="stage 1: train the classifier on source data")
    _add_common(p)
    _add_data(p)
    _add_train(p)
    p.add_argument("--split", choices=["all", "intra"], help="'intra' trains on odd trials and reports even-trial accuracy")
    p.add_argument("--hidden", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--head-units", type=int, dest="head_units")
    p.add_argument("--dropout", type=float)

    for name, help_text in (("adapt", "stage 2: train only the adaptation layer on target data"),
                            ("finetune", "baseline: fine-tune every parameter on target data")):
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        _add_data(p)
        _add_train(p)
        p.add_argument("--checkpoint")
        p.add_argument("--scenario", type=int, choices=[2, 3])
        p.add_argument("--fraction", type=float)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a scenario's evaluation windows")
    _add_common(p)
    _add_data(p)
    p.add_argument("--checkpoint")
    p.add_argument("--scenario", type=int, choices=[1, 2, 3])
    p.add_argument("--fraction", type=float)

    p = sub.add_parser("gradcheck", help="compare BPTT gradients with central differences")
    _add_common(p)
    p.add_argument("--checkpoint", help="check this model instead of a small random one")
    p.add_argument("--eps", type=float, default=1e-5)

    p = sub.add_parser("sweep", help="accuracy vs available target data, stage 2 vs fine-tuning")
    _add_common(p)
    _add_data(p)
    _add_train(p)
    p.add_argument("--checkpoint")
    p.add_argument("--fractions", type=float, nargs="+")
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        path = Path(args.config)
        try:
            loaded = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = set(loaded) - set(DEFAULTS) - {"data", "checkpoint", "out", "eps"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(loaded)
    for key, value in vars(args).items():
        if key in ("config", "verbose", "command") or value is None:
            continue
        cfg[key] = value
    if cfg.get("epochs") is None:
        cfg["epochs"] = EPOCH_DEFAULTS.get(args.command)
    cfg["command"] = args.command
    return cfg


def _require(cfg: dict, *keys: str) -> None:
    missing = [k for k in keys if not cfg.get(k)]
    if missing:
        raise ConfigError("missing required option(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _out_dir(cfg: dict) -> Path:
    _require(cfg, "out")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg, indent=2, default=str))
    return out


def _train_config(cfg: dict, stage) -> TrainConfig:
    return TrainConfig(stage=stage, epochs=cfg["epochs"], batch_size=cfg["batch"], seed=cfg["seed"], lr=cfg["lr"])


def _load_data(cfg: dict) -> Dataset:
    _require(cfg, "data")
    ds = load_dataset(cfg["data"])
    ds = ds.select(subject=cfg.get("subject"), session=cfg.get("session"))
    if not len(ds):
        raise ConfigError("no recordings match the requested subject/session")
    return preprocess_dataset(
        ds, smooth_frames=cfg.get("smooth_frames"), bandstop=bool(cfg.get("bandstop")),
        middle_frames=cfg.get("middle_frames"),
    )


def _frames(cfg: dict, rate_hz: float) -> tuple[int, int]:
    window = ms_to_frames(cfg["window_ms"], rate_hz)
    stride = ms_to_frames(cfg["stride_ms"], rate_hz) if cfg.get("stride_ms") else max(1, window // 2)
    return window, stride


def _load_model(cfg: dict, ds: Dataset | None = None) -> Model:
    _require(cfg, "checkpoint")
    model = load_checkpoint(cfg["checkpoint"])
    if ds is not None:
        if model.f != ds.meta.channels:
            raise ShapeError(
                f"checkpoint expects {model.f} input channels but the dataset has {ds.meta.channels}"
            )
        if model.G != ds.meta.gestures:
            raise ShapeError(f"checkpoint classifies {model.G} gestures but the dataset has {ds.meta.gestures}")
    if cfg["precision"] == "f32":
        model = model.astype(np.float32)
    return model


def _print(obj) -> None:
    print(json.dumps(obj, indent=2, default=str))


def cmd_synth(cfg: dict) -> int:
    spec = SynthSpec(
        G=cfg["gestures"], f=cfg["channels"], subjects=cfg["subjects"], sessions=cfg["sessions"],
        trials=cfg["trials"], frames=cfg["frames"], rate_hz=cfg["rate"], noise_std=cfg["noise"],
    )
    out = _out_dir(cfg)
    ds = generate_synthetic(spec, seed=cfg["seed"])
    paths = [save_dataset(ds, out / "source")]
    if cfg.get("shift"):
        shift = make_shift(cfg["shift"], spec.f, seed=cfg["seed"])
        paths.append(save_dataset(apply_domain_shift(ds, shift), out / "target"))
        np.savez(out / "shift.npz", A=shift.A, c=shift.c)
    for p in paths:
        print(p)
    return EXIT_OK


def cmd_pretrain(cfg: dict) -> int:
    ds = _load_data(cfg)
    out = _out_dir(cfg)
    window, stride = _frames(cfg, ds.meta.rate_hz)
    if cfg["split"] == "intra":
        train_recs, test_recs = [], []
        for s in ds.subjects:
            for e in ds.sessions(s):
                sp = split_intra_session(ds, s, e)
                train_recs.extend(sp.train)
                test_recs.extend(sp.test)
    else:
        train_recs, test_recs = list(ds.recordings), []
    dtype = np.float32 if cfg["precision"] == "f32" else np.float64
    model = init_model(
        ds.meta.channels, cfg["hidden"], ds.meta.gestures, cfg["layers"], seed=cfg["seed"],
        head_units=cfg["head_units"], dropout_p=cfg["dropout"], dtype=dtype,
    )
    trained, history = train_stage1(model, make_sequences(train_recs, window, stride), _train_config(cfg, 1))
    trained.meta["source_dataset"] = ds.meta.name
    ckpt = save_checkpoint(trained, out / "checkpoint.json")
    history.to_csv(out / "history.csv")
    summary = {"checkpoint": str(ckpt), "final_loss": history.loss[-1], "train_acc": history.train_acc[-1]}
    if test_recs:
        test = make_sequences(test_recs, window, stride)
        acc = accuracy(trained, test)
        EvalReport(0, [acc], acc, confusion_matrix(trained, test).tolist(),
                   config={"split": "intra-session odd/even"}).to_json(out / "report.json")
        summary["holdout_accuracy"] = acc
    _print(summary)
    return EXIT_OK


def _adapt_command(cfg: dict, method: str) -> int:
    ds = _load_data(cfg)
    model = _load_model(cfg, ds)
    out = _out_dir(cfg)
    window, stride = _frames(cfg, ds.meta.rate_hz)
    scenario = cfg.get("scenario") or 3
    stage = 2 if method == "2srnn" else "finetune"
    report, adapted, history = adapt_scenario(
        model, ds, scenario, _train_config(cfg, stage), window, stride, cfg["fraction"], method=method
    )
    save_checkpoint(adapted, out / "checkpoint.json")
    history.to_csv(out / "history.csv")
    report.to_json(out / "report.json")
    report.to_csv(out / "report.csv")
    _print({"scenario": scenario, "method": method, "accuracy": report.mean_accuracy, "notes": report.notes})
    return EXIT_OK


def cmd_adapt(cfg: dict) -> int:
    return _adapt_command(cfg, "2srnn")


def cmd_finetune(cfg: dict) -> int:
    return _adapt_command(cfg, "finetune")


def cmd_eval(cfg: dict) -> int:
    ds = _load_data(cfg)
    model = _load_model(cfg, ds)
    window, stride = _frames(cfg, ds.meta.rate_hz)
    scenario = cfg.get("scenario") or 1
    _, eval_set = scenario_sets(ds, scenario, window, stride, cfg["fraction"])
    acc = accuracy(model, eval_set)
    report = EvalReport(scenario, [acc], acc, confusion_matrix(model, eval_set).tolist(),
                        config={"target": ds.meta.name, "eval_windows": len(eval_set)})
    if cfg.get("out"):
        out = _out_dir(cfg)
        report.to_json(out / "report.json")
        report.to_csv(out / "report.csv")
    print(f"accuracy: {acc:.4f}")
    return EXIT_OK


def cmd_gradcheck(cfg: dict) -> int:
    if cfg["precision"] != "f64":
        raise UnsupportedModeError("gradient checking requires --precision f64")
    rng = np.random.default_rng(cfg["seed"])
    if cfg.get("checkpoint"):
        model = load_checkpoint(cfg["checkpoint"])
    else:
        model = init_model(4, 8, 3, 2, seed=cfg["seed"], head_units=8)
    T, B = 5, 4
    batch = [
        Sequence(rng.normal(size=(T, model.f)), int(rng.integers(model.G)), (0, 0, 0, k)) for k in range(B)
    ]
    groups = grad_check_groups(model, batch, eps=cfg.get("eps", 1e-5), seed=cfg["seed"])
    worst = max(groups.values())
    result = {"max_rel_err": worst, "tolerance": GRADCHECK_TOL, "groups": groups}
    if cfg.get("out"):
        (_out_dir(cfg) / "gradcheck.json").write_text(json.dumps(result, indent=2))
    _print(result)
    return EXIT_OK if worst < GRADCHECK_TOL else EXIT_FAIL


def cmd_sweep(cfg: dict) -> int:
    ds = _load_data(cfg)
    model = _load_model(cfg, ds)
    out = _out_dir(cfg)
    window, stride = _frames(cfg, ds.meta.rate_hz)
    report = data_budget_sweep(
        model, ds, cfg["fractions"], cfg["epochs"], window=window, stride=stride,
        cfg=_train_config(cfg, 2), holdout_fraction=cfg["fraction"],
    )
    report.to_csv(out / "sweep.csv")
    report.to_json(out / "sweep.json")
    _print(report.rows())
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "pretrain": cmd_pretrain,
    "adapt": cmd_adapt,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except (ShapeError, ChannelMismatchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SHAPE
    except (ConfigError, InvalidArgumentError, UnsupportedModeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (LoadError, MyoShiftError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())

