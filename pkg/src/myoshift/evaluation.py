"""Accuracy, the three adaptation scenarios and the data-budget sweep."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import (
    Dataset,
    fraction_count,
    make_sequences,
    split_adaptation_trials,
    split_inter_session,
    split_inter_subject_loocv,
    worker_count,
)
from .errors import ContractError, InvalidArgumentError, InvalidInputError
from .model import Model, init_model, predict
from .signal import Sequence
from .training import TrainConfig, adapt_stage2, fine_tune, train_stage1

METHODS = ("none", "2srnn", "finetune")


def _xy(seqs) -> tuple[np.ndarray, np.ndarray]:
    if not seqs:
        raise InvalidInputError("evaluation set is empty")
    return np.stack([s.data for s in seqs]), np.array([s.gesture_id for s in seqs], dtype=np.int64)


def accuracy(model: Model, test: list[Sequence]) -> float:
    """Percentage of sequences whose most probable class is the true gesture."""
    X, y = _xy(test)
    return 100.0 * float(np.mean(predict(model, X) == y))


def confusion_matrix(model: Model, test: list[Sequence]) -> np.ndarray:
    """``G x G`` counts, rows indexed by true gesture, columns by prediction."""
    X, y = _xy(test)
    pred = predict(model, X)
    out = np.zeros((model.G, model.G), dtype=np.int64)
    np.add.at(out, (y, pred), 1)
    return out


@dataclass
class EvalReport:
    scenario: int
    fold_accuracy: list[float]
    mean_accuracy: float
    confusion: list[list[int]]
    config: dict = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_json(cls, text_or_path) -> "EvalReport":
        text = str(text_or_path)
        if not text.lstrip().startswith("{"):
            text = Path(text).read_text()
        return cls(**json.loads(text))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scenario", "fold", "accuracy"])
            for k, acc in enumerate(self.fold_accuracy):
                w.writerow([self.scenario, k, repr(acc)])


@dataclass
class SweepReport:
    fractions: list[float]
    accuracy: dict[str, list[float]]
    seconds_per_epoch: dict[str, list[float]]
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        fr = list(self.fractions)
        if not fr or any(not 0.0 < x <= 1.0 for x in fr) or any(b <= a for a, b in zip(fr, fr[1:])):
            raise InvalidArgumentError(f"fractions must be strictly increasing in (0, 1], got {fr}")

    def rows(self) -> list[dict]:
        out = []
        for k, frac in enumerate(self.fractions):
            for method in METHODS:
                out.append({
                    "fraction": frac,
                    "method": method,
                    "accuracy": self.accuracy[method][k],
                    "seconds_per_epoch": self.seconds_per_epoch[method][k],
                })
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["fraction", "method", "accuracy", "seconds_per_epoch"])
            w.writeheader()
            for row in self.rows():
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})

    def to_json(self, path=None) -> str:
        text = json.dumps(asdict(self), indent=2)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_json(cls, text_or_path) -> "SweepReport":
        text = str(text_or_path)
        if not text.lstrip().startswith("{"):
            text = Path(text).read_text()
        return cls(**json.loads(text))


def _check_disjoint_source(model: Model, target: Dataset) -> None:
    trained = {tuple(k) for k in model.meta.get("trained_on", [])}
    source_name = model.meta.get("source_dataset")
    if not trained or (source_name is not None and source_name != target.meta.name):
        return
    clash = trained & {r.key for r in target.recordings}
    if clash:
        raise ContractError(f"{len(clash)} target recordings were used for pre-training, e.g. {sorted(clash)[0]}")


def _window_ids(seqs) -> set:
    return {(s.provenance, s.gesture_id) for s in seqs}


def _adapt(model: Model, seqs, cfg: TrainConfig, method: str):
    if method == "2srnn":
        return adapt_stage2(model, seqs, replace(cfg, stage=2))
    if method == "finetune":
        return fine_tune(model, seqs, replace(cfg, stage="finetune"))
    raise InvalidArgumentError(f"unknown adaptation method {method!r}")


def scenario_sets(target: Dataset, scenario: int, window: int, stride: int, fraction: float = 0.5):
    """``(adapt_windows, eval_windows)`` for a scenario; adapt is None for scenario 1."""
    recs = list(target.recordings)
    if scenario == 1:
        return None, make_sequences(recs, window, stride)
    if scenario == 2:
        seqs = make_sequences(recs, window, stride)
        return seqs, seqs
    if scenario == 3:
        # split by trial before windowing so overlapping windows cannot leak across
        adapt_recs, holdout_recs = split_adaptation_trials(recs, fraction)
        adapt, holdout = make_sequences(adapt_recs, window, stride), make_sequences(holdout_recs, window, stride)
        if _window_ids(adapt) & _window_ids(holdout):
            raise ContractError("scenario 3 holdout windows overlap the adaptation set")
        return adapt, holdout
    raise InvalidArgumentError(f"scenario must be 1, 2 or 3, got {scenario!r}")


def adapt_scenario(
    pretrained: Model,
    target: Dataset,
    scenario: int,
    cfg: TrainConfig,
    window: int,
    stride: int,
    fraction: float = 0.5,
    method: str = "2srnn",
):
    """Run one scenario; returns ``(report, model, history)``.

    For scenario 1 the returned model is ``pretrained`` itself and the
    history is None.
    """
    _check_disjoint_source(pretrained, target)
    adapt_set, eval_set = scenario_sets(target, scenario, window, stride, fraction)
    notes = []
    model, history = pretrained, None
    if adapt_set is not None:
        model, history = _adapt(pretrained, adapt_set, cfg, method)
    if scenario == 2:
        notes.append("train-on-test by design: adaptation and evaluation use the same target data")
    acc = accuracy(model, eval_set)
    report = EvalReport(
        scenario=scenario,
        fold_accuracy=[acc],
        mean_accuracy=acc,
        confusion=confusion_matrix(model, eval_set).tolist(),
        config={
            "method": method if scenario != 1 else "none",
            "target": target.meta.name,
            "window_frames": window,
            "stride_frames": stride,
            "fraction": fraction if scenario == 3 else None,
            "epochs": cfg.epochs if scenario != 1 else 0,
            "batch_size": cfg.batch_size,
            "seed": cfg.seed,
            "lr": cfg.lr,
            "adapt_windows": len(adapt_set) if adapt_set is not None else 0,
            "eval_windows": len(eval_set),
        },
        notes=notes,
    )
    return report, model, history


def run_scenario(
    pretrained: Model,
    target: Dataset,
    scenario: int,
    cfg: TrainConfig,
    window: int,
    stride: int,
    fraction: float = 0.5,
    method: str = "2srnn",
) -> EvalReport:
    return adapt_scenario(pretrained, target, scenario, cfg, window, stride, fraction, method)[0]


def budget_windows(seqs: list[Sequence], fraction: float) -> list[Sequence]:
    """Keep the first ``ceil(fraction * count)`` windows of each gesture, preserving order."""
    per_gesture: dict[int, int] = {}
    for s in seqs:
        per_gesture[s.gesture_id] = per_gesture.get(s.gesture_id, 0) + 1
    quota = {g: fraction_count(fraction, n) if fraction < 1.0 else n for g, n in per_gesture.items()}
    out, used = [], {g: 0 for g in per_gesture}
    for s in seqs:
        if used[s.gesture_id] < quota[s.gesture_id]:
            out.append(s)
            used[s.gesture_id] += 1
    return out


def data_budget_sweep(
    pretrained: Model,
    target: Dataset,
    fractions,
    epochs: int = 5,
    *,
    window: int,
    stride: int,
    cfg: TrainConfig | None = None,
    holdout_fraction: float = 0.5,
) -> SweepReport:
    """Stage-2 adaptation vs fine-tuning as a function of available target windows."""
    fractions = [float(x) for x in fractions]
    if not fractions:
        raise InvalidArgumentError("fractions must not be empty")
    cfg = replace(cfg or TrainConfig(stage=2), epochs=epochs)
    _check_disjoint_source(pretrained, target)
    adapt_all, holdout = scenario_sets(target, 3, window, stride, holdout_fraction)
    baseline = accuracy(pretrained, holdout)
    acc = {m: [] for m in METHODS}
    secs = {m: [] for m in METHODS}
    for frac in fractions:
        if not 0.0 < frac <= 1.0:
            raise InvalidArgumentError(f"fraction {frac} outside (0, 1]")
        subset = budget_windows(adapt_all, frac)
        acc["none"].append(baseline)
        secs["none"].append(0.0)
        for method in ("2srnn", "finetune"):
            model, history = _adapt(pretrained, subset, cfg, method)
            acc[method].append(accuracy(model, holdout))
            secs[method].append(history.seconds_per_epoch())
    return SweepReport(
        fractions=fractions,
        accuracy=acc,
        seconds_per_epoch=secs,
        config={
            "epochs": epochs,
            "batch_size": cfg.batch_size,
            "seed": cfg.seed,
            "lr": cfg.lr,
            "window_frames": window,
            "stride_frames": stride,
            "holdout_fraction": holdout_fraction,
            "target": target.meta.name,
        },
    )


def pretrain(
    source_recordings,
    cfg: TrainConfig,
    window: int,
    stride: int,
    *,
    f: int,
    G: int,
    h: int = 512,
    num_layers: int = 2,
    head_units: int = 512,
    dropout_p: float = 0.5,
    source_name: str | None = None,
):
    """Fresh model trained with stage 1 on the windows of ``source_recordings``."""
    model = init_model(f, h, G, num_layers, seed=cfg.seed, head_units=head_units, dropout_p=dropout_p)
    seqs = make_sequences(list(source_recordings), window, stride)
    trained, history = train_stage1(model, seqs, replace(cfg, stage=1))
    if source_name is not None:
        trained.meta["source_dataset"] = source_name
    return trained, history


def cross_validate(
    ds: Dataset,
    protocol: str,
    scenario: int,
    pre_cfg: TrainConfig,
    adapt_cfg: TrainConfig,
    window: int,
    stride: int,
    fraction: float = 0.5,
    **model_kwargs,
) -> EvalReport:
    """Inter-subject leave-one-out or per-subject inter-session folds, aggregated."""
    if protocol == "inter-subject":
        folds = [split_inter_subject_loocv(ds, s) for s in ds.subjects]
    elif protocol == "inter-session":
        folds = [split_inter_session(ds, s) for s in ds.subjects]
    else:
        raise InvalidArgumentError(f"protocol must be 'inter-subject' or 'inter-session', got {protocol!r}")

    def run(fold):
        model, _ = pretrain(
            fold.train, pre_cfg, window, stride,
            f=ds.meta.channels, G=ds.meta.gestures, source_name=ds.meta.name, **model_kwargs,
        )
        return run_scenario(model, ds.with_recordings(fold.test), scenario, adapt_cfg, window, stride, fraction)

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        reports = list(pool.map(run, folds))
    confusion = np.sum([np.array(r.confusion) for r in reports], axis=0)
    accs = [r.mean_accuracy for r in reports]
    return EvalReport(
        scenario=scenario,
        fold_accuracy=accs,
        mean_accuracy=float(np.mean(accs)) if accs else math.nan,
        confusion=confusion.tolist(),
        config={"protocol": protocol, "folds": [f.descriptor for f in folds], **reports[0].config},
        notes=reports[0].notes,
    )
