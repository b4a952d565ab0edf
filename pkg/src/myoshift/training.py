"""Loss, Adam, the two training stages and the gradient checker."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, InvalidArgumentError, InvalidInputError, UnsupportedModeError
from .model import Model, backward_batch, batch_loss, batch_loss_array, draw_masks, forward
from .signal import Sequence

ADAPT_NAMES = ("adapt.M", "adapt.b")


@dataclass
class TrainConfig:
    stage: int | str = 1  # 1, 2 or "finetune"
    epochs: int = 100
    batch_size: int = 64
    seed: int = 0
    shuffle: bool = True
    lr: float = 1e-3

    def __post_init__(self):
        if self.stage not in (1, 2, "finetune"):
            raise InvalidArgumentError(f"stage must be 1, 2 or 'finetune', got {self.stage!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidArgumentError("epochs and batch_size must be >= 1")
        if self.lr < 0:
            raise InvalidArgumentError("learning rate must be non-negative")


@dataclass
class TrainHistory:
    loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    def __len__(self):
        return len(self.loss)

    def seconds_per_epoch(self) -> float:
        return float(np.median(self.seconds)) if self.seconds else math.nan

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss", "train_acc", "seconds"])
            for k, row in enumerate(zip(self.loss, self.train_acc, self.seconds), start=1):
                w.writerow([k, repr(row[0]), repr(row[1]), repr(row[2])])


@dataclass
class OptimizerState:
    m: dict
    v: dict
    freeze: dict
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, model: Model, frozen=(), lr: float = 1e-3, **kw) -> "OptimizerState":
        params = model.named_params()
        unknown = set(frozen) - set(params)
        if unknown:
            raise InvalidArgumentError(f"unknown parameters in freeze list: {sorted(unknown)}")
        return cls(
            m={n: np.zeros_like(a) for n, a in params.items()},
            v={n: np.zeros_like(a) for n, a in params.items()},
            freeze={n: n in frozen for n in params},
            lr=lr,
            **kw,
        )

    def trainable(self) -> list[str]:
        return [n for n, frozen in self.freeze.items() if not frozen]


def cross_entropy(probs, label: int) -> float:
    """``-ln p[label]`` for a probability vector."""
    probs = np.asarray(probs)
    if not 0 <= label < probs.shape[-1]:
        raise InvalidArgumentError(f"label {label} outside [0, {probs.shape[-1]})")
    return float(-np.log(probs[label]))


def cross_entropy_logits(logits, label: int) -> float:
    """Same loss, evaluated from logits through log-sum-exp."""
    logits = np.asarray(logits)
    if not 0 <= label < logits.shape[-1]:
        raise InvalidArgumentError(f"label {label} outside [0, {logits.shape[-1]})")
    return batch_loss(logits[None], [label])


def backward(model: Model, cache, label) -> dict[str, np.ndarray]:
    """Gradients of the per-sequence loss for a cache from :func:`model.classify_forward`."""
    return backward_batch(model, cache, np.atleast_1d(label))


def adam_step(state: OptimizerState, model: Model, grads: dict) -> tuple[OptimizerState, Model]:
    """One bias-corrected Adam update, in place on ``model`` and ``state``.

    Frozen parameters and their moments are not touched at all.
    """
    params = model.named_params()
    if set(state.freeze) != set(params):
        raise ContractError("optimizer state was built for a different model")
    state.t += 1
    t = state.t
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        if state.freeze[name]:
            continue
        g = grads.get(name)
        if g is None:
            raise ContractError(f"no gradient supplied for trainable parameter {name}")
        if g.shape != p.shape:
            raise ContractError(f"gradient for {name} has shape {g.shape}, parameter has {p.shape}")
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    model.version += 1
    return state, model


def gd_step(model: Model, grads: dict, lr: float, names=None) -> Model:
    """Plain gradient descent on ``names`` (default: every parameter in ``grads``)."""
    params = model.named_params()
    for name in names if names is not None else grads:
        params[name] -= lr * grads[name]
    model.version += 1
    return model


def _stack(seqs) -> tuple[np.ndarray, np.ndarray]:
    if not seqs:
        raise InvalidInputError("training set is empty")
    X = np.stack([s.data for s in seqs])
    y = np.array([s.gesture_id for s in seqs], dtype=np.int64)
    return X, y


def _train(model: Model, seqs: list[Sequence], cfg: TrainConfig, frozen) -> tuple[Model, TrainHistory]:
    X, y = _stack(seqs)
    X = X.astype(model.dtype, copy=False)
    model = model.copy()
    model.version = 0
    state = OptimizerState.create(model, frozen=frozen, lr=cfg.lr)
    trainable = state.trainable()
    rng = np.random.default_rng(cfg.seed)
    history = TrainHistory()
    n = len(y)
    for _ in range(cfg.epochs):
        start = time.perf_counter()
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        loss_sum, correct = 0.0, 0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo: lo + cfg.batch_size]
            logits, cache = forward(model, X[idx], mode="train", rng=rng)
            loss_sum += batch_loss(logits, y[idx]) * len(idx)
            correct += int((logits.argmax(axis=1) == y[idx]).sum())
            grads = backward_batch(model, cache, y[idx], wrt=trainable)
            adam_step(state, model, grads)
        history.seconds.append(time.perf_counter() - start)
        history.loss.append(loss_sum / n)
        history.train_acc.append(100.0 * correct / n)
    return model, history


def _recording_keys(seqs) -> list[list[int]]:
    keys = {(s.provenance[0], s.provenance[1], s.gesture_id, s.provenance[2]) for s in seqs}
    return [list(k) for k in sorted(keys)]


def _is_identity(model: Model) -> bool:
    return bool(np.array_equal(model.adapt.M, np.eye(model.f)) and not np.any(model.adapt.b))


def train_stage1(model: Model, source: list[Sequence], cfg: TrainConfig) -> tuple[Model, TrainHistory]:
    """Pre-train the classifier; the adaptation layer stays frozen at identity."""
    if cfg.stage != 1:
        raise InvalidArgumentError(f"train_stage1 needs stage=1, got {cfg.stage!r}")
    if not _is_identity(model):
        raise ContractError("stage 1 expects the adaptation layer at identity")
    out, history = _train(model, source, cfg, frozen=ADAPT_NAMES)
    out.meta = dict(model.meta, trained_on=_recording_keys(source))
    return out, history


def adapt_stage2(model: Model, target: list[Sequence], cfg: TrainConfig) -> tuple[Model, TrainHistory]:
    """Train only ``(M, b)`` on target data; every classifier weight is frozen."""
    if cfg.stage != 2:
        raise InvalidArgumentError(f"adapt_stage2 needs stage=2, got {cfg.stage!r}")
    out, history = _train(model, target, cfg, frozen=model.classifier_names())
    out.meta = dict(model.meta, adapted_on=_recording_keys(target))
    return out, history


def fine_tune(model: Model, target: list[Sequence], cfg: TrainConfig) -> tuple[Model, TrainHistory]:
    """Supervised fine-tuning baseline: every parameter trainable."""
    if cfg.stage != "finetune":
        raise InvalidArgumentError(f"fine_tune needs stage='finetune', got {cfg.stage!r}")
    out, history = _train(model, target, cfg, frozen=())
    out.meta = dict(model.meta, finetuned_on=_recording_keys(target))
    return out, history


def stage2_trainable_count(model: Model) -> int:
    return model.param_count(ADAPT_NAMES)


def _pinned_loss_and_grads(model, X, y, masks):
    logits, cache = forward(model, X, mode="train", masks=masks)
    return batch_loss(logits, y), backward_batch(model, cache, y)


def grad_check_groups(
    model: Model,
    batch: list[Sequence],
    eps: float = 1e-5,
    seed: int = 0,
    max_entries: int | None = 4000,
    reference_dtype=None,
) -> dict[str, float]:
    """Max relative error between BPTT and central differences, per parameter array.

    Dropout masks are drawn once from ``seed`` and pinned for every
    evaluation. When the model has more than ``max_entries`` scalars a
    random subset of that size is checked.

    The finite differences are evaluated in 64-bit by default. Their
    rounding noise is about ``ulp(loss) / (2 eps)``, roughly 1e-11 at
    ``eps = 1e-5``, which dominates the relative error of gradient entries
    below ~1e-7. ``reference_dtype=np.longdouble`` evaluates the perturbed
    losses in extended precision instead; the analytic side stays 64-bit.
    """
    if model.dtype != np.float64:
        raise UnsupportedModeError("gradient checking requires 64-bit parameters")
    if not eps > 0:
        raise InvalidArgumentError(f"eps must be positive, got {eps}")
    X, y = _stack(batch)
    model = model.copy()
    rng = np.random.default_rng(seed)
    masks = draw_masks(model, X.shape[0], X.shape[1], rng)
    _, grads = _pinned_loss_and_grads(model, X, y, masks)
    if reference_dtype is not None:
        model = model.astype(reference_dtype)
        X = X.astype(reference_dtype)
        masks = ([m.astype(reference_dtype) for m in masks[0]], masks[1].astype(reference_dtype))
    params = model.named_params()
    total = model.param_count()
    out = {}
    for name, arr in params.items():
        flat = arr.reshape(-1)
        if max_entries is not None and total > max_entries:
            k = max(1, int(round(max_entries * flat.size / total)))
            picks = rng.choice(flat.size, size=min(k, flat.size), replace=False)
        else:
            picks = range(flat.size)
        analytic = grads[name].reshape(-1)
        worst = 0.0
        for j in picks:
            orig = flat[j]
            flat[j] = orig + eps
            lp = batch_loss_array(forward(model, X, mode="train", masks=masks)[0], y)
            flat[j] = orig - eps
            lm = batch_loss_array(forward(model, X, mode="train", masks=masks)[0], y)
            flat[j] = orig
            numeric = float((lp - lm) / (2.0 * eps))
            err = abs(analytic[j] - numeric) / max(1e-12, abs(analytic[j]) + abs(numeric))
            worst = max(worst, err)
        out[name] = worst
    return out


def grad_check(model: Model, batch: list[Sequence], eps: float = 1e-5, seed: int = 0, max_entries=4000) -> float:
    return max(grad_check_groups(model, batch, eps=eps, seed=seed, max_entries=max_entries).values())


def save_history(history: TrainHistory, path) -> Path:
    path = Path(path)
    history.to_csv(path)
    return path
