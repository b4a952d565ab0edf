"""Synthetic gesture data with a known, invertible domain shift.

Each gesture drives its own sparse set of channels with a rise/hold/fall
envelope on top of white noise. The output already lives in the
post-preprocessing domain (``meta.preprocessed`` is set), so a shift
``x -> A x + c`` applied afterwards is exactly the kind of distortion the
adaptation layer can undo.
"""

from __future__ import annotations

import itertools
from math import comb
from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset, DatasetMeta
from .errors import InvalidArgumentError, ShapeError
from .signal import Recording

SHIFT_KINDS = ("rotation", "permutation", "random")


@dataclass(frozen=True)
class SynthSpec:
    G: int = 5
    f: int = 8
    subjects: int = 3
    sessions: int = 2
    trials: int = 10
    frames: int = 400
    rate_hz: float = 200.0
    noise_std: float = 0.1
    rise_frac: float = 0.2
    fall_frac: float = 0.2
    floor: float = 0.3  # envelope level at onset/offset, relative to the hold level
    active: int | None = None  # channels per gesture; None picks the smallest workable count
    subject_gain: float = 0.15
    name: str = "synthetic"

    def __post_init__(self):
        for field_name in ("G", "f", "subjects", "sessions", "trials", "frames"):
            if getattr(self, field_name) < 1:
                raise InvalidArgumentError(f"{field_name} must be >= 1, got {getattr(self, field_name)}")
        if not self.rate_hz > 0:
            raise InvalidArgumentError("rate_hz must be positive")
        if self.noise_std < 0:
            raise InvalidArgumentError("noise_std must be >= 0")
        if self.rise_frac < 0 or self.fall_frac < 0 or self.rise_frac + self.fall_frac > 1:
            raise InvalidArgumentError("rise_frac and fall_frac must be >= 0 and sum to at most 1")
        if not 0 <= self.floor <= 1:
            raise InvalidArgumentError("floor must lie in [0, 1]")
        if not 0 <= self.subject_gain < 1:
            raise InvalidArgumentError("subject_gain must lie in [0, 1)")
        k = self.active_channels()
        if _n_choose_k(self.f, k) < self.G:
            raise InvalidArgumentError(f"{self.f} channels cannot give {self.G} distinct {k}-channel patterns")

    def active_channels(self) -> int:
        if self.active is not None:
            if not 1 <= self.active <= self.f:
                raise InvalidArgumentError(f"active must lie in [1, f], got {self.active}")
            return self.active
        k = min(max(1, self.f // 4), self.f)
        while k < self.f and _n_choose_k(self.f, k) < self.G:
            k += 1
        return k


def _n_choose_k(n: int, k: int) -> int:
    return comb(n, k)


@dataclass(frozen=True)
class ShiftSpec:
    A: np.ndarray
    c: np.ndarray
    kind: str

    def __post_init__(self):
        A, c = np.asarray(self.A, dtype=np.float64), np.asarray(self.c, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or c.shape != (A.shape[0],):
            raise ShapeError("shift needs a square A and a matching offset c")
        if abs(np.linalg.det(A)) <= 1e-6:
            raise InvalidArgumentError("shift matrix is (numerically) singular")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "c", c)

    def inverse(self) -> "ShiftSpec":
        A_inv = np.linalg.inv(self.A)
        return ShiftSpec(A_inv, -A_inv @ self.c, self.kind)


def envelope(spec: SynthSpec) -> np.ndarray:
    """Rise, hold, fall, scaled to ``[floor, 1]``; smooth (raised-cosine) ramps."""
    n = spec.frames
    rise = int(round(spec.rise_frac * n))
    fall = int(round(spec.fall_frac * n))
    env = np.ones(n)
    if rise:
        env[:rise] = 0.5 - 0.5 * np.cos(np.pi * (np.arange(rise) + 0.5) / rise)
    if fall:
        env[n - fall:] = 0.5 + 0.5 * np.cos(np.pi * (np.arange(fall) + 0.5) / fall)
    return spec.floor + (1.0 - spec.floor) * env


def gesture_patterns(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """``G x f`` channel gains; each row is non-zero on a distinct channel subset."""
    k = spec.active_channels()
    combos = list(itertools.combinations(range(spec.f), k))
    picks = rng.choice(len(combos), size=spec.G, replace=False)
    patterns = np.zeros((spec.G, spec.f))
    for g, idx in enumerate(picks):
        patterns[g, list(combos[idx])] = rng.uniform(0.7, 1.3, size=k)
    return patterns


def generate_synthetic(spec: SynthSpec = SynthSpec(), seed: int = 0) -> Dataset:
    """Balanced synthetic dataset, bit-identical for a given ``seed``.

    Values are rounded to float32 so the dataset survives the on-disk
    format unchanged.
    """
    rng = np.random.default_rng(seed)
    patterns = gesture_patterns(spec, rng)
    gains = 1.0 + rng.uniform(-spec.subject_gain, spec.subject_gain, size=(spec.subjects, spec.f))
    env = envelope(spec)
    recs = []
    for s in range(spec.subjects):
        for e in range(spec.sessions):
            for g in range(spec.G):
                clean = np.outer(env, patterns[g] * gains[s])
                for t in range(spec.trials):
                    noise = rng.normal(0.0, spec.noise_std, size=clean.shape) if spec.noise_std else 0.0
                    data = (clean + noise).astype(np.float32).astype(np.float64)
                    recs.append(Recording(s + 1, e + 1, t + 1, g, spec.rate_hz, data))
    meta = DatasetMeta(name=spec.name, rate_hz=spec.rate_hz, channels=spec.f, gestures=spec.G, preprocessed=True)
    return Dataset(tuple(recs), meta)


def _givens(f: int, i: int, j: int, theta: float) -> np.ndarray:
    R = np.eye(f)
    c, s = np.cos(theta), np.sin(theta)
    R[i, i] = R[j, j] = c
    R[i, j], R[j, i] = -s, s
    return R


def make_shift(kind: str, f: int, seed: int = 0, offset_std: float = 0.0) -> ShiftSpec:
    """Random invertible shift of the given kind.

    rotation: product of Givens rotations over every channel pair with
    uniform angles; permutation: a non-identity channel permutation;
    random: ``I`` plus a small Gaussian perturbation, rejected until
    ``|det| > 1e-3``.
    """
    if kind not in SHIFT_KINDS:
        raise InvalidArgumentError(f"shift kind must be one of {SHIFT_KINDS}, got {kind!r}")
    if f < 2:
        raise InvalidArgumentError("a shift needs at least 2 channels")
    rng = np.random.default_rng(seed)
    if kind == "rotation":
        A = np.eye(f)
        for i, j in itertools.combinations(range(f), 2):
            A = _givens(f, i, j, rng.uniform(-np.pi, np.pi)) @ A
    elif kind == "permutation":
        perm = rng.permutation(f)
        while np.array_equal(perm, np.arange(f)):
            perm = rng.permutation(f)
        A = np.eye(f)[perm]
    else:
        while True:
            A = np.eye(f) + rng.normal(0.0, 0.5 / np.sqrt(f), size=(f, f))
            if abs(np.linalg.det(A)) > 1e-3:
                break
    c = rng.normal(0.0, offset_std, size=f) if offset_std else np.zeros(f)
    return ShiftSpec(A, c, kind)


def apply_domain_shift(ds: Dataset, shift: ShiftSpec, noise_seed: int | None = None, noise_std: float = 0.0) -> Dataset:
    """Map every frame ``x -> A x + c`` and mark the result as a new session.

    With ``noise_seed`` set, fresh white noise of ``noise_std`` is added after
    the shift.
    """
    if shift.A.shape[0] != ds.meta.channels:
        raise ShapeError(f"shift is {shift.A.shape[0]}-dimensional, dataset has {ds.meta.channels} channels")
    rng = np.random.default_rng(noise_seed) if noise_seed is not None else None
    recs = []
    for rec in ds.recordings:
        data = rec.data @ shift.A.T + shift.c
        if rng is not None and noise_std > 0:
            data = data + rng.normal(0.0, noise_std, size=data.shape)
        recs.append(replace(rec, data=data, session_id=rec.session_id + 1))
    return ds.with_recordings(recs, name=f"{ds.meta.name}+{shift.kind}")
