"""Portable dataset format and the evaluation splits.

On disk a dataset is a directory holding ``manifest.json`` and one blob per
trial, ``s{subject}_e{session}_g{gesture}_t{trial}.bin``, each a row-major
``frames x channels`` array of little-endian float32. Subjects, sessions and
trials are numbered from 1; gestures from 0.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import (
    ChannelMismatchError,
    ChecksumError,
    FormatError,
    InvalidArgumentError,
    InvalidInputError,
    MissingFileError,
)
from .signal import Recording, Sequence, extract_middle, preprocess, segment, smooth_frames_for

FORMAT = "myoshift-dataset"
VERSION = 1
LE_F32 = np.dtype("<f4")
MANIFEST = "manifest.json"


def worker_count() -> int:
    env = os.environ.get("MYOSHIFT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise InvalidArgumentError(f"MYOSHIFT_THREADS must be an integer, got {env!r}") from None
    return min(4, os.cpu_count() or 1)


@dataclass(frozen=True)
class DatasetMeta:
    name: str
    rate_hz: float
    channels: int
    gestures: int
    preprocessed: bool = False

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "rate_hz": self.rate_hz,
            "channels": self.channels,
            "gestures": self.gestures,
            "preprocessed": self.preprocessed,
        }


@dataclass(frozen=True)
class Dataset:
    recordings: tuple[Recording, ...]
    meta: DatasetMeta

    def __post_init__(self):
        recs = tuple(self.recordings)
        object.__setattr__(self, "recordings", recs)
        seen = set()
        for r in recs:
            if r.channels != self.meta.channels:
                raise ChannelMismatchError(
                    f"recording {r.key} has {r.channels} channels, dataset declares {self.meta.channels}"
                )
            if r.rate_hz != self.meta.rate_hz:
                raise InvalidInputError(f"recording {r.key} has rate {r.rate_hz}, dataset declares {self.meta.rate_hz}")
            if not 0 <= r.gesture_id < self.meta.gestures:
                raise InvalidInputError(f"gesture {r.gesture_id} outside [0, {self.meta.gestures})")
            if r.key in seen:
                raise InvalidInputError(f"duplicate recording {r.key}")
            seen.add(r.key)

    def __len__(self):
        return len(self.recordings)

    def __iter__(self):
        return iter(self.recordings)

    @property
    def subjects(self) -> list[int]:
        return sorted({r.subject_id for r in self.recordings})

    def sessions(self, subject: int | None = None) -> list[int]:
        return sorted({r.session_id for r in self.recordings if subject is None or r.subject_id == subject})

    def trials(self) -> list[int]:
        return sorted({r.trial_id for r in self.recordings})

    def select(self, subject=None, session=None, gesture=None) -> "Dataset":
        keep = [
            r for r in self.recordings
            if (subject is None or r.subject_id == subject)
            and (session is None or r.session_id == session)
            and (gesture is None or r.gesture_id == gesture)
        ]
        return replace(self, recordings=tuple(keep))

    def with_recordings(self, recordings, **meta_changes) -> "Dataset":
        return Dataset(tuple(recordings), replace(self.meta, **meta_changes))

    def describe(self) -> dict:
        return {
            **self.meta.to_dict(),
            "subjects": self.subjects,
            "sessions": {s: self.sessions(s) for s in self.subjects},
            "trials_per_gesture": len(self.trials()),
            "recordings": len(self.recordings),
        }


@dataclass(frozen=True)
class Split:
    train: tuple[Recording, ...]
    test: tuple[Recording, ...]
    descriptor: str = ""

    def __post_init__(self):
        object.__setattr__(self, "train", tuple(self.train))
        object.__setattr__(self, "test", tuple(self.test))


# --- I/O -------------------------------------------------------------------


def blob_name(rec: Recording) -> str:
    return f"s{rec.subject_id}_e{rec.session_id}_g{rec.gesture_id}_t{rec.trial_id}.bin"


def save_dataset(ds: Dataset, directory) -> Path:
    """Write ``directory/manifest.json`` plus one float32 blob per recording."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for rec in ds.recordings:
        raw = np.ascontiguousarray(rec.data, dtype=LE_F32).tobytes()
        name = blob_name(rec)
        (directory / name).write_bytes(raw)
        entries.append({
            "file": name,
            "subject": rec.subject_id,
            "session": rec.session_id,
            "gesture": rec.gesture_id,
            "trial": rec.trial_id,
            "frames": rec.frames,
            "sha256": hashlib.sha256(raw).hexdigest(),
        })
    manifest = {"format": FORMAT, "version": VERSION, **ds.meta.to_dict(), "dtype": "<f4", "recordings": entries}
    path = directory / MANIFEST
    path.write_text(json.dumps(manifest, indent=1))
    return path


def _read_blob(directory: Path, entry: dict, channels: int, rate_hz: float) -> Recording:
    path = directory / entry["file"]
    if not path.exists():
        raise MissingFileError(f"missing recording blob {path}")
    raw = path.read_bytes()
    if hashlib.sha256(raw).hexdigest() != entry["sha256"]:
        raise ChecksumError(f"checksum mismatch for {path}")
    frames = entry["frames"]
    if len(raw) != frames * channels * LE_F32.itemsize:
        raise ChannelMismatchError(
            f"{path} holds {len(raw) // LE_F32.itemsize} values, expected {frames} frames x {channels} channels"
        )
    data = np.frombuffer(raw, dtype=LE_F32).reshape(frames, channels).astype(np.float64)
    return Recording(entry["subject"], entry["session"], entry["trial"], entry["gesture"], rate_hz, data)


def load_dataset(manifest_path) -> Dataset:
    path = Path(manifest_path)
    if path.is_dir():
        path = path / MANIFEST
    if not path.exists():
        raise MissingFileError(f"dataset manifest not found: {path}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path} is not valid JSON: {exc}") from None
    if manifest.get("format") != FORMAT:
        raise FormatError(f"{path} is not a dataset manifest")
    if manifest.get("version") != VERSION:
        raise FormatError(f"unsupported dataset format version {manifest.get('version')}")
    meta = DatasetMeta(
        name=manifest["name"],
        rate_hz=float(manifest["rate_hz"]),
        channels=int(manifest["channels"]),
        gestures=int(manifest["gestures"]),
        preprocessed=bool(manifest.get("preprocessed", False)),
    )
    entries = manifest["recordings"]
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        recs = list(pool.map(lambda e: _read_blob(path.parent, e, meta.channels, meta.rate_hz), entries))
    return Dataset(tuple(recs), meta)


def preprocess_dataset(
    ds: Dataset,
    smooth_frames: int | None = None,
    bandstop: bool = False,
    middle_frames: int | None = None,
) -> Dataset:
    """Middle-window extraction then the standard chain; no-op for preprocessed data."""
    if ds.meta.preprocessed:
        return ds
    if smooth_frames is None:
        smooth_frames = smooth_frames_for(ds.meta.rate_hz)
    out = []
    for rec in ds.recordings:
        if middle_frames is not None:
            rec = extract_middle(rec, middle_frames)
        out.append(preprocess(rec, smooth_frames, bandstop=bandstop))
    return ds.with_recordings(out, preprocessed=True)


def make_sequences(recordings, window_frames: int, stride_frames: int) -> list[Sequence]:
    """Segment recordings in the given order into one flat list of windows."""
    out = []
    for rec in recordings:
        out.extend(segment(rec, window_frames, stride_frames))
    return out


# --- splits ----------------------------------------------------------------


def split_intra_session(ds: Dataset, subject: int, session: int) -> Split:
    """Odd trials train, even trials test, within one subject and session."""
    recs = [r for r in ds.recordings if r.subject_id == subject and r.session_id == session]
    if not recs:
        raise InvalidInputError(f"no recordings for subject {subject}, session {session}")
    return Split(
        train=[r for r in recs if r.trial_id % 2 == 1],
        test=[r for r in recs if r.trial_id % 2 == 0],
        descriptor=f"intra-session subject={subject} session={session} odd/even trials",
    )


def split_inter_session(ds: Dataset, subject: int) -> Split:
    """First recorded session trains, second session tests."""
    sessions = ds.sessions(subject)
    if not sessions:
        raise InvalidInputError(f"unknown subject {subject}")
    if len(sessions) < 2:
        raise InvalidInputError(f"subject {subject} has {len(sessions)} session(s); inter-session needs 2")
    first, second = sessions[:2]
    recs = [r for r in ds.recordings if r.subject_id == subject]
    return Split(
        train=[r for r in recs if r.session_id == first],
        test=[r for r in recs if r.session_id == second],
        descriptor=f"inter-session subject={subject} train session={first} test session={second}",
    )


def split_inter_subject_loocv(ds: Dataset, test_subject: int) -> Split:
    subjects = ds.subjects
    if len(subjects) < 2:
        raise InvalidInputError("leave-one-subject-out needs at least 2 subjects")
    if test_subject not in subjects:
        raise InvalidInputError(f"unknown subject {test_subject}")
    return Split(
        train=[r for r in ds.recordings if r.subject_id != test_subject],
        test=[r for r in ds.recordings if r.subject_id == test_subject],
        descriptor=f"inter-subject leave-one-out test subject={test_subject}",
    )


def loocv_folds(ds: Dataset) -> list[Split]:
    return [split_inter_subject_loocv(ds, s) for s in ds.subjects]


def split_adaptation_trials(target, fraction: float) -> tuple[list[Recording], list[Recording]]:
    """Per (subject, session, gesture): the first ``ceil(fraction * n)`` trials adapt, the rest hold out."""
    if not 0.0 < fraction < 1.0:
        raise InvalidArgumentError(f"fraction must lie in (0, 1), got {fraction}")
    groups: dict[tuple, list[Recording]] = {}
    for rec in target:
        groups.setdefault((rec.subject_id, rec.session_id, rec.gesture_id), []).append(rec)
    adapt_keys = set()
    for recs in groups.values():
        recs = sorted(recs, key=lambda r: r.trial_id)
        take = fraction_count(fraction, len(recs))
        adapt_keys.update(r.key for r in recs[:take])
    adapt = [r for r in target if r.key in adapt_keys]
    holdout = [r for r in target if r.key not in adapt_keys]
    return adapt, holdout


def fraction_count(fraction: float, n: int) -> int:
    # guards against 0.6 * 5 == 3.0000000000000004 rounding up to 4
    return min(n, max(1, math.ceil(fraction * n - 1e-9)))


__all__ = [
    "Dataset",
    "DatasetMeta",
    "Split",
    "load_dataset",
    "save_dataset",
    "preprocess_dataset",
    "make_sequences",
    "split_intra_session",
    "split_inter_session",
    "split_inter_subject_loocv",
    "loocv_folds",
    "split_adaptation_trials",
    "fraction_count",
    "worker_count",
]
