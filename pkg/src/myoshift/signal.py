"""Preprocessing of raw sEMG recordings.

Every function here is pure: it returns a new :class:`Recording` and never
touches its argument. The usual chain for unfiltered data is::

    bandstop_filter -> standardize -> rectify -> smooth -> segment
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass

import numpy as np
import scipy.signal

from .errors import InvalidArgumentError, InvalidInputError

logger = logging.getLogger(__name__)

STD_EPS = 1e-12
DEFAULT_SMOOTH_FRAMES = 11
# longest window considered usable for real-time recognition
REALTIME_LIMIT_MS = 300.0


@dataclass(frozen=True)
class Recording:
    """One trial: an ``N x f`` matrix plus its identifying metadata."""

    subject_id: int
    session_id: int
    trial_id: int
    gesture_id: int
    rate_hz: float
    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise InvalidInputError(f"recording data must be N x f with N, f >= 1, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise InvalidInputError("recording data contains NaN or Inf")
        if not self.rate_hz > 0:
            raise InvalidInputError(f"rate_hz must be positive, got {self.rate_hz}")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[1]

    @property
    def key(self) -> tuple[int, int, int, int]:
        return (self.subject_id, self.session_id, self.gesture_id, self.trial_id)

    def with_data(self, data: np.ndarray, **changes) -> "Recording":
        return dataclasses.replace(self, data=data, **changes)


@dataclass(frozen=True)
class Sequence:
    """A fixed-length ``T x f`` window cut from a recording."""

    data: np.ndarray
    gesture_id: int
    provenance: tuple[int, int, int, int]  # (subject, session, trial, window index)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2 or data.shape[0] < 1:
            raise InvalidInputError(f"sequence data must be T x f with T >= 1, got {data.shape}")
        object.__setattr__(self, "data", data)

    @property
    def length(self) -> int:
        return self.data.shape[0]


def standardize(rec: Recording) -> Recording:
    """Per-channel zero mean, unit sample standard deviation (ddof=1).

    Channels whose deviation is below ``STD_EPS`` become all zeros.
    """
    if rec.frames < 2:
        raise InvalidInputError("standardize needs at least 2 frames")
    x = rec.data
    mean = x.mean(axis=0)
    std = x.std(axis=0, ddof=1)
    flat = std < STD_EPS
    out = (x - mean) / np.where(flat, 1.0, std)
    out[:, flat] = 0.0
    return rec.with_data(out)


def rectify(rec: Recording) -> Recording:
    return rec.with_data(np.abs(rec.data))


def smooth(rec: Recording, window_frames: int = DEFAULT_SMOOTH_FRAMES) -> Recording:
    """Centered moving average; the window shrinks at both edges."""
    if window_frames < 1 or window_frames % 2 == 0:
        raise InvalidArgumentError(f"smoothing window must be odd and >= 1, got {window_frames}")
    if window_frames == 1:
        return rec.with_data(rec.data.copy())
    n = rec.frames
    half = window_frames // 2
    csum = np.vstack([np.zeros((1, rec.channels)), np.cumsum(rec.data, axis=0)])
    idx = np.arange(n)
    lo = np.maximum(idx - half, 0)
    hi = np.minimum(idx + half + 1, n)
    out = (csum[hi] - csum[lo]) / (hi - lo)[:, None]
    return rec.with_data(out)


def bandstop_sos(rate_hz: float, low_hz: float = 45.0, high_hz: float = 55.0, order: int = 2) -> np.ndarray:
    """Second-order sections of a digital Butterworth band-stop.

    ``order`` is the order of the low-pass prototype; the resulting digital
    filter has order ``2 * order``. Band edges are prewarped before the
    bilinear transform, so the -3 dB points land exactly on ``low_hz`` and
    ``high_hz``.
    """
    nyquist = rate_hz / 2.0
    if not (0.0 < low_hz < high_hz < nyquist):
        raise InvalidArgumentError(
            f"band-stop edges must satisfy 0 < low < high < {nyquist} Hz, got ({low_hz}, {high_hz})"
        )
    if order < 1:
        raise InvalidArgumentError(f"filter order must be >= 1, got {order}")
    return scipy.signal.butter(order, [low_hz, high_hz], btype="bandstop", fs=rate_hz, output="sos")


def bandstop_filter(rec: Recording, low_hz: float = 45.0, high_hz: float = 55.0, order: int = 2) -> Recording:
    """Causal (forward-only) band-stop filtering of every channel, zero initial state."""
    sos = bandstop_sos(rec.rate_hz, low_hz, high_hz, order)
    return rec.with_data(scipy.signal.sosfilt(sos, rec.data, axis=0))


def extract_middle(rec: Recording, frames: int) -> Recording:
    """Centered sub-recording; on an odd surplus the extra frame is dropped from the end."""
    if frames < 1:
        raise InvalidArgumentError(f"frames must be >= 1, got {frames}")
    if frames > rec.frames:
        raise InvalidInputError(f"cannot extract {frames} frames from a {rec.frames}-frame recording")
    start = (rec.frames - frames) // 2
    return rec.with_data(rec.data[start:start + frames].copy())


def segment_count(n: int, window_frames: int, stride_frames: int) -> int:
    return (n - window_frames) // stride_frames + 1


def segment(rec: Recording, window_frames: int, stride_frames: int) -> list[Sequence]:
    """Overlapping sliding windows; window ``k`` covers rows ``[k*stride, k*stride + window)``."""
    if window_frames < 1 or stride_frames < 1:
        raise InvalidArgumentError("window and stride must be >= 1")
    if window_frames > rec.frames:
        raise InvalidInputError(f"window of {window_frames} frames exceeds recording length {rec.frames}")
    window_ms = window_frames * 1000.0 / rec.rate_hz
    if window_ms > REALTIME_LIMIT_MS:
        logger.warning("window of %.0f ms exceeds the %.0f ms real-time budget", window_ms, REALTIME_LIMIT_MS)
    out = []
    for k in range(segment_count(rec.frames, window_frames, stride_frames)):
        start = k * stride_frames
        out.append(
            Sequence(
                data=rec.data[start:start + window_frames],
                gesture_id=rec.gesture_id,
                provenance=(rec.subject_id, rec.session_id, rec.trial_id, k),
            )
        )
    return out


def ms_to_frames(ms: float, rate_hz: float) -> int:
    frames = int(round(ms * rate_hz / 1000.0))
    if frames < 1:
        raise InvalidArgumentError(f"{ms} ms at {rate_hz} Hz is shorter than one frame")
    return frames


def preprocess(rec: Recording, smooth_frames: int = DEFAULT_SMOOTH_FRAMES, bandstop: bool = False) -> Recording:
    """Standard chain: optional band-stop, then standardize, rectify, smooth."""
    if bandstop:
        rec = bandstop_filter(rec)
    return smooth(rectify(standardize(rec)), smooth_frames)


def smooth_frames_for(rate_hz: float, ms: float = 11.0) -> int:
    """Odd smoothing window closest to ``ms`` milliseconds at ``rate_hz``."""
    n = max(1, int(round(ms * rate_hz / 1000.0)))
    return n if n % 2 else n + 1


__all__ = [
    "Recording",
    "Sequence",
    "standardize",
    "rectify",
    "smooth",
    "bandstop_sos",
    "bandstop_filter",
    "extract_middle",
    "segment",
    "segment_count",
    "ms_to_frames",
    "preprocess",
    "smooth_frames_for",
]
