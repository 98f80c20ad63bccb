"""IMU excitation scoring and informative-segment selection.

A window is informative when the stacked angular velocities and the stacked
linear accelerations both span all three axes. The score of each stack is the
smallest eigenvalue of its Gram matrix divided by the sample count.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class EmptySelection(RuntimeError):
    """No window passed the excitation thresholds."""


class ImuSample(NamedTuple):
    timestamp: float
    gyro: np.ndarray
    accel: np.ndarray


class ImuSequence:
    """Timestamped gyroscope (rad/s) and accelerometer (m/s²) samples."""

    def __init__(self, timestamps, gyro, accel, sequence_id: str = ""):
        ts = np.array(timestamps, dtype=float).reshape(-1)
        w = np.array(gyro, dtype=float).reshape(-1, 3)
        a = np.array(accel, dtype=float).reshape(-1, 3)
        if not (len(ts) == len(w) == len(a)):
            raise ValueError("timestamps, gyro and accel differ in length")
        if not (np.all(np.isfinite(ts)) and np.all(np.isfinite(w)) and np.all(np.isfinite(a))):
            raise ValueError("IMU sequence contains non-finite values")
        if np.any(np.diff(ts) <= 0):
            bad = int(np.argmax(np.diff(ts) <= 0)) + 1
            raise ValueError(f"IMU timestamps not strictly increasing at index {bad}")
        for arr in (ts, w, a):
            arr.flags.writeable = False
        self.timestamps = ts
        self.gyro = w
        self.accel = a
        self.sequence_id = sequence_id

    def __len__(self):
        return len(self.timestamps)

    def __getitem__(self, i):
        if isinstance(i, (slice, np.ndarray, list)):
            return ImuSequence(self.timestamps[i], self.gyro[i], self.accel[i], self.sequence_id)
        return ImuSample(float(self.timestamps[i]), self.gyro[i], self.accel[i])

    def __repr__(self):
        return f"ImuSequence(id={self.sequence_id!r}, n={len(self)})"

    def between(self, start: float, end: float) -> ImuSequence:
        m = (self.timestamps >= start) & (self.timestamps <= end)
        return self[m]


@dataclass(frozen=True)
class Segment:
    sequence_id: str
    start: float
    end: float
    score_rot: float
    score_acc: float

    @property
    def score(self) -> float:
        """Combined score: the weaker of the two excitations."""
        return min(self.score_rot, self.score_acc)


def _min_gram_eig(rows: np.ndarray, centered: bool) -> float:
    if centered:
        rows = rows - rows.mean(axis=0)
    gram = rows.T @ rows / len(rows)
    return float(max(np.linalg.eigvalsh(gram)[0], 0.0))


def excitation_scores(window, centered: bool = True) -> tuple[float, float]:
    """Rotational and translational excitation of an IMU window.

    Parameters
    ----------
    window : ImuSequence or sequence of ImuSample
        At least 10 samples.
    centered : bool
        Subtract the window mean before stacking, so constant readings
        (including gravity) do not count as excitation.

    Returns
    -------
    (lambda_rot, lambda_acc) : tuple of float
        Minimum eigenvalues of ``J_rᵀJ_r / K`` and ``J_tᵀJ_t / K``.
    """
    if isinstance(window, ImuSequence):
        gyro, accel = window.gyro, window.accel
    else:
        gyro = np.array([s.gyro for s in window], dtype=float).reshape(-1, 3)
        accel = np.array([s.accel for s in window], dtype=float).reshape(-1, 3)
    if len(gyro) < 10:
        raise ValueError(f"excitation window needs >= 10 samples, got {len(gyro)}")
    return _min_gram_eig(gyro, centered), _min_gram_eig(accel, centered)


def _scan(seq: ImuSequence, window: float, stride: float, tau_rot: float, tau_acc: float,
          centered: bool):
    if len(seq) == 0:
        return []
    t0, t1 = seq.timestamps[0], seq.timestamps[-1]
    kept = []
    n_win = int(np.floor((t1 - t0 - window) / stride + 1e-9)) + 1
    for k in range(max(n_win, 0)):
        start = t0 + k * stride
        end = start + window
        lo = np.searchsorted(seq.timestamps, start, side="left")
        hi = np.searchsorted(seq.timestamps, end, side="right")
        if hi - lo < 10:
            continue
        r, a = excitation_scores(seq[lo:hi], centered)
        if r >= tau_rot and a >= tau_acc:
            kept.append((start, end))
    return kept


def _merge(intervals):
    merged = []
    for start, end in intervals:
        if merged and start <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], end)
        else:
            merged.append([start, end])
    return merged


def select_segments(sequences, window: float = 2.0, stride: float = 0.5,
                    thresholds: tuple[float, float] = (1e-3, 1e-3),
                    centered: bool = True) -> list[Segment]:
    """Sliding-window scan that keeps and merges informative IMU windows.

    Parameters
    ----------
    sequences : ImuSequence or list of ImuSequence
        One entry per recording; each is scanned independently.
    window, stride : float
        Window length and step in seconds (``window >= 0.5``,
        ``stride <= window``).
    thresholds : (tau_rot, tau_acc)
        A window is kept when both scores reach their threshold.

    Returns
    -------
    list of Segment
        Maximal unions of overlapping kept windows, scored over their full
        span and sorted by descending combined score (ties by sequence id and
        start time).

    Raises
    ------
    EmptySelection
        If no window passes.
    """
    if isinstance(sequences, ImuSequence):
        sequences = [sequences]
    if window < 0.5:
        raise ValueError("window must be at least 0.5 s")
    if not 0 < stride <= window:
        raise ValueError("stride must be positive and no longer than the window")
    tau_rot, tau_acc = thresholds
    segments = []
    for i, seq in enumerate(sequences):
        sid = seq.sequence_id or str(i)
        for start, end in _merge(_scan(seq, window, stride, tau_rot, tau_acc, centered)):
            r, a = excitation_scores(seq.between(start, end), centered)
            segments.append(Segment(sid, float(start), float(end), r, a))
    if not segments:
        raise EmptySelection(
            f"no window passed thresholds tau_rot={tau_rot:g}, tau_acc={tau_acc:g}"
        )
    segments.sort(key=lambda s: (s.sequence_id, s.start))
    segments.sort(key=lambda s: s.score, reverse=True)
    return segments
