"""Detection metrics over anomaly traces and ground-truth windows.

A detection is a run of at least ``min_run`` consecutive super-threshold
samples; requiring consecutive samples suppresses single-sample noise
spikes. Recall is the fraction of truth windows containing at least one
such run; the false-alarm rate counts runs per minute of normal (outside
window) time. The paper-style plots carry no quantitative recall/false
alarm numbers, so these metrics are this package's own formalization.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EvalError


def find_runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """(start, length) of every maximal run of True values."""
    mask = np.asarray(mask, dtype=bool)
    if mask.size == 0:
        return []
    padded = np.diff(np.concatenate([[0], mask.astype(int), [0]]))
    starts = np.nonzero(padded == 1)[0]
    ends = np.nonzero(padded == -1)[0]
    return [(int(s), int(e - s)) for s, e in zip(starts, ends)]


def super_threshold_runs(
    thetas: np.ndarray, threshold: float, min_run: int
) -> list[tuple[int, int]]:
    """Runs of >= min_run consecutive samples with theta > threshold."""
    return [
        (s, n) for s, n in find_runs(np.asarray(thetas) > threshold) if n >= min_run
    ]


def calibrate_threshold(thetas: np.ndarray, percentile: float = 95.0) -> float:
    """Percentile-based threshold from a held-out normal trace.

    An explicitly labeled approximation of choosing the smallest score
    that still covers the normal evidence; reported alongside the fixed
    default, never silently substituted for it.
    """
    return float(np.percentile(np.asarray(thetas, dtype=float), percentile))


@dataclass(frozen=True)
class TraceEvaluation:
    """Metrics of one anomaly trace against its agent's truth windows."""

    name: str
    n_windows: int
    n_detected: int
    false_alarm_runs: int
    false_alarms_per_minute: float
    mean_theta_inside: float
    mean_theta_outside: float
    per_sample_ms: float = float("nan")

    @property
    def recall(self) -> float:
        return self.n_detected / self.n_windows if self.n_windows else 0.0

    def to_json_dict(self) -> dict:
        return {
            "name": self.name,
            "n_windows": self.n_windows,
            "n_detected": self.n_detected,
            "recall": self.recall,
            "false_alarm_runs": self.false_alarm_runs,
            "false_alarms_per_minute": self.false_alarms_per_minute,
            "mean_theta_inside": self.mean_theta_inside,
            "mean_theta_outside": self.mean_theta_outside,
            "per_sample_ms": self.per_sample_ms,
        }


@dataclass
class DetectionReport:
    threshold: float
    min_run: int
    traces: list[TraceEvaluation] = field(default_factory=list)
    calibrated_threshold: float | None = None

    def to_json_dict(self) -> dict:
        payload = {
            "threshold": self.threshold,
            "min_run": self.min_run,
            "traces": [t.to_json_dict() for t in self.traces],
        }
        if self.calibrated_threshold is not None:
            payload["calibrated_threshold"] = self.calibrated_threshold
        return payload

    def write_json(self, path) -> None:
        Path(path).write_text(
            json.dumps(self.to_json_dict(), indent=1, sort_keys=True) + "\n",
            encoding="utf-8",
        )


def evaluate_trace(
    times: np.ndarray,
    thetas: np.ndarray,
    windows: list[tuple[float, float]],
    threshold: float,
    min_run: int = 3,
    name: str = "trace",
    per_sample_ms: float = float("nan"),
) -> TraceEvaluation:
    """Score one trace. Windows are half-open [t_start, t_end) in the same
    time base as ``times``; a window with no overlap is a misalignment."""
    times = np.asarray(times, dtype=float)
    thetas = np.asarray(thetas, dtype=float)
    if times.shape != thetas.shape:
        raise EvalError("times and thetas differ in length")
    if times.size == 0:
        raise EvalError("empty trace")
    dt = float(np.median(np.diff(times))) if times.size > 1 else 1.0

    inside_any = np.zeros(times.size, dtype=bool)
    n_detected = 0
    for t0, t1 in windows:
        inside = (times >= t0) & (times < t1)
        if not inside.any():
            raise EvalError(
                f"truth window [{t0:.2f}, {t1:.2f}) has no samples in trace {name!r}"
            )
        inside_any |= inside
        if super_threshold_runs(np.where(inside, thetas, 0.0), threshold, min_run):
            n_detected += 1

    outside = ~inside_any
    fa_runs = super_threshold_runs(np.where(outside, thetas, 0.0), threshold, min_run)
    normal_minutes = float(outside.sum()) * dt / 60.0
    return TraceEvaluation(
        name=name,
        n_windows=len(windows),
        n_detected=n_detected,
        false_alarm_runs=len(fa_runs),
        false_alarms_per_minute=len(fa_runs) / normal_minutes if normal_minutes else 0.0,
        mean_theta_inside=float(thetas[inside_any].mean()) if inside_any.any() else float("nan"),
        mean_theta_outside=float(thetas[outside].mean()) if outside.any() else float("nan"),
        per_sample_ms=per_sample_ms,
    )
