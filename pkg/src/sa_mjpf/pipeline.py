"""Sensor ingestion: CSV loading, time synchronization, normalization and
generalized-state estimation.

All transformations are pure functions on immutable inputs; per-modality
pipelines can safely run in parallel.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import DataError, NormalizationError, SchemaError, SyncError

CHANNEL_NAMES = ("x", "y", "steering", "velocity", "power")

#: Default resampling interval in seconds when none is configured.
DEFAULT_DT = 0.1


class Modality(Enum):
    """A 2-D sensor pairing. The channel pair per tag is fixed."""

    XY = ("x", "y")
    SV = ("steering", "velocity")
    SP = ("steering", "power")
    VP = ("velocity", "power")

    @property
    def channel_pair(self) -> tuple[str, str]:
        return self.value

    @classmethod
    def from_tag(cls, tag: str) -> "Modality":
        try:
            return cls[tag.upper()]
        except KeyError:
            raise SchemaError(f"unknown modality tag {tag!r}") from None


@dataclass(frozen=True)
class RawChannel:
    """One sensor channel as (timestamp, value) samples.

    Timestamps are float seconds and must be strictly increasing; at least
    2 samples are required.
    """

    name: str
    timestamps: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=float)
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "values", v)
        if t.shape != v.shape or t.ndim != 1:
            raise DataError(f"channel {self.name!r}: timestamps/values shape mismatch")
        if t.size < 2:
            raise DataError(f"channel {self.name!r}: fewer than 2 samples")
        diffs = np.diff(t)
        if np.any(diffs <= 0):
            row = int(np.argmax(diffs <= 0)) + 1
            raise DataError(
                f"channel {self.name!r}: timestamps not strictly increasing at row {row}"
            )


@dataclass(frozen=True)
class SyncedSeries:
    """Two channels resampled onto a common uniform grid.

    ``values`` is a T x 2 matrix. ``norm_params`` holds the per-channel
    (min, max) used for normalization; empty until :func:`normalize` runs.
    Test-time data scaled by training parameters may fall outside [0, 1].
    """

    dt: float
    t0: float
    channel_names: tuple[str, str]
    values: np.ndarray
    norm_params: dict[str, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        if self.dt <= 0:
            raise DataError("dt must be positive")
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def timestamps(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self))


@dataclass(frozen=True)
class GeneralizedStateSequence:
    """Per-timestep generalized states: rows are [x1, x2, dx1, dx2].

    Row count is the synced length minus one; the first sample has no
    defined derivative and is dropped.
    """

    gs: np.ndarray
    dt: float
    modality: Modality

    def __len__(self) -> int:
        return self.gs.shape[0]

    @property
    def states(self) -> np.ndarray:
        return self.gs[:, :2]

    @property
    def derivatives(self) -> np.ndarray:
        return self.gs[:, 2:]


def load_csv(path, schema: dict[str, str]) -> list[RawChannel]:
    """Read one CSV file into a RawChannel per ``schema`` entry.

    ``schema`` maps channel names to column names; a ``"t"`` entry names
    the timestamp column (default column ``"t"``).
    """
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: fewer than 2 samples (empty file)") from None
        header = [h.strip() for h in header]
        rows = [row for row in reader if row and any(cell.strip() for cell in row)]

    t_col = schema.get("t", "t")
    col_index = {}
    for channel, column in [("t", t_col)] + [
        (ch, col) for ch, col in schema.items() if ch != "t"
    ]:
        if column not in header:
            raise SchemaError(f"{path}: missing column {column!r}")
        col_index[channel] = header.index(column)

    if len(rows) < 2:
        raise DataError(f"{path}: fewer than 2 samples")

    try:
        data = np.array(
            [[float(row[i]) for i in col_index.values()] for row in rows], dtype=float
        )
    except (ValueError, IndexError) as exc:
        raise DataError(f"{path}: unparseable row ({exc})") from exc

    named = dict(zip(col_index.keys(), data.T))
    t = named.pop("t")
    diffs = np.diff(t)
    if np.any(diffs <= 0):
        row = int(np.argmax(diffs <= 0)) + 2  # +1 for header, +1 for 1-based
        raise DataError(f"{path}: non-monotone timestamp at row {row}")
    return [RawChannel(name, t, values) for name, values in named.items()]


def synchronize(channels: list[RawChannel], dt: float) -> SyncedSeries:
    """Resample two channels onto a shared uniform grid by linear interpolation.

    The grid covers the overlapping time range of the channels, which must
    span at least ``2 * dt``.
    """
    if dt <= 0:
        raise SyncError("dt must be positive")
    if len(channels) != 2:
        raise SyncError(f"expected 2 channels, got {len(channels)}")
    t_start = max(ch.timestamps[0] for ch in channels)
    t_end = min(ch.timestamps[-1] for ch in channels)
    if t_end - t_start < 2 * dt:
        raise SyncError(
            f"channels overlap for {max(t_end - t_start, 0.0):.3f}s, need >= {2 * dt:.3f}s"
        )
    n = int(np.floor((t_end - t_start) / dt)) + 1
    grid = t_start + dt * np.arange(n)
    cols = [np.interp(grid, ch.timestamps, ch.values) for ch in channels]
    return SyncedSeries(
        dt=dt,
        t0=float(t_start),
        channel_names=(channels[0].name, channels[1].name),
        values=np.column_stack(cols),
    )


def normalize(series: SyncedSeries) -> SyncedSeries:
    """Min-max scale each column to [0, 1], recording the scaling parameters.

    Test data must be scaled with the TRAINING parameters (see
    :func:`apply_normalization`); renormalizing test data on its own range
    would hide exactly the deviations the filters look for.
    """
    params = {}
    scaled = np.empty_like(series.values)
    for j, name in enumerate(series.channel_names):
        col = series.values[:, j]
        lo, hi = float(np.min(col)), float(np.max(col))
        if hi <= lo:
            raise NormalizationError(f"column {name!r} is constant; cannot normalize")
        params[name] = (lo, hi)
        scaled[:, j] = (col - lo) / (hi - lo)
    return replace(series, values=scaled, norm_params=params)


def apply_normalization(
    series: SyncedSeries, norm_params: dict[str, tuple[float, float]]
) -> SyncedSeries:
    """Scale a series with previously learned (min, max) parameters.

    Values outside the training range map outside [0, 1]; that is
    intentional.
    """
    scaled = np.empty_like(series.values)
    for j, name in enumerate(series.channel_names):
        if name not in norm_params:
            raise NormalizationError(f"no normalization parameters for column {name!r}")
        lo, hi = norm_params[name]
        scaled[:, j] = (series.values[:, j] - lo) / (hi - lo)
    return replace(series, values=scaled, norm_params=dict(norm_params))


def denormalize(series: SyncedSeries) -> SyncedSeries:
    """Invert :func:`normalize` using the series' own norm_params."""
    raw = np.empty_like(series.values)
    for j, name in enumerate(series.channel_names):
        lo, hi = series.norm_params[name]
        raw[:, j] = series.values[:, j] * (hi - lo) + lo
    return replace(series, values=raw, norm_params={})


def estimate_generalized_states(
    series: SyncedSeries, modality: Modality
) -> GeneralizedStateSequence:
    """Augment each state sample with its first backward difference.

    The derivative at step t is (X_t - X_{t-1}) / dt: the innovation of a
    zero-force filter whose prediction is X_t = X_{t-1}. The first sample
    has no derivative and is dropped rather than padded, so the output has
    one row fewer than the input.
    """
    if len(series) < 2:
        raise DataError("need at least 2 samples to estimate generalized states")
    x = series.values
    dx = np.diff(x, axis=0) / series.dt
    gs = np.hstack([x[1:], dx])
    if not np.all(np.isfinite(gs)):
        raise DataError("non-finite values in generalized states")
    return GeneralizedStateSequence(gs=gs, dt=series.dt, modality=modality)


def series_to_channels(series: SyncedSeries) -> list[RawChannel]:
    """View a synced series as raw channels (e.g. to re-synchronize)."""
    t = series.timestamps
    return [
        RawChannel(name, t, series.values[:, j])
        for j, name in enumerate(series.channel_names)
    ]


def write_gs_csv(path, gs_seq: GeneralizedStateSequence, t0: float = 0.0) -> None:
    """Write generalized states as CSV with columns t, x1, x2, dx1, dx2."""
    t = t0 + gs_seq.dt * (1 + np.arange(len(gs_seq)))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "x1", "x2", "dx1", "dx2"])
        for ti, row in zip(t, gs_seq.gs):
            writer.writerow([f"{ti:.6f}"] + [f"{v:.9g}" for v in row])


def write_series_csv(path, series: SyncedSeries) -> None:
    """Write a synced series as CSV with columns t, <ch1>, <ch2>."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", *series.channel_names])
        for ti, row in zip(series.timestamps, series.values):
            writer.writerow([f"{ti:.6f}"] + [f"{v:.9g}" for v in row])
