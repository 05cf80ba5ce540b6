"""Collective awareness: exchange position letter streams between two
agents over a simulated channel and score each timestep against the
coupled co-occurrence matrix (delta = 1 - M[i][j]).

The channel is lossless and ordered; each agent's scorer is independent,
so the channel is the only shared object between the two sides.
"""

from __future__ import annotations

import csv
import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ModelFormatError, SyncError
from .gng import Codebook
from .model import SwitchingDbnModel
from .pipeline import SyncedSeries, apply_normalization
from .vocabulary import CoupledCooccurrenceMatrix, estimate_coupled_cooccurrence

COUPLED_FORMAT_TAG = "sa-mjpf-coupled/1"


@dataclass(frozen=True)
class PositionMessage:
    """One shared observation: an agent's normalized position at a timestep."""

    agent_id: str
    t: int
    position: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))


@dataclass(frozen=True)
class CoupledAnomalySample:
    """delta = 1 - cell_prob, the discrete-level collective anomaly score."""

    t: int
    delta: float
    letter_self: int
    letter_other: int
    cell_prob: float


class SimulatedChannel:
    """In-process FIFO transport with a uniform whole-step latency.

    Messages sent at step t become available at step t + latency_steps.
    Safe for two producers and two consumers as long as each agent's
    stream is sent in timestamp order (FIFO per agent is preserved).
    """

    def __init__(self, latency_steps: int = 0):
        if latency_steps < 0:
            raise SyncError("latency must be >= 0 steps")
        self.latency_steps = latency_steps
        self._queue: deque[tuple[int, PositionMessage]] = deque()

    def send(self, message: PositionMessage) -> None:
        self._queue.append((message.t + self.latency_steps, message))

    def receive(self, now: int) -> list[PositionMessage]:
        """All messages that have arrived by step ``now``, delivery order."""
        ready = [m for d, m in self._queue if d <= now]
        self._queue = deque((d, m) for d, m in self._queue if d > now)
        ready.sort(key=lambda m: m.t)
        return ready


def exchange(
    channel: SimulatedChannel, messages: list[PositionMessage]
) -> list[PositionMessage]:
    """Send all messages and drain everything deliverable, in timestamp order.

    Per-agent FIFO order is preserved (the sort on send timestamps is
    stable and each agent sends monotonically).
    """
    for message in messages:
        channel.send(message)
    horizon = max((m.t for m in messages), default=0)
    return channel.receive(horizon)


@dataclass(frozen=True)
class CoupledModel:
    """Coupled co-occurrence model of one agent pair, both directions.

    ``m_12`` conditions agent-2 letters on agent-1 letters; the score for
    a querying agent always uses the matrix local to it. Normalization
    parameters keep each agent's positions in its own training frame.
    """

    agent_ids: tuple[str, str]
    cb_a1: Codebook
    cb_a2: Codebook
    m_12: CoupledCooccurrenceMatrix
    m_21: CoupledCooccurrenceMatrix
    norm_params_a1: dict[str, tuple[float, float]] = field(default_factory=dict)
    norm_params_a2: dict[str, tuple[float, float]] = field(default_factory=dict)

    def matrix_for(self, agent_index: int) -> CoupledCooccurrenceMatrix:
        return self.m_12 if agent_index == 0 else self.m_21

    def to_json_dict(self) -> dict:
        return {
            "format": COUPLED_FORMAT_TAG,
            "agent_ids": list(self.agent_ids),
            "cb_a1": self.cb_a1.to_json_dict(),
            "cb_a2": self.cb_a2.to_json_dict(),
            "m_12": [[float(v) for v in row] for row in self.m_12.matrix],
            "m_21": [[float(v) for v in row] for row in self.m_21.matrix],
            "smoothing": self.m_12.smoothing,
            "norm_params_a1": {
                k: [float(lo), float(hi)] for k, (lo, hi) in self.norm_params_a1.items()
            },
            "norm_params_a2": {
                k: [float(lo), float(hi)] for k, (lo, hi) in self.norm_params_a2.items()
            },
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "CoupledModel":
        if payload.get("format") != COUPLED_FORMAT_TAG:
            raise ModelFormatError(
                f"expected format {COUPLED_FORMAT_TAG!r}, got {payload.get('format')!r}"
            )
        smoothing = float(payload.get("smoothing", 0.0))
        return cls(
            agent_ids=tuple(payload["agent_ids"]),
            cb_a1=Codebook.from_json_dict(payload["cb_a1"]),
            cb_a2=Codebook.from_json_dict(payload["cb_a2"]),
            m_12=CoupledCooccurrenceMatrix(
                np.asarray(payload["m_12"], dtype=float), smoothing=smoothing
            ),
            m_21=CoupledCooccurrenceMatrix(
                np.asarray(payload["m_21"], dtype=float), smoothing=smoothing
            ),
            norm_params_a1={
                k: (float(lo), float(hi))
                for k, (lo, hi) in payload["norm_params_a1"].items()
            },
            norm_params_a2={
                k: (float(lo), float(hi))
                for k, (lo, hi) in payload["norm_params_a2"].items()
            },
        )


def save_coupled_model(model: CoupledModel, path) -> None:
    Path(path).write_text(
        json.dumps(model.to_json_dict(), sort_keys=True, indent=1) + "\n",
        encoding="utf-8",
    )


def load_coupled_model(path) -> CoupledModel:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return CoupledModel.from_json_dict(payload)


def build_coupled_model(
    model_a1: SwitchingDbnModel,
    model_a2: SwitchingDbnModel,
    series_a1: SyncedSeries,
    series_a2: SyncedSeries,
    agent_ids: tuple[str, str] = ("agent1", "agent2"),
    smoothing: float | None = None,
) -> CoupledModel:
    """Estimate both co-occurrence directions from synchronized position data.

    The position codebooks are the two agents' odometry state codebooks;
    each agent's positions are normalized in its own training frame.
    """
    if len(series_a1) != len(series_a2):
        raise SyncError("agents' position series differ in length")
    if smoothing is None:
        smoothing = model_a1.dictionary.smoothing
    cb1, cb2 = model_a1.cb_state, model_a2.cb_state
    pos1 = apply_normalization(series_a1, model_a1.norm_params).values
    pos2 = apply_normalization(series_a2, model_a2.norm_params).values
    letters1 = cb1.assign(pos1)
    letters2 = cb2.assign(pos2)
    m_12 = estimate_coupled_cooccurrence(
        letters1, letters2, k1=len(cb1), k2=len(cb2), smoothing=smoothing
    )
    m_21 = estimate_coupled_cooccurrence(
        letters2, letters1, k1=len(cb2), k2=len(cb1), smoothing=smoothing
    )
    return CoupledModel(
        agent_ids=agent_ids,
        cb_a1=cb1,
        cb_a2=cb2,
        m_12=m_12,
        m_21=m_21,
        norm_params_a1=model_a1.norm_params,
        norm_params_a2=model_a2.norm_params,
    )


def coupled_score(
    m: CoupledCooccurrenceMatrix,
    cb_self: Codebook,
    cb_other: Codebook,
    pos_self,
    pos_other,
    t: int,
) -> CoupledAnomalySample:
    """Score one timestep: look up the active letter pair's cell probability."""
    i = int(cb_self.assign(np.asarray(pos_self, dtype=float))[0])
    j = int(cb_other.assign(np.asarray(pos_other, dtype=float))[0])
    cell = float(m.matrix[i, j])
    return CoupledAnomalySample(
        t=t, delta=1.0 - cell, letter_self=i, letter_other=j, cell_prob=cell
    )


def run_coupled_trace(
    coupled: CoupledModel,
    series_self: SyncedSeries,
    series_other: SyncedSeries,
    self_index: int = 0,
    latency_steps: int = 0,
) -> list[CoupledAnomalySample]:
    """Score a whole run from the querying agent's side.

    The other agent's positions arrive over a :class:`SimulatedChannel`
    with the given latency, so the sample at step t pairs the local
    position at t with the remote position from t - latency.
    """
    if len(series_self) != len(series_other):
        raise SyncError("agents' series differ in length")
    if self_index == 0:
        cb_self, cb_other = coupled.cb_a1, coupled.cb_a2
        np_self, np_other = coupled.norm_params_a1, coupled.norm_params_a2
    else:
        cb_self, cb_other = coupled.cb_a2, coupled.cb_a1
        np_self, np_other = coupled.norm_params_a2, coupled.norm_params_a1
    m = coupled.matrix_for(self_index)
    pos_self = apply_normalization(series_self, np_self).values
    pos_other = apply_normalization(series_other, np_other).values

    other_id = coupled.agent_ids[1 - self_index]
    channel = SimulatedChannel(latency_steps=latency_steps)
    delivered = exchange(
        channel,
        [PositionMessage(other_id, t, pos_other[t]) for t in range(len(pos_other))],
    )
    by_arrival = {msg.t + latency_steps: msg for msg in delivered}

    samples = []
    for t in range(len(pos_self)):
        msg = by_arrival.get(t)
        if msg is None:
            continue  # nothing received yet (start-up under latency)
        samples.append(coupled_score(m, cb_self, cb_other, pos_self[t], msg.position, t))
    return samples


def write_coupled_csv(path, samples: list[CoupledAnomalySample], t0=0.0, dt=1.0) -> None:
    """Coupled trace export: t, delta, cell_prob, letter_self, letter_other."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "delta", "cell_prob", "letter_self", "letter_other"])
        for s in samples:
            writer.writerow(
                [
                    f"{t0 + dt * s.t:.6f}",
                    f"{s.delta:.9g}",
                    f"{s.cell_prob:.9g}",
                    s.letter_self,
                    s.letter_other,
                ]
            )
