"""Discrete vocabulary: words from time co-occurrence of letters, word
transition statistics, and the two-agent coupled co-occurrence matrix.

A word is exactly the pair (state letter, derivative letter) observed at
one timestep; only pairs seen in training enter the dictionary. Unseen
pairs map to the :data:`NOVEL` sentinel at lookup time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, SyncError
from .gng import Codebook
from .pipeline import GeneralizedStateSequence, Modality

#: Sentinel returned by lookup_word for letter pairs never seen in training.
NOVEL = -1

#: Additive smoothing applied per cell before row normalization. Prevents
#: zero-probability lock-out of rare but legal transitions; set to 0.0 to
#: reproduce raw counts.
DEFAULT_SMOOTHING = 1e-3


@dataclass(frozen=True)
class Word:
    """One switching regime: a letter pair with its empirical statistics."""

    label: int
    state_letter: int
    deriv_letter: int
    mean_velocity: np.ndarray
    count: int

    def __post_init__(self):
        object.__setattr__(
            self, "mean_velocity", np.asarray(self.mean_velocity, dtype=float)
        )


@dataclass(frozen=True)
class Dictionary:
    """All observed words of one modality plus their transition matrix."""

    words: tuple[Word, ...]
    transition: np.ndarray  # (K, K), row-stochastic
    modality: Modality
    smoothing: float = DEFAULT_SMOOTHING
    _pair_index: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "transition", np.asarray(self.transition, dtype=float))
        object.__setattr__(
            self,
            "_pair_index",
            {(w.state_letter, w.deriv_letter): w.label for w in self.words},
        )
        k = len(self.words)
        if self.transition.shape != (k, k):
            raise DataError(
                f"transition matrix shape {self.transition.shape} != ({k}, {k})"
            )
        if k and not np.allclose(self.transition.sum(axis=1), 1.0, atol=1e-9):
            raise DataError("transition matrix rows must sum to 1")

    def __len__(self) -> int:
        return len(self.words)

    def to_json_dict(self) -> dict:
        return {
            "modality": self.modality.name,
            "smoothing": self.smoothing,
            "words": [
                {
                    "label": w.label,
                    "state_letter": w.state_letter,
                    "deriv_letter": w.deriv_letter,
                    "mean_velocity": [float(v) for v in w.mean_velocity],
                    "count": w.count,
                }
                for w in self.words
            ],
            "transition": [[float(v) for v in row] for row in self.transition],
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "Dictionary":
        words = tuple(
            Word(
                label=int(w["label"]),
                state_letter=int(w["state_letter"]),
                deriv_letter=int(w["deriv_letter"]),
                mean_velocity=np.asarray(w["mean_velocity"], dtype=float),
                count=int(w["count"]),
            )
            for w in payload["words"]
        )
        return cls(
            words=words,
            transition=np.asarray(payload["transition"], dtype=float),
            modality=Modality.from_tag(payload["modality"]),
            smoothing=float(payload.get("smoothing", DEFAULT_SMOOTHING)),
        )


@dataclass(frozen=True)
class CoupledCooccurrenceMatrix:
    """P(other agent's position letter | own position letter), row-conditional."""

    matrix: np.ndarray  # (m_rows, n_cols)
    smoothing: float = DEFAULT_SMOOTHING

    def __post_init__(self):
        object.__setattr__(self, "matrix", np.asarray(self.matrix, dtype=float))
        if self.matrix.ndim != 2:
            raise DataError("co-occurrence matrix must be 2-D")
        if not np.allclose(self.matrix.sum(axis=1), 1.0, atol=1e-9):
            raise DataError("co-occurrence matrix rows must sum to 1")

    @property
    def m_rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_cols(self) -> int:
        return self.matrix.shape[1]


def build_words(
    gs: GeneralizedStateSequence,
    cb_state: Codebook,
    cb_deriv: Codebook,
    smoothing: float = DEFAULT_SMOOTHING,
) -> tuple[Dictionary, np.ndarray]:
    """Pair the state and derivative letters active at each timestep.

    Returns the dictionary (words labeled in order of first occurrence,
    with the transition matrix estimated from the word sequence) and the
    per-timestep label sequence.
    """
    if len(gs) == 0:
        raise DataError("empty generalized-state sequence")
    state_letters = cb_state.assign(gs.states)
    deriv_letters = cb_deriv.assign(gs.derivatives)

    pair_to_label: dict[tuple[int, int], int] = {}
    labels = np.empty(len(gs), dtype=int)
    for t, pair in enumerate(zip(state_letters.tolist(), deriv_letters.tolist())):
        if pair not in pair_to_label:
            pair_to_label[pair] = len(pair_to_label)
        labels[t] = pair_to_label[pair]

    words = []
    for (s, d), label in pair_to_label.items():
        mask = labels == label
        words.append(
            Word(
                label=label,
                state_letter=int(s),
                deriv_letter=int(d),
                mean_velocity=gs.derivatives[mask].mean(axis=0),
                count=int(mask.sum()),
            )
        )
    transition = (
        estimate_transition_matrix(labels, len(words), smoothing=smoothing)
        if len(labels) >= 2
        else np.ones((len(words), len(words))) / len(words)
    )
    dictionary = Dictionary(
        words=tuple(words),
        transition=transition,
        modality=gs.modality,
        smoothing=smoothing,
    )
    return dictionary, labels


def estimate_transition_matrix(
    word_sequence, k: int, smoothing: float = DEFAULT_SMOOTHING
) -> np.ndarray:
    """Row-normalized first-order transition counts with additive smoothing.

    Rows with no observations and no smoothing fall back to uniform so the
    result is always row-stochastic.
    """
    if k <= 0:
        raise DataError("need at least one word")
    seq = np.asarray(word_sequence, dtype=int)
    if seq.size < 2:
        raise DataError("need a sequence of length >= 2")
    if seq.min() < 0 or seq.max() >= k:
        raise DataError("word labels out of range")
    counts = np.zeros((k, k))
    np.add.at(counts, (seq[:-1], seq[1:]), 1.0)
    counts += smoothing
    row_sums = counts.sum(axis=1, keepdims=True)
    empty = row_sums[:, 0] == 0
    counts[empty] = 1.0
    row_sums[empty] = k
    return counts / row_sums


def estimate_coupled_cooccurrence(
    letters_a1,
    letters_a2,
    k1: int | None = None,
    k2: int | None = None,
    smoothing: float = DEFAULT_SMOOTHING,
) -> CoupledCooccurrenceMatrix:
    """P(agent-2 letter | agent-1 letter) from same-timestep co-activations.

    The streams must be synchronized (same length). Letter counts default
    to max label + 1 but should be passed from the codebooks so letters
    never observed in the overlap still get (uniform) rows.
    """
    a1 = np.asarray(letters_a1, dtype=int)
    a2 = np.asarray(letters_a2, dtype=int)
    if a1.shape != a2.shape:
        raise SyncError(f"letter streams differ in length: {a1.size} vs {a2.size}")
    if a1.size < 1:
        raise DataError("need at least one co-activation")
    k1 = int(k1) if k1 is not None else int(a1.max()) + 1
    k2 = int(k2) if k2 is not None else int(a2.max()) + 1
    counts = np.zeros((k1, k2))
    np.add.at(counts, (a1, a2), 1.0)
    counts += smoothing
    row_sums = counts.sum(axis=1, keepdims=True)
    empty = row_sums[:, 0] == 0
    counts[empty] = 1.0
    row_sums[empty] = k2
    return CoupledCooccurrenceMatrix(matrix=counts / row_sums, smoothing=smoothing)


def lookup_word(dictionary: Dictionary, state_letter: int, deriv_letter: int) -> int:
    """Label of the exact letter pair, or :data:`NOVEL` if never trained."""
    return dictionary._pair_index.get((int(state_letter), int(deriv_letter)), NOVEL)
