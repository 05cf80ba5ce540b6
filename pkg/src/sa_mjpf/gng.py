"""Growing neural gas clustering of generalized-state components.

The trained codebook is the set of "letters" of one modality: each node
carries the mean, covariance and sample count of the data it won in the
final hard assignment. :class:`GrowingNeuralGas` exposes the algorithm
behind the scikit-learn estimator API so it composes with pipelines and
model-selection tooling; :func:`train_gng` / :func:`assign_letter` are the
equivalent functional surface.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils import check_array, check_random_state

from .errors import ConfigError, DataError

#: Added to every node covariance so downstream Gaussians are proper.
COV_REGULARIZATION = 1e-6

STATE, DERIVATIVE = "STATE", "DERIVATIVE"


@dataclass(frozen=True)
class GngParams:
    """Training hyperparameters. The clustering literature gives standard
    settings; none are dictated by the data, so all are configurable."""

    max_nodes: int = 30
    lambda_insert: int = 100
    eps_b: float = 0.2
    eps_n: float = 0.006
    a_max: int = 50
    alpha: float = 0.5
    d_decay: float = 0.995
    epochs: int = 10
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.eps_n <= self.eps_b < 1):
            raise ConfigError("require 0 < eps_n <= eps_b < 1")
        if self.max_nodes < 2:
            raise ConfigError("max_nodes must be >= 2")
        if min(self.lambda_insert, self.a_max, self.epochs) < 1:
            raise ConfigError("lambda_insert, a_max and epochs must be positive")


@dataclass(frozen=True)
class Codebook:
    """Letters of one clustering space: node statistics plus topology edges.

    Immutable after construction; lookups are concurrency-safe.
    """

    means: np.ndarray  # (K, 2)
    covariances: np.ndarray  # (K, 2, 2)
    counts: np.ndarray  # (K,)
    edges: frozenset[tuple[int, int]] = field(default_factory=frozenset)
    space_tag: str = STATE

    def __post_init__(self):
        object.__setattr__(self, "means", np.asarray(self.means, dtype=float))
        object.__setattr__(self, "covariances", np.asarray(self.covariances, dtype=float))
        object.__setattr__(self, "counts", np.asarray(self.counts, dtype=int))
        if len(self.means) < 1:
            raise DataError("codebook must contain at least one node")
        for i, j in self.edges:
            if not (0 <= i < len(self.means) and 0 <= j < len(self.means)):
                raise DataError(f"edge ({i},{j}) references a missing node")

    def __len__(self) -> int:
        return len(self.means)

    def assign(self, samples: np.ndarray) -> np.ndarray:
        """Nearest node id per sample; ties break to the lowest id."""
        samples = np.atleast_2d(np.asarray(samples, dtype=float))
        if not np.all(np.isfinite(samples)):
            raise DataError("non-finite sample passed to assign")
        d2 = ((samples[:, None, :] - self.means[None, :, :]) ** 2).sum(axis=2)
        return np.argmin(d2, axis=1)

    def to_json_dict(self) -> dict:
        return {
            "space_tag": self.space_tag,
            "nodes": [
                {
                    "id": int(i),
                    "mean": [float(v) for v in self.means[i]],
                    "cov": [[float(v) for v in row] for row in self.covariances[i]],
                    "count": int(self.counts[i]),
                }
                for i in range(len(self))
            ],
            "edges": sorted([int(i), int(j)] for i, j in self.edges),
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "Codebook":
        nodes = sorted(payload["nodes"], key=lambda n: n["id"])
        if [n["id"] for n in nodes] != list(range(len(nodes))):
            raise DataError("codebook node ids must be 0..K-1")
        return cls(
            means=np.array([n["mean"] for n in nodes], dtype=float),
            covariances=np.array([n["cov"] for n in nodes], dtype=float),
            counts=np.array([n["count"] for n in nodes], dtype=int),
            edges=frozenset(tuple(sorted(map(int, e))) for e in payload["edges"]),
            space_tag=payload["space_tag"],
        )


class GrowingNeuralGas(ClusterMixin, BaseEstimator):
    """Incremental topology-learning clusterer with a growth cap.

    The network starts with two nodes and grows by splitting the
    highest-error region every ``lambda_insert`` signals until
    ``max_nodes`` is reached or the epoch budget runs out. Although the
    algorithm does not inherently require a preset number of units, the
    cap is operationally necessary and is exposed as a parameter.

    After the online phase, node statistics are re-estimated from the hard
    nearest-node partition of the training data (empty nodes deleted,
    repeated until every node mean is its own nearest centroid), so the
    reported means/covariances describe the final partition exactly.

    Parameters mirror :class:`GngParams`; ``random_state`` follows the
    scikit-learn convention.
    """

    def __init__(
        self,
        max_nodes=30,
        lambda_insert=100,
        eps_b=0.2,
        eps_n=0.006,
        a_max=50,
        alpha=0.5,
        d_decay=0.995,
        epochs=10,
        random_state=None,
    ):
        self.max_nodes = max_nodes
        self.lambda_insert = lambda_insert
        self.eps_b = eps_b
        self.eps_n = eps_n
        self.a_max = a_max
        self.alpha = alpha
        self.d_decay = d_decay
        self.epochs = epochs
        self.random_state = random_state

    # -- scikit-learn API ---------------------------------------------------

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        if X.shape[0] < 2:
            raise DataError("need at least 2 samples to train")
        GngParams(
            max_nodes=self.max_nodes,
            lambda_insert=self.lambda_insert,
            eps_b=self.eps_b,
            eps_n=self.eps_n,
            a_max=self.a_max,
            alpha=self.alpha,
            d_decay=self.d_decay,
            epochs=self.epochs,
        )
        rng = check_random_state(self.random_state)
        positions, edge_age = self._online_phase(X, rng)
        means, covs, counts, labels, keep = self._reestimate(X, positions)
        edges = self._surviving_edges(edge_age, keep)
        self.codebook_ = Codebook(
            means=means, covariances=covs, counts=counts, edges=edges
        )
        self.cluster_centers_ = self.codebook_.means
        self.labels_ = labels
        return self

    def predict(self, X):
        if not hasattr(self, "codebook_"):
            raise NotFittedError("GrowingNeuralGas is not fitted yet")
        X = check_array(X, dtype=float, ensure_all_finite=False)
        return self.codebook_.assign(X)

    # -- internals ----------------------------------------------------------

    def _online_phase(self, X, rng):
        m = self.max_nodes
        d = X.shape[1]
        pos = np.zeros((m, d))
        active = np.zeros(m, dtype=bool)
        error = np.zeros(m)
        age = np.full((m, m), -1, dtype=np.int32)  # -1 = no edge

        first, second = rng.choice(len(X), size=2, replace=False)
        pos[0], pos[1] = X[first], X[second]
        active[0] = active[1] = True
        ids = np.arange(m)

        signal = 0
        for _ in range(self.epochs):
            order = rng.permutation(len(X))
            for idx in order:
                x = X[idx]
                act = ids[active]
                d2 = ((pos[act] - x) ** 2).sum(axis=1)
                ranking = np.lexsort((act, d2))
                s1 = act[ranking[0]]
                s2 = act[ranking[1]]

                nbrs = ids[age[s1] >= 0]
                age[s1, nbrs] += 1
                age[nbrs, s1] += 1
                error[s1] += d2[ranking[0]]
                pos[s1] += self.eps_b * (x - pos[s1])
                if nbrs.size:
                    pos[nbrs] += self.eps_n * (x - pos[nbrs])
                age[s1, s2] = age[s2, s1] = 0

                expired = age > self.a_max
                if expired.any():
                    age[expired] = -1
                    isolated = active & ~(age >= 0).any(axis=1)
                    # never drop below two nodes
                    if isolated.any() and active.sum() - isolated.sum() >= 2:
                        active[isolated] = False
                        error[isolated] = 0.0

                signal += 1
                if signal % self.lambda_insert == 0 and active.sum() < m:
                    self._insert_node(pos, active, error, age, ids)
                error[active] *= self.d_decay
        return pos[active], age[np.ix_(active, active)]

    def _insert_node(self, pos, active, error, age, ids):
        act = ids[active]
        q = act[np.argmax(error[act])]
        q_nbrs = ids[age[q] >= 0]
        if q_nbrs.size == 0:
            return
        f = q_nbrs[np.argmax(error[q_nbrs])]
        r = ids[~active][0]
        active[r] = True
        pos[r] = 0.5 * (pos[q] + pos[f])
        age[q, f] = age[f, q] = -1
        age[q, r] = age[r, q] = 0
        age[f, r] = age[r, f] = 0
        error[q] *= self.alpha
        error[f] *= self.alpha
        error[r] = error[q]

    def _reestimate(self, X, positions, max_rounds=200):
        """Hard-assign, drop empty nodes and recompute means until every
        mean is its own nearest centroid."""
        means = positions.copy()
        keep_orig = np.arange(len(positions))
        for _ in range(max_rounds):
            d2 = ((X[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
            labels = np.argmin(d2, axis=1)
            counts = np.bincount(labels, minlength=len(means))
            nonempty = counts > 0
            if not nonempty.all():
                remap = -np.ones(len(means), dtype=int)
                remap[nonempty] = np.arange(nonempty.sum())
                means = means[nonempty]
                keep_orig = keep_orig[nonempty]
                labels = remap[labels]
                counts = counts[nonempty]
            new_means = np.vstack(
                [X[labels == k].mean(axis=0) for k in range(len(means))]
            )
            stable = np.allclose(new_means, means, atol=0.0, rtol=0.0)
            means = new_means
            self_d2 = ((means[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
            if stable and np.array_equal(np.argmin(self_d2, axis=1), np.arange(len(means))):
                break
        d2 = ((X[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
        labels = np.argmin(d2, axis=1)
        counts = np.bincount(labels, minlength=len(means))
        covs = np.empty((len(means), X.shape[1], X.shape[1]))
        eye = np.eye(X.shape[1])
        for k in range(len(means)):
            pts = X[labels == k] - means[k]
            covs[k] = (pts.T @ pts) / len(pts) + COV_REGULARIZATION * eye
        return means, covs, counts, labels, keep_orig

    @staticmethod
    def _surviving_edges(edge_age, keep):
        remap = {orig: new for new, orig in enumerate(keep)}
        edges = set()
        rows, cols = np.nonzero(edge_age >= 0)
        for i, j in zip(rows, cols):
            if i < j and i in remap and j in remap:
                edges.add((remap[i], remap[j]))
        return frozenset(edges)


def train_gng(data: np.ndarray, params: GngParams, space_tag: str = STATE) -> Codebook:
    """Train a codebook on a T x 2 matrix. Deterministic for a fixed seed."""
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[0] < 2:
        raise DataError("training data must be a T x d matrix with T >= 2")
    if not np.all(np.isfinite(data)):
        raise DataError("training data contains non-finite values")
    est = GrowingNeuralGas(
        max_nodes=params.max_nodes,
        lambda_insert=params.lambda_insert,
        eps_b=params.eps_b,
        eps_n=params.eps_n,
        a_max=params.a_max,
        alpha=params.alpha,
        d_decay=params.d_decay,
        epochs=params.epochs,
        random_state=np.random.RandomState(params.seed),
    ).fit(data)
    cb = est.codebook_
    return Codebook(
        means=cb.means,
        covariances=cb.covariances,
        counts=cb.counts,
        edges=cb.edges,
        space_tag=space_tag,
    )


def assign_letter(codebook: Codebook, sample: np.ndarray) -> int:
    """Nearest node id for one sample (Euclidean; ties to the lowest id)."""
    return int(codebook.assign(np.asarray(sample, dtype=float))[0])
