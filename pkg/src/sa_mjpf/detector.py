"""Scikit-learn estimator facade over the train/trace pipeline.

``SwitchingDbnDetector`` behaves like the library's other outlier
detectors: ``fit`` on normal data, then ``score_samples`` (higher is more
normal), ``decision_function`` (negative means anomalous) and ``predict``
(+1 normal / -1 anomalous). The richer domain API (models, traces, CSV
export) stays available through ``model_`` and :func:`anomaly_trace`.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, OutlierMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils import check_array

from .gng import GngParams
from .mjpf import AnomalyTrace, MjpfConfig, run_trace
from .model import KINEMATIC, train_model
from .pipeline import Modality, SyncedSeries


class SwitchingDbnDetector(OutlierMixin, BaseEstimator):
    """Anomaly detector built on a switching DBN and a Markov jump
    particle filter.

    Parameters
    ----------
    dt : sampling interval of the rows of X, in seconds.
    modality : which channel pair the two columns represent (xy, sv, sp, vp).
    threshold : Hellinger score above which a sample counts as anomalous.
    max_nodes, epochs : clustering budget for the letter codebooks.
    particles_per_word : particle budget per dictionary word.
    obs_noise : measurement variance of the value block (normalized units).
    deriv_noise_factor : scaling of the derivative-block measurement noise
        relative to pure noise propagation (1.0 = propagated, smaller
        values trust the observed derivative more).
    q_scale : process-noise scale of the per-word dynamics.
    random_state : seed for clustering and the particle filter.
    """

    def __init__(
        self,
        dt=0.1,
        modality="xy",
        threshold=0.3,
        max_nodes=30,
        epochs=10,
        smoothing=1e-3,
        dynamics_mode=KINEMATIC,
        q_scale=1.0,
        particles_per_word=10,
        obs_noise=1e-4,
        deriv_noise_factor=0.15,
        random_state=0,
    ):
        self.dt = dt
        self.modality = modality
        self.threshold = threshold
        self.max_nodes = max_nodes
        self.epochs = epochs
        self.smoothing = smoothing
        self.dynamics_mode = dynamics_mode
        self.q_scale = q_scale
        self.particles_per_word = particles_per_word
        self.obs_noise = obs_noise
        self.deriv_noise_factor = deriv_noise_factor
        self.random_state = random_state

    def _series(self, X) -> SyncedSeries:
        X = check_array(X, dtype=float)
        if X.shape[1] != 2:
            raise ValueError("X must have exactly two channel columns")
        modality = Modality.from_tag(self.modality)
        return SyncedSeries(
            dt=self.dt, t0=0.0, channel_names=modality.channel_pair, values=X
        )

    def fit(self, X, y=None):
        """Learn the switching DBN from a normal-behavior series."""
        series = self._series(X)
        self.model_ = train_model(
            series,
            Modality.from_tag(self.modality),
            gng_params=GngParams(
                max_nodes=self.max_nodes,
                epochs=self.epochs,
                seed=int(self.random_state or 0),
            ),
            smoothing=self.smoothing,
            dynamics_mode=self.dynamics_mode,
            q_scale=self.q_scale,
        )
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("SwitchingDbnDetector is not fitted yet")

    def _mjpf_config(self) -> MjpfConfig:
        kappa = self.deriv_noise_factor
        return MjpfConfig(
            particles_per_word=self.particles_per_word,
            obs_noise=self.obs_noise,
            deriv_obs_noise=2.0 * self.obs_noise / self.dt**2 * kappa**2,
            seed=int(self.random_state or 0),
        )

    def anomaly_trace(self, X) -> AnomalyTrace:
        """Full filter trace over X (length = len(X) - 1)."""
        self._check_fitted()
        return run_trace(
            self.model_, self._mjpf_config(), self._series(X), threshold=self.threshold
        )

    def score_samples(self, X) -> np.ndarray:
        """Negated Hellinger score per row (higher = more normal).

        The first row initializes the filter and scores 0 (no evidence
        against it), keeping the output aligned with the input rows.
        """
        trace = self.anomaly_trace(X)
        return -np.concatenate([[0.0], trace.thetas])

    def decision_function(self, X) -> np.ndarray:
        return self.score_samples(X) + self.threshold

    def predict(self, X) -> np.ndarray:
        """+1 for normal samples, -1 for anomalous ones."""
        return np.where(self.decision_function(X) < 0, -1, 1)
