"""Markov jump particle filter: an SIR particle filter over words, each
particle carrying a Kalman belief over generalized states, with a
Hellinger-distance abnormality score per step.

The filter observes the full generalized state: each incoming channel
measurement is augmented with its finite difference, so the evidence at
step t is the 4-vector [x1, x2, dx1, dx2] and the observation model is
identity with block-diagonal noise. Derivative evidence is what separates
untrained maneuvers from trained regimes whose values merely drift.

One filter instance is single-writer; the per-particle inner loops are
vectorized over the whole particle bank. The model is shared read-only, so
many filters (one per modality or agent) can run independently.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, FilterDivergenceError, ModelError
from .model import SwitchingDbnModel
from .pipeline import Modality, SyncedSeries, apply_normalization
from .vocabulary import NOVEL, lookup_word

LOG_2PI = math.log(2.0 * math.pi)


def bhattacharyya_gaussian(mean1, cov1, mean2, cov2) -> float:
    """Closed-form Bhattacharyya coefficient of two Gaussians.

    BC = exp(-D_B) with
    D_B = (1/8) dm' S^-1 dm + (1/2) ln(det S / sqrt(det C1 det C2)),
    S = (C1 + C2) / 2. Symmetric in its arguments; 1.0 iff the densities
    coincide.
    """
    m1 = np.atleast_1d(np.asarray(mean1, dtype=float))
    m2 = np.atleast_1d(np.asarray(mean2, dtype=float))
    c1 = np.atleast_2d(np.asarray(cov1, dtype=float))
    c2 = np.atleast_2d(np.asarray(cov2, dtype=float))
    avg = 0.5 * (c1 + c2)
    dm = m1 - m2
    sign, logdet_avg = np.linalg.slogdet(avg)
    if sign <= 0:
        raise ValueError("average covariance is singular; regularize upstream")
    maha = float(dm @ np.linalg.solve(avg, dm))
    _, logdet1 = np.linalg.slogdet(c1)
    _, logdet2 = np.linalg.slogdet(c2)
    d_b = 0.125 * maha + 0.5 * (logdet_avg - 0.5 * (logdet1 + logdet2))
    return float(np.exp(-d_b))


def hellinger_from_bc(bc: float) -> float:
    """theta = sqrt(1 - lambda), clipped against floating-point overshoot."""
    return math.sqrt(min(max(1.0 - bc, 0.0), 1.0))


def systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Systematic resampling: returns the selected particle indices."""
    n = len(weights)
    positions = (rng.random() + np.arange(n)) / n
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0
    return np.searchsorted(cumulative, positions)


@dataclass(frozen=True)
class MjpfConfig:
    """Filter configuration.

    The particle count is proportional to the number of dynamic models
    (particles_per_word x K). ``obs_noise`` is the measurement variance of
    the state block (scalar or 2x2). ``deriv_obs_noise`` is the variance
    assigned to the finite-difference block; when None it defaults to the
    propagated value 2 * obs_noise / dt^2, which is conservative (it
    treats the derivative as pure noise pass-through). Tighter values make
    the derivative evidence informative.
    """

    particles_per_word: int = 10
    resample_threshold: float = 0.5
    obs_noise: np.ndarray = 1e-4
    deriv_obs_noise: np.ndarray | None = None
    seed: int = 0
    reinit_on_divergence: bool = True

    def __post_init__(self):
        if self.particles_per_word < 1:
            raise ConfigError("particles_per_word must be >= 1")
        if not (0 < self.resample_threshold <= 1):
            raise ConfigError("resample_threshold must be in (0, 1]")
        object.__setattr__(self, "obs_noise", self._as_block(self.obs_noise))
        if self.deriv_obs_noise is not None:
            object.__setattr__(
                self, "deriv_obs_noise", self._as_block(self.deriv_obs_noise)
            )

    @staticmethod
    def _as_block(value) -> np.ndarray:
        r = np.asarray(value, dtype=float)
        if r.ndim == 0:
            r = float(r) * np.eye(2)
        if r.shape != (2, 2):
            raise ConfigError("noise blocks must be scalars or 2x2 matrices")
        return r

    def full_r(self, dt: float) -> np.ndarray:
        """Assemble the 4x4 measurement covariance for sampling interval dt."""
        deriv = self.deriv_obs_noise
        if deriv is None:
            deriv = 2.0 * self.obs_noise / dt**2
        r = np.zeros((4, 4))
        r[:2, :2] = self.obs_noise
        r[2:, 2:] = deriv
        return r


@dataclass(frozen=True)
class Particle:
    """Read-only view of one particle (the filter stores the bank as arrays)."""

    word: int
    weight: float
    belief_mean: np.ndarray
    belief_cov: np.ndarray


@dataclass(frozen=True)
class AnomalySample:
    """Per-step filter output. ``lam`` is the Bhattacharyya coefficient;
    theta = sqrt(1 - lam) is the Hellinger distance in [0, 1]."""

    t: int
    theta: float
    lam: float
    map_word: int
    novel_word: bool
    state_estimate: np.ndarray


@dataclass
class AnomalyTrace:
    """Time-ordered anomaly samples for one modality run."""

    samples: list[AnomalySample]
    threshold: float = 0.3
    modality: Modality | None = None
    truth_windows: list[tuple[float, float]] | None = None
    t0: float = 0.0
    dt: float = 1.0
    per_sample_ms: float = float("nan")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def thetas(self) -> np.ndarray:
        return np.array([s.theta for s in self.samples])

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.array([s.t for s in self.samples])

    def write_csv(self, path) -> None:
        """Plot-ready export: t, theta, lambda, map_word, novel_word, x1..dx2."""
        import csv

        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["t", "theta", "lambda", "map_word", "novel_word",
                 "x1", "x2", "dx1", "dx2"]
            )
            for s in self.samples:
                writer.writerow(
                    [
                        f"{self.t0 + self.dt * s.t:.6f}",
                        f"{s.theta:.9g}",
                        f"{s.lam:.9g}",
                        s.map_word,
                        int(s.novel_word),
                        *(f"{v:.9g}" for v in s.state_estimate),
                    ]
                )


class MarkovJumpParticleFilter:
    """Filter state over one modality's switching DBN model.

    Each particle holds a word hypothesis and a Gaussian belief over the
    4-D generalized state. Steps follow the SIR scheme: sample the next
    word from the transition row (bootstrap proposal), Kalman-predict with
    that word's dynamics, score the observed generalized state against the
    moment-matched predictive mixture, Kalman-update, reweight, and
    resample when the effective sample size drops below the threshold.

    If every weight underflows to zero the filter reinitializes around the
    current observation and reports maximal surprise for that step instead
    of crashing mid-trace (disable via ``reinit_on_divergence`` to get a
    FilterDivergenceError).
    """

    def __init__(self, model: SwitchingDbnModel, config: MjpfConfig, z0):
        if model.k_words == 0:
            raise ModelError("model has an empty dictionary")
        self.model = model
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        k = model.k_words

        # per-word stacks, indexed by word label
        self._A = np.stack([model.dynamics[w].A for w in range(k)])
        self._Q = np.stack([model.dynamics[w].Q for w in range(k)])
        self._BU = np.stack(
            [model.dynamics[w].B @ model.dynamics[w].U for w in range(k)]
        )
        self._U = np.stack([model.dynamics[w].U for w in range(k)])
        init_covs = np.zeros((k, 4, 4))
        for w, word in enumerate(model.dictionary.words):
            init_covs[w, :2, :2] = model.cb_state.covariances[word.state_letter]
            init_covs[w, 2:, 2:] = model.cb_deriv.covariances[word.deriv_letter]
        self._init_cov = init_covs
        self._cum_transition = np.cumsum(model.dictionary.transition, axis=1)
        self._R = config.full_r(model.dt)

        self.n_particles = config.particles_per_word * k
        z0 = np.asarray(z0, dtype=float)
        self._prev_z = z0
        self._reinitialize(z0)
        self.divergence_count = 0

    # -- public API -----------------------------------------------------------

    @property
    def weights(self) -> np.ndarray:
        return self._weights.copy()

    @property
    def ess(self) -> float:
        return float(1.0 / np.sum(self._weights**2))

    def particles(self) -> list[Particle]:
        return [
            Particle(int(w), float(wt), m.copy(), c.copy())
            for w, wt, m, c in zip(
                self._words, self._weights, self._means, self._covs
            )
        ]

    def state_estimate(self) -> np.ndarray:
        return self._weights @ self._means

    def step(self, z, t: int = 0) -> AnomalySample:
        """Advance one timestep on the 2-D channel measurement ``z``
        (normalized with the model's training parameters)."""
        z = np.asarray(z, dtype=float)
        if z.shape != (2,) or not np.all(np.isfinite(z)):
            raise DataError(f"observation at step {t} must be a finite 2-vector")
        deriv = (z - self._prev_z) / self.model.dt
        z_full = np.concatenate([z, deriv])
        novel = self._is_novel_pair(z, deriv)

        # (1) discrete prediction: bootstrap sampling from the transition rows
        u = self.rng.random(self.n_particles)
        rows = self._cum_transition[self._words]
        self._words = np.minimum(
            (rows < u[:, None]).sum(axis=1), self.model.k_words - 1
        )

        # (2) continuous prediction per particle
        A = self._A[self._words]
        self._means = np.einsum("nij,nj->ni", A, self._means) + self._BU[self._words]
        self._covs = (
            np.einsum("nij,njk,nlk->nil", A, self._covs, A) + self._Q[self._words]
        )

        # (3) anomaly: moment-matched predictive mixture vs observation likelihood
        mix_mean = self._weights @ self._means
        centered = self._means - mix_mean
        mix_cov = np.einsum("n,nij->ij", self._weights, self._covs) + np.einsum(
            "n,ni,nj->ij", self._weights, centered, centered
        )
        lam = bhattacharyya_gaussian(mix_mean, mix_cov, z_full, self._R)
        theta = hellinger_from_bc(lam)

        # (4) Kalman update + reweighting
        diverged = not self._update(z_full)
        if diverged:
            self.divergence_count += 1
            if not self.config.reinit_on_divergence:
                raise FilterDivergenceError(
                    f"all particle weights underflowed at step {t}"
                )
            # maximal surprise; restart around the current observation
            lam, theta = 0.0, 1.0
            self._reinitialize(z)

        # (5) resample on low effective sample size
        if self.ess < self.config.resample_threshold * self.n_particles:
            idx = systematic_resample(self._weights, self.rng)
            self._words = self._words[idx]
            self._means = self._means[idx]
            self._covs = self._covs[idx]
            self._weights = np.full(self.n_particles, 1.0 / self.n_particles)

        self._prev_z = z
        assert 0.0 <= theta <= 1.0
        map_word = int(np.bincount(
            self._words, weights=self._weights, minlength=self.model.k_words
        ).argmax())
        return AnomalySample(
            t=t,
            theta=theta,
            lam=lam,
            map_word=map_word,
            novel_word=novel,
            state_estimate=self.state_estimate(),
        )

    # -- internals --------------------------------------------------------------

    def _reinitialize(self, z: np.ndarray) -> None:
        k = self.model.k_words
        ppw = self.config.particles_per_word
        self._words = np.repeat(np.arange(k), ppw)
        self._means = np.empty((self.n_particles, 4))
        self._means[:, :2] = z
        self._means[:, 2:] = self._U[self._words]
        self._covs = self._init_cov[self._words].copy()
        self._weights = np.full(self.n_particles, 1.0 / self.n_particles)

    def _is_novel_pair(self, z: np.ndarray, deriv: np.ndarray) -> bool:
        s = int(self.model.cb_state.assign(z)[0])
        d = int(self.model.cb_deriv.assign(deriv)[0])
        return lookup_word(self.model.dictionary, s, d) == NOVEL

    def _update(self, z_full: np.ndarray) -> bool:
        """Per-particle Kalman update with identity observation model;
        returns False on total weight underflow."""
        y = z_full - self._means  # innovations (N, 4)
        S = self._covs + self._R  # innovation covariances (N, 4, 4)

        solved_y = np.linalg.solve(S, y[..., None])[..., 0]  # S^-1 y
        maha = np.einsum("ni,ni->n", y, solved_y)
        _, logdet = np.linalg.slogdet(S)
        loglik = -0.5 * (maha + logdet + 4 * LOG_2PI)
        new_weights = self._weights * np.exp(loglik)
        total = new_weights.sum()
        if not np.isfinite(total) or total <= 0.0:
            return False

        gain = np.swapaxes(np.linalg.solve(S, self._covs), 1, 2)  # P S^-1
        self._means = self._means + np.einsum("nij,nj->ni", gain, y)
        self._covs = self._covs - np.einsum("nij,njk->nik", gain, self._covs)
        self._covs = 0.5 * (self._covs + np.swapaxes(self._covs, 1, 2))
        self._weights = new_weights / total
        return True


def init_filter(
    model: SwitchingDbnModel, config: MjpfConfig, z0
) -> MarkovJumpParticleFilter:
    """Build a filter with particles_per_word x K particles, words evenly
    allocated over the dictionary and beliefs centered on ``z0``."""
    return MarkovJumpParticleFilter(model, config, z0)


def run_trace(
    model: SwitchingDbnModel,
    config: MjpfConfig,
    series: SyncedSeries,
    truth_windows: list[tuple[float, float]] | None = None,
    threshold: float = 0.3,
) -> AnomalyTrace:
    """Run the filter over a synchronized (unnormalized) series.

    The series is scaled with the model's training normalization; the
    filter is initialized on the first observation and stepped once per
    remaining timestep, so the trace has length T - 1 (the same convention
    that drops the first generalized-state sample).
    """
    if len(series) < 2:
        raise DataError("need at least 2 samples to run a trace")
    normed = apply_normalization(series, model.norm_params)
    z = normed.values
    filt = init_filter(model, config, z[0])
    samples = []
    start = time.perf_counter()
    for t in range(1, len(z)):
        try:
            samples.append(filt.step(z[t], t=t))
        except FilterDivergenceError:
            raise
        except Exception as exc:
            raise type(exc)(f"at timestep {t}: {exc}") from exc
    elapsed_ms = (time.perf_counter() - start) * 1000.0
    return AnomalyTrace(
        samples=samples,
        threshold=threshold,
        modality=model.modality,
        truth_windows=truth_windows,
        t0=series.t0,
        dt=series.dt,
        per_sample_ms=elapsed_ms / max(len(samples), 1),
    )
