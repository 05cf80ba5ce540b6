"""Switching DBN models: per-word linear dynamics over generalized states,
the full per-modality model, and the per-vehicle model set.

Trained models are immutable and safe for concurrent read by many filters.
Model files are JSON with format tag ``sa-mjpf-model/1``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, ModelFormatError, SaMjpfError
from .gng import COV_REGULARIZATION, Codebook, DERIVATIVE, GngParams, STATE, train_gng
from .pipeline import Modality, SyncedSeries, estimate_generalized_states, normalize
from .vocabulary import DEFAULT_SMOOTHING, Dictionary, Word, build_words

FORMAT_TAG = "sa-mjpf-model/1"
VEHICLE_FORMAT_TAG = "sa-mjpf-vehicle/1"

#: ``A X + B U`` exactly as the block matrices are printed in the source
#: material: the position block is frozen and the derivative block is set
#: to U * dt. Kept for fidelity experiments.
LITERAL = "LITERAL"
#: Position advances by U * dt and the derivative tracks U, so the model
#: can actually follow a moving vehicle. This is the default.
KINEMATIC = "KINEMATIC"


@dataclass(frozen=True)
class WordDynamics:
    """Linear dynamics of one word: X' = A X + B U + w, w ~ N(0, Q)."""

    A: np.ndarray  # (4, 4)
    B: np.ndarray  # (4, 2)
    U: np.ndarray  # (2,)
    Q: np.ndarray  # (4, 4)
    dt: float

    def __post_init__(self):
        for name in ("A", "B", "U", "Q"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))

    def step_mean(self, x: np.ndarray) -> np.ndarray:
        return self.A @ x + self.B @ self.U


def build_word_dynamics(
    word: Word,
    dt: float,
    mode: str = KINEMATIC,
    q_scale: float = 1.0,
    deriv_cov: np.ndarray | None = None,
) -> WordDynamics:
    """Assemble the (A, B, U, Q) of one word.

    ``deriv_cov`` is the covariance of the word's derivative letter; the
    process noise is block-diagonal with the position block scaled by dt^2
    so position and derivative noise stay commensurate.
    """
    if dt <= 0:
        raise ConfigError("dt must be positive")
    if mode not in (LITERAL, KINEMATIC):
        raise ConfigError(f"unknown dynamics mode {mode!r}")
    eye = np.eye(2)
    zero = np.zeros((2, 2))
    A = np.block([[eye, zero], [zero, zero]])
    if mode == LITERAL:
        B = np.vstack([zero, eye * dt])
    else:
        B = np.vstack([eye * dt, eye])
    if deriv_cov is None:
        deriv_cov = COV_REGULARIZATION * eye
    deriv_cov = np.asarray(deriv_cov, dtype=float)
    Q = q_scale * np.block(
        [[deriv_cov * dt**2, zero], [zero, deriv_cov]]
    )
    return WordDynamics(A=A, B=B, U=word.mean_velocity, Q=Q, dt=dt)


@dataclass(frozen=True, eq=False)
class SwitchingDbnModel:
    """One modality's complete generative model, self-contained for inference."""

    modality: Modality
    cb_state: Codebook
    cb_deriv: Codebook
    dictionary: Dictionary
    dynamics: dict[int, WordDynamics]
    norm_params: dict[str, tuple[float, float]]
    dynamics_mode: str
    gng_params: GngParams
    dt: float
    q_scale: float = 1.0

    def __post_init__(self):
        missing = [w.label for w in self.dictionary.words if w.label not in self.dynamics]
        if missing:
            raise ModelFormatError(f"missing dynamics for word {missing[0]}")

    def __eq__(self, other) -> bool:
        if not isinstance(other, SwitchingDbnModel):
            return NotImplemented
        return self.to_json_dict() == other.to_json_dict()

    @property
    def k_words(self) -> int:
        return len(self.dictionary)

    def to_json_dict(self) -> dict:
        return {
            "format": FORMAT_TAG,
            "modality": self.modality.name,
            "dt": self.dt,
            "dynamics_mode": self.dynamics_mode,
            "q_scale": self.q_scale,
            "gng_params": {
                "max_nodes": self.gng_params.max_nodes,
                "lambda_insert": self.gng_params.lambda_insert,
                "eps_b": self.gng_params.eps_b,
                "eps_n": self.gng_params.eps_n,
                "a_max": self.gng_params.a_max,
                "alpha": self.gng_params.alpha,
                "d_decay": self.gng_params.d_decay,
                "epochs": self.gng_params.epochs,
                "seed": self.gng_params.seed,
            },
            "norm_params": {
                name: [float(lo), float(hi)] for name, (lo, hi) in self.norm_params.items()
            },
            "cb_state": self.cb_state.to_json_dict(),
            "cb_deriv": self.cb_deriv.to_json_dict(),
            "dictionary": self.dictionary.to_json_dict(),
            "dynamics": {
                str(label): {
                    "A": dyn.A.tolist(),
                    "B": dyn.B.tolist(),
                    "U": dyn.U.tolist(),
                    "Q": dyn.Q.tolist(),
                    "dt": dyn.dt,
                }
                for label, dyn in sorted(self.dynamics.items())
            },
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "SwitchingDbnModel":
        if payload.get("format") != FORMAT_TAG:
            raise ModelFormatError(
                f"expected format {FORMAT_TAG!r}, got {payload.get('format')!r}"
            )
        gp = payload["gng_params"]
        dynamics = {
            int(label): WordDynamics(
                A=np.asarray(d["A"], dtype=float),
                B=np.asarray(d["B"], dtype=float),
                U=np.asarray(d["U"], dtype=float),
                Q=np.asarray(d["Q"], dtype=float),
                dt=float(d["dt"]),
            )
            for label, d in payload["dynamics"].items()
        }
        return cls(
            modality=Modality.from_tag(payload["modality"]),
            cb_state=Codebook.from_json_dict(payload["cb_state"]),
            cb_deriv=Codebook.from_json_dict(payload["cb_deriv"]),
            dictionary=Dictionary.from_json_dict(payload["dictionary"]),
            dynamics=dynamics,
            norm_params={
                name: (float(lo), float(hi))
                for name, (lo, hi) in payload["norm_params"].items()
            },
            dynamics_mode=payload["dynamics_mode"],
            gng_params=GngParams(**gp),
            dt=float(payload["dt"]),
            q_scale=float(payload.get("q_scale", 1.0)),
        )


@dataclass(frozen=True, eq=False)
class VehicleModelSet:
    """All pair-based models of one vehicle, keyed by modality."""

    vehicle_id: str
    models: dict[Modality, SwitchingDbnModel] = field(default_factory=dict)

    def __eq__(self, other) -> bool:
        if not isinstance(other, VehicleModelSet):
            return NotImplemented
        return self.to_json_dict() == other.to_json_dict()

    def to_json_dict(self) -> dict:
        return {
            "format": VEHICLE_FORMAT_TAG,
            "vehicle_id": self.vehicle_id,
            "models": {
                m.name: model.to_json_dict() for m, model in sorted(
                    self.models.items(), key=lambda kv: kv[0].name
                )
            },
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "VehicleModelSet":
        if payload.get("format") != VEHICLE_FORMAT_TAG:
            raise ModelFormatError(
                f"expected format {VEHICLE_FORMAT_TAG!r}, got {payload.get('format')!r}"
            )
        return cls(
            vehicle_id=payload["vehicle_id"],
            models={
                Modality.from_tag(tag): SwitchingDbnModel.from_json_dict(m)
                for tag, m in payload["models"].items()
            },
        )


def train_model(
    series: SyncedSeries,
    modality: Modality,
    gng_params: GngParams = GngParams(),
    smoothing: float = DEFAULT_SMOOTHING,
    dynamics_mode: str = KINEMATIC,
    q_scale: float = 1.0,
) -> SwitchingDbnModel:
    """Full training pipeline for one modality on a normal-behavior series.

    ``series`` is the synchronized but unnormalized channel pair; the
    learned normalization parameters are stored on the model so test data
    can be scaled into the training frame.
    """

    def stage(name, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except SaMjpfError as exc:
            raise type(exc)(f"stage {name!r}: {exc}") from exc

    normed = stage("normalize", normalize, series)
    gs = stage("generalized-states", estimate_generalized_states, normed, modality)
    cb_state = stage(
        "gng-state", train_gng, gs.states, gng_params, STATE
    )
    # decorrelate the two clustering runs while staying seed-deterministic
    deriv_params = replace(gng_params, seed=gng_params.seed + 1)
    cb_deriv = stage(
        "gng-derivative", train_gng, gs.derivatives, deriv_params, DERIVATIVE
    )
    dictionary, _ = stage("vocabulary", build_words, gs, cb_state, cb_deriv, smoothing)
    dynamics = {
        w.label: build_word_dynamics(
            w,
            dt=series.dt,
            mode=dynamics_mode,
            q_scale=q_scale,
            deriv_cov=cb_deriv.covariances[w.deriv_letter],
        )
        for w in dictionary.words
    }
    return SwitchingDbnModel(
        modality=modality,
        cb_state=cb_state,
        cb_deriv=cb_deriv,
        dictionary=dictionary,
        dynamics=dynamics,
        norm_params=normed.norm_params,
        dynamics_mode=dynamics_mode,
        gng_params=gng_params,
        dt=series.dt,
        q_scale=q_scale,
    )


def save_model(model: SwitchingDbnModel | VehicleModelSet, path) -> None:
    """Write a model (or vehicle model set) as canonical JSON.

    Serialization is canonical (sorted keys, repr floats), so retraining
    with the same seed produces byte-identical files.
    """
    payload = model.to_json_dict()
    Path(path).write_text(
        json.dumps(payload, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )


def load_model(path) -> SwitchingDbnModel | VehicleModelSet:
    """Load a model file; dispatches on the embedded format tag."""
    text = Path(path).read_text(encoding="utf-8")
    payload = json.loads(text)  # corrupt file -> json.JSONDecodeError
    if not isinstance(payload, dict):
        raise ModelFormatError("model file must contain a JSON object")
    tag = payload.get("format")
    if tag == FORMAT_TAG:
        return SwitchingDbnModel.from_json_dict(payload)
    if tag == VEHICLE_FORMAT_TAG:
        return VehicleModelSet.from_json_dict(payload)
    raise ModelFormatError(f"unrecognized model format {tag!r}")
