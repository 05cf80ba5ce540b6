"""Switching DBN models and a Markov jump particle filter for multi-sensor
vehicle anomaly detection, with a two-agent collective awareness layer and
a scenario simulator."""

from .collective import (
    CoupledAnomalySample,
    CoupledModel,
    PositionMessage,
    SimulatedChannel,
    build_coupled_model,
    coupled_score,
    exchange,
    load_coupled_model,
    run_coupled_trace,
    save_coupled_model,
)
from .detector import SwitchingDbnDetector
from .errors import (
    ConfigError,
    DataError,
    EvalError,
    FilterDivergenceError,
    ModelError,
    ModelFormatError,
    NormalizationError,
    SaMjpfError,
    ScenarioSpecError,
    SchemaError,
    SyncError,
)
from .evaluation import DetectionReport, calibrate_threshold, evaluate_trace
from .gng import Codebook, GngParams, GrowingNeuralGas, assign_letter, train_gng
from .mjpf import (
    AnomalySample,
    AnomalyTrace,
    MarkovJumpParticleFilter,
    MjpfConfig,
    Particle,
    bhattacharyya_gaussian,
    hellinger_from_bc,
    init_filter,
    run_trace,
    systematic_resample,
)
from .model import (
    KINEMATIC,
    LITERAL,
    SwitchingDbnModel,
    VehicleModelSet,
    WordDynamics,
    build_word_dynamics,
    load_model,
    save_model,
    train_model,
)
from .pipeline import (
    GeneralizedStateSequence,
    Modality,
    RawChannel,
    SyncedSeries,
    apply_normalization,
    denormalize,
    estimate_generalized_states,
    load_csv,
    normalize,
    synchronize,
)
from .simulate import ScenarioDataset, ScenarioSpec, TruthWindow, generate, self_check
from .vocabulary import (
    NOVEL,
    CoupledCooccurrenceMatrix,
    Dictionary,
    Word,
    build_words,
    estimate_coupled_cooccurrence,
    estimate_transition_matrix,
    lookup_word,
)

__version__ = "0.1.0"
