"""Latent-ODE modeling of noncyclic motion sequences.

The pipeline encodes an initial movement segment into a small set of Gaussian
latent tokens, integrates a learned vector field from the first token with a
fixed-step fourth-order Runge-Kutta scheme, decodes each latent state back to
full-body coordinates, and scores reconstructions against a mean-trajectory
baseline under participant-level cross-validation.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .archive import DatasetArchive, load_raw_trials, read_archive, write_archive
from .config import (
    ExperimentConfig,
    config_hash,
    load_experiment_config,
    save_experiment_config,
)
from .dataset import (
    DEFAULT_SCHEMA,
    FoldAssignment,
    JointSchema,
    MotionDataset,
    RawTrial,
    StandardizationStats,
    align_and_window,
    fit_stats,
    make_folds,
    standardize,
    unstandardize,
)
from .decoder import DecoderConfig, FrameDecoder, decode
from .dynamics import (
    LatentPath,
    TimeGrid,
    VectorField,
    VectorFieldConfig,
    integrate,
    rk4_step,
    vector_field,
)
from .encoder import (
    EncoderConfig,
    GaussianToken,
    SequenceEncoder,
    causal_frame_mask,
    encode,
    initial_state,
    segment_pool,
)
from .evaluation import (
    EvalReport,
    ParticipantSummary,
    Prediction,
    baseline_predict,
    make_eval_report,
    predict,
    r2_curve,
    rmse_curve,
    summarize,
)
from .events import TrialEvents, compute_speed, detect_events, detect_onset, detect_release
from .model import LatentODEModel, ModelConfigs, ModelParams
from .synth import SynthConfig, SynthGroundTruth, synth_generate
from .training import (
    TrainConfig,
    TrainHistory,
    kl_loss,
    load_checkpoint,
    recon_loss,
    save_checkpoint,
    total_loss,
    train_fold,
    validation_metrics,
)

__all__ = [
    "DEFAULT_SCHEMA",
    "DatasetArchive",
    "DecoderConfig",
    "EncoderConfig",
    "EvalReport",
    "ExperimentConfig",
    "FoldAssignment",
    "FrameDecoder",
    "GaussianToken",
    "JointSchema",
    "LatentODEModel",
    "LatentPath",
    "ModelConfigs",
    "ModelParams",
    "MotionDataset",
    "ParticipantSummary",
    "Prediction",
    "RawTrial",
    "SequenceEncoder",
    "StandardizationStats",
    "SynthConfig",
    "SynthGroundTruth",
    "TimeGrid",
    "TrainConfig",
    "TrainHistory",
    "TrialEvents",
    "VectorField",
    "VectorFieldConfig",
    "__version__",
    "align_and_window",
    "baseline_predict",
    "causal_frame_mask",
    "compute_speed",
    "config_hash",
    "decode",
    "detect_events",
    "detect_onset",
    "detect_release",
    "encode",
    "fit_stats",
    "initial_state",
    "integrate",
    "kl_loss",
    "load_checkpoint",
    "load_experiment_config",
    "load_raw_trials",
    "make_eval_report",
    "make_folds",
    "predict",
    "r2_curve",
    "read_archive",
    "recon_loss",
    "rk4_step",
    "rmse_curve",
    "save_checkpoint",
    "save_experiment_config",
    "segment_pool",
    "standardize",
    "summarize",
    "synth_generate",
    "total_loss",
    "train_fold",
    "unstandardize",
    "validation_metrics",
    "vector_field",
    "write_archive",
]
