"""Test-time prediction and the evaluation metrics.

Predictions are fully deterministic: the initial latent state is the
token-0 posterior mean, so a trial's forecast depends only on the frames
inside the first segment. Metrics are computed in original units (mm):
per-frame RMSE, per-joint RMSE, a per-frame coefficient of determination
R2(t) against the test-set mean, and the per-frame-mean baseline predictor.
Frames with zero variance across test trials leave R2 undefined; they are
excluded from means and counted.

Summation order inside the metric cores is fixed (trial-major, then
feature) so results are reproducible and can be checked exactly against
straightforward loop implementations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .dataset import StandardizationStats, standardize_array, unstandardize_array
from .dynamics import LatentPath
from .model import ModelParams

REPORT_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Prediction:
    """One trial's forecast next to its ground truth, in original units."""

    trial_id: str
    predicted: np.ndarray
    truth: np.ndarray
    latent_path: LatentPath | None = None

    def __post_init__(self) -> None:
        predicted = np.asarray(self.predicted, dtype=float)
        truth = np.asarray(self.truth, dtype=float)
        object.__setattr__(self, "predicted", predicted)
        object.__setattr__(self, "truth", truth)
        if predicted.shape != truth.shape or predicted.ndim != 2:
            raise ValueError(
                f"predicted {predicted.shape} and truth {truth.shape} must be "
                "equal-shaped T x D matrices"
            )


def predict(
    params: ModelParams,
    x: np.ndarray,
    stats: StandardizationStats | None = None,
    trial_id: str = "",
) -> Prediction:
    """Forecast one trial from its initial segment.

    Args:
        params: trained fold model.
        x: T x D standardized trial (the same standardization as training).
        stats: stats to map back to original units; defaults to the stats
            stored with the params.
        trial_id: label carried into the Prediction.

    Returns:
        Prediction in original units with the latent path attached.
    """
    stats = stats if stats is not None else params.stats
    if stats is None:
        raise ValueError("no standardization stats available for predict")
    x = np.asarray(x, dtype=float)
    model = params.model
    model.eval()
    with torch.no_grad():
        output = model(torch.as_tensor(x, dtype=model.dtype), eps=None)
    predicted_std = output.reconstruction.double().numpy()
    return Prediction(
        trial_id=trial_id,
        predicted=unstandardize_array(predicted_std, stats),
        truth=unstandardize_array(x, stats),
        latent_path=LatentPath(
            states=output.path.states.detach(), initial=output.path.initial.detach()
        ),
    )


def predict_dataset(
    params: ModelParams,
    trials_mm: Sequence[np.ndarray],
    trial_ids: Sequence[str],
    stats: StandardizationStats | None = None,
) -> list[Prediction]:
    """Predict a set of raw (mm) trials by standardizing, forecasting, mapping back."""
    stats = stats if stats is not None else params.stats
    if stats is None:
        raise ValueError("no standardization stats available for predict")
    return [
        predict(params, standardize_array(trial, stats), stats, trial_id)
        for trial, trial_id in zip(trials_mm, trial_ids)
    ]


def stack_predictions(predictions: Sequence[Prediction]) -> tuple[np.ndarray, np.ndarray]:
    """Stack a prediction list into (truth, predicted) arrays of shape N x T x D."""
    if not predictions:
        raise ValueError("no predictions given")
    truth = np.stack([p.truth for p in predictions])
    predicted = np.stack([p.predicted for p in predictions])
    return truth, predicted


def _per_frame_sum(values: np.ndarray) -> np.ndarray:
    """Sum an N x T x D array over trials and features, one value per frame.

    The reduction runs trial-major then feature for each frame, matching a
    nested loop over (trial, feature).
    """
    n, t, d = values.shape
    return values.transpose(1, 0, 2).reshape(t, n * d).sum(axis=1)


def rmse_from_arrays(
    truth: np.ndarray, predicted: np.ndarray, coords_per_joint: int = 3
) -> tuple[np.ndarray, np.ndarray]:
    """Metric core for RMSE curves on stacked arrays.

    Args:
        truth: N x T x D ground truth in mm.
        predicted: matching predictions in mm.
        coords_per_joint: feature-group size for the per-joint aggregate;
            when D is not divisible by it, groups fall back to single
            features.

    Returns:
        (rmse_t, per_joint): length-T per-frame RMSE and the per-joint RMSE
        pooled over trials, frames, and each joint's coordinates.
    """
    truth = np.asarray(truth, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    if truth.shape != predicted.shape or truth.ndim != 3:
        raise ValueError(
            f"expected matching N x T x D arrays, got {truth.shape} and "
            f"{predicted.shape}"
        )
    n, t, d = truth.shape
    err2 = (predicted - truth) ** 2
    rmse_t = np.sqrt(_per_frame_sum(err2) / (n * d))
    group = coords_per_joint if d % coords_per_joint == 0 else 1
    n_joints = d // group
    per_joint = np.empty(n_joints)
    for j in range(n_joints):
        block = err2[:, :, j * group:(j + 1) * group]
        per_joint[j] = np.sqrt(block.reshape(-1).sum() / block.size)
    return rmse_t, per_joint


def rmse_curve(
    predictions: Sequence[Prediction], coords_per_joint: int = 3
) -> tuple[np.ndarray, np.ndarray]:
    """RMSE(t) and per-joint RMSE over a test set of predictions."""
    truth, predicted = stack_predictions(predictions)
    return rmse_from_arrays(truth, predicted, coords_per_joint)


def r2_from_arrays(
    truth: np.ndarray, predicted: np.ndarray, center: np.ndarray | None = None
) -> np.ndarray:
    """Metric core for the time-resolved coefficient of determination.

    Per frame t, R2(t) = 1 - SS_res(t) / SS_ori(t) with SS_ori taken around
    `center` (default: the test-set per-frame per-feature mean; pass the
    training-set mean to switch conventions).

    Returns:
        Length-T array; frames where SS_ori is zero are NaN (undefined).
    """
    truth = np.asarray(truth, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    if truth.shape != predicted.shape or truth.ndim != 3:
        raise ValueError(
            f"expected matching N x T x D arrays, got {truth.shape} and "
            f"{predicted.shape}"
        )
    if truth.shape[0] < 2 and center is None:
        raise ValueError("R2 against the test mean needs at least 2 trials")
    if center is None:
        center = truth.mean(axis=0)
    center = np.asarray(center, dtype=float)
    if center.shape != truth.shape[1:]:
        raise ValueError(
            f"center shape {center.shape} must be T x D = {truth.shape[1:]}"
        )
    ss_res = _per_frame_sum((truth - predicted) ** 2)
    ss_ori = _per_frame_sum((truth - center) ** 2)
    r2 = np.full(truth.shape[1], np.nan)
    defined = ss_ori > 0
    r2[defined] = 1.0 - ss_res[defined] / ss_ori[defined]
    return r2


def r2_curve(
    predictions: Sequence[Prediction], center: np.ndarray | None = None
) -> np.ndarray:
    """Time-resolved R2 over a test set of predictions (NaN where undefined)."""
    truth, predicted = stack_predictions(predictions)
    return r2_from_arrays(truth, predicted, center)


def baseline_predict(train_trials: Sequence[np.ndarray]) -> np.ndarray:
    """Per-frame mean predictor fitted on training trials.

    Returns the T x D training mean; the baseline forecast for every test
    trial is this same matrix.
    """
    if not len(train_trials):
        raise ValueError("baseline needs at least one training trial")
    return np.stack([np.asarray(t, dtype=float) for t in train_trials]).mean(axis=0)


def latter_half_start(n_frames: int) -> int:
    """First frame of the latter 50% of the series: ceil(T / 2)."""
    return (n_frames + 1) // 2


def _nanmean_or_nan(values: np.ndarray) -> float:
    defined = values[~np.isnan(values)]
    return float(defined.mean()) if defined.size else float("nan")


def _pooled_rmse(truth: np.ndarray, predicted: np.ndarray, start: int = 0) -> float:
    """RMSE pooled over trials, features, and frames from `start` on."""
    err2 = (predicted[:, start:] - truth[:, start:]) ** 2
    return float(np.sqrt(err2.reshape(-1).sum() / err2.size))


@dataclass(frozen=True)
class EvalReport:
    """Metrics of one fold's test split, model against baseline."""

    participant_id: str
    fold_id: int
    n_test_trials: int
    latter_half_start: int
    rmse_curve: np.ndarray
    per_joint_rmse: np.ndarray
    r2_curve: np.ndarray
    mean_r2_full: float
    mean_r2_latter_half: float
    n_undefined_r2: int
    rmse_overall: float
    rmse_latter_half: float
    baseline_rmse_curve: np.ndarray
    baseline_r2_curve: np.ndarray
    baseline_mean_r2_full: float
    baseline_mean_r2_latter_half: float
    baseline_rmse_overall: float
    baseline_rmse_latter_half: float

    @property
    def n_frames(self) -> int:
        return int(self.rmse_curve.size)


def make_eval_report(
    predictions: Sequence[Prediction],
    baseline: np.ndarray,
    participant_id: str,
    fold_id: int,
    center: np.ndarray | None = None,
) -> EvalReport:
    """Score a fold's predictions and the mean baseline on the same trials.

    Args:
        predictions: the fold's test-set predictions in mm.
        baseline: T x D per-frame mean from `baseline_predict` (mm).
        participant_id / fold_id: identification carried into the report.
        center: optional alternative centering for SS_ori (training mean).
    """
    truth, predicted = stack_predictions(predictions)
    baseline = np.asarray(baseline, dtype=float)
    if baseline.shape != truth.shape[1:]:
        raise ValueError(
            f"baseline shape {baseline.shape} must be T x D = {truth.shape[1:]}"
        )
    baseline_stack = np.broadcast_to(baseline, truth.shape)
    half = latter_half_start(truth.shape[1])

    rmse_t, per_joint = rmse_from_arrays(truth, predicted)
    r2_t = r2_from_arrays(truth, predicted, center)
    base_rmse_t, _ = rmse_from_arrays(truth, baseline_stack)
    base_r2_t = r2_from_arrays(truth, baseline_stack, center)
    return EvalReport(
        participant_id=participant_id,
        fold_id=fold_id,
        n_test_trials=truth.shape[0],
        latter_half_start=half,
        rmse_curve=rmse_t,
        per_joint_rmse=per_joint,
        r2_curve=r2_t,
        mean_r2_full=_nanmean_or_nan(r2_t),
        mean_r2_latter_half=_nanmean_or_nan(r2_t[half:]),
        n_undefined_r2=int(np.isnan(r2_t).sum()),
        rmse_overall=_pooled_rmse(truth, predicted),
        rmse_latter_half=_pooled_rmse(truth, predicted, half),
        baseline_rmse_curve=base_rmse_t,
        baseline_r2_curve=base_r2_t,
        baseline_mean_r2_full=_nanmean_or_nan(base_r2_t),
        baseline_mean_r2_latter_half=_nanmean_or_nan(base_r2_t[half:]),
        baseline_rmse_overall=_pooled_rmse(truth, baseline_stack),
        baseline_rmse_latter_half=_pooled_rmse(truth, baseline_stack, half),
    )


@dataclass(frozen=True)
class ParticipantSummary:
    """Cross-fold aggregation of one participant's reports.

    Scalar pairs are (mean, population SD) across folds; curve aggregates
    ignore NaN frames per time point.
    """

    participant_id: str
    n_folds: int
    n_frames: int
    rmse_overall: tuple[float, float]
    rmse_latter_half: tuple[float, float]
    r2_full: tuple[float, float]
    r2_latter_half: tuple[float, float]
    baseline_rmse_overall: tuple[float, float]
    baseline_rmse_latter_half: tuple[float, float]
    baseline_r2_full: tuple[float, float]
    baseline_r2_latter_half: tuple[float, float]
    rmse_curve_mean: np.ndarray
    rmse_curve_sd: np.ndarray
    r2_curve_mean: np.ndarray
    r2_curve_sd: np.ndarray
    baseline_rmse_curve_mean: np.ndarray
    baseline_rmse_curve_sd: np.ndarray
    baseline_r2_curve_mean: np.ndarray
    baseline_r2_curve_sd: np.ndarray
    per_joint_rmse_mean: np.ndarray
    n_undefined_r2: int


def _mean_sd(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    return float(arr.mean()), float(arr.std())


def summarize(reports: Sequence[EvalReport]) -> ParticipantSummary:
    """Aggregate per-fold reports into a participant summary (mean and SD)."""
    if not reports:
        raise ValueError("no reports given")
    participants = {r.participant_id for r in reports}
    if len(participants) != 1:
        raise ValueError(f"reports mix participants: {sorted(participants)}")
    lengths = {r.n_frames for r in reports}
    if len(lengths) != 1:
        raise ValueError("reports disagree on sequence length")
    rmse_curves = np.stack([r.rmse_curve for r in reports])
    r2_curves = np.stack([r.r2_curve for r in reports])
    base_rmse_curves = np.stack([r.baseline_rmse_curve for r in reports])
    base_r2_curves = np.stack([r.baseline_r2_curve for r in reports])
    with np.errstate(invalid="ignore"):
        r2_mean = np.nanmean(r2_curves, axis=0)
        r2_sd = np.nanstd(r2_curves, axis=0)
        base_r2_mean = np.nanmean(base_r2_curves, axis=0)
        base_r2_sd = np.nanstd(base_r2_curves, axis=0)
    return ParticipantSummary(
        participant_id=reports[0].participant_id,
        n_folds=len(reports),
        n_frames=reports[0].n_frames,
        rmse_overall=_mean_sd([r.rmse_overall for r in reports]),
        rmse_latter_half=_mean_sd([r.rmse_latter_half for r in reports]),
        r2_full=_mean_sd([r.mean_r2_full for r in reports]),
        r2_latter_half=_mean_sd([r.mean_r2_latter_half for r in reports]),
        baseline_rmse_overall=_mean_sd([r.baseline_rmse_overall for r in reports]),
        baseline_rmse_latter_half=_mean_sd(
            [r.baseline_rmse_latter_half for r in reports]
        ),
        baseline_r2_full=_mean_sd([r.baseline_mean_r2_full for r in reports]),
        baseline_r2_latter_half=_mean_sd(
            [r.baseline_mean_r2_latter_half for r in reports]
        ),
        rmse_curve_mean=rmse_curves.mean(axis=0),
        rmse_curve_sd=rmse_curves.std(axis=0),
        r2_curve_mean=r2_mean,
        r2_curve_sd=r2_sd,
        baseline_rmse_curve_mean=base_rmse_curves.mean(axis=0),
        baseline_rmse_curve_sd=base_rmse_curves.std(axis=0),
        baseline_r2_curve_mean=base_r2_mean,
        baseline_r2_curve_sd=base_r2_sd,
        per_joint_rmse_mean=np.stack([r.per_joint_rmse for r in reports]).mean(axis=0),
        n_undefined_r2=sum(r.n_undefined_r2 for r in reports),
    )


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, float) and np.isnan(value):
        return None
    return value


def report_to_dict(report: EvalReport) -> dict:
    """JSON-ready dict of a report; NaN becomes null."""
    body = {
        name: _jsonable(getattr(report, name))
        for name in report.__dataclass_fields__
    }
    body["r2_curve"] = [
        None if np.isnan(v) else v for v in report.r2_curve.tolist()
    ]
    body["baseline_r2_curve"] = [
        None if np.isnan(v) else v for v in report.baseline_r2_curve.tolist()
    ]
    return {"schema_version": REPORT_SCHEMA_VERSION, **body}


def report_from_dict(data: dict) -> EvalReport:
    """Inverse of `report_to_dict`."""
    version = data.get("schema_version")
    if version != REPORT_SCHEMA_VERSION:
        raise ValueError(f"unsupported report schema version {version!r}")
    def _curve(values):
        return np.asarray(
            [np.nan if v is None else v for v in values], dtype=float
        )
    kwargs = {k: v for k, v in data.items() if k != "schema_version"}
    for name in ("rmse_curve", "per_joint_rmse", "r2_curve",
                 "baseline_rmse_curve", "baseline_r2_curve"):
        kwargs[name] = _curve(kwargs[name])
    for name in ("mean_r2_full", "mean_r2_latter_half",
                 "baseline_mean_r2_full", "baseline_mean_r2_latter_half"):
        if kwargs[name] is None:
            kwargs[name] = float("nan")
    return EvalReport(**kwargs)


def save_report(report: EvalReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report_to_dict(report), indent=2))


def load_report(path: str | Path) -> EvalReport:
    return report_from_dict(json.loads(Path(path).read_text()))


def save_curves_csv(report: EvalReport, path: str | Path) -> None:
    """Flat per-frame table of the report's curves for plotting or export."""
    rows = ["frame,rmse_mm,r2,baseline_rmse_mm,baseline_r2"]
    for t in range(report.n_frames):
        r2 = report.r2_curve[t]
        base_r2 = report.baseline_r2_curve[t]
        rows.append(
            f"{t},{report.rmse_curve[t]:.9g},"
            f"{'' if np.isnan(r2) else format(r2, '.9g')},"
            f"{report.baseline_rmse_curve[t]:.9g},"
            f"{'' if np.isnan(base_r2) else format(base_r2, '.9g')}"
        )
    Path(path).write_text("\n".join(rows) + "\n")
