"""Data model for motion-capture trials: schema, windowing, standardization, folds.

A participant's session is a set of trials sampled at a common frame rate,
each a T x 45 matrix of joint positions in mm (15 joints x 3 coordinates).
Trials are aligned by extracting a fixed-length window anchored at each
trial's own motion onset; the window length is chosen so the trial with the
latest release ends exactly at release and every other trial carries its
follow-through. Feature standardization is fitted on training trials only
and cross-validation folds come from a seeded shuffle with round-robin
assignment.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .events import TrialEvents

N_JOINTS = 15
FEATURE_DIM = N_JOINTS * 3

DEFAULT_JOINT_NAMES = (
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_heel",
    "right_heel",
    "left_toe",
    "right_toe",
)


class WindowingError(ValueError):
    """A trial cannot be windowed to the common length."""


@dataclass(frozen=True)
class JointSchema:
    """Joint layout of the 45-dimensional feature vector.

    Attributes:
        joint_names: 15 unique labels; feature columns follow this order,
            three coordinates per joint.
        lead_knee: joint whose height maximum anchors onset detection.
        throwing_wrist: joint whose speed maximum defines release.
        vertical_axis: coordinate index (0-2) of the upward direction.
    """

    joint_names: tuple[str, ...] = DEFAULT_JOINT_NAMES
    lead_knee: str = "left_knee"
    throwing_wrist: str = "right_wrist"
    vertical_axis: int = 2

    def __post_init__(self) -> None:
        if len(self.joint_names) != N_JOINTS:
            raise ValueError(f"expected {N_JOINTS} joints, got {len(self.joint_names)}")
        if len(set(self.joint_names)) != N_JOINTS:
            raise ValueError("joint names must be unique")
        for label, name in (("lead_knee", self.lead_knee),
                            ("throwing_wrist", self.throwing_wrist)):
            if name not in self.joint_names:
                raise ValueError(f"{label} {name!r} is not a schema joint")
        if not 0 <= self.vertical_axis <= 2:
            raise ValueError(f"vertical axis must be 0, 1 or 2, got {self.vertical_axis}")
        object.__setattr__(self, "joint_names", tuple(self.joint_names))

    @property
    def feature_dim(self) -> int:
        return FEATURE_DIM

    def joint_index(self, name: str) -> int:
        return self.joint_names.index(name)

    def joint_slice(self, name: str) -> slice:
        """Column slice of the three coordinates of one joint."""
        i = self.joint_index(name)
        return slice(3 * i, 3 * i + 3)

    def column_names(self) -> list[str]:
        """Feature column labels in storage order."""
        return [f"{joint}_{axis}" for joint in self.joint_names for axis in "xyz"]


DEFAULT_SCHEMA = JointSchema()


@dataclass(frozen=True)
class RawTrial:
    """One unwindowed trial as recorded.

    Attributes:
        trial_id: unique label within a session.
        frames: T_raw x 45 positions in mm, all finite.
        frame_rate: sampling rate in Hz.
    """

    trial_id: str
    frames: np.ndarray
    frame_rate: float = 200.0

    def __post_init__(self) -> None:
        frames = np.asarray(self.frames, dtype=float)
        object.__setattr__(self, "frames", frames)
        if frames.ndim != 2 or frames.shape[1] != FEATURE_DIM:
            raise ValueError(
                f"trial {self.trial_id!r}: expected T x {FEATURE_DIM} frames, "
                f"got shape {frames.shape}"
            )
        if frames.shape[0] < 2:
            raise ValueError(f"trial {self.trial_id!r}: needs at least 2 frames")
        if not np.all(np.isfinite(frames)):
            raise ValueError(f"trial {self.trial_id!r}: non-finite samples present")
        if self.frame_rate <= 0:
            raise ValueError(f"trial {self.trial_id!r}: frame rate must be positive")

    @property
    def n_frames(self) -> int:
        return int(self.frames.shape[0])

    def joint_positions(self, schema: JointSchema, name: str) -> np.ndarray:
        """T x 3 positions of one joint."""
        return self.frames[:, schema.joint_slice(name)]


@dataclass(frozen=True)
class MotionDataset:
    """Windowed trials of uniform length for one participant.

    Attributes:
        trials: list of T x 45 matrices, identical shapes.
        trial_ids: one id per trial, aligned with `trials`.
        participant_id: session label.
        joint_schema: feature layout.
        frame_rate: sampling rate in Hz.
        units: units of the feature values ("mm", or "standardized").
    """

    trials: list[np.ndarray]
    trial_ids: list[str]
    participant_id: str
    joint_schema: JointSchema = DEFAULT_SCHEMA
    frame_rate: float = 200.0
    units: str = "mm"

    def __post_init__(self) -> None:
        if not self.trials:
            raise ValueError("dataset must contain at least one trial")
        if len(self.trial_ids) != len(self.trials):
            raise ValueError("one trial id required per trial")
        shape = self.trials[0].shape
        for tid, trial in zip(self.trial_ids, self.trials):
            if trial.shape != shape:
                raise ValueError(
                    f"trial {tid!r} has shape {trial.shape}, expected {shape}"
                )
        if shape[1] != self.joint_schema.feature_dim:
            raise ValueError(
                f"trials have {shape[1]} features, schema expects "
                f"{self.joint_schema.feature_dim}"
            )

    @property
    def n_trials(self) -> int:
        return len(self.trials)

    @property
    def n_frames(self) -> int:
        return int(self.trials[0].shape[0])

    def as_array(self) -> np.ndarray:
        """All trials stacked as an n_trials x T x 45 array."""
        return np.stack(self.trials, axis=0)

    def subset(self, indices: Iterable[int]) -> "MotionDataset":
        """New dataset holding copies of the selected trials."""
        idx = list(indices)
        return replace(
            self,
            trials=[self.trials[i].copy() for i in idx],
            trial_ids=[self.trial_ids[i] for i in idx],
        )


@dataclass(frozen=True)
class StandardizationStats:
    """Per-feature pooled mean and population standard deviation.

    Fitted on training-split trials only; `units` records the feature units
    of the space the stats were fitted in.
    """

    mean: np.ndarray
    std: np.ndarray
    units: str = "mm"

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=float)
        std = np.asarray(self.std, dtype=float)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)
        if mean.shape != std.shape or mean.ndim != 1:
            raise ValueError("mean and std must be 1-D vectors of equal length")
        if not np.all(std > 0):
            bad = int(np.argmin(std))
            raise ValueError(f"feature {bad} has non-positive std {std[bad]:g}")


@dataclass(frozen=True)
class FoldAssignment:
    """Cross-validation fold of every trial.

    A pure function of (n_trials, n_folds, seed): a seeded shuffle of trial
    indices followed by round-robin assignment, so fold sizes differ by at
    most one.
    """

    n_folds: int
    fold_of_trial: np.ndarray
    seed: int

    def __post_init__(self) -> None:
        fold_of = np.asarray(self.fold_of_trial, dtype=int)
        object.__setattr__(self, "fold_of_trial", fold_of)
        if fold_of.ndim != 1:
            raise ValueError("fold_of_trial must be a 1-D index array")
        if self.n_folds < 1:
            raise ValueError("need at least one fold")
        if fold_of.size and not np.all((fold_of >= 0) & (fold_of < self.n_folds)):
            raise ValueError("fold ids out of range")

    @property
    def n_trials(self) -> int:
        return int(self.fold_of_trial.size)

    def test_indices(self, fold_id: int) -> np.ndarray:
        self._check_fold(fold_id)
        return np.flatnonzero(self.fold_of_trial == fold_id)

    def train_indices(self, fold_id: int) -> np.ndarray:
        self._check_fold(fold_id)
        return np.flatnonzero(self.fold_of_trial != fold_id)

    def _check_fold(self, fold_id: int) -> None:
        if not 0 <= fold_id < self.n_folds:
            raise ValueError(f"fold {fold_id} outside [0, {self.n_folds})")


def window_length(events: Sequence[TrialEvents]) -> int:
    """Common window length: the largest onset-to-release span, inclusive."""
    if not events:
        raise ValueError("no events given")
    return max(e.release_frame - e.onset_frame + 1 for e in events)


def align_and_window(
    raw_trials: Sequence[RawTrial],
    events: Sequence[TrialEvents],
    participant_id: str,
    joint_schema: JointSchema = DEFAULT_SCHEMA,
) -> MotionDataset:
    """Extract onset-anchored fixed-length windows from raw trials.

    The window length T_p is the largest release - onset + 1 over the
    session, so the latest-release trial ends exactly at its release frame
    and all others include follow-through frames.

    Raises:
        WindowingError: a trial records fewer than onset + T_p frames.
    """
    if len(raw_trials) != len(events):
        raise ValueError("one TrialEvents required per trial")
    t_p = window_length(events)
    windows = []
    for trial, ev in zip(raw_trials, events):
        end = ev.onset_frame + t_p
        if trial.n_frames < end:
            raise WindowingError(
                f"trial {trial.trial_id!r}: window [{ev.onset_frame}, {end}) "
                f"exceeds its {trial.n_frames} recorded frames"
            )
        windows.append(trial.frames[ev.onset_frame:end].copy())
    frame_rate = raw_trials[0].frame_rate
    return MotionDataset(
        trials=windows,
        trial_ids=[t.trial_id for t in raw_trials],
        participant_id=participant_id,
        joint_schema=joint_schema,
        frame_rate=frame_rate,
    )


def fit_stats(train_trials: Sequence[np.ndarray], units: str = "mm") -> StandardizationStats:
    """Fit per-feature standardization over all frames of the training trials.

    Uses the population standard-deviation convention (divide by N) over
    frames x trials pooled per feature.

    Raises:
        ValueError: some feature has zero variance (its index is named).
    """
    if not len(train_trials):
        raise ValueError("cannot fit stats on an empty training split")
    pooled = np.concatenate([np.asarray(t, dtype=float) for t in train_trials], axis=0)
    mean = pooled.mean(axis=0)
    std = pooled.std(axis=0)
    if np.any(std == 0):
        bad = int(np.argmin(std))
        raise ValueError(f"feature {bad} has zero variance in the training split")
    return StandardizationStats(mean=mean, std=std, units=units)


def standardize_array(x: np.ndarray, stats: StandardizationStats) -> np.ndarray:
    """Z-score a T x D array with the given per-feature stats."""
    return (np.asarray(x, dtype=float) - stats.mean) / stats.std


def unstandardize_array(x: np.ndarray, stats: StandardizationStats) -> np.ndarray:
    """Invert `standardize_array`."""
    return np.asarray(x, dtype=float) * stats.std + stats.mean


def standardize(dataset: MotionDataset, stats: StandardizationStats) -> MotionDataset:
    """Return a standardized copy of the dataset."""
    return replace(
        dataset,
        trials=[standardize_array(t, stats) for t in dataset.trials],
        units="standardized",
    )


def unstandardize(dataset: MotionDataset, stats: StandardizationStats) -> MotionDataset:
    """Return a copy of the dataset mapped back to original units."""
    return replace(
        dataset,
        trials=[unstandardize_array(t, stats) for t in dataset.trials],
        units=stats.units,
    )


def make_folds(n_trials: int, n_folds: int = 10, seed: int = 0) -> FoldAssignment:
    """Assign trials to folds by a seeded shuffle plus round-robin.

    Raises:
        ValueError: fewer trials than folds.
    """
    if n_trials < n_folds:
        raise ValueError(f"cannot split {n_trials} trials into {n_folds} folds")
    order = np.random.default_rng(seed).permutation(n_trials)
    fold_of = np.empty(n_trials, dtype=int)
    fold_of[order] = np.arange(n_trials) % n_folds
    return FoldAssignment(n_folds=n_folds, fold_of_trial=fold_of, seed=seed)
