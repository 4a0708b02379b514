"""Kinematic event detection for noncyclic motion trials.

Events anchor the analysis window of each trial: motion onset is found by
scanning backward from the lead-knee height maximum until the upward knee
velocity first drops below 5% of its maximum, and release is the frame of
maximum wrist speed. Velocities come from central finite differences with
one-sided boundary stencils; an optional moving average (default window 5)
smooths the velocity signals before thresholding. Smoothing never touches
the position data itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_SMOOTHING_WINDOW = 5
ONSET_VELOCITY_FRACTION = 0.05


class EventDetectionError(ValueError):
    """A trial's kinematic signal admits no valid event."""


@dataclass(frozen=True)
class TrialEvents:
    """Detected event frames for one trial.

    Attributes:
        max_knee_height_frame: frame of maximum lead-knee height.
        onset_frame: motion-onset frame (start of the analysis window).
        release_frame: frame of maximum throwing-wrist speed.
        onset_at_start: True when the onset scan reached frame 0 without
            the velocity ever dropping below threshold.
    """

    max_knee_height_frame: int
    onset_frame: int
    release_frame: int
    onset_at_start: bool = False

    def __post_init__(self) -> None:
        if not (0 <= self.onset_frame <= self.max_knee_height_frame):
            raise ValueError(
                f"onset frame {self.onset_frame} must lie in "
                f"[0, {self.max_knee_height_frame}]"
            )
        if self.release_frame <= self.max_knee_height_frame:
            raise ValueError(
                f"release frame {self.release_frame} must come after the "
                f"knee-height maximum at {self.max_knee_height_frame}"
            )


@dataclass(frozen=True)
class OnsetDetection:
    """Result of `detect_onset`."""

    max_knee_height_frame: int
    onset_frame: int
    onset_at_start: bool


def moving_average(series: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average with windows shrunk at the boundaries.

    Each output sample is the mean of the input over an index window
    [i - (window-1)//2, i + window//2] clipped to the valid range, so the
    output has the same length as the input and edge samples average over
    fewer points. A window below 2 returns the input unchanged.
    """
    series = np.asarray(series, dtype=float)
    if series.ndim != 1:
        raise ValueError(f"expected a 1-D series, got shape {series.shape}")
    if window < 2:
        return series.copy()
    n = series.shape[0]
    left = (window - 1) // 2
    right = window // 2
    csum = np.concatenate([[0.0], np.cumsum(series)])
    lo = np.maximum(np.arange(n) - left, 0)
    hi = np.minimum(np.arange(n) + right + 1, n)
    return (csum[hi] - csum[lo]) / (hi - lo)


def _velocity(series: np.ndarray, frame_rate: float) -> np.ndarray:
    """Finite-difference velocity: central in the interior, one-sided at the ends."""
    if frame_rate <= 0:
        raise ValueError(f"frame rate must be positive, got {frame_rate}")
    return np.gradient(np.asarray(series, dtype=float), axis=0) * frame_rate


def compute_speed(series: np.ndarray, frame_rate: float) -> np.ndarray:
    """Frame-wise speed of a 3-D position series.

    Args:
        series: T x 3 positions in mm, T >= 3.
        frame_rate: sampling rate in Hz.

    Returns:
        Length-T array of speeds in mm/s, from central finite differences
        on interior frames and one-sided differences at the boundaries.
    """
    series = np.asarray(series, dtype=float)
    if series.ndim != 2 or series.shape[1] != 3:
        raise ValueError(f"expected a T x 3 series, got shape {series.shape}")
    if series.shape[0] < 3:
        raise ValueError(
            f"series too short for finite differences: {series.shape[0]} frames, need 3"
        )
    return np.linalg.norm(_velocity(series, frame_rate), axis=1)


def onset_scan(upward_velocity: np.ndarray, peak_frame: int) -> tuple[int, bool]:
    """Backward threshold scan that defines motion onset.

    Starting at `peak_frame` and walking toward frame 0, returns the first
    frame whose upward velocity is strictly below 5% of the maximum upward
    velocity over [0, peak_frame]. If no frame qualifies the scan lands on
    frame 0 and the second element of the result is True.

    Raises:
        EventDetectionError: the maximum upward velocity is not positive.
    """
    v = np.asarray(upward_velocity, dtype=float)
    if not 0 <= peak_frame < v.shape[0]:
        raise ValueError(f"peak frame {peak_frame} outside series of length {v.shape[0]}")
    v_max = float(np.max(v[: peak_frame + 1]))
    if v_max <= 0:
        raise EventDetectionError(
            f"maximum upward velocity {v_max:g} is not positive; no rise to threshold"
        )
    threshold = ONSET_VELOCITY_FRACTION * v_max
    for frame in range(peak_frame, -1, -1):
        if v[frame] < threshold:
            return frame, False
    return 0, True


def detect_onset(
    knee_vertical: np.ndarray,
    frame_rate: float,
    smoothing_window: int = DEFAULT_SMOOTHING_WINDOW,
) -> OnsetDetection:
    """Locate motion onset from the lead knee's vertical trajectory.

    The knee-height maximum (first frame on ties) anchors a backward scan
    over the upward knee velocity, optionally smoothed by a moving average.
    Onset is the first scanned frame whose velocity falls strictly below 5%
    of the maximum upward velocity observed up to the peak.

    Args:
        knee_vertical: length-T vertical positions of the lead knee, T >= 3.
        frame_rate: sampling rate in Hz.
        smoothing_window: moving-average width for the velocity signal;
            values below 2 disable smoothing.

    Returns:
        OnsetDetection with the peak frame, onset frame, and a flag marking
        onsets forced to frame 0 because the threshold was never crossed.

    Raises:
        EventDetectionError: the knee never moves upward before its peak.
    """
    z = np.asarray(knee_vertical, dtype=float)
    if z.ndim != 1:
        raise ValueError(f"expected a 1-D vertical series, got shape {z.shape}")
    if z.shape[0] < 3:
        raise ValueError(
            f"series too short for finite differences: {z.shape[0]} frames, need 3"
        )
    peak = int(np.argmax(z))
    velocity = moving_average(_velocity(z, frame_rate), smoothing_window)
    onset, at_start = onset_scan(velocity, peak)
    return OnsetDetection(
        max_knee_height_frame=peak, onset_frame=onset, onset_at_start=at_start
    )


def release_from_speed(speed: np.ndarray) -> int:
    """Release frame given a wrist speed profile: the first maximal frame.

    Raises:
        EventDetectionError: the speed profile is identically zero.
    """
    speed = np.asarray(speed, dtype=float)
    if not np.any(speed > 0):
        raise EventDetectionError("wrist speed is identically zero; no release peak")
    return int(np.argmax(speed))


def detect_release(
    wrist: np.ndarray,
    frame_rate: float,
    smoothing_window: int = DEFAULT_SMOOTHING_WINDOW,
) -> int:
    """Locate ball release as the frame of maximum wrist speed.

    Args:
        wrist: T x 3 wrist positions in mm, T >= 3.
        frame_rate: sampling rate in Hz.
        smoothing_window: moving-average width for the speed signal;
            values below 2 disable smoothing.

    Returns:
        Index of the first frame attaining the maximum (smoothed) speed.
    """
    speed = moving_average(compute_speed(wrist, frame_rate), smoothing_window)
    return release_from_speed(speed)


def detect_events(
    knee_vertical: np.ndarray,
    wrist: np.ndarray,
    frame_rate: float,
    smoothing_window: int = DEFAULT_SMOOTHING_WINDOW,
) -> TrialEvents:
    """Run both detectors on one trial and assemble validated TrialEvents."""
    onset = detect_onset(knee_vertical, frame_rate, smoothing_window)
    release = detect_release(wrist, frame_rate, smoothing_window)
    return TrialEvents(
        max_knee_height_frame=onset.max_knee_height_frame,
        onset_frame=onset.onset_frame,
        release_frame=release,
        onset_at_start=onset.onset_at_start,
    )
