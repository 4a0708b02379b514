"""Event detection tests: fixed profiles, oracle cross-checks, invariances."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kinode.events import (
    EventDetectionError,
    TrialEvents,
    compute_speed,
    detect_events,
    detect_onset,
    detect_release,
    moving_average,
    onset_scan,
    release_from_speed,
)

from oracles import (
    oracle_gradient,
    oracle_moving_average,
    oracle_onset,
    oracle_release,
)


def test_onset_scan_threshold_profile() -> None:
    velocity = np.array([0.0, 0.2, 1.0, 10.0, 20.0, 20.0, 10.0])
    onset, at_start = onset_scan(velocity, peak_frame=6)
    assert onset == 1
    assert at_start is False


def test_onset_scan_threshold_is_strict() -> None:
    velocity = np.array([0.5, 1.0, 10.0])
    onset, at_start = onset_scan(velocity, peak_frame=2)
    assert (onset, at_start) == (0, True)


def test_onset_scan_never_below_threshold_flags_start() -> None:
    velocity = np.array([5.0, 6.0, 7.0, 8.0])
    onset, at_start = onset_scan(velocity, peak_frame=3)
    assert onset == 0
    assert at_start is True


def test_onset_scan_rejects_nonpositive_peak_velocity() -> None:
    with pytest.raises(EventDetectionError):
        onset_scan(np.array([-3.0, -1.0, 0.0]), peak_frame=2)


def test_onset_scan_matches_exhaustive_oracle() -> None:
    rng = np.random.default_rng(42)
    checked = 0
    while checked < 100:
        n = int(rng.integers(3, 60))
        velocity = rng.standard_normal(n) * 10.0
        peak = int(rng.integers(0, n))
        if np.max(velocity[: peak + 1]) <= 0:
            continue
        assert onset_scan(velocity, peak) == oracle_onset(velocity, peak)
        checked += 1


@settings(deadline=None)
@given(st.data())
def test_onset_scan_oracle_property(data: st.DataObject) -> None:
    n = data.draw(st.integers(3, 40))
    velocity = np.array(
        data.draw(
            st.lists(
                st.floats(-50.0, 50.0, allow_nan=False, width=32),
                min_size=n,
                max_size=n,
            )
        )
    )
    peak = data.draw(st.integers(0, n - 1))
    if np.max(velocity[: peak + 1]) <= 0:
        with pytest.raises(EventDetectionError):
            onset_scan(velocity, peak)
        return
    onset, at_start = onset_scan(velocity, peak)
    assert 0 <= onset <= peak
    assert (onset, at_start) == oracle_onset(velocity, peak)


def test_release_takes_first_frame_of_plateau() -> None:
    speed = np.array([0.0, 1.0, 3.0, 3.0, 2.0])
    assert release_from_speed(speed) == 2
    assert oracle_release(speed) == 2


def test_release_rejects_all_zero_speed() -> None:
    with pytest.raises(EventDetectionError):
        release_from_speed(np.zeros(10))


def test_release_matches_oracle() -> None:
    rng = np.random.default_rng(7)
    for _ in range(100):
        n = int(rng.integers(3, 80))
        speed = np.abs(rng.standard_normal(n)) + 1e-6
        assert release_from_speed(speed) == oracle_release(speed)


def test_moving_average_matches_oracle() -> None:
    rng = np.random.default_rng(3)
    for _ in range(50):
        n = int(rng.integers(1, 40))
        window = int(rng.integers(1, 12))
        series = rng.standard_normal(n)
        got = moving_average(series, window)
        want = oracle_moving_average(series, window)
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


def test_moving_average_edges_shrink() -> None:
    series = np.array([1.0, 2.0, 3.0, 4.0])
    np.testing.assert_allclose(moving_average(series, 3), [1.5, 2.0, 3.0, 3.5])


def test_moving_average_window_one_is_identity() -> None:
    series = np.array([5.0, -1.0, 2.0])
    out = moving_average(series, 1)
    np.testing.assert_array_equal(out, series)
    assert out is not series


def test_compute_speed_constant_velocity_is_exact() -> None:
    t = np.arange(50, dtype=float)[:, None]
    positions = t * np.array([1.0, 2.0, 2.0])
    speed = compute_speed(positions, frame_rate=200.0)
    np.testing.assert_array_equal(speed, np.full(50, 600.0))


def test_compute_speed_matches_gradient_oracle() -> None:
    rng = np.random.default_rng(11)
    positions = rng.standard_normal((30, 3)) * 100.0
    rate = 200.0
    per_axis = np.stack(
        [oracle_gradient(positions[:, a], 1.0 / rate) for a in range(3)], axis=1
    )
    want = np.linalg.norm(per_axis, axis=1)
    np.testing.assert_allclose(compute_speed(positions, rate), want, rtol=1e-12)


def test_compute_speed_rejects_bad_shapes() -> None:
    with pytest.raises(ValueError):
        compute_speed(np.zeros((10, 2)), 200.0)
    with pytest.raises(ValueError):
        compute_speed(np.zeros((2, 3)), 200.0)


def _ramp_knee() -> np.ndarray:
    """Quiet phase, rise of one unit per frame to frame 30, then a plateau.

    The plateau keeps the central-difference velocity at the height maximum
    above threshold, so the backward scan has to walk down the whole ramp.
    """
    z = np.zeros(41)
    z[10:31] = np.arange(1.0, 22.0)
    z[31:] = 21.0
    return z


def test_detect_onset_ramp_unsmoothed() -> None:
    result = detect_onset(_ramp_knee(), frame_rate=100.0, smoothing_window=1)
    assert result.max_knee_height_frame == 30
    assert result.onset_frame == 8
    assert result.onset_at_start is False


def test_detect_onset_ramp_smoothed_shifts_earlier() -> None:
    result = detect_onset(_ramp_knee(), frame_rate=100.0, smoothing_window=5)
    assert result.max_knee_height_frame == 30
    assert result.onset_frame == 6


def test_detect_onset_peak_tie_takes_first() -> None:
    z = np.array([0.0, 1.0, 5.0, 5.0, 5.0, 2.0, 0.0])
    result = detect_onset(z, frame_rate=100.0, smoothing_window=1)
    assert result.max_knee_height_frame == 2


def _dyadic_knee(rng: np.random.Generator, n: int = 64) -> np.ndarray:
    """Knee series with every value a small multiple of 2**-10."""
    steps = rng.integers(-64, 256, size=n)
    return np.cumsum(steps).astype(float) * 2.0**-10


def test_detect_onset_translation_invariant_exactly() -> None:
    rng = np.random.default_rng(19)
    for _ in range(20):
        z = _dyadic_knee(rng)
        base = detect_onset(z, 200.0)
        shifted = detect_onset(z + 4096.0, 200.0)
        assert base == shifted


def test_detect_onset_scale_invariant_for_power_of_two() -> None:
    rng = np.random.default_rng(23)
    for _ in range(20):
        z = _dyadic_knee(rng)
        base = detect_onset(z, 200.0)
        scaled = detect_onset(z * 8.0, 200.0)
        assert base == scaled


def test_detect_release_translation_and_scale_invariant() -> None:
    rng = np.random.default_rng(29)
    for _ in range(20):
        wrist = np.stack([_dyadic_knee(rng) for _ in range(3)], axis=1)
        base = detect_release(wrist, 200.0)
        assert detect_release(wrist + 1024.0, 200.0) == base
        assert detect_release(wrist * 8.0, 200.0) == base


def test_detect_release_composition_matches_oracle() -> None:
    rng = np.random.default_rng(31)
    for _ in range(100):
        n = int(rng.integers(8, 50))
        wrist = rng.standard_normal((n, 3)) * 50.0
        rate = 200.0
        per_axis = np.stack(
            [oracle_gradient(wrist[:, a], 1.0 / rate) for a in range(3)], axis=1
        )
        speed = oracle_moving_average(np.linalg.norm(per_axis, axis=1), 5)
        assert detect_release(wrist, rate) == oracle_release(speed)


def test_detect_events_assembles_fields() -> None:
    knee = _ramp_knee()
    t = np.arange(41, dtype=float)
    wrist = np.stack([np.exp(0.12 * t), np.zeros(41), np.zeros(41)], axis=1)
    events = detect_events(knee, wrist, 100.0)
    assert events.max_knee_height_frame == 30
    assert events.onset_frame == 6
    assert events.release_frame == 40
    assert events.onset_at_start is False


def test_detect_events_rejects_release_before_peak() -> None:
    knee = _ramp_knee()
    wrist = np.zeros((41, 3))
    wrist[:5, 0] = [0.0, 10.0, 20.0, 10.0, 0.0]
    with pytest.raises(ValueError):
        detect_events(knee, wrist, 100.0)


def test_trial_events_validation() -> None:
    with pytest.raises(ValueError):
        TrialEvents(max_knee_height_frame=5, onset_frame=6, release_frame=10)
    with pytest.raises(ValueError):
        TrialEvents(max_knee_height_frame=5, onset_frame=2, release_frame=5)
    ok = TrialEvents(max_knee_height_frame=5, onset_frame=2, release_frame=9)
    assert ok.onset_at_start is False
