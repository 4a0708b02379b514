"""Acceptance gate: nine desk-scale checks, one test per criterion.

Run `pytest -v tests/test_acceptance.py` to get one pass/fail line per
criterion; each test also prints an `ACCEPTANCE n ...` verdict line with
the measured numbers (visible with -rA or -s, and on failure).

Criterion 7 trains ten folds on a 200-trial synthetic dataset and
dominates the runtime (about 15 minutes on one CPU core); everything else
finishes in seconds. It is defined last so the cheap checks run first.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
import torch
import yaml

from kinode import (
    DecoderConfig,
    EncoderConfig,
    LatentODEModel,
    ModelConfigs,
    ModelParams,
    StandardizationStats,
    SynthConfig,
    TimeGrid,
    TrainConfig,
    VectorFieldConfig,
    integrate,
    make_folds,
    predict,
    synth_generate,
    train_fold,
)
from kinode.cli import ExperimentLayout, main
from kinode.dataset import fit_stats
from kinode.encoder import segment_spans
from kinode.evaluation import r2_from_arrays, rmse_from_arrays
from kinode.events import detect_onset, detect_release
from kinode.training import (
    kl_from_moments,
    load_checkpoint,
    total_loss_given_noise,
    validation_metrics,
)

from oracles import (
    oracle_gradient,
    oracle_kl_monte_carlo,
    oracle_moving_average,
    oracle_onset,
    oracle_r2_curve,
    oracle_release,
    oracle_rmse_curve,
)

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def _verdict(number: int, name: str, ok: bool, detail: str) -> None:
    state = "PASS" if ok else "FAIL"
    print(f"ACCEPTANCE {number} {name}: {state} ({detail})", flush=True)


class _DecayField:
    """The test problem dz/dt = -z, duck-typed as a latent vector field."""

    def __init__(self) -> None:
        self.config = VectorFieldConfig(latent_dim=1, hidden_dims=(1, 1))

    def __call__(self, z: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        return -z


def test_criterion_1_rk4_solver():
    start = time.monotonic()
    field = _DecayField()
    z0 = torch.tensor([1.0], dtype=torch.float64)
    exact = math.exp(-1.0)

    def terminal_error(n_steps: int) -> float:
        path = integrate(z0, TimeGrid.uniform(n_steps + 1), field)
        return abs(float(path.states[-1, 0]) - exact)

    error_100 = terminal_error(100)
    step_counts = [25, 50, 100, 200]
    errors = [terminal_error(n) for n in step_counts]
    slope, _ = np.polyfit(np.log([1.0 / n for n in step_counts]),
                          np.log(errors), 1)
    elapsed = time.monotonic() - start

    ok = error_100 < 1e-8 and 3.9 <= slope <= 4.1 and elapsed < 1.0
    _verdict(1, "RK4 solver", ok,
             f"terminal err {error_100:.2e}, order {slope:.3f}, {elapsed:.2f}s")
    assert error_100 < 1e-8
    assert 3.9 <= slope <= 4.1
    assert elapsed < 1.0


def test_criterion_2_loss_gradients():
    start = time.monotonic()
    configs = ModelConfigs(
        encoder=EncoderConfig(n_layers=1, n_heads=2, model_dim=8,
                              latent_dim=2, n_tokens=3, input_dim=5),
        vector_field=VectorFieldConfig(latent_dim=2, hidden_dims=(8, 8)),
        decoder=DecoderConfig(latent_dim=2, hidden_dims=(8, 8), output_dim=5),
    )
    torch.manual_seed(0)
    model = LatentODEModel(configs).double()
    generator = torch.Generator().manual_seed(1)
    batch = torch.randn(4, 12, 5, dtype=torch.float64, generator=generator)
    eps = torch.randn(4, 2, dtype=torch.float64, generator=generator)
    config = TrainConfig()

    def loss_value() -> float:
        with torch.no_grad():
            total, _ = total_loss_given_noise(batch, model, config, eps)
        return float(total)

    total, _ = total_loss_given_noise(batch, model, config, eps)
    total.backward()

    named = [(name, p) for name, p in model.named_parameters()]
    sizes = np.array([p.numel() for _, p in named])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rng = np.random.default_rng(2)
    picks = rng.choice(int(offsets[-1]), size=24, replace=False)

    step = 1e-5
    max_rel = 0.0
    for flat_index in picks:
        tensor_i = int(np.searchsorted(offsets, flat_index, side="right") - 1)
        local = int(flat_index - offsets[tensor_i])
        _, param = named[tensor_i]
        grad = param.grad
        analytic = 0.0 if grad is None else float(grad.reshape(-1)[local])
        flat = param.data.view(-1)
        original = float(flat[local])
        flat[local] = original + step
        plus = loss_value()
        flat[local] = original - step
        minus = loss_value()
        flat[local] = original
        fd = (plus - minus) / (2.0 * step)
        rel = abs(analytic - fd) / max(abs(analytic), abs(fd), 1e-10)
        max_rel = max(max_rel, rel)
    elapsed = time.monotonic() - start

    ok = len(picks) >= 20 and max_rel < 1e-3 and elapsed < 30.0
    _verdict(2, "loss gradients vs finite differences", ok,
             f"{len(picks)} params, max rel err {max_rel:.2e}, {elapsed:.1f}s")
    assert len(picks) >= 20
    assert max_rel < 1e-3
    assert elapsed < 30.0


def test_criterion_3_kl_monte_carlo():
    start = time.monotonic()
    rng = np.random.default_rng(3)
    worst = 0.0
    for i in range(10):
        mean = rng.normal(size=3)
        log_var = rng.uniform(-2.0, 1.0, size=3)
        closed = float(kl_from_moments(torch.as_tensor(mean),
                                       torch.as_tensor(log_var)))
        estimate, se = oracle_kl_monte_carlo(mean, log_var,
                                             n_samples=100_000, seed=100 + i)
        worst = max(worst, abs(closed - estimate) / se)
    elapsed = time.monotonic() - start

    ok = worst < 3.0 and elapsed < 10.0
    _verdict(3, "KL closed form vs Monte Carlo", ok,
             f"worst deviation {worst:.2f} SE over 10 tokens, {elapsed:.1f}s")
    assert worst < 3.0
    assert elapsed < 10.0


def test_criterion_4_causality():
    start = time.monotonic()
    configs = ModelConfigs(
        encoder=EncoderConfig(n_layers=2, n_heads=2, model_dim=16,
                              n_tokens=5, input_dim=6),
        vector_field=VectorFieldConfig(hidden_dims=(16, 16)),
        decoder=DecoderConfig(hidden_dims=(16, 16), output_dim=6),
    )
    torch.manual_seed(4)
    model = LatentODEModel(configs)
    stats = StandardizationStats(mean=np.zeros(6), std=np.ones(6))
    params = ModelParams(model=model, stats=stats)
    n_frames, n_tokens = 23, 5
    spans = segment_spans(n_frames, n_tokens)
    generator = torch.Generator().manual_seed(5)
    rng = np.random.default_rng(6)

    tokens_ok = True
    predict_ok = True
    for _ in range(20):
        x = torch.randn(n_frames, 6, generator=generator)
        k = int(rng.integers(0, n_tokens - 1))
        end = spans[k][1]
        perturbed = x.clone()
        perturbed[end:] += torch.randn(n_frames - end, 6, generator=generator)
        with torch.no_grad():
            mean_a, log_var_a = model.encoder(x)
            mean_b, log_var_b = model.encoder(perturbed)
        tokens_ok &= torch.equal(mean_a[: k + 1], mean_b[: k + 1])
        tokens_ok &= torch.equal(log_var_a[: k + 1], log_var_b[: k + 1])

        first_end = spans[0][1]
        later = x.clone()
        later[first_end:] += torch.randn(n_frames - first_end, 6,
                                         generator=generator)
        base = predict(params, x.numpy())
        moved = predict(params, later.numpy())
        predict_ok &= np.array_equal(base.predicted, moved.predicted)
    elapsed = time.monotonic() - start

    ok = tokens_ok and predict_ok and elapsed < 30.0
    _verdict(4, "causality", ok,
             f"20 inputs, tokens bit-identical {tokens_ok}, "
             f"predict bit-identical {predict_ok}, {elapsed:.1f}s")
    assert tokens_ok
    assert predict_ok
    assert elapsed < 30.0


def test_criterion_5_metric_oracles():
    rng = np.random.default_rng(7)
    rmse_exact = True
    r2_exact = True
    for _ in range(50):
        n = int(rng.integers(2, 4))
        t = int(rng.integers(1, 5))
        d = int(rng.integers(1, 3))
        truth = rng.normal(size=(n, t, d))
        predicted = truth + rng.normal(size=(n, t, d))
        rmse_t, _ = rmse_from_arrays(truth, predicted, coords_per_joint=1)
        rmse_exact &= np.array_equal(rmse_t, oracle_rmse_curve(truth, predicted))
        r2_exact &= np.array_equal(r2_from_arrays(truth, predicted),
                                   oracle_r2_curve(truth, predicted))

    truth = rng.normal(size=(3, 4, 2))
    perfect = np.array_equal(r2_from_arrays(truth, truth.copy()), np.ones(4))
    at_mean = np.broadcast_to(truth.mean(axis=0), truth.shape).copy()
    zero = np.array_equal(r2_from_arrays(truth, at_mean), np.zeros(4))

    ok = rmse_exact and r2_exact and perfect and zero
    _verdict(5, "metric oracles", ok,
             f"50 cases exact (rmse {rmse_exact}, r2 {r2_exact}), "
             f"perfect->1 {perfect}, mean->0 {zero}")
    assert rmse_exact
    assert r2_exact
    assert perfect
    assert zero


def _dyadic_walk(rng: np.random.Generator, n: int, low: int, high: int,
                 columns: int | None = None) -> np.ndarray:
    shape = (n,) if columns is None else (n, columns)
    steps = rng.integers(low, high, size=shape)
    return np.cumsum(steps, axis=0) * 2.0**-10


def test_criterion_6_event_detection():
    frame_rate = 200.0
    window = 5
    rng = np.random.default_rng(8)
    onset_match = True
    release_match = True
    invariance = True
    checked = 0
    attempts = 0
    while checked < 100 and attempts < 400:
        attempts += 1
        n = int(rng.integers(20, 80))
        knee = _dyadic_walk(rng, n, -64, 256)
        wrist = _dyadic_walk(rng, n, -128, 128, columns=3)

        peak = 0
        for i in range(1, n):
            if knee[i] > knee[peak]:
                peak = i
        try:
            velocity = oracle_moving_average(
                oracle_gradient(knee, 1.0 / frame_rate), window
            )
            onset_ref, flag_ref = oracle_onset(velocity, peak)
        except ValueError:
            continue
        checked += 1

        found = detect_onset(knee, frame_rate, window)
        onset_match &= (found.max_knee_height_frame == peak
                        and found.onset_frame == onset_ref
                        and found.onset_at_start == flag_ref)

        speed = np.sqrt(sum(
            oracle_gradient(wrist[:, c], 1.0 / frame_rate) ** 2
            for c in range(3)
        )) * 1.0
        release_ref = oracle_release(oracle_moving_average(speed, window))
        release_match &= detect_release(wrist, frame_rate, window) == release_ref

        moved = detect_onset(knee + 4096.0, frame_rate, window)
        scaled = detect_onset(knee * 8.0, frame_rate, window)
        invariance &= (moved.onset_frame == found.onset_frame
                       == scaled.onset_frame)
        shift = np.array([4096.0, 1024.0, -2048.0])
        invariance &= (detect_release(wrist + shift, frame_rate, window)
                       == release_ref)
        invariance &= (detect_release(wrist * 8.0, frame_rate, window)
                       == release_ref)

    ok = (checked == 100 and onset_match and release_match and invariance)
    _verdict(6, "event detection oracle", ok,
             f"{checked} trajectories, onset {onset_match}, "
             f"release {release_match}, invariance {invariance}")
    assert checked == 100
    assert onset_match
    assert release_match
    assert invariance


def test_criterion_8_determinism(tmp_path):
    config_body = {
        "encoder": {"n_layers": 1, "n_heads": 2, "model_dim": 8,
                    "feedforward_dim": 16},
        "vector_field": {"hidden_dims": [8, 8]},
        "decoder": {"hidden_dims": [8, 8]},
        "train": {"epochs": 3, "batch_size": 8, "learning_rate": 1e-3},
        "synth": {"n_trials": 12, "n_frames": 20},
        "n_folds": 2,
    }
    config = tmp_path / "experiment.yaml"
    config.write_text(yaml.safe_dump(config_body))
    data = tmp_path / "data"
    assert main(["synth", "--config", str(config), "--out", str(data)]) == 0

    finals = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert main(["train", "--config", str(config), "--data", str(data),
                     "--out", str(out), "--fold", "0", "--seed", "7"]) == 0
        history = json.loads(
            ExperimentLayout(out).history_path(0).read_text()
        )
        finals.append(history["total_loss"][-1])
    loss_identical = finals[0] == finals[1]

    from kinode.archive import read_archive

    archive = read_archive(data)
    loaded = load_checkpoint(ExperimentLayout(tmp_path / "a").checkpoint_path(0))
    replayed = validation_metrics(loaded.params, archive.dataset, archive.folds,
                                  0, loaded.train_config)
    worst = max(abs(replayed[key] - loaded.val_metrics[key])
                for key in loaded.val_metrics)

    ok = loss_identical and worst < 1e-6
    _verdict(8, "determinism", ok,
             f"repeat-run final loss identical {loss_identical} "
             f"({finals[0]!r}), checkpoint metric drift {worst:.2e}")
    assert loss_identical
    assert worst < 1e-6


def test_criterion_9_standardization_hygiene():
    dataset, _ = synth_generate(SynthConfig(n_trials=20, n_frames=16), seed=9)
    folds = make_folds(20, 4, seed=0)
    train_idx = folds.train_indices(0)
    test_idx = folds.test_indices(0)

    stats_before = fit_stats([dataset.trials[i] for i in train_idx])
    mutated_trials = [t.copy() for t in dataset.trials]
    for i in test_idx:
        mutated_trials[i] += 1e6
    mutated = replace(dataset, trials=mutated_trials)
    stats_after = fit_stats([mutated.trials[i] for i in train_idx])
    stats_identical = (np.array_equal(stats_before.mean, stats_after.mean)
                       and np.array_equal(stats_before.std, stats_after.std))

    configs = ModelConfigs(
        encoder=EncoderConfig(n_layers=1, n_heads=2, model_dim=8,
                              feedforward_dim=16, input_dim=45),
        vector_field=VectorFieldConfig(hidden_dims=(8, 8)),
        decoder=DecoderConfig(hidden_dims=(8, 8), output_dim=45),
    )
    train_config = TrainConfig(epochs=2, batch_size=8, learning_rate=1e-3)
    params_a, history_a = train_fold(dataset, folds, 0, train_config, configs)
    params_b, history_b = train_fold(mutated, folds, 0, train_config, configs)
    fold_stats_identical = (
        np.array_equal(params_a.stats.mean, params_b.stats.mean)
        and np.array_equal(params_a.stats.std, params_b.stats.std)
    )
    training_identical = history_a.total_loss == history_b.total_loss

    ok = stats_identical and fold_stats_identical and training_identical
    _verdict(9, "standardization hygiene", ok,
             f"stats bit-identical {stats_identical}, fold stats "
             f"{fold_stats_identical}, losses identical {training_identical}")
    assert stats_identical
    assert fold_stats_identical
    assert training_identical


def test_criterion_7_synthetic_end_to_end(tmp_path):
    start = time.monotonic()
    config = CONFIG_DIR / "synth-desk.yaml"
    data = tmp_path / "data"
    run = tmp_path / "run"
    assert main(["synth", "--config", str(config), "--out", str(data)]) == 0
    assert main(["train", "--config", str(config), "--data", str(data),
                 "--out", str(run)]) == 0
    assert main(["eval", "--config", str(config), "--data", str(data),
                 "--out", str(run)]) == 0
    elapsed = time.monotonic() - start

    summary = json.loads(ExperimentLayout(run).summary_path.read_text())
    r2_latter = summary["mean_r2_latter_half"]
    model_rmse = summary["mean_rmse_latter_half_mm"]
    baseline_rmse = summary["baseline_mean_rmse_latter_half_mm"]
    improvement = 1.0 - model_rmse / baseline_rmse

    ok = (summary["n_folds"] == 10 and r2_latter > 0.8
          and improvement >= 0.30 and elapsed < 1800.0)
    _verdict(7, "synthetic end to end", ok,
             f"latter-half R2 {r2_latter:.4f}, rmse {model_rmse:.3f} vs "
             f"baseline {baseline_rmse:.3f} ({improvement:.1%} better), "
             f"{elapsed/60:.1f} min")
    assert summary["n_folds"] == 10
    assert r2_latter > 0.8
    assert improvement >= 0.30
    assert elapsed < 1800.0
