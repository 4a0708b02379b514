"""Loss functions, per-fold training loop, and checkpoint persistence.

Training minimizes lambda_recon * MSE + lambda_kl * KL, where the KL term
pulls every Gaussian token toward a standard normal prior. One fold holds
out a test subset, fits standardization on the remaining trials only, and
runs seeded shuffled mini-batch Adam; with a fixed seed the batch order and
every reparameterization draw repeat exactly, so reruns reproduce the run
up to the compute backend's kernel determinism.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import Tensor

from .dataset import (
    FoldAssignment,
    MotionDataset,
    StandardizationStats,
    fit_stats,
    standardize_array,
)
from .decoder import DecodeError, DecoderConfig
from .dynamics import IntegrationError, VectorFieldConfig
from .encoder import EncoderConfig, GaussianToken, NumericError, segment_spans
from .model import LatentODEModel, ModelConfigs, ModelOutput, ModelParams

CHECKPOINT_FORMAT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    """The loss became non-finite during optimization."""


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters.

    Attributes:
        lambda_recon: weight of the reconstruction term.
        lambda_kl: weight of the KL term.
        learning_rate: Adam step size.
        batch_size: trials per mini-batch.
        epochs: passes over the training split.
        adam_beta1 / adam_beta2 / adam_eps: Adam moment and stability terms.
        seed: controls initialization, batch order, and latent draws.
        sample_latent: when True (default) z0 is drawn by reparameterization
            each step; when False the posterior mean is used even in
            training.
        latent_consistency_weight: optional extra penalty tying each token
            mean to the integrated latent state at its segment midpoint;
            0 disables it (the default loss has no such term).
        grad_clip_norm: optional global gradient-norm clip; None disables.
        weight_decay: Adam weight decay; 0 disables.
    """

    lambda_recon: float = 1.0
    lambda_kl: float = 1e-3
    learning_rate: float = 1e-4
    batch_size: int = 32
    epochs: int = 1500
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    sample_latent: bool = True
    latent_consistency_weight: float = 0.0
    grad_clip_norm: float | None = None
    weight_decay: float = 0.0

    def __post_init__(self) -> None:
        for name in ("lambda_recon", "lambda_kl", "latent_consistency_weight",
                     "weight_decay"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.learning_rate < 0:
            raise ValueError("learning rate must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if self.epochs < 1:
            raise ValueError("need at least one epoch")
        if self.grad_clip_norm is not None and self.grad_clip_norm <= 0:
            raise ValueError("grad_clip_norm must be positive when set")


@dataclass
class TrainHistory:
    """Per-epoch loss components and wall-clock times."""

    total_loss: list[float] = field(default_factory=list)
    recon_loss: list[float] = field(default_factory=list)
    kl_loss: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)

    def append(self, total: float, recon: float, kl: float, seconds: float) -> None:
        self.total_loss.append(total)
        self.recon_loss.append(recon)
        self.kl_loss.append(kl)
        self.epoch_seconds.append(seconds)

    @property
    def n_epochs(self) -> int:
        return len(self.total_loss)


def recon_loss(x_hat: Tensor, x: Tensor) -> Tensor:
    """Mean squared error over all frames and features (and batch)."""
    if x_hat.shape != x.shape:
        raise ValueError(
            f"shape mismatch: reconstruction {tuple(x_hat.shape)} vs "
            f"target {tuple(x.shape)}"
        )
    return (x_hat - x).pow(2).mean()


def kl_from_moments(mean: Tensor, log_var: Tensor) -> Tensor:
    """KL(N(mean, diag exp(log_var)) || N(0, I)).

    Summed over the latent dimension, averaged over all leading dimensions
    (tokens and batch).
    """
    kl = 0.5 * (mean.pow(2) + log_var.exp() - 1.0 - log_var).sum(dim=-1)
    return kl.mean()


def kl_loss(tokens: Sequence[GaussianToken]) -> Tensor:
    """Closed-form KL of a token list against the standard normal prior."""
    if not tokens:
        raise ValueError("no tokens given")
    mean = torch.stack([t.mean for t in tokens])
    log_var = torch.stack([t.log_var for t in tokens])
    return kl_from_moments(mean, log_var)


def _latent_consistency(output: ModelOutput) -> Tensor:
    """Mean squared gap between token means and midpoint latent states."""
    n_frames = output.path.n_points
    n_tokens = output.mean.shape[-2]
    midpoints = [
        (start + end - 1) // 2 for start, end in segment_spans(n_frames, n_tokens)
    ]
    states = output.path.states[..., midpoints, :]
    return (output.mean - states).pow(2).sum(dim=-1).mean()


def total_loss_given_noise(
    batch: Tensor,
    model: LatentODEModel,
    config: TrainConfig,
    eps: Tensor | None,
) -> tuple[Tensor, dict[str, float]]:
    """Weighted loss with the reparameterization noise supplied by the caller.

    Splitting the noise out keeps the loss a deterministic function of
    (batch, params, eps), which is what finite-difference gradient checks
    need.
    """
    output = model(batch, eps=eps)
    recon = recon_loss(output.reconstruction, batch)
    kl = kl_from_moments(output.mean, output.log_var)
    # the weighted sum is taken in float64 so the returned total equals the
    # recombination of the returned component values exactly
    total = config.lambda_recon * recon.double() + config.lambda_kl * kl.double()
    components = {
        "recon_loss": float(recon.detach()),
        "kl_loss": float(kl.detach()),
    }
    if config.latent_consistency_weight > 0:
        consistency = _latent_consistency(output)
        total = total + config.latent_consistency_weight * consistency.double()
        components["latent_consistency"] = float(consistency.detach())
    return total, components


def total_loss(
    batch: Tensor,
    model: LatentODEModel,
    config: TrainConfig,
    generator: torch.Generator | None = None,
) -> tuple[Tensor, dict[str, float]]:
    """Training loss on one batch of standardized trials.

    Draws one reparameterized z0 per trial when config.sample_latent is on,
    otherwise uses posterior means. Returns the total plus a dict of
    unweighted component values.
    """
    eps = None
    if config.sample_latent:
        latent_dim = model.configs.latent_dim
        eps = torch.randn(
            (*batch.shape[:-2], latent_dim), generator=generator, dtype=batch.dtype
        )
    return total_loss_given_noise(batch, model, config, eps)


def train_fold(
    dataset: MotionDataset,
    folds: FoldAssignment,
    fold_id: int,
    train_config: TrainConfig,
    model_configs: ModelConfigs,
    log_every: int = 0,
) -> tuple[ModelParams, TrainHistory]:
    """Train one cross-validation fold from a raw (unstandardized) dataset.

    Standardization stats are fitted on the training subsets only, the
    model is freshly initialized from the seed, and mini-batches follow a
    seeded shuffle each epoch.

    Args:
        dataset: windowed trials in original units.
        folds: fold assignment covering the dataset.
        fold_id: the held-out fold.
        train_config: optimization settings.
        model_configs: architecture of the three components.
        log_every: print a progress line every this many epochs (0 = quiet).

    Returns:
        (ModelParams, TrainHistory) for the trained fold.

    Raises:
        TrainingDivergedError: the loss became non-finite.
    """
    if folds.n_trials != dataset.n_trials:
        raise ValueError(
            f"fold assignment covers {folds.n_trials} trials, dataset has "
            f"{dataset.n_trials}"
        )
    if dataset.units == "standardized":
        raise ValueError("train_fold standardizes internally; pass raw data")
    train_idx = folds.train_indices(fold_id)
    stats = fit_stats([dataset.trials[i] for i in train_idx], units=dataset.units)
    x_train = torch.as_tensor(
        np.stack([standardize_array(dataset.trials[i], stats) for i in train_idx]),
        dtype=torch.float32,
    )

    torch.manual_seed(train_config.seed)
    model = LatentODEModel(model_configs)
    generator = torch.Generator().manual_seed(train_config.seed)
    optimizer = torch.optim.Adam(
        model.parameters(),
        lr=train_config.learning_rate,
        betas=(train_config.adam_beta1, train_config.adam_beta2),
        eps=train_config.adam_eps,
        weight_decay=train_config.weight_decay,
    )

    n_train = x_train.shape[0]
    history = TrainHistory()
    model.train()
    for epoch in range(train_config.epochs):
        started = time.perf_counter()
        order = torch.randperm(n_train, generator=generator)
        sums = {"total": 0.0, "recon": 0.0, "kl": 0.0}
        for step, start in enumerate(range(0, n_train, train_config.batch_size)):
            batch = x_train[order[start:start + train_config.batch_size]]
            try:
                total, components = total_loss(batch, model, train_config, generator)
            except (NumericError, IntegrationError, DecodeError) as err:
                raise TrainingDivergedError(
                    f"non-finite values at epoch {epoch}, step {step}: {err}"
                ) from err
            if not torch.isfinite(total):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, step {step}"
                )
            optimizer.zero_grad()
            total.backward()
            if train_config.grad_clip_norm is not None:
                torch.nn.utils.clip_grad_norm_(
                    model.parameters(), train_config.grad_clip_norm
                )
            optimizer.step()
            weight = batch.shape[0]
            sums["total"] += float(total.detach()) * weight
            sums["recon"] += components["recon_loss"] * weight
            sums["kl"] += components["kl_loss"] * weight
        history.append(
            total=sums["total"] / n_train,
            recon=sums["recon"] / n_train,
            kl=sums["kl"] / n_train,
            seconds=time.perf_counter() - started,
        )
        if log_every and (epoch + 1) % log_every == 0:
            print(
                f"fold {fold_id} epoch {epoch + 1}/{train_config.epochs} "
                f"loss {history.total_loss[-1]:.6f}"
            )
    model.eval()
    params = ModelParams(
        model=model, seed=train_config.seed, fold_id=fold_id, stats=stats
    )
    return params, history


def validation_metrics(
    params: ModelParams,
    dataset: MotionDataset,
    folds: FoldAssignment,
    fold_id: int,
    train_config: TrainConfig,
) -> dict[str, float]:
    """Deterministic loss components on the held-out fold.

    Uses posterior means (no sampling), so repeated calls on the same
    checkpoint return identical numbers.
    """
    if params.stats is None:
        raise ValueError("params carry no standardization stats")
    test_idx = folds.test_indices(fold_id)
    x_test = torch.as_tensor(
        np.stack(
            [standardize_array(dataset.trials[i], params.stats) for i in test_idx]
        ),
        dtype=params.model.dtype,
    )
    params.model.eval()
    with torch.no_grad():
        total, components = total_loss_given_noise(
            x_test, params.model, train_config, eps=None
        )
    return {
        "val_total_loss": float(total),
        "val_recon_loss": components["recon_loss"],
        "val_kl_loss": components["kl_loss"],
        "n_val_trials": float(len(test_idx)),
    }


@dataclass
class LoadedCheckpoint:
    """A checkpoint read back from disk."""

    params: ModelParams
    train_config: TrainConfig | None
    val_metrics: dict[str, float] | None


def save_checkpoint(
    path: str | Path,
    params: ModelParams,
    train_config: TrainConfig | None = None,
    val_metrics: dict[str, float] | None = None,
) -> None:
    """Write a self-contained checkpoint archive.

    The archive holds every parameter tensor keyed by component and layer,
    all three architecture configs, the training config, seed, fold id,
    standardization stats, and any validation metrics.
    """
    configs = params.configs
    payload: dict = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "state_dict": params.model.state_dict(),
        "encoder_config": asdict(configs.encoder),
        "vector_field_config": asdict(configs.vector_field),
        "decoder_config": asdict(configs.decoder),
        "train_config": None if train_config is None else asdict(train_config),
        "seed": params.seed,
        "fold_id": params.fold_id,
        "stats": None,
        "val_metrics": val_metrics,
    }
    if params.stats is not None:
        payload["stats"] = {
            "mean": torch.as_tensor(params.stats.mean, dtype=torch.float64),
            "std": torch.as_tensor(params.stats.std, dtype=torch.float64),
            "units": params.stats.units,
        }
    torch.save(payload, Path(path))


def load_checkpoint(path: str | Path) -> LoadedCheckpoint:
    """Read a checkpoint archive and rebuild the model exactly.

    Raises:
        ValueError: unknown checkpoint format version.
    """
    payload = torch.load(Path(path), weights_only=True)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format version {version!r}")
    configs = ModelConfigs(
        encoder=EncoderConfig(**_tupled(payload["encoder_config"])),
        vector_field=VectorFieldConfig(**_tupled(payload["vector_field_config"])),
        decoder=DecoderConfig(**_tupled(payload["decoder_config"])),
    )
    model = LatentODEModel(configs)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    stats = None
    if payload["stats"] is not None:
        stats = StandardizationStats(
            mean=payload["stats"]["mean"].numpy(),
            std=payload["stats"]["std"].numpy(),
            units=payload["stats"]["units"],
        )
    train_config = None
    if payload["train_config"] is not None:
        train_config = TrainConfig(**_tupled(payload["train_config"]))
    params = ModelParams(
        model=model,
        seed=payload["seed"],
        fold_id=payload["fold_id"],
        stats=stats,
    )
    return LoadedCheckpoint(
        params=params, train_config=train_config, val_metrics=payload["val_metrics"]
    )


def _tupled(config_dict: dict) -> dict:
    """Restore list-valued config entries to the tuples dataclasses expect."""
    return {
        key: tuple(value) if isinstance(value, list) else value
        for key, value in config_dict.items()
    }
