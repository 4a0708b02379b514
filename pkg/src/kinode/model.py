"""End-to-end sequence model: encoder, latent ODE, and decoder in one piece.

The model encodes a standardized sequence into K Gaussian tokens, takes
token 0 as the initial latent state (sampled by reparameterization during
training, or the posterior mean when run deterministically), integrates the
learned vector field across one grid point per frame, and decodes each
latent state back to a standardized motion frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .dataset import StandardizationStats
from .decoder import DecoderConfig, FrameDecoder, decode
from .dynamics import LatentPath, TimeGrid, VectorField, VectorFieldConfig, integrate
from .encoder import EncoderConfig, SequenceEncoder, reparameterize


@dataclass(frozen=True)
class ModelConfigs:
    """The three component configurations, checked for mutual consistency."""

    encoder: EncoderConfig = EncoderConfig()
    vector_field: VectorFieldConfig = VectorFieldConfig()
    decoder: DecoderConfig = DecoderConfig()

    def __post_init__(self) -> None:
        dims = {
            "encoder": self.encoder.latent_dim,
            "vector_field": self.vector_field.latent_dim,
            "decoder": self.decoder.latent_dim,
        }
        if len(set(dims.values())) != 1:
            raise ValueError(f"latent dimensions disagree: {dims}")
        if self.encoder.input_dim != self.decoder.output_dim:
            raise ValueError(
                f"encoder input dim {self.encoder.input_dim} differs from "
                f"decoder output dim {self.decoder.output_dim}"
            )

    @property
    def latent_dim(self) -> int:
        return self.encoder.latent_dim


@dataclass
class ModelOutput:
    """One forward pass: reconstruction plus the posterior and latent path."""

    reconstruction: Tensor
    mean: Tensor
    log_var: Tensor
    path: LatentPath


class LatentODEModel(nn.Module):
    """Encoder -> latent ODE -> decoder, trained end to end."""

    def __init__(self, configs: ModelConfigs):
        super().__init__()
        self.configs = configs
        self.encoder = SequenceEncoder(configs.encoder)
        self.vector_field = VectorField(configs.vector_field)
        self.decoder = FrameDecoder(configs.decoder)

    @property
    def dtype(self) -> torch.dtype:
        return self.encoder.input_proj.weight.dtype

    def forward(self, x: Tensor, eps: Tensor | None = None) -> ModelOutput:
        """Reconstruct a batch of standardized sequences.

        Args:
            x: (T, D) or (batch, T, D) standardized frames.
            eps: optional reparameterization noise for token 0, shaped like
                (..., latent_dim). When None the initial state is the
                posterior mean and the pass is fully deterministic.

        Returns:
            ModelOutput with the reconstruction of x's shape, token
            posteriors (..., K, d), and the integrated latent path.
        """
        mean, log_var = self.encoder(x)
        mean0 = mean[..., 0, :]
        if eps is None:
            z0 = mean0
        else:
            if eps.shape != mean0.shape:
                raise ValueError(
                    f"eps shape {tuple(eps.shape)} must match token-0 mean "
                    f"shape {tuple(mean0.shape)}"
                )
            z0 = reparameterize(mean0, log_var[..., 0, :], eps)
        grid = TimeGrid.uniform(x.shape[-2])
        path = integrate(z0, grid, self.vector_field)
        reconstruction = decode(path, self.decoder)
        return ModelOutput(
            reconstruction=reconstruction, mean=mean, log_var=log_var, path=path
        )


@dataclass
class ModelParams:
    """A trained model with its provenance.

    Attributes:
        model: the network holding all learned weights and configs.
        seed: training seed.
        fold_id: cross-validation fold this model was trained for, if any.
        stats: standardization stats fitted on this fold's training split.
    """

    model: LatentODEModel
    seed: int = 0
    fold_id: int | None = None
    stats: StandardizationStats | None = None

    @property
    def configs(self) -> ModelConfigs:
        return self.model.configs


__all__ = ["LatentODEModel", "ModelConfigs", "ModelOutput", "ModelParams"]
