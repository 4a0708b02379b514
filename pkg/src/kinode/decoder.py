"""Frame-wise decoder from latent states to joint positions.

Each latent state maps independently through a small MLP to one 45-feature
standardized motion frame; no information crosses frames, so all temporal
structure in a reconstruction comes from the latent path itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .dynamics import LatentPath


class DecodeError(RuntimeError):
    """Decoding produced non-finite output."""


@dataclass(frozen=True)
class DecoderConfig:
    """Architecture of the frame decoder.

    Attributes:
        latent_dim: input dimension d.
        hidden_dims: the two hidden-layer widths.
        activation: hidden nonlinearity (ReLU).
        output_dim: features per frame (45 for the 15-joint schema).
    """

    latent_dim: int = 3
    hidden_dims: tuple[int, int] = (256, 256)
    activation: str = "relu"
    output_dim: int = 45

    def __post_init__(self) -> None:
        if self.latent_dim < 1:
            raise ValueError("latent dimension must be positive")
        dims = tuple(int(d) for d in self.hidden_dims)
        object.__setattr__(self, "hidden_dims", dims)
        if len(dims) != 2:
            raise ValueError(f"expected exactly two hidden layers, got {len(dims)}")
        if any(d < 1 for d in dims):
            raise ValueError("hidden widths must be positive")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if self.output_dim < 1:
            raise ValueError("output dimension must be positive")


class FrameDecoder(nn.Module):
    """MLP applied to each latent state independently."""

    def __init__(self, config: DecoderConfig):
        super().__init__()
        self.config = config
        h1, h2 = config.hidden_dims
        self.layer1 = nn.Linear(config.latent_dim, h1)
        self.layer2 = nn.Linear(h1, h2)
        self.out = nn.Linear(h2, config.output_dim)
        for layer in (self.layer1, self.layer2, self.out):
            nn.init.zeros_(layer.bias)

    def forward(self, states: Tensor) -> Tensor:
        """Map (..., d) latent states to (..., output_dim) frames."""
        h = torch.relu(self.layer1(states))
        h = torch.relu(self.layer2(h))
        return self.out(h)


def decode(path: LatentPath, decoder: FrameDecoder) -> Tensor:
    """Decode a latent path into a standardized motion sequence.

    Args:
        path: latent trajectory with (..., T, d) states.
        decoder: the frame decoder.

    Returns:
        (..., T, output_dim) standardized motion; row t depends only on
        path state t.

    Raises:
        DecodeError: the decoder emitted non-finite values.
    """
    out = decoder(path.states)
    if not bool(torch.isfinite(out).all()):
        raise DecodeError("non-finite values in decoded output")
    return out
