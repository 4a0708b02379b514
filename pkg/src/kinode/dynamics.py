"""Learned latent vector field and fixed-step RK4 integration.

The latent state evolves as dz/dt = f(z, t) with f a small MLP. Trial time
is rescaled to the unit interval, the grid places one point per frame, and
integration takes exactly one classical RK4 step per grid interval, so a
T-frame trial yields a T-state latent path whose first state is z0 bit for
bit. The solver stays inside the autograd graph; gradients flow by
unrolling, which is exact and cheap at latent dimension 3.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import Tensor, nn

ACTIVATIONS = {"tanh": torch.tanh, "sigmoid": torch.sigmoid}


class IntegrationError(RuntimeError):
    """Integration produced a non-finite state."""


@dataclass(frozen=True)
class VectorFieldConfig:
    """Architecture of the latent vector field.

    Attributes:
        latent_dim: dimension d of the latent space.
        hidden_dims: the two hidden-layer widths.
        activation: bounded smooth nonlinearity ("tanh" or "sigmoid").
        time_input: when True the field input is [z; t], making the field
            time-dependent; when False only z enters and the flow is
            autonomous.
    """

    latent_dim: int = 3
    hidden_dims: tuple[int, int] = (128, 128)
    activation: str = "tanh"
    time_input: bool = True

    def __post_init__(self) -> None:
        if self.latent_dim < 1:
            raise ValueError("latent dimension must be positive")
        dims = tuple(int(d) for d in self.hidden_dims)
        object.__setattr__(self, "hidden_dims", dims)
        if len(dims) != 2:
            raise ValueError(f"expected exactly two hidden layers, got {len(dims)}")
        if any(d < 1 for d in dims):
            raise ValueError("hidden widths must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(
                f"activation {self.activation!r} not in {sorted(ACTIVATIONS)}"
            )


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing, uniformly spaced integration times.

    The canonical grid for a T-frame trial is tau_i = i / (T - 1) on [0, 1].
    """

    times: np.ndarray

    def __post_init__(self) -> None:
        times = np.asarray(self.times, dtype=float)
        object.__setattr__(self, "times", times)
        if times.ndim != 1 or times.size < 2:
            raise ValueError("grid needs at least two time points")
        steps = np.diff(times)
        if np.any(steps <= 0):
            raise ValueError("grid times must be strictly increasing")
        if not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12):
            raise ValueError("grid spacing must be uniform")

    @classmethod
    def uniform(cls, n_points: int, t_start: float = 0.0, t_end: float = 1.0) -> "TimeGrid":
        """Uniform grid of n_points over [t_start, t_end]."""
        if n_points < 2:
            raise ValueError("grid needs at least two time points")
        return cls(times=np.linspace(t_start, t_end, n_points))

    @property
    def n_points(self) -> int:
        return int(self.times.size)

    @property
    def spacing(self) -> float:
        return float(self.times[1] - self.times[0])


@dataclass(frozen=True)
class LatentPath:
    """Deterministic latent trajectory on a time grid.

    Attributes:
        states: (..., T, d) states; states[..., 0, :] equals the initial
            state exactly.
        initial: the z0 the path was integrated from.
    """

    states: Tensor
    initial: Tensor

    @property
    def n_points(self) -> int:
        return int(self.states.shape[-2])


class VectorField(nn.Module):
    """MLP vector field f(z, t) with two bounded-activation hidden layers."""

    def __init__(self, config: VectorFieldConfig):
        super().__init__()
        self.config = config
        in_dim = config.latent_dim + (1 if config.time_input else 0)
        h1, h2 = config.hidden_dims
        self.layer1 = nn.Linear(in_dim, h1)
        self.layer2 = nn.Linear(h1, h2)
        self.out = nn.Linear(h2, config.latent_dim)
        self._activation = ACTIVATIONS[config.activation]

    def forward(self, z: Tensor, t: Tensor) -> Tensor:
        """Evaluate dz/dt at states z and scalar time t.

        Args:
            z: (..., d) latent states.
            t: scalar tensor; broadcast to every state when time_input is on.

        Returns:
            (..., d) time derivatives.
        """
        if self.config.time_input:
            t_col = t.to(z.dtype).expand(*z.shape[:-1], 1)
            z = torch.cat([z, t_col], dim=-1)
        h = self._activation(self.layer1(z))
        h = self._activation(self.layer2(h))
        return self.out(h)


def vector_field(z: Tensor, t: float | Tensor, field: VectorField) -> Tensor:
    """Evaluate a vector field at (z, t); scalar-friendly wrapper."""
    t = torch.as_tensor(t, dtype=z.dtype, device=z.device)
    return field(z, t)


def rk4_step(field: VectorField, z: Tensor, t0: Tensor, t1: Tensor) -> Tensor:
    """One classical Runge-Kutta step of f from t0 to t1."""
    h = t1 - t0
    half = 0.5 * h
    k1 = field(z, t0)
    k2 = field(z + half * k1, t0 + half)
    k3 = field(z + half * k2, t0 + half)
    k4 = field(z + h * k3, t1)
    return z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(z0: Tensor, grid: TimeGrid, field: VectorField) -> LatentPath:
    """Integrate the field from z0 across the grid, one RK4 step per interval.

    Args:
        z0: (d,) or (batch, d) initial latent states.
        grid: integration times; grid point i maps to frame i.
        field: the latent vector field.

    Returns:
        LatentPath whose states have shape (T, d) or (batch, T, d); the
        first state is z0 itself, and gradients flow through the whole
        unrolled solve.

    Raises:
        IntegrationError: a non-finite state appears, reported with its
            step index.
    """
    if z0.shape[-1] != field.config.latent_dim:
        raise ValueError(
            f"z0 has dimension {z0.shape[-1]}, field expects {field.config.latent_dim}"
        )
    times = torch.as_tensor(grid.times, dtype=z0.dtype, device=z0.device)
    states = [z0]
    z = z0
    for i in range(grid.n_points - 1):
        z = rk4_step(field, z, times[i], times[i + 1])
        states.append(z)
    stacked = torch.stack(states, dim=-2)
    if not bool(torch.isfinite(stacked).all()):
        finite = torch.isfinite(stacked)
        while finite.dim() > 2:
            finite = finite.all(dim=0)
        bad = int((~finite.all(dim=-1)).nonzero()[0])
        raise IntegrationError(f"non-finite state at integration step {bad}")
    return LatentPath(states=stacked, initial=z0)
