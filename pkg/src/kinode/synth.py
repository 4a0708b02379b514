"""Synthetic motion datasets with known low-dimensional latent dynamics.

Each trial draws an initial latent state from a standard Gaussian,
integrates a known vector field on the unit time interval with a fine-step
reference integrator, and observes x(t) = A z(t) + b + noise through a
fixed full-rank 45 x d map. The generator returns both the observations
(as a regular dataset) and the ground truth, so model recovery can be
scored against exact latent trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dataset import DEFAULT_SCHEMA, FEATURE_DIM, JointSchema, MotionDataset

DYNAMICS_FAMILIES = ("linear", "pendulum")
OBSERVATION_MODES = ("random", "identity_block")


class GenerationError(RuntimeError):
    """Synthetic integration produced a non-finite state."""


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the synthetic generator.

    Attributes:
        n_trials: number of trials to generate.
        n_frames: frames per trial (T).
        latent_dim: true latent dimension d.
        noise_std: observation noise standard deviation in mm.
        dynamics: "linear" (dz/dt = M z, default M = -I) or "pendulum"
            (damped-pendulum-like nonlinear field, latent_dim 3).
        linear_matrix: optional d x d system matrix for the linear family.
        observation: "random" (seeded orthonormal columns scaled by
            obs_scale, random offset) or "identity_block" (latents copied
            into the first d features, zero offset).
        obs_scale: magnitude of the random observation map in mm.
        frame_rate: nominal sampling rate recorded in the dataset.
        participant_id: label for the generated session.
    """

    n_trials: int = 200
    n_frames: int = 100
    latent_dim: int = 3
    noise_std: float = 0.02
    dynamics: str = "linear"
    linear_matrix: tuple[tuple[float, ...], ...] | None = None
    observation: str = "random"
    obs_scale: float = 100.0
    frame_rate: float = 200.0
    participant_id: str = "synthetic"

    def __post_init__(self) -> None:
        if self.n_trials < 1:
            raise ValueError("need at least one trial")
        if self.n_frames < 2:
            raise ValueError("need at least two frames")
        if self.latent_dim < 1:
            raise ValueError("latent dimension must be positive")
        if self.noise_std < 0:
            raise ValueError("noise std must be non-negative")
        if self.dynamics not in DYNAMICS_FAMILIES:
            raise ValueError(f"unknown dynamics family {self.dynamics!r}")
        if self.dynamics == "pendulum" and self.latent_dim != 3:
            raise ValueError("pendulum dynamics is defined for latent_dim 3")
        if self.observation not in OBSERVATION_MODES:
            raise ValueError(f"unknown observation mode {self.observation!r}")
        if self.linear_matrix is not None:
            m = np.asarray(self.linear_matrix, dtype=float)
            if m.shape != (self.latent_dim, self.latent_dim):
                raise ValueError(
                    f"linear matrix must be {self.latent_dim} x {self.latent_dim}"
                )
            object.__setattr__(
                self, "linear_matrix", tuple(tuple(row) for row in m)
            )

    def system_matrix(self) -> np.ndarray:
        """The linear family's d x d matrix (default -I)."""
        if self.linear_matrix is None:
            return -np.eye(self.latent_dim)
        return np.asarray(self.linear_matrix, dtype=float)


@dataclass(frozen=True)
class SynthGroundTruth:
    """Exact latent trajectories and observation map behind a synthetic dataset."""

    latent_paths: np.ndarray
    observation_matrix: np.ndarray
    offset: np.ndarray
    times: np.ndarray
    config: SynthConfig = field(repr=False, default=SynthConfig())

    def noiseless_observations(self) -> np.ndarray:
        """A z(t) + b for every trial, shape n_trials x T x 45."""
        return self.latent_paths @ self.observation_matrix.T + self.offset


def linear_field(matrix: np.ndarray) -> Callable[[np.ndarray, float], np.ndarray]:
    """Vector field dz/dt = M z, evaluated on a batch of states."""
    m = np.asarray(matrix, dtype=float)

    def f(z: np.ndarray, t: float) -> np.ndarray:
        return z @ m.T

    return f


def pendulum_field(
    damping: float = 0.3, decay: float = 0.5
) -> Callable[[np.ndarray, float], np.ndarray]:
    """Damped-pendulum-like nonlinear field on R^3.

    Coordinates follow (angle, angular velocity, decaying mode):
    dz1 = z2, dz2 = -sin(z1) - damping * z2, dz3 = -decay * z3.
    """

    def f(z: np.ndarray, t: float) -> np.ndarray:
        out = np.empty_like(z)
        out[..., 0] = z[..., 1]
        out[..., 1] = -np.sin(z[..., 0]) - damping * z[..., 1]
        out[..., 2] = -decay * z[..., 2]
        return out

    return f


def reference_rk4(
    f: Callable[[np.ndarray, float], np.ndarray],
    z0: np.ndarray,
    times: np.ndarray,
    substeps: int = 16,
) -> np.ndarray:
    """Fine-step RK4 reference integration of a batch of trajectories.

    Args:
        f: batch vector field mapping (n x d states, scalar time) to n x d.
        z0: n x d initial states.
        times: strictly increasing grid of length T.
        substeps: RK4 sub-intervals per grid interval; more is finer.

    Returns:
        n x T x d array of states at the grid times.

    Raises:
        GenerationError: a non-finite state appears during integration.
    """
    z0 = np.asarray(z0, dtype=float)
    times = np.asarray(times, dtype=float)
    if z0.ndim != 2:
        raise ValueError("z0 must be n x d")
    if times.ndim != 1 or times.size < 2 or np.any(np.diff(times) <= 0):
        raise ValueError("times must be a strictly increasing grid")
    if substeps < 1:
        raise ValueError("substeps must be positive")
    path = np.empty((z0.shape[0], times.size, z0.shape[1]), dtype=float)
    z = z0.copy()
    path[:, 0] = z
    for i in range(times.size - 1):
        h = (times[i + 1] - times[i]) / substeps
        t = times[i]
        for _ in range(substeps):
            k1 = f(z, t)
            k2 = f(z + 0.5 * h * k1, t + 0.5 * h)
            k3 = f(z + 0.5 * h * k2, t + 0.5 * h)
            k4 = f(z + h * k3, t + h)
            z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            t += h
        if not np.all(np.isfinite(z)):
            raise GenerationError(f"non-finite state while integrating to grid point {i + 1}")
        path[:, i + 1] = z
    return path


def closed_form_linear(matrix: np.ndarray, z0: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Exact solution z(t) = expm(M t) z0 of the linear family.

    Used as an oracle for the reference integrator.
    """
    import torch

    m = torch.as_tensor(np.asarray(matrix, dtype=float))
    z0 = np.asarray(z0, dtype=float)
    out = np.empty((z0.shape[0], len(times), z0.shape[1]), dtype=float)
    for i, t in enumerate(np.asarray(times, dtype=float)):
        e = torch.linalg.matrix_exp(m * t).numpy()
        out[:, i] = z0 @ e.T
    return out


def observation_map(
    config: SynthConfig, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Fixed full-rank observation map (A, b) for a generation run.

    "random" draws A with orthonormal columns scaled by obs_scale and a
    Gaussian offset of the same scale; "identity_block" embeds the latents
    into the first d features exactly, with zero offset.
    """
    d = config.latent_dim
    if config.observation == "identity_block":
        a = np.zeros((FEATURE_DIM, d))
        a[:d, :d] = np.eye(d)
        b = np.zeros(FEATURE_DIM)
        return a, b
    q, r = np.linalg.qr(rng.standard_normal((FEATURE_DIM, d)))
    # fix the sign convention so the map is a pure function of the draws
    q = q * np.sign(np.diag(r))
    a = config.obs_scale * q
    b = config.obs_scale * rng.standard_normal(FEATURE_DIM)
    return a, b


def make_field(config: SynthConfig) -> Callable[[np.ndarray, float], np.ndarray]:
    """The configured ground-truth vector field."""
    if config.dynamics == "linear":
        return linear_field(config.system_matrix())
    return pendulum_field()


def generate_from_initial_states(
    config: SynthConfig,
    z0: np.ndarray,
    noise_rng: np.random.Generator,
    observation: tuple[np.ndarray, np.ndarray],
) -> tuple[MotionDataset, SynthGroundTruth]:
    """Integrate given initial states and observe them through a given map."""
    times = np.linspace(0.0, 1.0, config.n_frames)
    paths = reference_rk4(make_field(config), z0, times)
    a, b = observation
    clean = paths @ a.T + b
    noisy = clean
    if config.noise_std > 0:
        noisy = clean + config.noise_std * noise_rng.standard_normal(clean.shape)
    n_digits = len(str(z0.shape[0] - 1))
    dataset = MotionDataset(
        trials=[noisy[i] for i in range(z0.shape[0])],
        trial_ids=[f"synth{str(i).zfill(n_digits)}" for i in range(z0.shape[0])],
        participant_id=config.participant_id,
        joint_schema=DEFAULT_SCHEMA,
        frame_rate=config.frame_rate,
        units="mm",
    )
    truth = SynthGroundTruth(
        latent_paths=paths,
        observation_matrix=a,
        offset=b,
        times=times,
        config=config,
    )
    return dataset, truth


def synth_generate(
    config: SynthConfig, seed: int = 0
) -> tuple[MotionDataset, SynthGroundTruth]:
    """Generate a synthetic dataset plus its ground truth, deterministically in seed."""
    rng = np.random.default_rng(seed)
    observation = observation_map(config, rng)
    z0 = rng.standard_normal((config.n_trials, config.latent_dim))
    return generate_from_initial_states(config, z0, rng, observation)
