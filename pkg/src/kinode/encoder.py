"""Causal transformer encoder producing Gaussian latent tokens.

A standardized T x 45 sequence is projected to the model width, tagged with
sinusoidal position encodings, and passed through pre-norm self-attention
layers under a causal mask, so the representation of frame t never depends
on any later frame. Frame states are then mean-pooled over K contiguous
near-equal segments and two linear heads emit a posterior mean and
log-variance per segment token. Token 0 summarizes only the first ceil(T/K)
frames and serves as the initial condition of the latent dynamics.

Attention is written out explicitly (matmul, mask, softmax) rather than
through a fused library block: masked scores are replaced by -inf before
the softmax, which makes the causality guarantee exact at the bit level,
not just approximate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import Tensor, nn


class NumericError(RuntimeError):
    """A network component produced non-finite activations."""


@dataclass(frozen=True)
class EncoderConfig:
    """Architecture of the sequence encoder.

    Attributes:
        n_layers: number of self-attention layers.
        n_heads: attention heads per layer.
        model_dim: width of the frame representation.
        latent_dim: dimension d of each Gaussian token.
        n_tokens: number K of segment tokens.
        feedforward_dim: width of the per-layer MLP; defaults to 4x model_dim.
        dropout: dropout rate inside attention and MLP blocks.
        input_dim: feature dimension of the input frames.
    """

    n_layers: int = 3
    n_heads: int = 8
    model_dim: int = 256
    latent_dim: int = 3
    n_tokens: int = 12
    feedforward_dim: int | None = None
    dropout: float = 0.0
    input_dim: int = 45

    def __post_init__(self) -> None:
        if self.model_dim % self.n_heads != 0:
            raise ValueError(
                f"model_dim {self.model_dim} not divisible by n_heads {self.n_heads}"
            )
        if self.n_tokens < 1:
            raise ValueError("need at least one token")
        if self.latent_dim < 1:
            raise ValueError("latent dimension must be positive")
        if self.n_layers < 1:
            raise ValueError("need at least one layer")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.input_dim < 1:
            raise ValueError("input dimension must be positive")

    @property
    def resolved_feedforward_dim(self) -> int:
        return 4 * self.model_dim if self.feedforward_dim is None else self.feedforward_dim


@dataclass(frozen=True)
class GaussianToken:
    """Posterior of one segment token.

    Attributes:
        mean: length-d posterior mean.
        log_var: length-d posterior log-variance.
        token_index: position in 0..K-1.
        segment_span: (start, end) frame range pooled into this token,
            end exclusive.
    """

    mean: Tensor
    log_var: Tensor
    token_index: int
    segment_span: tuple[int, int]

    def __post_init__(self) -> None:
        if self.mean.shape != self.log_var.shape:
            raise ValueError("mean and log_var must share a shape")
        if self.token_index < 0:
            raise ValueError("token index must be non-negative")
        start, end = self.segment_span
        if not 0 <= start < end:
            raise ValueError(f"invalid segment span ({start}, {end})")


def causal_frame_mask(n_frames: int) -> Tensor:
    """Boolean T x T mask where entry (t, s) allows frame t to attend to s.

    Frame t may attend to frames s <= t only.
    """
    if n_frames < 1:
        raise ValueError("mask needs at least one frame")
    return torch.tril(torch.ones(n_frames, n_frames, dtype=torch.bool))


def segment_spans(n_frames: int, n_tokens: int) -> list[tuple[int, int]]:
    """Contiguous near-equal segments, longer segments first.

    Sizes differ by at most one; the first n_frames % n_tokens segments get
    the extra frame, so segment 0 always spans ceil(n_frames / n_tokens)
    frames.
    """
    if n_tokens > n_frames:
        raise ValueError(f"cannot pool {n_frames} frames into {n_tokens} segments")
    base, extra = divmod(n_frames, n_tokens)
    spans = []
    start = 0
    for k in range(n_tokens):
        end = start + base + (1 if k < extra else 0)
        spans.append((start, end))
        start = end
    return spans


def segment_pool(frame_states: Tensor, n_tokens: int) -> Tensor:
    """Mean-pool frame states over contiguous segments.

    Args:
        frame_states: (..., T, model_dim) frame representations.
        n_tokens: number K of segments.

    Returns:
        (..., K, model_dim) tensor; token k is the mean of its segment.
    """
    spans = segment_spans(frame_states.shape[-2], n_tokens)
    pooled = [frame_states[..., start:end, :].mean(dim=-2) for start, end in spans]
    return torch.stack(pooled, dim=-2)


def sinusoidal_positions(n_frames: int, dim: int, dtype: torch.dtype) -> Tensor:
    """Fixed sinusoidal position encoding, shape (n_frames, dim)."""
    position = torch.arange(n_frames, dtype=dtype).unsqueeze(1)
    half = torch.arange(0, dim, 2, dtype=dtype)
    angular = torch.exp(-half * math.log(10000.0) / dim)
    pe = torch.zeros(n_frames, dim, dtype=dtype)
    pe[:, 0::2] = torch.sin(position * angular)
    pe[:, 1::2] = torch.cos(position * angular[: dim // 2])
    return pe


class SelfAttentionBlock(nn.Module):
    """Pre-norm multi-head causal self-attention plus a feedforward stage."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        dim = config.model_dim
        self.n_heads = config.n_heads
        self.head_dim = dim // config.n_heads
        self.attn_norm = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.attn_out = nn.Linear(dim, dim)
        self.ff_norm = nn.LayerNorm(dim)
        self.ff_in = nn.Linear(dim, config.resolved_feedforward_dim)
        self.ff_out = nn.Linear(config.resolved_feedforward_dim, dim)
        self.dropout = nn.Dropout(config.dropout)

    def forward(self, h: Tensor, allowed: Tensor) -> Tensor:
        batch, n_frames, dim = h.shape
        x = self.attn_norm(h)
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        shape = (batch, n_frames, self.n_heads, self.head_dim)
        q = q.view(shape).transpose(1, 2)
        k = k.view(shape).transpose(1, 2)
        v = v.view(shape).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        scores = scores.masked_fill(~allowed, float("-inf"))
        weights = self.dropout(torch.softmax(scores, dim=-1))
        attended = (weights @ v).transpose(1, 2).reshape(batch, n_frames, dim)
        h = h + self.dropout(self.attn_out(attended))
        x = self.ff_norm(h)
        h = h + self.dropout(self.ff_out(torch.relu(self.ff_in(x))))
        return h


class SequenceEncoder(nn.Module):
    """Causal transformer encoder with segment pooling and Gaussian heads."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        self.input_proj = nn.Linear(config.input_dim, config.model_dim)
        self.blocks = nn.ModuleList(
            SelfAttentionBlock(config) for _ in range(config.n_layers)
        )
        self.final_norm = nn.LayerNorm(config.model_dim)
        self.mean_head = nn.Linear(config.model_dim, config.latent_dim)
        self.log_var_head = nn.Linear(config.model_dim, config.latent_dim)
        nn.init.zeros_(self.mean_head.bias)
        nn.init.zeros_(self.log_var_head.bias)

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """Encode standardized frames into token posteriors.

        Args:
            x: (T, input_dim) or (batch, T, input_dim) standardized frames,
                with T >= n_tokens.

        Returns:
            (mean, log_var), each (..., K, latent_dim).
        """
        squeeze = x.dim() == 2
        if squeeze:
            x = x.unsqueeze(0)
        if x.dim() != 3 or x.shape[-1] != self.config.input_dim:
            raise ValueError(
                f"expected (batch, T, {self.config.input_dim}) input, got {tuple(x.shape)}"
            )
        n_frames = x.shape[1]
        if n_frames < self.config.n_tokens:
            raise ValueError(
                f"sequence of {n_frames} frames is shorter than {self.config.n_tokens} tokens"
            )
        h = self.input_proj(x)
        h = h + sinusoidal_positions(n_frames, self.config.model_dim, h.dtype)
        allowed = causal_frame_mask(n_frames)
        for block in self.blocks:
            h = block(h, allowed)
        h = self.final_norm(h)
        pooled = segment_pool(h, self.config.n_tokens)
        mean = self.mean_head(pooled)
        log_var = self.log_var_head(pooled)
        if not bool(torch.isfinite(mean).all() and torch.isfinite(log_var).all()):
            raise NumericError(self._locate_nonfinite(x))
        if squeeze:
            return mean.squeeze(0), log_var.squeeze(0)
        return mean, log_var

    def _locate_nonfinite(self, x: Tensor) -> str:
        """Replay the forward pass to name the first non-finite stage."""
        with torch.no_grad():
            if not bool(torch.isfinite(x).all()):
                return "non-finite activations in: input"
            h = self.input_proj(x)
            h = h + sinusoidal_positions(x.shape[1], self.config.model_dim, h.dtype)
            if not bool(torch.isfinite(h).all()):
                return "non-finite activations in: input projection"
            allowed = causal_frame_mask(x.shape[1])
            for i, block in enumerate(self.blocks):
                h = block(h, allowed)
                if not bool(torch.isfinite(h).all()):
                    return f"non-finite activations in: attention layer {i}"
        return "non-finite activations in: output heads"


def encode(x: Tensor, encoder: SequenceEncoder) -> list[GaussianToken]:
    """Encode one sequence into its K Gaussian tokens.

    Args:
        x: (T, input_dim) standardized frames.
        encoder: trained or freshly initialized encoder.

    Returns:
        K GaussianToken entries in token order, each annotated with the
        frame span it pools.
    """
    if x.dim() != 2:
        raise ValueError(f"expected a single (T, D) sequence, got {tuple(x.shape)}")
    mean, log_var = encoder(x)
    spans = segment_spans(x.shape[0], encoder.config.n_tokens)
    return [
        GaussianToken(
            mean=mean[k], log_var=log_var[k], token_index=k, segment_span=spans[k]
        )
        for k in range(encoder.config.n_tokens)
    ]


def initial_state(
    token0: GaussianToken,
    mode: str = "mean",
    generator: torch.Generator | None = None,
) -> Tensor:
    """Initial latent state from token 0.

    Args:
        token0: the first Gaussian token.
        mode: "mean" for the deterministic posterior mean, "sample" for one
            reparameterized draw mean + exp(log_var / 2) * eps.
        generator: source of the Gaussian draw in "sample" mode.

    Returns:
        Length-d latent state z0.
    """
    if mode == "mean":
        return token0.mean
    if mode == "sample":
        return sample_gaussian(token0.mean, token0.log_var, generator)
    raise ValueError(f"unknown mode {mode!r}; expected 'mean' or 'sample'")


def sample_gaussian(
    mean: Tensor, log_var: Tensor, generator: torch.Generator | None = None
) -> Tensor:
    """One reparameterized draw from N(mean, diag exp(log_var))."""
    eps = torch.randn(
        mean.shape, generator=generator, dtype=mean.dtype, device=mean.device
    )
    return reparameterize(mean, log_var, eps)


def reparameterize(mean: Tensor, log_var: Tensor, eps: Tensor) -> Tensor:
    """mean + exp(log_var / 2) * eps, differentiable in mean and log_var."""
    return mean + torch.exp(0.5 * log_var) * eps
