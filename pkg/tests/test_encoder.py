"""Encoder tests: masking, pooling, causality at the bit level, token heads."""

from __future__ import annotations

import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from kinode.encoder import (
    EncoderConfig,
    GaussianToken,
    NumericError,
    SequenceEncoder,
    causal_frame_mask,
    encode,
    initial_state,
    reparameterize,
    segment_pool,
    segment_spans,
    sinusoidal_positions,
)

from oracles import oracle_segment_sizes

SMALL = EncoderConfig(n_layers=2, n_heads=2, model_dim=16, n_tokens=4, input_dim=6)


def _encoder(config: EncoderConfig = SMALL, seed: int = 0) -> SequenceEncoder:
    torch.manual_seed(seed)
    encoder = SequenceEncoder(config)
    encoder.eval()
    return encoder


def test_causal_mask_is_lower_triangular() -> None:
    mask = causal_frame_mask(7)
    assert mask.dtype == torch.bool
    assert int(mask.sum()) == 7 * 8 // 2
    for t in range(7):
        for s in range(7):
            assert bool(mask[t, s]) == (s <= t)


def test_segment_spans_five_frames_two_tokens() -> None:
    assert segment_spans(5, 2) == [(0, 3), (3, 5)]


def test_segment_spans_initial_token_covers_first_38_of_450() -> None:
    spans = segment_spans(450, 12)
    assert spans[0] == (0, 38)
    sizes = [end - start for start, end in spans]
    assert sizes == [38] * 6 + [37] * 6
    assert sizes[0] == math.ceil(450 / 12)


@settings(deadline=None)
@given(n_tokens=st.integers(1, 20), n_frames=st.integers(1, 400))
def test_segment_spans_tile_the_sequence(n_tokens: int, n_frames: int) -> None:
    if n_tokens > n_frames:
        with pytest.raises(ValueError):
            segment_spans(n_frames, n_tokens)
        return
    spans = segment_spans(n_frames, n_tokens)
    assert spans[0][0] == 0
    assert spans[-1][1] == n_frames
    for (_, end), (start, _) in zip(spans, spans[1:]):
        assert end == start
    sizes = [end - start for start, end in spans]
    assert sizes == oracle_segment_sizes(n_frames, n_tokens)
    assert sizes == sorted(sizes, reverse=True)


def test_segment_pool_matches_manual_means() -> None:
    torch.manual_seed(1)
    states = torch.randn(5, 8)
    pooled = segment_pool(states, 2)
    torch.testing.assert_close(pooled[0], states[:3].mean(dim=0))
    torch.testing.assert_close(pooled[1], states[3:].mean(dim=0))
    batched = segment_pool(states.unsqueeze(0), 2)
    torch.testing.assert_close(batched[0], pooled)


def test_sinusoidal_positions_values() -> None:
    pe = sinusoidal_positions(10, 8, torch.float64)
    assert pe.shape == (10, 8)
    torch.testing.assert_close(pe[0, 0::2], torch.zeros(4, dtype=torch.float64))
    torch.testing.assert_close(pe[0, 1::2], torch.ones(4, dtype=torch.float64))
    omega = math.exp(-2.0 * math.log(10000.0) / 8)
    assert pe[3, 2].item() == pytest.approx(math.sin(3 * omega))
    assert pe[3, 3].item() == pytest.approx(math.cos(3 * omega))


def test_sinusoidal_positions_odd_dim() -> None:
    pe = sinusoidal_positions(4, 7, torch.float32)
    assert pe.shape == (4, 7)
    assert torch.isfinite(pe).all()


def test_encoder_shape_contract() -> None:
    encoder = _encoder()
    x = torch.randn(12, 6)
    mean, log_var = encoder(x)
    assert mean.shape == (4, 3)
    assert log_var.shape == (4, 3)
    batched_mean, batched_log_var = encoder(torch.stack([x, x]))
    assert batched_mean.shape == (2, 4, 3)
    torch.testing.assert_close(batched_mean[0], mean)
    torch.testing.assert_close(batched_log_var[1], log_var)


def test_encoder_rejects_short_or_misshaped_input() -> None:
    encoder = _encoder()
    with pytest.raises(ValueError):
        encoder(torch.randn(3, 6))
    with pytest.raises(ValueError):
        encoder(torch.randn(12, 7))


def test_tokens_are_causal_at_the_bit_level() -> None:
    encoder = _encoder(seed=3)
    torch.manual_seed(4)
    for _ in range(20):
        x = torch.randn(24, 6)
        spans = segment_spans(24, 4)
        k = int(torch.randint(0, 4, ()).item())
        cutoff = spans[k][1]
        perturbed = x.clone()
        if cutoff < 24:
            perturbed[cutoff:] += torch.randn(24 - cutoff, 6)
        with torch.no_grad():
            mean_a, log_var_a = encoder(x)
            mean_b, log_var_b = encoder(perturbed)
        assert torch.equal(mean_a[: k + 1], mean_b[: k + 1])
        assert torch.equal(log_var_a[: k + 1], log_var_b[: k + 1])


def test_later_frames_do_influence_later_tokens() -> None:
    encoder = _encoder(seed=5)
    x = torch.randn(24, 6)
    perturbed = x.clone()
    perturbed[12:] += 1.0
    with torch.no_grad():
        mean_a, _ = encoder(x)
        mean_b, _ = encoder(perturbed)
    assert not torch.equal(mean_a[3], mean_b[3])


def test_head_biases_start_at_zero() -> None:
    encoder = _encoder(seed=6)
    assert torch.equal(encoder.mean_head.bias, torch.zeros(3))
    assert torch.equal(encoder.log_var_head.bias, torch.zeros(3))


def test_encode_annotates_tokens_with_spans() -> None:
    encoder = _encoder(seed=7)
    x = torch.randn(14, 6)
    tokens = encode(x, encoder)
    assert len(tokens) == 4
    assert [t.token_index for t in tokens] == [0, 1, 2, 3]
    assert tokens[0].segment_span == (0, math.ceil(14 / 4))
    assert [t.segment_span for t in tokens] == segment_spans(14, 4)
    with pytest.raises(ValueError):
        encode(torch.randn(2, 14, 6), encoder)


def test_initial_state_mean_mode_returns_posterior_mean() -> None:
    token = GaussianToken(
        mean=torch.tensor([1.0, 2.0, 3.0]),
        log_var=torch.zeros(3),
        token_index=0,
        segment_span=(0, 4),
    )
    assert torch.equal(initial_state(token, "mean"), token.mean)
    with pytest.raises(ValueError):
        initial_state(token, "mode")


def test_initial_state_sample_mode_is_seeded() -> None:
    token = GaussianToken(
        mean=torch.tensor([1.0, 2.0, 3.0]),
        log_var=torch.full((3,), -1.0),
        token_index=0,
        segment_span=(0, 4),
    )
    g1 = torch.Generator().manual_seed(11)
    g2 = torch.Generator().manual_seed(11)
    a = initial_state(token, "sample", g1)
    b = initial_state(token, "sample", g2)
    assert torch.equal(a, b)
    assert not torch.equal(a, token.mean)


def test_reparameterize_formula() -> None:
    mean = torch.tensor([0.5, -1.0])
    log_var = torch.tensor([0.2, -0.4])
    eps = torch.tensor([1.5, -2.0])
    got = reparameterize(mean, log_var, eps)
    want = mean + torch.exp(0.5 * log_var) * eps
    assert torch.equal(got, want)


def test_encoder_deterministic_given_seed() -> None:
    x = torch.randn(12, 6, generator=torch.Generator().manual_seed(8))
    with torch.no_grad():
        a = _encoder(seed=9)(x)
        b = _encoder(seed=9)(x)
    assert torch.equal(a[0], b[0])
    assert torch.equal(a[1], b[1])


def test_non_finite_input_is_named() -> None:
    encoder = _encoder(seed=10)
    x = torch.randn(12, 6)
    x[5, 2] = float("nan")
    with pytest.raises(NumericError, match="input"):
        encoder(x)


def test_encoder_config_validation() -> None:
    with pytest.raises(ValueError):
        EncoderConfig(model_dim=10, n_heads=4)
    with pytest.raises(ValueError):
        EncoderConfig(dropout=1.0)
    assert EncoderConfig(model_dim=32).resolved_feedforward_dim == 128
    assert EncoderConfig(model_dim=32, feedforward_dim=48).resolved_feedforward_dim == 48
