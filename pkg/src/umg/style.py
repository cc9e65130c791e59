"""AdaIN statistic transfer and the UMG loss terms.

Encoders are duck-typed: anything with ``taps(images) -> list[Tensor]``
works, the last tap being the deepest feature map used for AdaIN.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import (
    DimensionError,
    Tensor,
    affine_channels,
    batch_l2_distance,
    channel_stats,
    clamp_probability,
    log,
    as_tensor,
    mean,
    reshape,
    sub,
)


@dataclass
class StyleLossConfig:
    tap_indices: tuple[int, ...] | None = None  # None = every tap
    lambda_c: float = 0.001
    lambda_s: float = 0.002
    alpha: float = 0.5
    prob_clamp: float = 1e-7
    epsilon: float = 1e-5
    non_saturating: bool = False

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.lambda_c <= 0 or self.lambda_s <= 0:
            raise ValueError("lambda_c and lambda_s must be positive")
        if not 0.0 < self.prob_clamp < 0.5:
            raise ValueError("prob_clamp must lie in (0, 0.5)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.tap_indices is not None:
            self.tap_indices = tuple(self.tap_indices)
            if not self.tap_indices:
                raise ValueError("tap_indices may not be empty")


def adain(x: Tensor, y: Tensor, epsilon: float = 1e-5) -> Tensor:
    """Give ``x`` the per-channel spatial mean and std of ``y``."""
    x, y = as_tensor(x), as_tensor(y)
    if x.ndim != 4 or y.ndim != 4:
        raise DimensionError("adain expects NCHW inputs")
    if x.shape[:2] != y.shape[:2]:
        raise DimensionError(f"adain: content {x.shape[:2]} vs style {y.shape[:2]} (batch, channels)")
    mu_x, sd_x = channel_stats(x, epsilon)
    mu_y, sd_y = channel_stats(y, epsilon)
    normalized = sub(x, reshape(mu_x, mu_x.shape + (1, 1))) / reshape(sd_x, sd_x.shape + (1, 1))
    return affine_channels(normalized, sd_y, mu_y)


def encode_stylized_target(content: Tensor, style: Tensor, encoder, epsilon: float = 1e-5) -> Tensor:
    """AdaIN of the deepest encoder features of ``content`` and ``style``."""
    return adain(encoder.taps(content)[-1], encoder.taps(style)[-1], epsilon)


def interpolate_features(f_c: Tensor, t: Tensor, alpha: float) -> Tensor:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    f_c, t = as_tensor(f_c), as_tensor(t)
    if f_c.shape != t.shape:
        raise DimensionError(f"interpolate_features: {f_c.shape} vs {t.shape}")
    return f_c * (1.0 - alpha) + t * alpha


def _selected(taps: Sequence[Tensor], cfg: StyleLossConfig) -> list[Tensor]:
    if cfg.tap_indices is None:
        return list(taps)
    return [taps[i] for i in cfg.tap_indices]


def style_loss_from_taps(synth_taps: Sequence[Tensor], style_taps: Sequence[Tensor],
                         cfg: StyleLossConfig) -> Tensor:
    synth_taps, style_taps = _selected(synth_taps, cfg), _selected(style_taps, cfg)
    if not synth_taps:
        raise ValueError("style loss needs at least one tap")
    total = None
    for a, b in zip(synth_taps, style_taps):
        if a.shape[:2] != b.shape[:2]:
            raise DimensionError(f"style tap mismatch {a.shape} vs {b.shape}")
        mu_a, sd_a = channel_stats(a, cfg.epsilon)
        mu_b, sd_b = channel_stats(b, cfg.epsilon)
        term = batch_l2_distance(mu_a, mu_b) + batch_l2_distance(sd_a, sd_b)
        total = term if total is None else total + term
    return total


def style_loss(synth_img: Tensor, style_img: Tensor, encoder, cfg: StyleLossConfig) -> Tensor:
    """Sum over taps of the L2 gaps between channel means and between channel
    stds, averaged over the batch."""
    return style_loss_from_taps(encoder.taps(synth_img), encoder.taps(style_img), cfg)


def content_loss_from_features(synth_features: Tensor, t: Tensor) -> Tensor:
    if synth_features.shape != t.shape:
        raise DimensionError(f"content tap mismatch {synth_features.shape} vs {t.shape}")
    return batch_l2_distance(synth_features, t)


def content_loss(synth_img: Tensor, t: Tensor, encoder) -> Tensor:
    """L2 distance between the re-encoded synthetic image and ``t``."""
    return content_loss_from_features(encoder.taps(synth_img)[-1], as_tensor(t))


def gen_adv_loss(d_on_fake: Tensor, cfg: StyleLossConfig) -> Tensor:
    """mean(log(1 - D(G(t)))) -- minimised by the generator.

    With ``cfg.non_saturating`` the usual -mean(log D(G(t))) is used instead.
    """
    p = clamp_probability(as_tensor(d_on_fake), cfg.prob_clamp)
    if cfg.non_saturating:
        return -mean(log(p))
    return mean(log(1.0 - p))


def disc_adv_loss(d_on_real: Tensor, d_on_fake: Tensor, cfg: StyleLossConfig) -> Tensor:
    """mean(log D(x)) + mean(log(1 - D(G(t)))) -- maximised by the discriminator."""
    real = clamp_probability(as_tensor(d_on_real), cfg.prob_clamp)
    fake = clamp_probability(as_tensor(d_on_fake), cfg.prob_clamp)
    return mean(log(real)) + mean(log(1.0 - fake))


def generator_objective(l_content: Tensor, l_style: Tensor, l_adv: Tensor, cfg: StyleLossConfig) -> Tensor:
    return as_tensor(l_content) * cfg.lambda_c + as_tensor(l_style) * cfg.lambda_s + l_adv


def discriminator_objective(l_adv_d: Tensor) -> Tensor:
    """The quantity the discriminator maximises; minimise its negation."""
    return as_tensor(l_adv_d)


def channel_stat_vector(features: Tensor, epsilon: float = 1e-5) -> np.ndarray:
    """Concatenated per-channel (mean, std) of each sample, as numpy (N, 2C)."""
    mu, sd = channel_stats(as_tensor(features), epsilon)
    return np.concatenate([mu.data, sd.data], axis=1)
