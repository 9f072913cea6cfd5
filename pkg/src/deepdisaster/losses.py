"""Training losses: distillation terms, adversarial terms, and the weighted total.

Two ingredients drive distillation at each critical layer: the mean squared
difference between student and teacher activations (value) and one minus
their cosine similarity (direction). A per-layer coefficient alpha, measured
once on the first training batch, brings both onto the same scale; the
distillation loss for a layer is ``value + alpha * direction``.

The adversarial side is the standard minimax objective (non-saturating
generator form) plus an L1 reconstruction term between input and generated
image and a squared feature-matching term between discriminator features of
the real and generated image. All reductions are means over elements so the
loss weights transfer across image sizes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import torch

from .config import ExperimentConfig

logger = logging.getLogger(__name__)

PROB_EPS = 1e-7


@dataclass(frozen=True)
class LossBreakdown:
    """All loss terms of one iteration plus the weighted total.

    ``l_adv`` is the generator-side adversarial term (sign unbounded by the
    minimax convention); the other terms are nonnegative. ``total`` is the
    lambda-weighted sum, reconstructible from the stored parts.
    """

    l_adv: float
    l_con: float
    l_lat: float
    l_kg: float
    l_kd: float
    total: float
    alpha_g: float
    alpha_d: float


def _check_same_shape(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"activation shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")


def value_loss(a_s: torch.Tensor, a_t: torch.Tensor) -> torch.Tensor:
    """Mean squared difference over all activations of one critical layer."""
    _check_same_shape(a_s, a_t)
    if a_s.numel() == 0:
        raise ValueError("empty activation arrays")
    return ((a_s - a_t) ** 2).mean()


def direction_loss(a_s: torch.Tensor, a_t: torch.Tensor) -> torch.Tensor:
    """One minus cosine similarity of the vectorized activations; range [0, 2].

    Undefined for a zero-norm argument; raises instead of silently returning 0.
    """
    _check_same_shape(a_s, a_t)
    vs = a_s.flatten()
    vt = a_t.flatten()
    norm_s = torch.linalg.vector_norm(vs)
    norm_t = torch.linalg.vector_norm(vt)
    if norm_s.item() == 0.0 or norm_t.item() == 0.0:
        raise ValueError("direction loss undefined for zero-norm activations")
    return 1.0 - torch.dot(vs, vt) / (norm_s * norm_t)


def calibrate_alpha(val_0: float, dir_0: float) -> float:
    """Scale factor matching the value and direction ranges: val_0 / dir_0.

    Measured on the first training batch before any update and frozen for
    the rest of training. A zero direction error falls back to 1 with a
    warning (the ratio is undefined but both terms are already matched).
    """
    if dir_0 == 0.0:
        logger.warning("alpha calibration: initial direction error is 0; falling back to alpha=1")
        return 1.0
    return val_0 / dir_0


def distillation_loss(a_s: torch.Tensor, a_t: torch.Tensor, alpha: float) -> torch.Tensor:
    """Per-layer distillation loss: value term plus alpha-scaled direction term.

    Applied to the generated-image pair (with alpha_g) and to the
    discriminator-feature pair (with alpha_d).
    """
    return value_loss(a_s, a_t) + alpha * direction_loss(a_s, a_t)


def adversarial_loss(probs_real: torch.Tensor, probs_fake: torch.Tensor
                     ) -> tuple[torch.Tensor, torch.Tensor]:
    """Minimax GAN loss on realness probabilities.

    Returns ``(gen_term, disc_term)``: the discriminator minimizes
    ``-log D(x) - log(1 - D(x_hat))``; the generator minimizes the
    non-saturating ``-log D(x_hat)``. Probabilities are clamped away from
    {0, 1} to keep the logs finite.
    """
    pr = probs_real.clamp(PROB_EPS, 1.0 - PROB_EPS)
    pf = probs_fake.clamp(PROB_EPS, 1.0 - PROB_EPS)
    disc_term = -(torch.log(pr).mean() + torch.log(1.0 - pf).mean())
    gen_term = -torch.log(pf).mean()
    return gen_term, disc_term


def reconstruction_loss(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference between input and generated image."""
    _check_same_shape(x, x_hat)
    return (x - x_hat).abs().mean()


def latent_match_loss(f_x: torch.Tensor, f_xhat: torch.Tensor) -> torch.Tensor:
    """Mean squared difference between features of real and generated input."""
    _check_same_shape(f_x, f_xhat)
    return ((f_x - f_xhat) ** 2).mean()


def total_loss(parts: LossBreakdown, config: ExperimentConfig) -> float:
    """Lambda-weighted sum of the stored parts (the student training objective)."""
    return (
        config.lambda_adv * parts.l_adv
        + config.lambda_con * parts.l_con
        + config.lambda_lat * parts.l_lat
        + config.lambda_kg * parts.l_kg
        + config.lambda_kd * parts.l_kd
    )


# Per-sample reductions (scoring works sample-by-sample) ---------------------

def per_sample_abs_mean(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _check_same_shape(a, b)
    return (a - b).abs().flatten(1).mean(dim=1)


def per_sample_sq_mean(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _check_same_shape(a, b)
    return ((a - b) ** 2).flatten(1).mean(dim=1)


def per_sample_direction(a: torch.Tensor, b: torch.Tensor, eps: float = 1e-12) -> torch.Tensor:
    """Per-sample one-minus-cosine over flattened activations."""
    _check_same_shape(a, b)
    va = a.flatten(1)
    vb = b.flatten(1)
    dot = (va * vb).sum(dim=1)
    norms = torch.linalg.vector_norm(va, dim=1) * torch.linalg.vector_norm(vb, dim=1)
    return 1.0 - dot / norms.clamp_min(eps)
