"""Gradient-based damage localization: plain input gradients, their
noise-averaged variant, and the positive-gradients-only variant.

All three methods differentiate the full training objective (including the
teacher-student distillation terms, so the teacher participates in the
backward pass) with respect to the input image. Post-processing is shared:
absolute value, max over channels, min-max normalization to [0, 1].
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .config import (
    BOTTLENECK_Z,
    DISCRIMINATOR_FEATURES,
    GENERATED_IMAGE,
    ExperimentConfig,
)
from .errors import DeepDisasterError
from .losses import (
    distillation_loss,
    latent_match_loss,
    reconstruction_loss,
)
from .networks import ModelPair, matched_feature_pair

METHOD_VANILLA = "vanilla"
METHOD_SMOOTHGRAD = "smoothgrad"
METHOD_GUIDED = "guided"

INPUT_DYNAMIC_RANGE = 2.0  # images live in [-1, 1]


@dataclass(frozen=True)
class SaliencyMap:
    """Single-channel map aligned to the input image.

    ``map`` is normalized to [0, 1] (max exactly 1 unless the raw map is
    identically zero); ``raw_reduced`` is the pre-normalization nonnegative
    map after the channel reduction.
    """

    sample_id: str
    method: str
    map: np.ndarray
    raw_reduced: np.ndarray
    params: dict

    def __post_init__(self):
        if self.map.ndim != 2:
            raise ValueError(f"saliency map must be 2-D, got shape {self.map.shape}")


def training_objective(student: ModelPair, teacher: ModelPair, x: torch.Tensor,
                       config: ExperimentConfig, *, alpha_g: float, alpha_d: float,
                       alpha_z: float | None = None) -> tuple[torch.Tensor, dict]:
    """Evaluate the full weighted student objective on a batch.

    Unlike the training loop, teacher activations are not detached: the
    returned scalar is differentiable through both networks, as localization
    requires.
    """
    critical = config.critical_layers
    xhat_s, z_s = student.generator(x)
    probs_fake, f_xhat_s = student.discriminator(xhat_s)
    _, f_x_s = student.discriminator(x)
    gen_adv = -torch.log(probs_fake.clamp(1e-7, 1 - 1e-7)).mean()
    l_con = reconstruction_loss(x, xhat_s)
    l_lat = latent_match_loss(f_x_s, f_xhat_s)

    l_kg = x.new_zeros(())
    l_kd = x.new_zeros(())
    xhat_t, z_t = teacher.generator(x)
    if GENERATED_IMAGE in critical:
        l_kg = distillation_loss(xhat_s, xhat_t, alpha_g)
    if DISCRIMINATOR_FEATURES in critical:
        f_t = teacher.discriminator.features(xhat_t)
        f_s_m, f_t_m = matched_feature_pair(f_xhat_s, f_t)
        l_kd = distillation_loss(f_s_m, f_t_m, alpha_d)
    if BOTTLENECK_Z in critical:
        if alpha_z is None:
            raise DeepDisasterError(
                "bottleneck_z is a critical layer but no alpha_z was calibrated"
            )
        l_kd = l_kd + distillation_loss(z_s, z_t, alpha_z)

    total = (config.lambda_adv * gen_adv
             + config.lambda_con * l_con
             + config.lambda_lat * l_lat
             + config.lambda_kg * l_kg
             + config.lambda_kd * l_kd)
    parts = {"l_adv": gen_adv.item(), "l_con": l_con.item(), "l_lat": l_lat.item(),
             "l_kg": l_kg.item(), "l_kd": l_kd.item(), "total": total.item()}
    return total, parts


def input_gradient(student: ModelPair, teacher: ModelPair, x: torch.Tensor,
                   config: ExperimentConfig, *, alpha_g: float, alpha_d: float,
                   alpha_z: float | None = None) -> torch.Tensor:
    """Signed gradient of the training objective w.r.t. the input pixels."""
    x = x.detach().clone().requires_grad_(True)
    total, parts = training_objective(student, teacher, x, config,
                                      alpha_g=alpha_g, alpha_d=alpha_d, alpha_z=alpha_z)
    grad, = torch.autograd.grad(total, x)
    if not torch.isfinite(grad).all():
        raise DeepDisasterError(f"non-finite input gradient; loss parts: {parts}")
    return grad.detach()


def _reduce_channels(grad: np.ndarray) -> np.ndarray:
    # abs then max over channels: keeps strong single-channel evidence.
    return np.abs(grad).max(axis=0)


def _normalize_map(reduced: np.ndarray) -> np.ndarray:
    lo = float(reduced.min())
    hi = float(reduced.max())
    if hi > lo:
        return (reduced - lo) / (hi - lo)
    if hi == 0.0:
        return np.zeros_like(reduced)
    return np.ones_like(reduced)


def _single_image(x: torch.Tensor | np.ndarray) -> torch.Tensor:
    t = torch.as_tensor(x)
    if t.ndim == 3:
        t = t.unsqueeze(0)
    if t.ndim != 4 or t.shape[0] != 1:
        raise ValueError(f"expected a single image, got shape {tuple(t.shape)}")
    return t


def vanilla_gradient(student: ModelPair, teacher: ModelPair, x, config: ExperimentConfig, *,
                     alpha_g: float, alpha_d: float, alpha_z: float | None = None,
                     sample_id: str = "") -> SaliencyMap:
    """Saliency from the plain input gradient of the training objective."""
    xt = _single_image(x)
    grad = input_gradient(student, teacher, xt, config,
                          alpha_g=alpha_g, alpha_d=alpha_d, alpha_z=alpha_z)
    reduced = _reduce_channels(grad[0].numpy())
    return SaliencyMap(sample_id=sample_id, method=METHOD_VANILLA,
                       map=_normalize_map(reduced), raw_reduced=reduced, params={})


def smooth_gradient(student: ModelPair, teacher: ModelPair, x, config: ExperimentConfig, *,
                    alpha_g: float, alpha_d: float, alpha_z: float | None = None,
                    n: int | None = None, sigma_fraction: float | None = None,
                    seed: int = 0, sample_id: str = "") -> SaliencyMap:
    """Average the input gradient over ``n`` Gaussian perturbations of the input.

    The noise level is ``sigma_fraction`` of the input dynamic range (2 for
    images in [-1, 1]). With n=1 and sigma 0 this reduces to the plain
    gradient bitwise.
    """
    n = config.smoothgrad_samples if n is None else n
    if n < 1:
        raise ValueError(f"smoothgrad sample count must be >= 1, got {n}")
    sigma_fraction = (config.smoothgrad_sigma_fraction if sigma_fraction is None
                      else sigma_fraction)
    sigma = sigma_fraction * INPUT_DYNAMIC_RANGE
    xt = _single_image(x)
    rng = torch.Generator().manual_seed(seed)

    accum = torch.zeros_like(xt)
    for _ in range(n):
        if sigma > 0:
            noise = torch.empty_like(xt).normal_(0.0, sigma, generator=rng)
            perturbed = xt + noise
        else:
            perturbed = xt
        accum = accum + input_gradient(student, teacher, perturbed, config,
                                       alpha_g=alpha_g, alpha_d=alpha_d, alpha_z=alpha_z)
    mean_grad = accum / n
    reduced = _reduce_channels(mean_grad[0].numpy())
    return SaliencyMap(sample_id=sample_id, method=METHOD_SMOOTHGRAD,
                       map=_normalize_map(reduced), raw_reduced=reduced,
                       params={"n": n, "sigma": sigma})


@contextmanager
def _positive_gradients_only(pairs: tuple[ModelPair, ...]):
    """Zero negative gradients flowing into every rectifier output on backward."""
    handles = []

    def clamp_hook(module, inputs, output):
        if output.requires_grad:
            handles.append(output.register_hook(lambda g: g.clamp(min=0.0)))

    forward_handles = []
    for pair in pairs:
        for net in (pair.generator, pair.discriminator):
            for module in net.modules():
                if isinstance(module, (nn.ReLU, nn.LeakyReLU)):
                    forward_handles.append(module.register_forward_hook(clamp_hook))
    try:
        yield
    finally:
        for h in forward_handles + handles:
            h.remove()


def guided_backprop(student: ModelPair, teacher: ModelPair, x, config: ExperimentConfig, *,
                    alpha_g: float, alpha_d: float, alpha_z: float | None = None,
                    sample_id: str = "") -> SaliencyMap:
    """Input gradient with negative gradients zeroed at every rectifier.

    The rule is applied at leaky rectifiers too (the networks use them
    throughout); a network whose intermediate gradients are all nonnegative
    yields exactly the plain gradient map.
    """
    xt = _single_image(x)
    with _positive_gradients_only((student, teacher)):
        grad = input_gradient(student, teacher, xt, config,
                              alpha_g=alpha_g, alpha_d=alpha_d, alpha_z=alpha_z)
    reduced = _reduce_channels(grad[0].numpy())
    return SaliencyMap(sample_id=sample_id, method=METHOD_GUIDED,
                       map=_normalize_map(reduced), raw_reduced=reduced, params={})


def saliency_quality(saliency: SaliencyMap | np.ndarray, box) -> float:
    """Mean saliency inside the defect box over mean outside (guarded).

    ``box`` is a half-open pixel rectangle with attributes or entries
    (x0, y0, x1, y1).
    """
    arr = saliency.map if isinstance(saliency, SaliencyMap) else np.asarray(saliency)
    if hasattr(box, "x0"):
        x0, y0, x1, y1 = box.x0, box.y0, box.x1, box.y1
    else:
        x0, y0, x1, y1 = box
    h, w = arr.shape
    if not (0 <= x0 < x1 <= w and 0 <= y0 < y1 <= h):
        raise ValueError(f"degenerate or out-of-image box: {(x0, y0, x1, y1)}")
    if (x1 - x0) * (y1 - y0) == arr.size:
        raise ValueError("box covers the whole image; no outside region")
    mask = np.zeros_like(arr, dtype=bool)
    mask[y0:y1, x0:x1] = True
    mean_in = float(arr[mask].mean())
    mean_out = float(arr[~mask].mean())
    return mean_in / (mean_out + 1e-8)


def export_heatmap(saliency: SaliencyMap, x, path, *, blend: float = 0.5,
                   colormap: str = "inferno", metadata: dict | None = None) -> None:
    """Write a PNG overlay: input image blended with the color-mapped saliency.

    Deterministic: identical inputs produce byte-identical files. Optional
    metadata strings are stored as PNG text chunks.
    """
    from matplotlib import colormaps
    from PIL import Image
    from PIL.PngImagePlugin import PngInfo

    xt = _single_image(x)[0].numpy()
    rgb = ((xt.transpose(1, 2, 0) + 1.0) * 127.5).clip(0, 255).astype(np.uint8)
    if rgb.shape[2] == 1:
        rgb = np.repeat(rgb, 3, axis=2)
    heat = (colormaps[colormap](saliency.map)[:, :, :3] * 255).astype(np.uint8)
    overlay = ((1.0 - blend) * rgb + blend * heat).round().astype(np.uint8)

    info = PngInfo()
    info.add_text("saliency_method", saliency.method)
    for key, value in (metadata or {}).items():
        info.add_text(str(key), str(value))
    Image.fromarray(overlay).save(path, pnginfo=info)
