"""Per-sample anomaly scoring, score normalization, threshold estimation.

The score for a test sample combines four per-sample components:

* ``l_term`` — reconstruction error between the input and the student's
  generated image (mean absolute difference),
* ``r_term`` — squared difference between the student discriminator's
  features of the input and of the generated image,
* ``v_term`` — mean squared teacher-student discrepancy summed over the
  active critical layers,
* ``d_term`` — one-minus-cosine teacher-student discrepancy summed over the
  active critical layers, each layer pre-scaled by its calibrated alpha
  so the stored components reconstruct the raw score exactly:

      raw = omega_l * l_term + omega_r * r_term + omega_vd * (v_term + d_term)

A damaged region the student never learned drives all discrepancy terms up,
so higher scores mean more likely damage.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
import torch

from .config import (
    BOTTLENECK_Z,
    DISCRIMINATOR_FEATURES,
    GENERATED_IMAGE,
    ExperimentConfig,
)
from .data import ImageBatch
from .errors import DeepDisasterError
from .losses import per_sample_abs_mean, per_sample_direction, per_sample_sq_mean
from .networks import ModelPair, matched_feature_pair

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AnomalyScore:
    """Score components for one sample; ``d_term`` carries its alpha scaling."""

    sample_id: str
    l_term: float
    r_term: float
    v_term: float
    d_term: float
    raw: float
    normalized: float | None = None


def combine_score(l_term: float, r_term: float, v_term: float, d_term: float,
                  config: ExperimentConfig) -> float:
    """Weighted combination of the stored components (the raw score)."""
    return (config.omega_l * l_term
            + config.omega_r * r_term
            + config.omega_vd * (v_term + d_term))


def score_samples(student: ModelPair, teacher: ModelPair, batch: ImageBatch,
                  config: ExperimentConfig, *, alpha_g: float, alpha_d: float,
                  alpha_z: float | None = None) -> list[AnomalyScore]:
    """Score one batch with frozen networks in evaluation mode.

    The discrepancy terms compare each network's own activations at the
    active critical layers (generated image, discriminator features of the
    generated image, optionally the bottleneck latent), using the
    training-time alphas. Deterministic: repeated calls agree exactly.
    """
    if alpha_g is None or alpha_d is None:
        raise DeepDisasterError("scores are undefined without calibrated alphas")
    x = torch.from_numpy(np.ascontiguousarray(batch.pixels))
    critical = config.critical_layers

    with torch.no_grad():
        xhat_s, z_s = student.generator(x)
        f_x_s = student.discriminator.features(x)
        f_xhat_s = student.discriminator.features(xhat_s)

        l_terms = per_sample_abs_mean(x, xhat_s)
        r_terms = per_sample_sq_mean(f_x_s, f_xhat_s)

        xhat_t, z_t = teacher.generator(x)
        v_terms = x.new_zeros(len(batch))
        d_terms = x.new_zeros(len(batch))
        if GENERATED_IMAGE in critical:
            v_terms = v_terms + per_sample_sq_mean(xhat_s, xhat_t)
            d_terms = d_terms + alpha_g * per_sample_direction(xhat_s, xhat_t)
        if DISCRIMINATOR_FEATURES in critical:
            f_t = teacher.discriminator.features(xhat_t)
            f_s_m, f_t_m = matched_feature_pair(f_xhat_s, f_t)
            v_terms = v_terms + per_sample_sq_mean(f_s_m, f_t_m)
            d_terms = d_terms + alpha_d * per_sample_direction(f_s_m, f_t_m)
        if BOTTLENECK_Z in critical:
            if alpha_z is None:
                raise DeepDisasterError(
                    "bottleneck_z is a critical layer but no alpha_z was calibrated"
                )
            v_terms = v_terms + per_sample_sq_mean(z_s, z_t)
            d_terms = d_terms + alpha_z * per_sample_direction(z_s, z_t)

    scores = []
    for i, sample_id in enumerate(batch.sample_ids):
        l_i = float(l_terms[i])
        r_i = float(r_terms[i])
        v_i = float(v_terms[i])
        d_i = float(d_terms[i])
        scores.append(AnomalyScore(
            sample_id=sample_id, l_term=l_i, r_term=r_i, v_term=v_i, d_term=d_i,
            raw=combine_score(l_i, r_i, v_i, d_i, config),
        ))
    return scores


def normalize_scores(scores: list[AnomalyScore]) -> list[AnomalyScore]:
    """Min-max normalize raw scores over the given set.

    Monotone, so rankings (and AUC) are unchanged. If all raw scores are
    equal the map is degenerate; every sample gets 0.5 and a warning is
    logged.
    """
    if not scores:
        return []
    raws = [s.raw for s in scores]
    lo, hi = min(raws), max(raws)
    if hi == lo:
        logger.warning("all %d raw scores are equal (%g); normalizing to 0.5", len(raws), lo)
        return [replace(s, normalized=0.5) for s in scores]
    return [replace(s, normalized=(s.raw - lo) / (hi - lo)) for s in scores]


def estimate_threshold(scores: list[float], labels: list[int]) -> float:
    """Threshold maximizing Youden's J (TPR - FPR); decision rule: score > t.

    Candidate cuts are the midpoints between consecutive distinct sorted
    scores plus the two boundary cuts (everything positive / everything
    negative). Ties in J break toward the lower threshold. A degenerate
    optimum (J <= 0) is logged.
    """
    if len(scores) != len(labels):
        raise ValueError("scores and labels differ in length")
    labels_arr = np.asarray(labels)
    scores_arr = np.asarray(scores, dtype=float)
    n_pos = int((labels_arr == 1).sum())
    n_neg = int((labels_arr == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("threshold estimation needs both labels present")

    distinct = np.unique(scores_arr)
    candidates = [distinct[0] - 1.0]
    candidates.extend((distinct[:-1] + distinct[1:]) / 2.0)
    candidates.append(distinct[-1])

    best_t = candidates[0]
    best_j = -np.inf
    for t in candidates:
        predicted = scores_arr > t
        tpr = (predicted & (labels_arr == 1)).sum() / n_pos
        fpr = (predicted & (labels_arr == 0)).sum() / n_neg
        j = tpr - fpr
        if j > best_j:
            best_j = j
            best_t = t
    if best_j <= 0:
        logger.warning("threshold estimation degenerate: best Youden J = %g", best_j)
    return float(best_t)


def confusion_at(scores: list[float], labels: list[int], threshold: float
                 ) -> dict[str, int]:
    """Confusion counts for the rule ``score > threshold`` meaning damage."""
    tp = fp = tn = fn = 0
    for s, y in zip(scores, labels):
        predicted = s > threshold
        if predicted and y == 1:
            tp += 1
        elif predicted and y == 0:
            fp += 1
        elif not predicted and y == 0:
            tn += 1
        else:
            fn += 1
    return {"tp": tp, "fp": fp, "tn": tn, "fn": fn}
