"""Unsupervised damage detection and localization via student-teacher
GAN distillation.

A compact student generator/discriminator pair is trained to mimic a larger
pretrained teacher on damage-free images only. At test time the
student-teacher discrepancy, combined with the student's own reconstruction
and feature-matching errors, scores how likely an image contains damage;
input-gradient saliency maps localize it.
"""

__version__ = "0.1.0"

from .config import ExperimentConfig, default_config, load_config, validate_config
from .data import DatasetIndex, ImageBatch, SyntheticSpec, index_dataset, load_batch, \
    make_synthetic_dataset
from .estimator import DamageDetector
from .evaluation import auc_roc, evaluate_class, evaluate_unseen, render_report
from .localization import SaliencyMap, guided_backprop, saliency_quality, \
    smooth_gradient, vanilla_gradient
from .scoring import AnomalyScore, estimate_threshold, normalize_scores, score_samples
from .training import Checkpoint, load_checkpoint, pretrain_teacher, run_ablation, \
    save_checkpoint, train_student

__all__ = [
    "AnomalyScore",
    "Checkpoint",
    "DamageDetector",
    "DatasetIndex",
    "ExperimentConfig",
    "ImageBatch",
    "SaliencyMap",
    "SyntheticSpec",
    "auc_roc",
    "default_config",
    "estimate_threshold",
    "evaluate_class",
    "evaluate_unseen",
    "guided_backprop",
    "index_dataset",
    "load_batch",
    "load_checkpoint",
    "load_config",
    "make_synthetic_dataset",
    "normalize_scores",
    "pretrain_teacher",
    "render_report",
    "run_ablation",
    "saliency_quality",
    "save_checkpoint",
    "score_samples",
    "smooth_gradient",
    "train_student",
    "validate_config",
    "vanilla_gradient",
]
