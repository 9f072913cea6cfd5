"""Scikit-learn style estimator facade over the distillation pipeline.

``DamageDetector`` behaves like a one-class outlier detector: ``fit`` on
damage-free images only, then ``score_samples`` returns the anomaly score
(higher means more likely damaged) and ``predict`` applies a calibrated
threshold. The heavy lifting lives in the ``training``, ``scoring``, and
``localization`` modules; this class wires them behind the conventional
``fit`` / ``score_samples`` / ``predict`` / ``get_params`` surface so the
detector composes with sklearn tooling.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .config import ExperimentConfig, default_config, validate_config, with_overrides
from .data import ImageBatch
from .errors import ConfigError
from .localization import guided_backprop, smooth_gradient, vanilla_gradient
from .scoring import estimate_threshold, score_samples
from .training import (
    Checkpoint,
    load_checkpoint,
    pretrain_teacher_on_arrays,
    restore_pair,
    train_student_on_arrays,
)
from .validation import check_binary_labels, check_image_array


class DamageDetector(BaseEstimator):
    """One-class damage detector trained by student-teacher distillation.

    Parameters
    ----------
    config : ExperimentConfig, optional
        Full experiment configuration. When omitted, defaults are used with
        image size and channel count inferred from the data passed to
        ``fit``.
    teacher : Checkpoint or str, optional
        A pretrained teacher checkpoint (or its path). When omitted, ``fit``
        pretrains a teacher on the same damage-free images first.
    pretrain_epochs, epochs : int, optional
        Epoch overrides for the teacher and student phases; default to the
        config's epoch budget.
    """

    def __init__(self, config: ExperimentConfig | None = None,
                 teacher: Checkpoint | str | None = None,
                 pretrain_epochs: int | None = None,
                 epochs: int | None = None):
        self.config = config
        self.teacher = teacher
        self.pretrain_epochs = pretrain_epochs
        self.epochs = epochs

    # -- fitting -------------------------------------------------------

    def _resolve_config(self, X: np.ndarray) -> ExperimentConfig:
        if self.config is not None:
            violations = validate_config(self.config)
            if violations:
                raise ConfigError("invalid config: " + "; ".join(violations))
            return self.config
        return with_overrides(default_config(), image_size=X.shape[2], channels=X.shape[1])

    def _resolve_teacher(self, config: ExperimentConfig, X: np.ndarray) -> Checkpoint:
        if self.teacher is None:
            ckpt, _ = pretrain_teacher_on_arrays(config, X, epochs=self.pretrain_epochs)
            return ckpt
        if isinstance(self.teacher, Checkpoint):
            return self.teacher
        return load_checkpoint(self.teacher, expected_role="teacher")

    def fit(self, X, y=None):
        """Train on damage-free images of shape (n, channels, size, size) in [-1, 1].

        ``y``, when given, must be all zeros (no damage); this is a one-class
        method.
        """
        X = check_image_array(X)
        if y is not None:
            labels = check_binary_labels(y, len(X))
            if labels.any():
                raise ValueError("fit expects only damage-free samples (label 0)")
        config = self._resolve_config(X)
        X = check_image_array(X, channels=config.channels, image_size=config.image_size)

        teacher_ckpt = self._resolve_teacher(config, X)
        student_ckpt, report = train_student_on_arrays(config, teacher_ckpt, X,
                                                       epochs=self.epochs)
        self.config_ = config
        self.teacher_ckpt_ = teacher_ckpt
        self.student_ckpt_ = student_ckpt
        self.train_report_ = report
        self.alpha_g_, self.alpha_d_ = student_ckpt.require_alphas()
        self.alpha_z_ = student_ckpt.alpha_z
        self._student_pair = restore_pair(student_ckpt)
        self._teacher_pair = restore_pair(teacher_ckpt)
        self._student_pair.freeze()
        self._teacher_pair.freeze()
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "student_ckpt_"):
            raise NotFittedError("DamageDetector is not fitted; call fit first")

    # -- inference -----------------------------------------------------

    def score_samples(self, X) -> np.ndarray:
        """Raw anomaly scores; higher means more likely damaged."""
        self._check_fitted()
        config = self.config_
        X = check_image_array(X, channels=config.channels, image_size=config.image_size)
        raws = []
        for start in range(0, len(X), config.batch_size):
            chunk = X[start:start + config.batch_size]
            batch = ImageBatch(pixels=chunk,
                               sample_ids=tuple(str(i) for i in range(start, start + len(chunk))))
            raws.extend(s.raw for s in score_samples(
                self._student_pair, self._teacher_pair, batch, config,
                alpha_g=self.alpha_g_, alpha_d=self.alpha_d_, alpha_z=self.alpha_z_))
        return np.asarray(raws)

    def calibrate_threshold(self, X, y) -> float:
        """Pick the Youden-optimal decision threshold from labeled samples."""
        scores = self.score_samples(X)
        labels = check_binary_labels(y, len(scores))
        self.threshold_ = estimate_threshold(list(scores), list(labels))
        return self.threshold_

    def predict(self, X) -> np.ndarray:
        """0 (no damage) / 1 (damage) using the calibrated threshold."""
        self._check_fitted()
        if not hasattr(self, "threshold_"):
            raise NotFittedError("no decision threshold; call calibrate_threshold first")
        return (self.score_samples(X) > self.threshold_).astype(int)

    def localize(self, X, method: str = "vanilla") -> list:
        """Saliency maps for each image; methods: vanilla, smoothgrad, guided."""
        self._check_fitted()
        config = self.config_
        X = check_image_array(X, channels=config.channels, image_size=config.image_size,
                              allow_single=True)
        kwargs = dict(alpha_g=self.alpha_g_, alpha_d=self.alpha_d_, alpha_z=self.alpha_z_)
        maps = []
        for i in range(len(X)):
            image = X[i]
            if method == "vanilla":
                maps.append(vanilla_gradient(self._student_pair, self._teacher_pair,
                                             image, config, sample_id=str(i), **kwargs))
            elif method == "smoothgrad":
                maps.append(smooth_gradient(self._student_pair, self._teacher_pair,
                                            image, config, sample_id=str(i),
                                            seed=config.seed + i, **kwargs))
            elif method == "guided":
                maps.append(guided_backprop(self._student_pair, self._teacher_pair,
                                            image, config, sample_id=str(i), **kwargs))
            else:
                raise ValueError(f"unknown localization method {method!r}")
        return maps
