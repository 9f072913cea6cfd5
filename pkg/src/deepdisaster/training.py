"""Teacher pretraining, student distillation training, checkpoints, ablations.

The teacher trains on the adversarial objective alone (adversarial +
reconstruction + latent terms). The student then trains with the teacher
frozen: its generator minimizes the full weighted objective including the
distillation terms, its discriminator the plain minimax term — one update of
each per batch. The per-layer alpha coefficients are calibrated on the first
batch before any parameter update and stay fixed.

Checkpoints are versioned torch containers embedding the config snapshot,
optimizer state, alphas, and RNG state; a save/load round trip reproduces
forward passes bit-identically.
"""

from __future__ import annotations

import copy
import math
import os
import time
from dataclasses import dataclass, replace

import numpy as np
import torch

from .config import (
    BOTTLENECK_Z,
    DISCRIMINATOR_FEATURES,
    GENERATED_IMAGE,
    ExperimentConfig,
    from_flat_dict,
    to_flat_dict,
    validate_config,
)
from .data import LABEL_NO_DAMAGE, SPLIT_TEST, SPLIT_TRAIN, DatasetIndex, load_batch
from .errors import CheckpointError, DataError, TrainingAbort
from .losses import (
    LossBreakdown,
    adversarial_loss,
    calibrate_alpha,
    direction_loss,
    distillation_loss,
    latent_match_loss,
    reconstruction_loss,
    value_loss,
)
from .networks import (
    ROLE_STUDENT,
    ROLE_TEACHER,
    ModelPair,
    arch_from_config,
    build_pair,
    build_student_teacher,
    matched_feature_pair,
)

CHECKPOINT_VERSION = 1
CHECKPOINT_MAGIC = "deepdisaster-checkpoint"


@dataclass
class Checkpoint:
    """Everything needed to rebuild a trained network pair exactly."""

    role: str
    epoch: int
    config: ExperimentConfig
    generator_state: dict
    discriminator_state: dict
    gen_optimizer_state: dict | None = None
    disc_optimizer_state: dict | None = None
    alpha_g: float | None = None
    alpha_d: float | None = None
    alpha_z: float | None = None
    equal_size: bool = False
    use_skips: bool = True
    rng_state: bytes = b""
    data_source: str = ""

    def require_alphas(self) -> tuple[float, float]:
        if self.alpha_g is None or self.alpha_d is None:
            raise CheckpointError(
                f"checkpoint (role={self.role}) carries no calibrated alphas; "
                "scores are undefined without calibration"
            )
        return self.alpha_g, self.alpha_d


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    l_adv: float
    l_con: float
    l_lat: float
    l_kg: float
    l_kd: float
    l_disc: float
    total: float
    learning_rate: float


@dataclass
class TrainReport:
    role: str
    epochs: list[EpochStats]
    wall_clock_seconds: float
    checkpoint_path: str | None = None
    early_stopped: bool = False
    abort_reason: str = ""
    gen_updates: int = 0
    disc_updates: int = 0


class TrainLog:
    """Collects per-iteration loss rows; optionally mirrors them to a CSV sink."""

    COLUMNS = ("iteration", "epoch", "l_adv", "l_con", "l_lat", "l_kg", "l_kd",
               "l_disc", "total", "alpha_g", "alpha_d")

    def __init__(self, sink=None, header_lines: tuple[str, ...] = ()):
        self.rows: list[dict] = []
        self._sink = sink
        if sink is not None:
            for line in header_lines:
                sink.write(f"# {line}\n")
            sink.write(",".join(self.COLUMNS) + "\n")

    def append(self, iteration: int, epoch: int, parts: LossBreakdown, l_disc: float) -> None:
        row = {
            "iteration": iteration, "epoch": epoch,
            "l_adv": parts.l_adv, "l_con": parts.l_con, "l_lat": parts.l_lat,
            "l_kg": parts.l_kg, "l_kd": parts.l_kd, "l_disc": l_disc,
            "total": parts.total, "alpha_g": parts.alpha_g, "alpha_d": parts.alpha_d,
        }
        self.rows.append(row)
        if self._sink is not None:
            self._sink.write(",".join(repr(row[c]) if isinstance(row[c], float) else str(row[c])
                                      for c in self.COLUMNS) + "\n")


def _make_optimizers(pair: ModelPair, config: ExperimentConfig
                     ) -> tuple[torch.optim.Optimizer, torch.optim.Optimizer]:
    betas = (config.momentum_beta1, 0.999)
    gen_opt = torch.optim.Adam(pair.generator.parameters(), lr=config.learning_rate, betas=betas)
    disc_opt = torch.optim.Adam(pair.discriminator.parameters(), lr=config.learning_rate,
                                betas=betas)
    return gen_opt, disc_opt


def _epoch_lr(config: ExperimentConfig, epoch: int) -> float:
    if config.lr_decay.kind == "exponential":
        return config.learning_rate * config.lr_decay.rate ** epoch
    return config.learning_rate


def _set_lr(opt: torch.optim.Optimizer, lr: float) -> None:
    for group in opt.param_groups:
        group["lr"] = lr


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        chunk = order[start:start + batch_size]
        if len(chunk) >= 2:  # batch norm needs more than one sample in train mode
            yield chunk


@dataclass
class _Alphas:
    g: float | None = None
    d: float | None = None
    z: float | None = None

    @property
    def calibrated(self) -> bool:
        return self.g is not None


def _calibrate(student: ModelPair, teacher: ModelPair, x: torch.Tensor,
               critical: frozenset) -> _Alphas:
    """Measure initial value/direction error ratios, one alpha per critical layer.

    Runs both stacks in evaluation mode; the caller restores training modes.
    """
    student.eval()
    teacher.eval()
    alphas = _Alphas()
    with torch.no_grad():
        xhat_s, z_s = student.generator(x)
        xhat_t, z_t = teacher.generator(x)
        if GENERATED_IMAGE in critical:
            alphas.g = calibrate_alpha(value_loss(xhat_s, xhat_t).item(),
                                       direction_loss(xhat_s, xhat_t).item())
        if DISCRIMINATOR_FEATURES in critical:
            f_s = student.discriminator.features(xhat_s)
            f_t = teacher.discriminator.features(xhat_t)
            f_s, f_t = matched_feature_pair(f_s, f_t)
            alphas.d = calibrate_alpha(value_loss(f_s, f_t).item(),
                                       direction_loss(f_s, f_t).item())
        if BOTTLENECK_Z in critical:
            alphas.z = calibrate_alpha(value_loss(z_s, z_t).item(),
                                       direction_loss(z_s, z_t).item())
    if alphas.g is None:
        alphas.g = 0.0
    if alphas.d is None:
        alphas.d = 0.0
    return alphas


def _snapshot(pair: ModelPair) -> tuple[dict, dict]:
    return (copy.deepcopy(pair.generator.state_dict()),
            copy.deepcopy(pair.discriminator.state_dict()))


def _adversarial_step(pair: ModelPair, x: torch.Tensor, config: ExperimentConfig,
                      gen_opt, disc_opt) -> None:
    """One generator + one discriminator update on the adversarial objective."""
    xhat, _ = pair.generator(x)
    probs_fake, f_xhat = pair.discriminator(xhat)
    _, f_x = pair.discriminator(x)
    gen_adv = -torch.log(probs_fake.clamp(1e-7, 1 - 1e-7)).mean()
    total = (config.lambda_adv * gen_adv
             + config.lambda_con * reconstruction_loss(x, xhat)
             + config.lambda_lat * latent_match_loss(f_x, f_xhat))
    gen_opt.zero_grad(set_to_none=True)
    total.backward()
    gen_opt.step()

    probs_real, _ = pair.discriminator(x)
    probs_fake_d, _ = pair.discriminator(xhat.detach())
    _, l_disc = adversarial_loss(probs_real, probs_fake_d)
    disc_opt.zero_grad(set_to_none=True)
    l_disc.backward()
    disc_opt.step()


def _train_loop(
    config: ExperimentConfig,
    images: np.ndarray,
    trainee: ModelPair,
    reference: ModelPair | None,
    *,
    distill: bool,
    train_reference: bool = False,
    epochs: int | None = None,
    log: TrainLog | None = None,
    shuffle_tag: int = 0,
    progress: bool = False,
) -> tuple[_Alphas, TrainReport, tuple]:
    """Shared batch loop for all training modes.

    ``trainee`` is the pair being optimized; ``reference`` supplies
    distillation targets (frozen unless ``train_reference``, which is the
    simultaneous-from-scratch ablation and updates the reference on its own
    adversarial objective each batch before the trainee's step).
    """
    epochs = config.epochs if epochs is None else epochs
    critical = config.critical_layers
    gen_opt, disc_opt = _make_optimizers(trainee, config)
    ref_opts = _make_optimizers(reference, config) if train_reference else None

    trainee.train()
    if reference is not None:
        if train_reference:
            reference.train()
        else:
            reference.eval()

    alphas = _Alphas()
    report = TrainReport(role=trainee.role, epochs=[], wall_clock_seconds=0.0)
    start = time.perf_counter()
    last_good: tuple[int, tuple[dict, dict], _Alphas] | None = None
    iteration = 0

    for epoch in range(epochs):
        lr = _epoch_lr(config, epoch)
        for opt in (gen_opt, disc_opt) + (ref_opts or ()):
            _set_lr(opt, lr)
        rng = np.random.default_rng([config.seed, shuffle_tag, epoch])
        sums = {k: 0.0 for k in ("l_adv", "l_con", "l_lat", "l_kg", "l_kd", "l_disc", "total")}
        batches = 0

        for chunk in _batches(len(images), config.batch_size, rng):
            x = torch.from_numpy(images[chunk])
            iteration += 1

            if distill and not alphas.calibrated:
                alphas = _calibrate(trainee, reference, x, critical)
                trainee.train()
                if train_reference:
                    reference.train()

            if ref_opts is not None:
                _adversarial_step(reference, x, config, *ref_opts)

            if distill:
                with torch.no_grad():
                    xhat_t, z_t = reference.generator(x)
                    f_t = reference.discriminator.features(xhat_t)

            xhat_s, z_s = trainee.generator(x)
            probs_fake, f_xhat = trainee.discriminator(xhat_s)
            _, f_x = trainee.discriminator(x)
            gen_adv = -torch.log(probs_fake.clamp(1e-7, 1 - 1e-7)).mean()
            l_con = reconstruction_loss(x, xhat_s)
            l_lat = latent_match_loss(f_x, f_xhat)

            l_kg = torch.zeros(())
            l_kd = torch.zeros(())
            if distill:
                if GENERATED_IMAGE in critical:
                    l_kg = distillation_loss(xhat_s, xhat_t, alphas.g)
                if DISCRIMINATOR_FEATURES in critical:
                    f_s_m, f_t_m = matched_feature_pair(f_xhat, f_t)
                    l_kd = distillation_loss(f_s_m, f_t_m, alphas.d)
                if BOTTLENECK_Z in critical:
                    # The bottleneck pair shares the feature-distillation weight.
                    l_kd = l_kd + distillation_loss(z_s, z_t, alphas.z)

            total = (config.lambda_adv * gen_adv
                     + config.lambda_con * l_con
                     + config.lambda_lat * l_lat
                     + config.lambda_kg * l_kg
                     + config.lambda_kd * l_kd)

            if not math.isfinite(total.item()):
                report.early_stopped = True
                report.abort_reason = (
                    f"non-finite loss at iteration {iteration} (epoch {epoch}): "
                    f"adv={gen_adv.item():.4g} con={l_con.item():.4g} lat={l_lat.item():.4g} "
                    f"kg={l_kg.item():.4g} kd={l_kd.item():.4g}"
                )
                break

            gen_opt.zero_grad(set_to_none=True)
            total.backward()
            gen_opt.step()
            report.gen_updates += 1

            probs_real, _ = trainee.discriminator(x)
            probs_fake_d, _ = trainee.discriminator(xhat_s.detach())
            _, l_disc = adversarial_loss(probs_real, probs_fake_d)
            disc_opt.zero_grad(set_to_none=True)
            l_disc.backward()
            disc_opt.step()
            report.disc_updates += 1

            parts = LossBreakdown(
                l_adv=gen_adv.item(), l_con=l_con.item(), l_lat=l_lat.item(),
                l_kg=l_kg.item(), l_kd=l_kd.item(), total=total.item(),
                alpha_g=alphas.g or 0.0, alpha_d=alphas.d or 0.0,
            )
            if log is not None:
                log.append(iteration, epoch, parts, l_disc.item())
            for key, value in (("l_adv", parts.l_adv), ("l_con", parts.l_con),
                               ("l_lat", parts.l_lat), ("l_kg", parts.l_kg),
                               ("l_kd", parts.l_kd), ("l_disc", l_disc.item()),
                               ("total", parts.total)):
                sums[key] += value
            batches += 1

        if report.early_stopped:
            break
        if batches:
            report.epochs.append(EpochStats(
                epoch=epoch,
                **{k: sums[k] / batches for k in ("l_adv", "l_con", "l_lat", "l_kg",
                                                  "l_kd", "l_disc", "total")},
                learning_rate=lr,
            ))
            if progress:
                e = report.epochs[-1]
                print(f"[{trainee.role}] epoch {epoch + 1}/{epochs} "
                      f"total={e.total:.4f} con={e.l_con:.4f} kg={e.l_kg:.4f} "
                      f"lr={lr:.2e} elapsed={time.perf_counter() - start:.1f}s", flush=True)
        last_good = (epoch, _snapshot(trainee), copy.copy(alphas))

    report.wall_clock_seconds = time.perf_counter() - start

    if report.early_stopped:
        if last_good is None:
            raise TrainingAbort(report.abort_reason)
        _, (gen_state, disc_state), alphas = last_good
        trainee.generator.load_state_dict(gen_state)
        trainee.discriminator.load_state_dict(disc_state)

    return alphas, report, (gen_opt, disc_opt)


def _train_images(config: ExperimentConfig, data: DatasetIndex) -> np.ndarray:
    ids = data.ids(split=SPLIT_TRAIN)
    if not ids:
        raise DataError("train split is empty")
    for sample_id in ids:
        if data.by_id(sample_id).label != LABEL_NO_DAMAGE:
            raise DataError(f"damage sample in train split: {sample_id}")
    return load_batch(data, ids, config).pixels


def _checkpoint_from_pair(pair: ModelPair, config: ExperimentConfig, epoch: int,
                          opts: tuple = (), alphas: _Alphas | None = None,
                          equal_size: bool = False, data_source: str = "") -> Checkpoint:
    gen_opt, disc_opt = opts if opts else (None, None)
    return Checkpoint(
        role=pair.role,
        epoch=epoch,
        config=config,
        generator_state=copy.deepcopy(pair.generator.state_dict()),
        discriminator_state=copy.deepcopy(pair.discriminator.state_dict()),
        gen_optimizer_state=copy.deepcopy(gen_opt.state_dict()) if gen_opt else None,
        disc_optimizer_state=copy.deepcopy(disc_opt.state_dict()) if disc_opt else None,
        alpha_g=None if alphas is None else alphas.g,
        alpha_d=None if alphas is None else alphas.d,
        alpha_z=None if alphas is None else alphas.z,
        equal_size=equal_size,
        use_skips=pair.generator.use_skips,
        rng_state=bytes(torch.get_rng_state().numpy().tobytes()),
        data_source=data_source,
    )


def pretrain_teacher_on_arrays(config: ExperimentConfig, images: np.ndarray, *,
                               epochs: int | None = None, log: TrainLog | None = None,
                               progress: bool = False, data_source: str = "<memory>"
                               ) -> tuple[Checkpoint, TrainReport]:
    """Array-level teacher pretraining; ``images`` is (n, c, h, w) in [-1, 1]."""
    teacher = build_pair(arch_from_config(config, ROLE_TEACHER), seed=config.seed * 1000 + 1)
    _, report, opts = _train_loop(config, images, teacher, None, distill=False,
                                  epochs=epochs, log=log, shuffle_tag=1, progress=progress)
    ckpt = _checkpoint_from_pair(teacher, config, epoch=len(report.epochs), opts=opts,
                                 data_source=data_source)
    return ckpt, report


def pretrain_teacher(config: ExperimentConfig, data: DatasetIndex, *,
                     epochs: int | None = None, log: TrainLog | None = None,
                     progress: bool = False) -> tuple[Checkpoint, TrainReport]:
    """Train the teacher pair on the adversarial objective only.

    Uses the train split of ``data`` (a generic corpus or the in-domain
    no-damage data, per the caller). The returned checkpoint is meant to be
    frozen for all downstream use.
    """
    images = _train_images(config, data)
    return pretrain_teacher_on_arrays(config, images, epochs=epochs, log=log,
                                      progress=progress, data_source=data.root)


def pretrain_student_solo(config: ExperimentConfig, data: DatasetIndex, *,
                          epochs: int | None = None, log: TrainLog | None = None,
                          progress: bool = False) -> tuple[Checkpoint, TrainReport]:
    """Train a student-sized pair with the adversarial objective only.

    The no-distillation baseline of the training-structure ablation. Uses the
    same initialization seed and shuffle stream as ``train_student`` so the
    two runs are directly comparable.
    """
    images = _train_images(config, data)
    student = build_pair(arch_from_config(config, ROLE_STUDENT), seed=config.seed * 1000 + 3)
    _, report, opts = _train_loop(config, images, student, None, distill=False,
                                  epochs=epochs, log=log, shuffle_tag=3, progress=progress)
    ckpt = _checkpoint_from_pair(student, config, epoch=len(report.epochs), opts=opts,
                                 data_source=data.root)
    return ckpt, report


def train_student_on_arrays(config: ExperimentConfig, teacher: Checkpoint,
                            images: np.ndarray, *, epochs: int | None = None,
                            equal_size: bool = False, log: TrainLog | None = None,
                            progress: bool = False, data_source: str = "<memory>"
                            ) -> tuple[Checkpoint, TrainReport]:
    """Array-level student distillation against a frozen teacher checkpoint."""
    if teacher.role != ROLE_TEACHER:
        raise CheckpointError(f"expected a teacher checkpoint, got role={teacher.role!r}")
    teacher_pair = restore_pair(teacher)
    teacher_pair.freeze()
    student = build_pair(arch_from_config(config, ROLE_STUDENT, equal_size=equal_size),
                         seed=config.seed * 1000 + 3, use_skips=teacher.use_skips)

    alphas, report, opts = _train_loop(config, images, student, teacher_pair, distill=True,
                                       epochs=epochs, log=log, shuffle_tag=3,
                                       progress=progress)
    ckpt = _checkpoint_from_pair(student, config, epoch=len(report.epochs), opts=opts,
                                 alphas=alphas, equal_size=equal_size,
                                 data_source=data_source)
    return ckpt, report


def train_student(config: ExperimentConfig, teacher: Checkpoint, data: DatasetIndex, *,
                  epochs: int | None = None, equal_size: bool = False,
                  log: TrainLog | None = None, progress: bool = False
                  ) -> tuple[Checkpoint, TrainReport]:
    """Distill the frozen teacher into the student on no-damage data.

    Per batch: forward both stacks, calibrate the alphas on the very first
    batch, update the student generator on the full weighted objective, then
    the student discriminator on the minimax term. Teacher parameters receive
    no gradient and are bit-identical before and after.
    """
    images = _train_images(config, data)
    return train_student_on_arrays(config, teacher, images, epochs=epochs,
                                   equal_size=equal_size, log=log, progress=progress,
                                   data_source=data.root)


def train_simultaneous(config: ExperimentConfig, data: DatasetIndex, *,
                       epochs: int | None = None, log: TrainLog | None = None,
                       progress: bool = False
                       ) -> tuple[Checkpoint, Checkpoint, TrainReport]:
    """Train teacher and student together from scratch, distilling from step 0."""
    images = _train_images(config, data)
    student, teacher = build_student_teacher(config)
    alphas, report, opts = _train_loop(config, images, student, teacher, distill=True,
                                       train_reference=True, epochs=epochs, log=log,
                                       shuffle_tag=5, progress=progress)
    student_ckpt = _checkpoint_from_pair(student, config, epoch=len(report.epochs), opts=opts,
                                         alphas=alphas, data_source=data.root)
    teacher_ckpt = _checkpoint_from_pair(teacher, config, epoch=len(report.epochs),
                                         data_source=data.root)
    return student_ckpt, teacher_ckpt, report


# Checkpoint persistence -----------------------------------------------------

def save_checkpoint(ckpt: Checkpoint, path: str | os.PathLike) -> None:
    """Write a checkpoint atomically (temp file + rename)."""
    path = os.fspath(path)
    payload = {
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "role": ckpt.role,
        "epoch": ckpt.epoch,
        "config": to_flat_dict(ckpt.config),
        "generator_state": ckpt.generator_state,
        "discriminator_state": ckpt.discriminator_state,
        "gen_optimizer_state": ckpt.gen_optimizer_state,
        "disc_optimizer_state": ckpt.disc_optimizer_state,
        "alpha_g": ckpt.alpha_g,
        "alpha_d": ckpt.alpha_d,
        "alpha_z": ckpt.alpha_z,
        "equal_size": ckpt.equal_size,
        "use_skips": ckpt.use_skips,
        "rng_state": ckpt.rng_state,
        "data_source": ckpt.data_source,
    }
    tmp = path + ".tmp"
    torch.save(payload, tmp)
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike, expected_role: str | None = None) -> Checkpoint:
    """Read a checkpoint, verifying container version and (optionally) role."""
    path = os.fspath(path)
    if not os.path.exists(path):
        raise CheckpointError(f"checkpoint file not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("magic") != CHECKPOINT_MAGIC:
        raise CheckpointError(f"not a checkpoint file: {path}")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version mismatch in {path}: "
            f"found {payload.get('version')}, expected {CHECKPOINT_VERSION}"
        )
    config = from_flat_dict(payload["config"])
    violations = validate_config(config)
    if violations:
        raise CheckpointError(f"checkpoint {path} embeds an invalid config: {violations}")
    ckpt = Checkpoint(
        role=payload["role"],
        epoch=payload["epoch"],
        config=config,
        generator_state=payload["generator_state"],
        discriminator_state=payload["discriminator_state"],
        gen_optimizer_state=payload["gen_optimizer_state"],
        disc_optimizer_state=payload["disc_optimizer_state"],
        alpha_g=payload["alpha_g"],
        alpha_d=payload["alpha_d"],
        alpha_z=payload["alpha_z"],
        equal_size=payload["equal_size"],
        use_skips=payload["use_skips"],
        rng_state=payload["rng_state"],
        data_source=payload["data_source"],
    )
    if expected_role is not None and ckpt.role != expected_role:
        raise CheckpointError(
            f"role mismatch in {path}: expected {expected_role!r}, found {ckpt.role!r}"
        )
    return ckpt


def restore_pair(ckpt: Checkpoint) -> ModelPair:
    """Rebuild the network pair from a checkpoint, in evaluation mode."""
    arch = arch_from_config(ckpt.config, ckpt.role,
                            equal_size=(ckpt.role == ROLE_STUDENT and ckpt.equal_size))
    pair = build_pair(arch, seed=0, use_skips=ckpt.use_skips)
    pair.generator.load_state_dict(ckpt.generator_state)
    pair.discriminator.load_state_dict(ckpt.discriminator_state)
    pair.eval()
    return pair


# Ablation harness -----------------------------------------------------------

TRAINING_STRUCTURES = ("teacher_only", "student_only", "both_scratch", "kd_pretrained")
STUDENT_SIZES = ("smaller", "equal")
CRITICAL_LAYER_SETS = (
    frozenset({GENERATED_IMAGE}),
    frozenset({GENERATED_IMAGE, DISCRIMINATOR_FEATURES}),
    frozenset({GENERATED_IMAGE, DISCRIMINATOR_FEATURES, BOTTLENECK_Z}),
)
ABLATION_KINDS = ("training_structure", "student_size", "critical_layers")


@dataclass(frozen=True)
class AblationRow:
    variant: str
    disaster_class: str
    auc: float


@dataclass(frozen=True)
class AblationTable:
    kind: str
    rows: tuple[AblationRow, ...]

    def as_text(self) -> str:
        classes = sorted({r.disaster_class for r in self.rows})
        variants = list(dict.fromkeys(r.variant for r in self.rows))
        width = max(len(v) for v in variants) + 2
        lines = ["".ljust(width) + "  ".join(c.rjust(12) for c in classes)]
        lookup = {(r.variant, r.disaster_class): r.auc for r in self.rows}
        for variant in variants:
            cells = "  ".join(f"{lookup[(variant, c)]:.4f}".rjust(12) for c in classes)
            lines.append(variant.ljust(width) + cells)
        return "\n".join(lines) + "\n"


def _variant_auc(student_ckpt: Checkpoint, teacher_ckpt: Checkpoint,
                 data: DatasetIndex, disaster_class: str) -> float:
    from .evaluation import auc_roc
    from .scoring import score_samples

    config = student_ckpt.config
    student = restore_pair(student_ckpt)
    teacher = restore_pair(teacher_ckpt)
    student.freeze()
    teacher.freeze()
    ids = data.ids(split=SPLIT_TEST, disaster_class=disaster_class)
    labels = [1 if data.by_id(i).label != LABEL_NO_DAMAGE else 0 for i in ids]
    scores = []
    for start in range(0, len(ids), config.batch_size):
        chunk = ids[start:start + config.batch_size]
        batch = load_batch(data, chunk, config)
        scores.extend(s.raw for s in score_samples(
            student, teacher, batch, config,
            alpha_g=student_ckpt.alpha_g or 0.0,
            alpha_d=student_ckpt.alpha_d or 0.0,
            alpha_z=student_ckpt.alpha_z,
        ))
    return auc_roc(scores, labels)


def run_ablation(kind: str, config: ExperimentConfig, data: DatasetIndex, *,
                 pretrain_epochs: int | None = None, epochs: int | None = None,
                 progress: bool = False) -> AblationTable:
    """Train and evaluate the requested ablation variants; one AUC per class.

    training_structure: teacher alone, student alone, both from scratch with
    distillation from step 0, and distillation from a pretrained teacher.
    The single-network variants score with the network paired against itself
    (the teacher-student discrepancy terms vanish). student_size: narrower
    vs width-matched student. critical_layers: growing critical-layer sets.
    """
    if kind not in ABLATION_KINDS:
        raise ValueError(f"unknown ablation kind {kind!r}; expected one of {ABLATION_KINDS}")

    rows: list[AblationRow] = []
    classes = sorted({r.disaster_class for r in data.records})

    def evaluate(student_ckpt: Checkpoint, teacher_ckpt: Checkpoint, variant: str) -> None:
        for cls in classes:
            rows.append(AblationRow(variant, cls,
                                    _variant_auc(student_ckpt, teacher_ckpt, data, cls)))

    if kind == "training_structure":
        for variant in TRAINING_STRUCTURES:
            if variant == "teacher_only":
                ckpt, _ = pretrain_teacher(config, data, epochs=pretrain_epochs,
                                           progress=progress)
                evaluate(ckpt, ckpt, variant)
            elif variant == "student_only":
                ckpt, _ = pretrain_student_solo(config, data, epochs=epochs,
                                                progress=progress)
                evaluate(ckpt, ckpt, variant)
            elif variant == "both_scratch":
                student_ckpt, teacher_ckpt, _ = train_simultaneous(
                    config, data, epochs=epochs, progress=progress)
                evaluate(student_ckpt, teacher_ckpt, variant)
            else:  # kd_pretrained
                teacher_ckpt, _ = pretrain_teacher(config, data, epochs=pretrain_epochs,
                                                   progress=progress)
                student_ckpt, _ = train_student(config, teacher_ckpt, data, epochs=epochs,
                                                progress=progress)
                evaluate(student_ckpt, teacher_ckpt, variant)
    elif kind == "student_size":
        teacher_ckpt, _ = pretrain_teacher(config, data, epochs=pretrain_epochs,
                                           progress=progress)
        for variant in STUDENT_SIZES:
            student_ckpt, _ = train_student(config, teacher_ckpt, data, epochs=epochs,
                                            equal_size=(variant == "equal"),
                                            progress=progress)
            evaluate(student_ckpt, teacher_ckpt, variant)
    else:  # critical_layers
        for layer_set in CRITICAL_LAYER_SETS:
            variant = "+".join(sorted(layer_set))
            ablated = replace(config, critical_layers=layer_set)
            teacher_ckpt, _ = pretrain_teacher(ablated, data, epochs=pretrain_epochs,
                                               progress=progress)
            student_ckpt, _ = train_student(ablated, teacher_ckpt, data, epochs=epochs,
                                            progress=progress)
            evaluate(student_ckpt, teacher_ckpt, variant)

    return AblationTable(kind=kind, rows=tuple(rows))
