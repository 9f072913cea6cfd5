"""AUC-ROC, per-class and unseen-class evaluation, and report rendering."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import LABEL_NO_DAMAGE, SPLIT_TEST, SPLIT_TRAIN, DatasetIndex, load_batch
from .errors import DeepDisasterError
from .scoring import confusion_at, estimate_threshold, normalize_scores, score_samples
from .training import Checkpoint, restore_pair


def auc_roc(scores, labels) -> float:
    """Probability a random positive outranks a random negative, ties count 1/2.

    Computed from average ranks (the Mann-Whitney statistic), which equals
    the area under the ROC curve by the trapezoidal rule.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    pos = labels == 1
    neg = labels == 0
    n_pos = int(pos.sum())
    n_neg = int(neg.sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC undefined: both classes must be present")

    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=float)
    ranks[order] = np.arange(1, len(scores) + 1, dtype=float)
    # average ranks within tie groups
    sorted_scores = scores[order]
    i = 0
    while i < len(sorted_scores):
        j = i
        while j + 1 < len(sorted_scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        if j > i:
            ranks[order[i:j + 1]] = (i + j + 2) / 2.0
        i = j + 1

    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass(frozen=True)
class EvalFragment:
    """Evaluation result for one (class, mode) cell."""

    disaster_class: str
    mode: str  # "seen" | "unseen"
    auc: float
    n_train: int = 0
    n_test_no_damage: int = 0
    n_test_damage: int = 0
    threshold: float | None = None
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0


@dataclass(frozen=True)
class EvalReport:
    fragments: tuple[EvalFragment, ...]

    def average(self, mode: str) -> float | None:
        aucs = [f.auc for f in self.fragments if f.mode == mode]
        return sum(aucs) / len(aucs) if aucs else None


def _score_class(student_ckpt: Checkpoint, teacher_ckpt: Checkpoint,
                 data: DatasetIndex, class_name: str) -> tuple[list, list[int]]:
    config = student_ckpt.config
    student = restore_pair(student_ckpt)
    teacher = restore_pair(teacher_ckpt)
    student.freeze()
    teacher.freeze()
    ids = data.ids(split=SPLIT_TEST, disaster_class=class_name)
    if not ids:
        raise DeepDisasterError(f"class {class_name!r} has no test samples")
    labels = [0 if data.by_id(i).label == LABEL_NO_DAMAGE else 1 for i in ids]
    scores = []
    for start in range(0, len(ids), config.batch_size):
        chunk = ids[start:start + config.batch_size]
        batch = load_batch(data, chunk, config)
        scores.extend(score_samples(
            student, teacher, batch, config,
            alpha_g=student_ckpt.alpha_g if student_ckpt.alpha_g is not None else 0.0,
            alpha_d=student_ckpt.alpha_d if student_ckpt.alpha_d is not None else 0.0,
            alpha_z=student_ckpt.alpha_z,
        ))
    return scores, labels


def evaluate_class(student_ckpt: Checkpoint, teacher_ckpt: Checkpoint,
                   data: DatasetIndex, class_name: str) -> EvalFragment:
    """Score a class's test split; report AUC, threshold, confusion counts."""
    scores, labels = _score_class(student_ckpt, teacher_ckpt, data, class_name)
    if len(set(labels)) < 2:
        raise DeepDisasterError(
            f"class {class_name!r} test split needs both labels for evaluation"
        )
    normalized = normalize_scores(scores)
    norm_values = [s.normalized for s in normalized]
    auc = auc_roc([s.raw for s in scores], labels)
    threshold = estimate_threshold(norm_values, labels)
    confusion = confusion_at(norm_values, labels, threshold)
    return EvalFragment(
        disaster_class=class_name,
        mode="seen",
        auc=auc,
        n_train=len(data.ids(split=SPLIT_TRAIN, disaster_class=class_name)),
        n_test_no_damage=labels.count(0),
        n_test_damage=labels.count(1),
        threshold=threshold,
        **confusion,
    )


def evaluate_unseen(ckpts: dict[str, tuple[Checkpoint, Checkpoint]],
                    target_class: str, data: DatasetIndex) -> float:
    """Mean AUC on the target class's test set over models of other classes.

    ``ckpts`` maps class name to its (student, teacher) checkpoints; the
    target's own model, if present, is excluded.
    """
    foreign = {cls: pair for cls, pair in ckpts.items() if cls != target_class}
    if not foreign:
        raise DeepDisasterError(f"no foreign checkpoints to evaluate {target_class!r}")
    aucs = []
    for cls in sorted(foreign):
        student_ckpt, teacher_ckpt = foreign[cls]
        scores, labels = _score_class(student_ckpt, teacher_ckpt, data, target_class)
        aucs.append(auc_roc([s.raw for s in scores], labels))
    return sum(aucs) / len(aucs)


def render_report(fragments, out_dir: str | os.PathLike,
                  header_lines: tuple[str, ...] = ()) -> tuple[str, str]:
    """Write the machine-readable records and the human-readable table.

    Returns (records_path, table_path). Output is deterministic for the
    same fragments and header lines.
    """
    if not fragments:
        raise ValueError("render_report needs at least one fragment")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = EvalReport(fragments=tuple(fragments))

    records_path = out_dir / "results.csv"
    with open(records_path, "w", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write("class,mode,auc,n_train,n_test_no_damage,n_test_damage,"
                 "threshold,tp,fp,tn,fn\n")
        for f in report.fragments:
            threshold = "" if f.threshold is None else repr(f.threshold)
            fh.write(f"{f.disaster_class},{f.mode},{f.auc!r},{f.n_train},"
                     f"{f.n_test_no_damage},{f.n_test_damage},{threshold},"
                     f"{f.tp},{f.fp},{f.tn},{f.fn}\n")

    table_path = out_dir / "table.txt"
    classes = sorted({f.disaster_class for f in report.fragments})
    modes = [m for m in ("seen", "unseen") if any(f.mode == m for f in report.fragments)]
    lookup = {(f.mode, f.disaster_class): f.auc for f in report.fragments}
    name_width = max(len("mode"), max(len(m) for m in modes)) + 2
    with open(table_path, "w", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write("mode".ljust(name_width)
                 + "  ".join(c.rjust(14) for c in classes + ["Average"]) + "\n")
        for mode in modes:
            cells = [lookup.get((mode, c)) for c in classes]
            avg = report.average(mode)
            row = "  ".join(("-" if v is None else f"{v:.4f}").rjust(14)
                            for v in cells + [avg])
            fh.write(mode.ljust(name_width) + row + "\n")
    return str(records_path), str(table_path)
