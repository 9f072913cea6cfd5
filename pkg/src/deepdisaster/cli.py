"""Command-line interface wiring the pipeline into reproducible workflows.

Subcommands: synth, pretrain, train, score, localize, eval, ablate.
Exit codes: 0 success, 1 usage error, 2 runtime abort, 3 evaluation below
the requested AUC floor.

Every emitted text file starts with a metadata header (tool version, exact
command line, config hash); PNGs carry the same strings as text chunks.
Outputs are byte-reproducible for identical flags, inputs, and seed.
"""

from __future__ import annotations

import argparse
import random
import shlex
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .config import ConfigError, ExperimentConfig, config_hash, from_flat_dict, resolve_config
from .data import (
    LABEL_NO_DAMAGE,
    SPLIT_TEST,
    DatasetIndex,
    SyntheticSpec,
    index_dataset,
    load_batch,
    load_manifest,
    make_synthetic_dataset,
)
from .errors import DeepDisasterError
from .evaluation import auc_roc, evaluate_class, evaluate_unseen, render_report
from .localization import (
    METHOD_GUIDED,
    METHOD_SMOOTHGRAD,
    METHOD_VANILLA,
    export_heatmap,
    guided_backprop,
    saliency_quality,
    smooth_gradient,
    vanilla_gradient,
)
from .scoring import normalize_scores, score_samples
from .training import (
    ABLATION_KINDS,
    TrainLog,
    load_checkpoint,
    pretrain_teacher,
    restore_pair,
    run_ablation,
    save_checkpoint,
    train_student,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2
EXIT_FLOOR = 3


class _Parser(argparse.ArgumentParser):
    """argparse variant using exit code 1 for usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _parse_set(pairs: list[str]) -> dict[str, str]:
    overrides = {}
    for pair in pairs:
        if "=" not in pair:
            raise DeepDisasterError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        overrides[key.strip()] = value.strip()
    return overrides


def _resolve(args) -> ExperimentConfig:
    overrides = _parse_set(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = str(args.seed)
    return resolve_config(args.config, overrides)


def _seed_everything(seed: int) -> None:
    torch.manual_seed(seed)
    np.random.seed(seed % 2**32)
    random.seed(seed)


def _header(argv: list[str], config: ExperimentConfig) -> tuple[str, ...]:
    return (
        f"tool: deepdisaster {__version__}",
        f"command: {shlex.join(['deepdisaster'] + argv)}",
        f"config_hash: {config_hash(config)}",
    )


def _write_lines(path: Path, header: tuple[str, ...], lines: list[str]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        for line in lines:
            fh.write(line + "\n")


def _out_dir(args, config: ExperimentConfig, default: str) -> Path:
    out = Path(args.out) if args.out else Path(default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_scoring_setup(args, config: ExperimentConfig):
    student_ckpt = load_checkpoint(args.student, expected_role="student")
    teacher_ckpt = load_checkpoint(args.teacher, expected_role="teacher")
    alpha_g, alpha_d = student_ckpt.require_alphas()
    student = restore_pair(student_ckpt)
    teacher = restore_pair(teacher_ckpt)
    student.freeze()
    teacher.freeze()
    return student_ckpt, teacher_ckpt, student, teacher, alpha_g, alpha_d


# Subcommand implementations --------------------------------------------------

def _cmd_synth(args, argv: list[str]) -> int:
    if args.normal <= 0 or args.anomalous <= 0:
        raise _UsageError("--normal and --anomalous must be positive")
    spec = SyntheticSpec(
        count_normal=args.normal,
        count_anomalous=args.anomalous,
        image_size=args.image_size,
        seed=args.seed if args.seed is not None else 0,
        class_name=args.class_name,
    )
    index = make_synthetic_dataset(spec, args.out)
    n_train = len(index.ids(split="train"))
    n_test = len(index.ids(split="test"))
    print(f"wrote {args.normal + args.anomalous} images under {args.out} "
          f"({n_train} train / {n_test} test); manifest with {args.anomalous} defect boxes")
    return EXIT_OK


def _cmd_pretrain(args, argv: list[str]) -> int:
    config = _resolve(args)
    _seed_everything(config.seed)
    data = index_dataset(args.data, train_fraction=args.train_fraction, seed=config.seed)
    out = _out_dir(args, config, config.paths.checkpoint_dir)
    header = _header(argv, config)
    with open(out / "teacher_train_log.csv", "w", encoding="utf-8") as sink:
        log = TrainLog(sink=sink, header_lines=header)
        ckpt, report = pretrain_teacher(config, data, epochs=args.epochs, log=log,
                                        progress=True)
    path = out / "teacher.ckpt"
    save_checkpoint(ckpt, path)
    print(f"teacher checkpoint: {path} (epochs={ckpt.epoch}, "
          f"wall_clock={report.wall_clock_seconds:.1f}s)")
    return EXIT_OK


def _cmd_train(args, argv: list[str]) -> int:
    config = _resolve(args)
    _seed_everything(config.seed)
    teacher = load_checkpoint(args.teacher, expected_role="teacher")
    data = index_dataset(args.data, train_fraction=args.train_fraction, seed=config.seed)
    out = _out_dir(args, config, config.paths.checkpoint_dir)
    header = _header(argv, config)
    with open(out / "train_log.csv", "w", encoding="utf-8") as sink:
        log = TrainLog(sink=sink, header_lines=header)
        ckpt, report = train_student(config, teacher, data, epochs=args.epochs,
                                     equal_size=args.equal_size, log=log, progress=True)
    path = out / "student.ckpt"
    save_checkpoint(ckpt, path)
    status = "aborted early; last good epoch kept" if report.early_stopped else "done"
    print(f"student checkpoint: {path} (epochs={ckpt.epoch}, alpha_g={ckpt.alpha_g:.4g}, "
          f"alpha_d={ckpt.alpha_d:.4g}, {status})")
    return EXIT_OK


def _cmd_score(args, argv: list[str]) -> int:
    student_ckpt = load_checkpoint(args.student, expected_role="student")
    config = student_ckpt.config
    overrides = _parse_set(args.set or [])
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if overrides:
        config = from_flat_dict(overrides, base=config)
    _seed_everything(config.seed)

    _, _, student, teacher, alpha_g, alpha_d = _load_scoring_setup(args, config)
    data = index_dataset(args.data, train_fraction=args.train_fraction, seed=config.seed)
    ids = data.ids(split=args.split, disaster_class=args.class_name)
    if not ids:
        raise DeepDisasterError(f"no samples in split {args.split!r}")

    scores = []
    for start in range(0, len(ids), config.batch_size):
        chunk = ids[start:start + config.batch_size]
        batch = load_batch(data, chunk, config)
        scores.extend(score_samples(student, teacher, batch, config, alpha_g=alpha_g,
                                    alpha_d=alpha_d, alpha_z=student_ckpt.alpha_z))
    scores = normalize_scores(scores)

    out = _out_dir(args, config, config.paths.report_dir)
    lines = ["sample_id,label,l_term,r_term,v_term,d_term,raw,normalized"]
    for s in scores:
        label = data.by_id(s.sample_id).label
        lines.append(f"{s.sample_id},{label},{s.l_term!r},{s.r_term!r},{s.v_term!r},"
                     f"{s.d_term!r},{s.raw!r},{s.normalized!r}")
    path = out / "scores.csv"
    _write_lines(path, _header(argv, config), lines)
    print(f"scores: {path} ({len(scores)} samples)")
    return EXIT_OK


def _cmd_localize(args, argv: list[str]) -> int:
    student_ckpt = load_checkpoint(args.student, expected_role="student")
    config = student_ckpt.config
    if args.n is not None:
        config = replace(config, smoothgrad_samples=args.n)
    if args.sigma is not None:
        config = replace(config, smoothgrad_sigma_fraction=args.sigma)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    _seed_everything(config.seed)

    _, _, student, teacher, alpha_g, alpha_d = _load_scoring_setup(args, config)
    data = index_dataset(args.data, train_fraction=args.train_fraction, seed=config.seed)
    ids = args.sample_id or data.ids(split=SPLIT_TEST, label="damage",
                                     disaster_class=args.class_name)
    if not ids:
        raise DeepDisasterError("no damage-labeled test samples to localize")
    if args.limit:
        ids = ids[:args.limit]

    try:
        boxes = load_manifest(args.data)
    except DeepDisasterError:
        boxes = {}

    out = _out_dir(args, config, config.paths.report_dir)
    header = _header(argv, config)
    kwargs = dict(alpha_g=alpha_g, alpha_d=alpha_d, alpha_z=student_ckpt.alpha_z)
    metric_lines = ["sample_id,method,in_out_ratio"]
    for sample_id in ids:
        batch = load_batch(data, [sample_id], config)
        x = torch.from_numpy(batch.pixels)
        if args.method == METHOD_VANILLA:
            smap = vanilla_gradient(student, teacher, x, config, sample_id=sample_id, **kwargs)
        elif args.method == METHOD_SMOOTHGRAD:
            smap = smooth_gradient(student, teacher, x, config, sample_id=sample_id,
                                   seed=config.seed, **kwargs)
        else:
            smap = guided_backprop(student, teacher, x, config, sample_id=sample_id, **kwargs)
        png = out / f"{Path(sample_id).name}.{args.method}.png"
        export_heatmap(smap, x, png, metadata={
            "tool": f"deepdisaster {__version__}",
            "command": shlex.join(["deepdisaster"] + argv),
            "config_hash": config_hash(config),
            "params": repr(sorted(smap.params.items())),
        })
        ratio = ""
        if sample_id in boxes:
            ratio = repr(saliency_quality(smap, boxes[sample_id]))
        metric_lines.append(f"{sample_id},{args.method},{ratio}")
    _write_lines(out / "saliency_metrics.csv", header, metric_lines)
    print(f"wrote {len(ids)} heatmaps and saliency_metrics.csv under {out}")
    return EXIT_OK


def _cmd_eval(args, argv: list[str]) -> int:
    if args.unseen:
        return _cmd_eval_unseen(args, argv)
    student_ckpt = load_checkpoint(args.student, expected_role="student")
    teacher_ckpt = load_checkpoint(args.teacher, expected_role="teacher")
    config = student_ckpt.config
    _seed_everything(config.seed if args.seed is None else args.seed)
    data = index_dataset(args.data, train_fraction=args.train_fraction, seed=config.seed)
    classes = [args.class_name] if args.class_name else data.classes
    fragments = [evaluate_class(student_ckpt, teacher_ckpt, data, cls) for cls in classes]
    out = _out_dir(args, config, config.paths.report_dir)
    records, table = render_report(fragments, out, header_lines=_header(argv, config))
    print(f"report: {records}, {table}")
    for f in fragments:
        print(f"  {f.disaster_class}: AUC={f.auc:.4f} "
              f"(threshold={f.threshold:.4f}, tp={f.tp} fp={f.fp} tn={f.tn} fn={f.fn})")
    worst = min(f.auc for f in fragments)
    if args.min_auc is not None and worst < args.min_auc:
        print(f"AUC floor violated: {worst:.4f} < {args.min_auc}", file=sys.stderr)
        return EXIT_FLOOR
    return EXIT_OK


def _cmd_eval_unseen(args, argv: list[str]) -> int:
    if not args.models_root:
        raise _UsageError("--unseen requires --models-root")
    if not args.target_class:
        raise _UsageError("--unseen requires --target-class")
    models_root = Path(args.models_root)
    ckpts = {}
    for class_dir in sorted(p for p in models_root.iterdir() if p.is_dir()):
        student_path = class_dir / "student.ckpt"
        teacher_path = class_dir / "teacher.ckpt"
        if student_path.exists() and teacher_path.exists():
            ckpts[class_dir.name] = (load_checkpoint(student_path, expected_role="student"),
                                     load_checkpoint(teacher_path, expected_role="teacher"))
    if not ckpts:
        raise DeepDisasterError(f"no <class>/{{student,teacher}}.ckpt pairs under {models_root}")
    any_config = next(iter(ckpts.values()))[0].config
    _seed_everything(any_config.seed if args.seed is None else args.seed)
    data = index_dataset(args.data, train_fraction=args.train_fraction, seed=any_config.seed)
    auc = evaluate_unseen(ckpts, args.target_class, data)
    out = _out_dir(args, any_config, any_config.paths.report_dir)
    _write_lines(out / "unseen.csv", _header(argv, any_config),
                 ["target_class,n_foreign_models,mean_auc",
                  f"{args.target_class},{len(ckpts) - (args.target_class in ckpts)},{auc!r}"])
    print(f"unseen AUC for {args.target_class}: {auc:.4f}")
    if args.min_auc is not None and auc < args.min_auc:
        print(f"AUC floor violated: {auc:.4f} < {args.min_auc}", file=sys.stderr)
        return EXIT_FLOOR
    return EXIT_OK


def _cmd_ablate(args, argv: list[str]) -> int:
    config = _resolve(args)
    _seed_everything(config.seed)
    data = index_dataset(args.data, train_fraction=args.train_fraction, seed=config.seed)
    table = run_ablation(args.kind, config, data, pretrain_epochs=args.pretrain_epochs,
                         epochs=args.epochs, progress=args.progress)
    out = _out_dir(args, config, config.paths.report_dir)
    header = _header(argv, config)
    lines = ["variant,class,auc"]
    lines.extend(f"{r.variant},{r.disaster_class},{r.auc!r}" for r in table.rows)
    _write_lines(out / f"ablation_{args.kind}.csv", header, lines)
    _write_lines(out / f"ablation_{args.kind}.txt", header,
                 table.as_text().rstrip("\n").split("\n"))
    print(table.as_text(), end="")
    return EXIT_OK


class _UsageError(Exception):
    pass


def build_parser() -> _Parser:
    parser = _Parser(prog="deepdisaster",
                     description="Unsupervised damage detection and localization")
    parser.add_argument("--version", action="version", version=f"deepdisaster {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, with_config=True):
        if with_config:
            p.add_argument("--config", help="config file (key = value lines)")
            p.add_argument("--set", action="append", metavar="KEY=VALUE",
                           help="config override; repeatable")
        p.add_argument("--seed", type=int, help="override the configured RNG seed")
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("synth", help="generate the synthetic defect dataset")
    p.add_argument("--normal", type=int, required=True, help="defect-free image count")
    p.add_argument("--anomalous", type=int, required=True, help="defective image count")
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--class-name", default="synthetic")
    common(p, with_config=False)
    p.set_defaults(func=_cmd_synth)
    p.set_defaults(out="synthetic_data")

    p = sub.add_parser("pretrain", help="pretrain the teacher on no-damage data")
    p.add_argument("--data", required=True, help="dataset root (class-folder layout)")
    p.add_argument("--epochs", type=int, help="override config epochs")
    p.add_argument("--train-fraction", type=float, default=0.8)
    common(p)
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("train", help="distill the teacher into the student")
    p.add_argument("--teacher", required=True, help="teacher checkpoint path")
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--equal-size", action="store_true",
                   help="force the student to the teacher's width (ablation)")
    p.add_argument("--train-fraction", type=float, default=0.8)
    common(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("score", help="score a dataset split")
    p.add_argument("--student", required=True)
    p.add_argument("--teacher", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default=SPLIT_TEST, choices=["train", "test"])
    p.add_argument("--class-name")
    p.add_argument("--train-fraction", type=float, default=0.8)
    common(p)
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("localize", help="write saliency heatmaps")
    p.add_argument("--student", required=True)
    p.add_argument("--teacher", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--method", default=METHOD_SMOOTHGRAD,
                   choices=[METHOD_VANILLA, METHOD_SMOOTHGRAD, METHOD_GUIDED])
    p.add_argument("--n", type=int, help="smoothgrad sample count")
    p.add_argument("--sigma", type=float, help="smoothgrad noise as fraction of input range")
    p.add_argument("--limit", type=int, help="max images to localize")
    p.add_argument("--sample-id", action="append", help="specific sample; repeatable")
    p.add_argument("--class-name")
    p.add_argument("--train-fraction", type=float, default=0.8)
    common(p, with_config=False)
    p.set_defaults(func=_cmd_localize)

    p = sub.add_parser("eval", help="per-class (or unseen-class) AUC report")
    p.add_argument("--student")
    p.add_argument("--teacher")
    p.add_argument("--data", required=True)
    p.add_argument("--class-name")
    p.add_argument("--unseen", action="store_true",
                   help="score --target-class with models of the other classes")
    p.add_argument("--models-root", help="directory of <class>/{student,teacher}.ckpt")
    p.add_argument("--target-class")
    p.add_argument("--min-auc", type=float, help="exit 3 if any AUC falls below this floor")
    p.add_argument("--train-fraction", type=float, default=0.8)
    common(p, with_config=False)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="run one ablation study")
    p.add_argument("--kind", required=True, choices=list(ABLATION_KINDS))
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--pretrain-epochs", type=int)
    p.add_argument("--progress", action="store_true")
    p.add_argument("--train-fraction", type=float, default=0.8)
    common(p)
    p.set_defaults(func=_cmd_ablate)

    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE

    try:
        if args.command == "eval" and not args.unseen:
            if not args.student or not args.teacher:
                raise _UsageError("eval requires --student and --teacher (or --unseen)")
        return args.func(args, argv)
    except _UsageError as exc:
        print(f"deepdisaster {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"deepdisaster {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DeepDisasterError as exc:
        print(f"deepdisaster {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # unexpected runtime failure
        print(f"deepdisaster {args.command}: unexpected error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
