"""Experiment configuration: defaults, file loading, overrides, validation.

The configuration is the single source of truth for every hyperparameter.
It is immutable after construction; use ``dataclasses.replace`` (or the
``with_overrides`` helper) to derive variants.

File format is flat ``key = value`` text with dotted sub-sections, e.g.::

    epochs = 30
    lr_decay.kind = exponential
    lr_decay.rate = 0.999
    critical_layers = discriminator_features,generated_image

Precedence (lowest to highest): built-in defaults, config file, environment
variables prefixed with ``DEEPDISASTER_`` (dots spelled as ``__``), explicit
override mappings (CLI ``--set``).
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field, fields, replace

from .errors import ConfigError

GENERATED_IMAGE = "generated_image"
DISCRIMINATOR_FEATURES = "discriminator_features"
BOTTLENECK_Z = "bottleneck_z"

CRITICAL_LAYER_NAMES = frozenset({GENERATED_IMAGE, DISCRIMINATOR_FEATURES, BOTTLENECK_Z})

LR_DECAY_KINDS = ("none", "exponential")

ENV_PREFIX = "DEEPDISASTER_"


@dataclass(frozen=True)
class LrDecay:
    """Learning-rate schedule descriptor.

    ``exponential`` multiplies the learning rate by ``rate`` after each epoch;
    ``none`` keeps it constant (``rate`` is ignored).
    """

    kind: str = "exponential"
    rate: float = 0.999


@dataclass(frozen=True)
class PathsConfig:
    dataset_root: str = "data"
    checkpoint_dir: str = "checkpoints"
    report_dir: str = "reports"


@dataclass(frozen=True)
class ExperimentConfig:
    """Every knob needed to reproduce a run.

    The published training recipe: initial learning rate 2e-3 with decay,
    first-moment coefficient 0.5, batch size 64, loss weights
    (adv, lat, con, kg, kd) = (1, 1, 20, 50, 1) and score weights
    (l, r, vd) = (0.4, 0.2, 0.4).
    """

    image_size: int = 64
    channels: int = 3
    latent_dim: int = 100
    teacher_base_width: int = 64
    student_base_width: int = 16
    learning_rate: float = 2e-3
    lr_decay: LrDecay = LrDecay()
    momentum_beta1: float = 0.5
    batch_size: int = 64
    epochs: int = 30
    lambda_adv: float = 1.0
    lambda_con: float = 20.0
    lambda_lat: float = 1.0
    lambda_kg: float = 50.0
    lambda_kd: float = 1.0
    omega_l: float = 0.4
    omega_r: float = 0.2
    omega_vd: float = 0.4
    critical_layers: frozenset = field(
        default_factory=lambda: frozenset({GENERATED_IMAGE, DISCRIMINATOR_FEATURES})
    )
    smoothgrad_samples: int = 8
    smoothgrad_sigma_fraction: float = 0.1
    seed: int = 0
    paths: PathsConfig = PathsConfig()


def default_config() -> ExperimentConfig:
    """Return the configuration with all published default values."""
    return ExperimentConfig()


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def validate_config(config: ExperimentConfig) -> list[str]:
    """Return a list of invariant violations, one message per offending field.

    An empty list means the config is valid. Violations are values, not
    exceptions; callers that need hard failure should raise ConfigError.
    """
    v: list[str] = []
    if not _is_power_of_two(config.image_size) or config.image_size < 32:
        v.append(f"image_size: must be a power of two >= 32, got {config.image_size}")
    if config.channels not in (1, 3):
        v.append(f"channels: must be 1 or 3, got {config.channels}")
    if config.latent_dim <= 0:
        v.append(f"latent_dim: must be positive, got {config.latent_dim}")
    if config.teacher_base_width <= 0:
        v.append(f"teacher_base_width: must be positive, got {config.teacher_base_width}")
    if config.student_base_width <= 0:
        v.append(f"student_base_width: must be positive, got {config.student_base_width}")
    elif config.student_base_width > config.teacher_base_width:
        v.append(
            "student_base_width: must not exceed teacher_base_width "
            f"({config.student_base_width} > {config.teacher_base_width})"
        )
    if config.learning_rate <= 0:
        v.append(f"learning_rate: must be positive, got {config.learning_rate}")
    if config.lr_decay.kind not in LR_DECAY_KINDS:
        v.append(f"lr_decay.kind: must be one of {LR_DECAY_KINDS}, got {config.lr_decay.kind!r}")
    elif config.lr_decay.kind == "exponential" and not (0.0 < config.lr_decay.rate <= 1.0):
        v.append(f"lr_decay.rate: must be in (0, 1] for exponential decay, got {config.lr_decay.rate}")
    if not (0.0 <= config.momentum_beta1 < 1.0):
        v.append(f"momentum_beta1: must be in [0, 1), got {config.momentum_beta1}")
    if config.batch_size <= 0:
        v.append(f"batch_size: must be positive, got {config.batch_size}")
    if config.epochs <= 0:
        v.append(f"epochs: must be positive, got {config.epochs}")
    for name in ("lambda_adv", "lambda_con", "lambda_lat", "lambda_kg", "lambda_kd"):
        if getattr(config, name) < 0:
            v.append(f"{name}: must be nonnegative, got {getattr(config, name)}")
    for name in ("omega_l", "omega_r", "omega_vd"):
        if getattr(config, name) < 0:
            v.append(f"{name}: must be nonnegative, got {getattr(config, name)}")
    omega_sum = config.omega_l + config.omega_r + config.omega_vd
    if abs(omega_sum - 1.0) > 1e-9:
        v.append(f"omega_l/omega_r/omega_vd: weights must sum to 1, got {omega_sum!r}")
    if not config.critical_layers:
        v.append("critical_layers: must be nonempty")
    else:
        unknown = set(config.critical_layers) - CRITICAL_LAYER_NAMES
        if unknown:
            v.append(f"critical_layers: unknown layer names {sorted(unknown)}")
    if config.smoothgrad_samples < 1:
        v.append(f"smoothgrad_samples: must be >= 1, got {config.smoothgrad_samples}")
    if config.smoothgrad_sigma_fraction <= 0:
        v.append(f"smoothgrad_sigma_fraction: must be positive, got {config.smoothgrad_sigma_fraction}")
    return v


# Flat-key serialization ----------------------------------------------------

_SCALAR_FIELDS = {
    f.name: f.type
    for f in fields(ExperimentConfig)
    if f.name not in ("lr_decay", "paths", "critical_layers")
}
_INT_FIELDS = {
    "image_size", "channels", "latent_dim", "teacher_base_width", "student_base_width",
    "batch_size", "epochs", "smoothgrad_samples", "seed",
}
_FLOAT_FIELDS = {
    "learning_rate", "momentum_beta1",
    "lambda_adv", "lambda_con", "lambda_lat", "lambda_kg", "lambda_kd",
    "omega_l", "omega_r", "omega_vd", "smoothgrad_sigma_fraction",
}
_PATH_KEYS = ("paths.dataset_root", "paths.checkpoint_dir", "paths.report_dir")

KNOWN_KEYS = (
    tuple(sorted(_SCALAR_FIELDS))
    + ("critical_layers", "lr_decay.kind", "lr_decay.rate")
    + _PATH_KEYS
)


def to_flat_dict(config: ExperimentConfig) -> dict[str, str]:
    """Serialize a config to the flat string mapping used by the file format."""
    out: dict[str, str] = {}
    for name in _SCALAR_FIELDS:
        value = getattr(config, name)
        out[name] = repr(value) if isinstance(value, float) else str(value)
    out["lr_decay.kind"] = config.lr_decay.kind
    out["lr_decay.rate"] = repr(config.lr_decay.rate)
    out["critical_layers"] = ",".join(sorted(config.critical_layers))
    out["paths.dataset_root"] = config.paths.dataset_root
    out["paths.checkpoint_dir"] = config.paths.checkpoint_dir
    out["paths.report_dir"] = config.paths.report_dir
    return out


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    try:
        if key in _INT_FIELDS:
            return int(raw)
        if key in _FLOAT_FIELDS or key == "lr_decay.rate":
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as a number") from exc
    if key == "critical_layers":
        names = [part.strip() for part in raw.split(",") if part.strip()]
        return frozenset(names)
    return raw


def from_flat_dict(flat: dict[str, str], base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Apply a flat string mapping on top of ``base`` (defaults if omitted).

    Unknown keys raise ConfigError naming the key.
    """
    config = base if base is not None else default_config()
    updates: dict = {}
    lr_decay = config.lr_decay
    paths = config.paths
    for key, raw in flat.items():
        if key not in KNOWN_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        value = _parse_value(key, raw)
        if key == "lr_decay.kind":
            lr_decay = replace(lr_decay, kind=value)
        elif key == "lr_decay.rate":
            lr_decay = replace(lr_decay, rate=value)
        elif key.startswith("paths."):
            paths = replace(paths, **{key.split(".", 1)[1]: value})
        else:
            updates[key] = value
    return replace(config, lr_decay=lr_decay, paths=paths, **updates)


def parse_config_text(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines into a flat mapping.

    Blank lines and ``#`` comments are skipped. A non-empty line without
    ``=`` raises ConfigError carrying its 1-based line number.
    """
    flat: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {stripped!r}")
        key, raw = stripped.split("=", 1)
        flat[key.strip()] = raw.strip()
    return flat


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    """Load a config file over the defaults and validate it.

    Missing keys keep their default values; an empty file yields the default
    config. Raises ConfigError for a missing file, a parse error, an unknown
    key, or invariant violations.
    """
    path = os.fspath(path)
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        config = from_flat_dict(parse_config_text(text))
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    violations = validate_config(config)
    if violations:
        raise ConfigError(f"{path}: invalid config: " + "; ".join(violations))
    return config


def save_config(config: ExperimentConfig, path: str | os.PathLike) -> None:
    """Write a config as sorted ``key = value`` lines (round-trips exactly)."""
    flat = to_flat_dict(config)
    lines = [f"{key} = {flat[key]}" for key in sorted(flat)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def env_overrides(environ: dict[str, str] | None = None) -> dict[str, str]:
    """Collect DEEPDISASTER_* environment variables as a flat override map.

    Dots in keys are spelled as double underscores, e.g.
    ``DEEPDISASTER_LR_DECAY__RATE`` maps to ``lr_decay.rate``.
    """
    environ = os.environ if environ is None else environ
    upper_to_key = {key.upper().replace(".", "__"): key for key in KNOWN_KEYS}
    out: dict[str, str] = {}
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        suffix = name[len(ENV_PREFIX):]
        key = upper_to_key.get(suffix)
        if key is None:
            raise ConfigError(f"unknown config key in environment variable {name!r}")
        out[key] = value
    return out


def resolve_config(
    path: str | os.PathLike | None = None,
    overrides: dict[str, str] | None = None,
    environ: dict[str, str] | None = None,
) -> ExperimentConfig:
    """Resolve the effective config: defaults < file < environment < overrides."""
    config = load_config(path) if path is not None else default_config()
    config = from_flat_dict(env_overrides(environ), base=config)
    if overrides:
        config = from_flat_dict(overrides, base=config)
    violations = validate_config(config)
    if violations:
        raise ConfigError("invalid config: " + "; ".join(violations))
    return config


def with_overrides(config: ExperimentConfig, **updates) -> ExperimentConfig:
    """Derive a validated variant of ``config`` with the given field updates."""
    derived = replace(config, **updates)
    violations = validate_config(derived)
    if violations:
        raise ConfigError("invalid config: " + "; ".join(violations))
    return derived


def config_hash(config: ExperimentConfig) -> str:
    """Short stable digest of the canonical serialization, for file headers."""
    flat = to_flat_dict(config)
    canon = "\n".join(f"{key}={flat[key]}" for key in sorted(flat))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]
