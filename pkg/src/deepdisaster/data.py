"""Dataset indexing, batch loading, and the synthetic defect dataset.

Datasets live on disk as ``root/<class>/{no_damage,damage}/*.{png,jpg,jpeg}``.
An index assigns every file to the train or test split: a configurable
fraction (default 80%) of each class's no-damage images trains, everything
else (remaining no-damage plus all damage images) tests. The train split
never contains a damage image.
"""

from __future__ import annotations

import logging
import os
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .config import ExperimentConfig
from .errors import DataError

logger = logging.getLogger(__name__)

LABEL_NO_DAMAGE = "no_damage"
LABEL_DAMAGE = "damage"
SPLIT_TRAIN = "train"
SPLIT_TEST = "test"

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")


@dataclass(frozen=True)
class SampleRecord:
    sample_id: str
    path: str
    disaster_class: str
    label: str  # no_damage | damage
    split: str  # train | test


@dataclass(frozen=True)
class DatasetIndex:
    root: str
    records: tuple[SampleRecord, ...]
    skipped: int = 0  # unreadable files dropped during indexing

    def __post_init__(self):
        ids = [r.sample_id for r in self.records]
        if len(ids) != len(set(ids)):
            raise DataError("duplicate sample_ids in dataset index")
        for r in self.records:
            if r.split == SPLIT_TRAIN and r.label != LABEL_NO_DAMAGE:
                raise DataError(f"train split contains a damage sample: {r.sample_id}")

    def by_id(self, sample_id: str) -> SampleRecord:
        try:
            return self._id_map[sample_id]
        except KeyError:
            raise DataError(f"unknown sample_id: {sample_id}") from None

    @property
    def _id_map(self) -> dict[str, SampleRecord]:
        cached = getattr(self, "_id_map_cache", None)
        if cached is None:
            cached = {r.sample_id: r for r in self.records}
            object.__setattr__(self, "_id_map_cache", cached)
        return cached

    def ids(self, split: str | None = None, label: str | None = None,
            disaster_class: str | None = None) -> list[str]:
        return [
            r.sample_id
            for r in self.records
            if (split is None or r.split == split)
            and (label is None or r.label == label)
            and (disaster_class is None or r.disaster_class == disaster_class)
        ]

    @property
    def classes(self) -> list[str]:
        return sorted({r.disaster_class for r in self.records})


@dataclass(frozen=True)
class ImageBatch:
    """Decoded pixel batch, shape (batch, channels, size, size), values in [-1, 1]."""

    pixels: np.ndarray
    sample_ids: tuple[str, ...]

    def __post_init__(self):
        if self.pixels.ndim != 4:
            raise DataError(f"batch pixels must be 4-D, got shape {self.pixels.shape}")
        if self.pixels.shape[0] != len(self.sample_ids):
            raise DataError("batch dimension does not match sample_id list length")
        if self.pixels.size and (self.pixels.min() < -1.0 or self.pixels.max() > 1.0):
            raise DataError("batch pixels out of [-1, 1] range")

    def __len__(self) -> int:
        return len(self.sample_ids)


def _list_images(folder: Path) -> list[Path]:
    if not folder.is_dir():
        return []
    return sorted(p for p in folder.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS)


def index_dataset(root: str | os.PathLike, train_fraction: float = 0.8,
                  seed: int = 0) -> DatasetIndex:
    """Index a class-folder dataset with the 80/20-style split protocol.

    Per class, ``train_fraction`` of the no-damage files (sorted filenames,
    seeded shuffle) go to the train split; the remaining no-damage files and
    all damage files go to the test split. Deterministic for a fixed
    (root contents, train_fraction, seed).
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root not found: {root}")
    if not (0.0 < train_fraction <= 1.0):
        raise DataError(f"train_fraction must be in (0, 1], got {train_fraction}")

    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise DataError(f"no class folders under {root}")

    records: list[SampleRecord] = []
    skipped = 0
    for class_dir in class_dirs:
        cls = class_dir.name
        normal = _list_images(class_dir / LABEL_NO_DAMAGE)
        damaged = _list_images(class_dir / LABEL_DAMAGE)
        if not normal:
            raise DataError(f"class {cls!r} has no {LABEL_NO_DAMAGE} images")

        readable = []
        for p in normal + damaged:
            if not os.access(p, os.R_OK):
                skipped += 1
                logger.warning("skipping unreadable file: %s", p)
                continue
            readable.append(p)
        normal = [p for p in readable if p.parent.name == LABEL_NO_DAMAGE]
        damaged = [p for p in readable if p.parent.name == LABEL_DAMAGE]

        rng = np.random.default_rng([seed, zlib.crc32(cls.encode("utf-8"))])
        order = rng.permutation(len(normal))
        n_train = int(len(normal) * train_fraction)
        train_set = {normal[i] for i in order[:n_train]}

        for p in normal:
            split = SPLIT_TRAIN if p in train_set else SPLIT_TEST
            records.append(SampleRecord(f"{cls}/{LABEL_NO_DAMAGE}/{p.name}", str(p), cls,
                                        LABEL_NO_DAMAGE, split))
        for p in damaged:
            records.append(SampleRecord(f"{cls}/{LABEL_DAMAGE}/{p.name}", str(p), cls,
                                        LABEL_DAMAGE, SPLIT_TEST))

    return DatasetIndex(root=str(root), records=tuple(records), skipped=skipped)


def _decode_image(path: str, config: ExperimentConfig) -> np.ndarray:
    img = Image.open(path)
    img = img.convert("L" if config.channels == 1 else "RGB")
    if img.size != (config.image_size, config.image_size):
        img = img.resize((config.image_size, config.image_size), Image.BILINEAR)
    arr = np.asarray(img, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    arr = arr.transpose(2, 0, 1)  # HWC -> CHW
    return 2.0 * arr / 255.0 - 1.0


def load_batch(index: DatasetIndex, ids: list[str], config: ExperimentConfig) -> ImageBatch:
    """Decode, resize (bilinear), and scale the named samples to [-1, 1]."""
    arrays = []
    for sample_id in ids:
        record = index.by_id(sample_id)
        try:
            arrays.append(_decode_image(record.path, config))
        except DataError:
            raise
        except Exception as exc:
            raise DataError(f"cannot decode sample {sample_id!r}: {exc}") from exc
    shape = (len(ids), config.channels, config.image_size, config.image_size)
    pixels = np.stack(arrays, axis=0) if arrays else np.zeros(shape, dtype=np.float32)
    return ImageBatch(pixels=pixels, sample_ids=tuple(ids))


def denormalize(pixels: np.ndarray) -> np.ndarray:
    """Invert the [-1, 1] scaling back to rounded 8-bit values."""
    return np.clip(np.rint((pixels + 1.0) * 127.5), 0, 255).astype(np.uint8)


# Synthetic defect dataset ---------------------------------------------------

MANIFEST_NAME = "defect_manifest.tsv"

# Texture gray levels stay inside [75, 180] so an extreme defect fill always
# differs from the clean texture by > 0.5 on the [-1, 1] scale.
_TEXTURE_LOW = 75
_TEXTURE_HIGH = 180


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a desk-scale dataset: smooth textures, rectangular defects."""

    count_normal: int
    count_anomalous: int
    image_size: int = 64
    texture_cells: int = 8  # low-res noise grid smoothed up to image_size
    defect_min: int = 12
    defect_max: int = 24
    seed: int = 0
    class_name: str = "synthetic"

    def __post_init__(self):
        if self.count_normal <= 0 or self.count_anomalous <= 0:
            raise DataError("synthetic counts must be positive")
        if not (0 < self.defect_min <= self.defect_max < self.image_size):
            raise DataError("defect size range must fit inside the image")


@dataclass(frozen=True)
class DefectBox:
    """Half-open pixel box [x0, x1) x [y0, y1) recorded in the manifest."""

    sample_id: str
    x0: int
    y0: int
    x1: int
    y1: int


def _texture(rng: np.random.Generator, size: int, cells: int) -> np.ndarray:
    """Smooth random texture, uint8 RGB, gray levels in the safe middle band."""
    coarse = rng.uniform(0.0, 1.0, size=(cells, cells))
    img = Image.fromarray((coarse * 255).astype(np.uint8), mode="L")
    smooth = np.asarray(img.resize((size, size), Image.BILINEAR), dtype=np.float32) / 255.0
    base = _TEXTURE_LOW + smooth * (_TEXTURE_HIGH - _TEXTURE_LOW)
    tint = rng.uniform(-10, 10, size=3)
    rgb = np.clip(base[:, :, None] + tint[None, None, :], _TEXTURE_LOW, _TEXTURE_HIGH)
    return rgb.astype(np.uint8)


def _sample_rng(spec: SyntheticSpec, kind: str, idx: int) -> np.random.Generator:
    return np.random.default_rng([spec.seed, 0 if kind == LABEL_NO_DAMAGE else 1, idx])


def synthetic_texture(spec: SyntheticSpec, kind: str, idx: int) -> np.ndarray:
    """Regenerate the defect-free texture for a given sample (test oracle)."""
    return _texture(_sample_rng(spec, kind, idx), spec.image_size, spec.texture_cells)


def _paint_defect(rgb: np.ndarray, rng: np.random.Generator, spec: SyntheticSpec) -> DefectBox:
    size = spec.image_size
    w = int(rng.integers(spec.defect_min, spec.defect_max + 1))
    h = int(rng.integers(spec.defect_min, spec.defect_max + 1))
    x0 = int(rng.integers(0, size - w + 1))
    y0 = int(rng.integers(0, size - h + 1))
    region = rgb[y0:y0 + h, x0:x0 + w, :]
    fill = 0 if region.mean() >= 127.5 else 255
    rgb[y0:y0 + h, x0:x0 + w, :] = fill
    return DefectBox("", x0, y0, x0 + w, y0 + h)


def make_synthetic_dataset(spec: SyntheticSpec, out_root: str | os.PathLike) -> DatasetIndex:
    """Write the synthetic dataset plus its defect manifest and index it.

    Layout: ``out_root/<class_name>/{no_damage,damage}/*.png`` with a
    tab-separated manifest (sample_id, x0, y0, x1, y1) next to the class
    folder. Byte-identical output for identical spec and seed.
    """
    out_root = Path(out_root)
    class_dir = out_root / spec.class_name
    normal_dir = class_dir / LABEL_NO_DAMAGE
    damage_dir = class_dir / LABEL_DAMAGE
    normal_dir.mkdir(parents=True, exist_ok=True)
    damage_dir.mkdir(parents=True, exist_ok=True)

    boxes: list[DefectBox] = []
    for i in range(spec.count_normal):
        rng = _sample_rng(spec, LABEL_NO_DAMAGE, i)
        rgb = _texture(rng, spec.image_size, spec.texture_cells)
        Image.fromarray(rgb).save(normal_dir / f"normal_{i:04d}.png")
    for i in range(spec.count_anomalous):
        rng = _sample_rng(spec, LABEL_DAMAGE, i)
        rgb = _texture(rng, spec.image_size, spec.texture_cells)
        name = f"damage_{i:04d}.png"
        box = _paint_defect(rgb, rng, spec)
        boxes.append(DefectBox(f"{spec.class_name}/{LABEL_DAMAGE}/{name}",
                               box.x0, box.y0, box.x1, box.y1))
        Image.fromarray(rgb).save(damage_dir / name)

    manifest = out_root / MANIFEST_NAME
    with open(manifest, "w", encoding="utf-8") as fh:
        fh.write("sample_id\tx0\ty0\tx1\ty1\n")
        for b in boxes:
            fh.write(f"{b.sample_id}\t{b.x0}\t{b.y0}\t{b.x1}\t{b.y1}\n")

    return index_dataset(out_root, train_fraction=0.8, seed=spec.seed)


def load_manifest(root: str | os.PathLike) -> dict[str, DefectBox]:
    """Read the defect manifest back as a sample_id -> box mapping."""
    path = Path(root) / MANIFEST_NAME
    if not path.exists():
        raise DataError(f"defect manifest not found: {path}")
    boxes: dict[str, DefectBox] = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("sample_id"):
            raise DataError(f"malformed manifest header in {path}")
        for line in fh:
            sample_id, x0, y0, x1, y1 = line.rstrip("\n").split("\t")
            boxes[sample_id] = DefectBox(sample_id, int(x0), int(y0), int(x1), int(y1))
    return boxes
