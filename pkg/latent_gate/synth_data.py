"""
Synthetic Phantom Datasets.

Generates "healthy phantom + additive lesion" grayscale images whose normal
family has a controllable number of generative factors, writes them as 8-bit
binary PGM files indexed by a JSON manifest, and loads them back with every
dataset invariant checked.

A normal phantom is a soft-edged ellipse on a dark background. Its first five
factors set the two semi-axes, the rotation, the mean intensity and the
direction of an interior intensity ramp; any further factors perturb the
boundary with smooth radial harmonics. Lesions are bright raised-cosine
discs added on top of the phantom.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Optional, Union

import jsonschema
import numpy as np
from scipy.special import expit

from .exceptions import (
    ConfigError,
    ContaminationError,
    ContractError,
    DatasetIOError,
    DatasetLoadError,
    LesionPlacementError,
    PGMParseError,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

SPLITS = ("train", "test_normal", "test_abnormal")
MANIFEST_NAME = "manifest.json"

BACKGROUND_LEVEL = 0.1
EDGE_SOFTNESS = 1.0
RAMP_AMPLITUDE = 0.15
HARMONIC_AMPLITUDE = 0.1
LESION_EDGE_WIDTH = 2.0
LESION_MASK_THRESHOLD = 0.05
MIN_LESION_PIXELS = 28
MAX_PLACEMENT_ATTEMPTS = 100
PGM_MAXVAL = 255


class Label(str, Enum):
    NORMAL = "normal"
    ABNORMAL = "abnormal"


@dataclass(frozen=True)
class GeneratorConfig:
    """Parameters of the phantom generator."""

    k_factors: int = 4
    image_size: int = 64
    noise_sigma: float = 0.01
    lesion_count: tuple[int, int] = (1, 2)
    lesion_radius: tuple[float, float] = (3.0, 7.0)
    lesion_intensity: tuple[float, float] = (0.2, 0.5)
    seed: int = 0

    def __post_init__(self) -> None:
        errors = self.validate()
        if errors:
            raise ConfigError("invalid generator configuration", errors)

    def validate(self) -> list[str]:
        errors: list[str] = []
        if self.k_factors < 1:
            errors.append(f"k_factors must be >= 1, got {self.k_factors}")
        if self.image_size < 16:
            errors.append(f"image_size must be >= 16, got {self.image_size}")
        if self.noise_sigma < 0:
            errors.append(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        lo_n, hi_n = self.lesion_count
        if lo_n < 1 or hi_n < lo_n:
            errors.append(f"lesion_count must satisfy 1 <= lo <= hi, got {self.lesion_count}")
        lo_r, hi_r = self.lesion_radius
        if lo_r < 3.0 or hi_r < lo_r:
            errors.append(f"lesion_radius must satisfy 3 <= lo <= hi, got {self.lesion_radius}")
        lo_i, hi_i = self.lesion_intensity
        if lo_i <= 0.0 or hi_i < lo_i or hi_i > 1.0:
            errors.append(
                f"lesion_intensity must satisfy 0 < lo <= hi <= 1, got {self.lesion_intensity}"
            )
        if self.seed < 0:
            errors.append(f"seed must be >= 0, got {self.seed}")
        return errors

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        for key in ("lesion_count", "lesion_radius", "lesion_intensity"):
            data[key] = list(data[key])
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "GeneratorConfig":
        values = dict(data)
        for key in ("lesion_count", "lesion_radius", "lesion_intensity"):
            if key in values:
                values[key] = tuple(values[key])
        return cls(**values)


@dataclass(frozen=True)
class Lesion:
    center_y: float
    center_x: float
    radius: float
    intensity: float


@dataclass
class SampleRecord:
    """One grayscale image with its label and lesion mask."""

    image: np.ndarray
    label: Label
    mask: np.ndarray
    factors: np.ndarray
    seed: int
    record_id: str = ""
    lesions: tuple[Lesion, ...] = ()

    @property
    def is_abnormal(self) -> bool:
        return self.label is Label.ABNORMAL

    def check(self) -> list[str]:
        """Return the violated record invariants."""
        errors: list[str] = []
        if self.image.min() < 0.0 or self.image.max() > 1.0:
            errors.append("image values outside [0, 1]")
        if self.label is Label.NORMAL and self.mask.any():
            errors.append("normal record has a non-empty mask")
        if self.label is Label.ABNORMAL and int(self.mask.sum()) < MIN_LESION_PIXELS:
            errors.append(
                f"abnormal record mask has {int(self.mask.sum())} pixels, "
                f"expected at least {MIN_LESION_PIXELS}"
            )
        return errors


def _full_factors(factors: np.ndarray) -> np.ndarray:
    padded = np.zeros(max(5, factors.size))
    padded[: factors.size] = factors
    return padded


def phantom(factors: np.ndarray, image_size: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Render the noise-free phantom and its soft support for ``factors``."""
    f = _full_factors(np.asarray(factors, dtype=np.float64))
    center = (image_size - 1) / 2.0
    yy, xx = np.mgrid[0:image_size, 0:image_size].astype(np.float64) - center

    semi_a = image_size * (0.22 + 0.08 * f[0])
    semi_b = image_size * (0.22 + 0.08 * f[1])
    theta = f[2] * np.pi / 2.0
    intensity = 0.55 + 0.2 * f[3]
    ramp_angle = f[4] * np.pi

    u = xx * np.cos(theta) + yy * np.sin(theta)
    v = -xx * np.sin(theta) + yy * np.cos(theta)
    rho = np.hypot(u / semi_a, v / semi_b)
    angle = np.arctan2(v / semi_b, u / semi_a)

    harmonics = f[5:]
    boundary = np.ones_like(rho)
    if harmonics.size:
        amplitude = HARMONIC_AMPLITUDE / np.sqrt(harmonics.size)
        for order, weight in enumerate(harmonics, start=2):
            boundary = boundary + amplitude * weight * np.cos(order * angle)
    boundary = np.maximum(boundary, 0.3)

    edge = (boundary - rho) * min(semi_a, semi_b)
    support = expit(edge / EDGE_SOFTNESS)
    ramp = (xx * np.cos(ramp_angle) + yy * np.sin(ramp_angle)) / (image_size / 2.0)
    interior = intensity + RAMP_AMPLITUDE * ramp
    image = BACKGROUND_LEVEL + support * (interior - BACKGROUND_LEVEL)
    return image, support


def generate_normal(seed: int, cfg: GeneratorConfig) -> SampleRecord:
    """Draw one normal phantom, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    factors = rng.uniform(-1.0, 1.0, size=cfg.k_factors)
    image, _ = phantom(factors, cfg.image_size)
    if cfg.noise_sigma > 0:
        image = image + rng.normal(0.0, cfg.noise_sigma, size=image.shape)
    size = cfg.image_size
    return SampleRecord(
        image=np.clip(image, 0.0, 1.0),
        label=Label.NORMAL,
        mask=np.zeros((size, size), dtype=np.uint8),
        factors=factors,
        seed=seed,
    )


def raised_cosine_disc(
    image_size: int, lesion: Lesion, edge_width: float = LESION_EDGE_WIDTH
) -> np.ndarray:
    """Intensity field of one lesion: flat core, raised-cosine edge centred on the radius."""
    yy, xx = np.mgrid[0:image_size, 0:image_size].astype(np.float64)
    r = np.hypot(yy - lesion.center_y, xx - lesion.center_x)
    t = np.clip((r - (lesion.radius - edge_width / 2.0)) / edge_width, 0.0, 1.0)
    return lesion.intensity * 0.5 * (1.0 + np.cos(np.pi * t))


def _place_lesion(
    rng: np.random.Generator, support: np.ndarray, radius: float, intensity: float
) -> Lesion:
    size = support.shape[0]
    margin = radius + LESION_EDGE_WIDTH
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        cy, cx = rng.uniform(margin, size - 1 - margin, size=2)
        if support[int(round(cy)), int(round(cx))] >= 0.5:
            return Lesion(float(cy), float(cx), float(radius), float(intensity))
    raise LesionPlacementError(
        f"no lesion centre on the phantom support after {MAX_PLACEMENT_ATTEMPTS} attempts"
    )


def inject_lesion(record: SampleRecord, seed: int, cfg: GeneratorConfig) -> SampleRecord:
    """Add 1-2 bright lesions to a normal record."""
    if record.label is not Label.NORMAL:
        raise ContractError(f"inject_lesion needs a normal record, got {record.label.value}")
    rng = np.random.default_rng([seed, 1])
    _, support = phantom(record.factors, cfg.image_size)
    count = int(rng.integers(cfg.lesion_count[0], cfg.lesion_count[1] + 1))
    lesions = []
    delta = np.zeros_like(record.image)
    for _ in range(count):
        radius = rng.uniform(*cfg.lesion_radius)
        intensity = rng.uniform(*cfg.lesion_intensity)
        lesion = _place_lesion(rng, support, radius, intensity)
        lesions.append(lesion)
        delta += raised_cosine_disc(cfg.image_size, lesion)
    mask = (delta > LESION_MASK_THRESHOLD).astype(np.uint8)
    return SampleRecord(
        image=np.clip(record.image + delta, 0.0, 1.0),
        label=Label.ABNORMAL,
        mask=mask,
        factors=record.factors,
        seed=seed,
        record_id=record.record_id,
        lesions=tuple(lesions),
    )


# -- PGM codec -------------------------------------------------------------------------


def quantize(image: np.ndarray) -> np.ndarray:
    """Map [0, 1] floats to 8-bit levels by round(v * 255)."""
    arr = np.asarray(image)
    if arr.dtype == np.uint8:
        return arr
    return np.rint(np.clip(arr, 0.0, 1.0) * PGM_MAXVAL).astype(np.uint8)


def write_pgm(path: PathLike, image: np.ndarray) -> None:
    """Write a 2-D image as binary P5 PGM with maxval 255."""
    data = quantize(image)
    if data.ndim != 2:
        raise ContractError(f"write_pgm expects a 2-D image, got shape {data.shape}")
    height, width = data.shape
    header = f"P5\n{width} {height}\n{PGM_MAXVAL}\n".encode("ascii")
    try:
        Path(path).write_bytes(header + np.ascontiguousarray(data).tobytes())
    except OSError as e:
        raise DatasetIOError(f"cannot write {path}: {e}") from e


def _header_tokens(data: bytes, path: str) -> tuple[list[bytes], int]:
    """Split the four PGM header tokens, skipping comments."""
    tokens: list[bytes] = []
    i = 0
    while len(tokens) < 4:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if i >= len(data):
            raise PGMParseError(path, "header", f"expected 4 header fields, found {len(tokens)}")
        if data[i : i + 1] == b"#":
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
            continue
        start = i
        while i < len(data) and not data[i : i + 1].isspace():
            i += 1
        tokens.append(data[start:i])
    # exactly one whitespace byte separates the header from the payload
    return tokens, i + 1


def read_pgm_raw(path: PathLike, expected_size: Optional[int] = 64) -> np.ndarray:
    """Read a binary PGM into an 8-bit array."""
    name = str(path)
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise DatasetIOError(f"cannot read {name}: {e}") from e
    tokens, offset = _header_tokens(data, name)
    magic, width_tok, height_tok, maxval_tok = tokens
    if magic != b"P5":
        raise PGMParseError(name, "magic", f"unsupported magic {magic.decode(errors='replace')!r}")
    try:
        width, height = int(width_tok), int(height_tok)
    except ValueError as e:
        raise PGMParseError(name, "dimensions", "width/height are not integers") from e
    if expected_size is not None and (width, height) != (expected_size, expected_size):
        raise PGMParseError(
            name, "dimensions", f"expected {expected_size}x{expected_size}, got {width}x{height}"
        )
    try:
        maxval = int(maxval_tok)
    except ValueError as e:
        raise PGMParseError(name, "maxval", "maxval is not an integer") from e
    if maxval != PGM_MAXVAL:
        raise PGMParseError(name, "maxval", f"expected {PGM_MAXVAL}, got {maxval}")
    payload = data[offset:]
    expected = width * height
    if len(payload) != expected:
        raise PGMParseError(name, "payload", f"expected {expected} bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width).copy()


def read_pgm(path: PathLike, expected_size: Optional[int] = 64) -> np.ndarray:
    """Read a binary PGM as float64 values in [0, 1]."""
    return read_pgm_raw(path, expected_size).astype(np.float64) / PGM_MAXVAL


# -- manifests -------------------------------------------------------------------------


@dataclass
class ManifestEntry:
    record_id: str
    image_path: str
    mask_path: Optional[str]
    label: Label
    seed: int
    factors: list[float] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "record_id": self.record_id,
            "image_path": self.image_path,
            "mask_path": self.mask_path,
            "label": self.label.value,
            "seed": self.seed,
            "factors": [float(f) for f in self.factors],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any], default_id: str) -> "ManifestEntry":
        return cls(
            record_id=data.get("record_id", default_id),
            image_path=data["image_path"],
            mask_path=data["mask_path"],
            label=Label(data["label"]),
            seed=int(data["seed"]),
            factors=list(data.get("factors", [])),
        )


@dataclass
class DatasetManifest:
    """Index of a dataset on disk; paths are relative to the manifest."""

    generator_config: dict[str, Any]
    splits: dict[str, list[ManifestEntry]]
    path: Optional[Path] = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "generator_config": self.generator_config,
            "splits": {name: [e.to_dict() for e in self.splits[name]] for name in SPLITS},
        }

    def __len__(self) -> int:
        return sum(len(entries) for entries in self.splits.values())


@dataclass
class Dataset:
    """Loaded records grouped by split."""

    train: list[SampleRecord]
    test_normal: list[SampleRecord]
    test_abnormal: list[SampleRecord]
    generator_config: dict[str, Any]
    root: Optional[Path] = None

    def split(self, name: str) -> list[SampleRecord]:
        if name not in SPLITS:
            raise ContractError(f"unknown split {name!r}")
        records: list[SampleRecord] = getattr(self, name)
        return records

    @property
    def has_masks(self) -> bool:
        return any(r.mask.any() for r in self.test_abnormal)


def stack_images(records: list[SampleRecord]) -> np.ndarray:
    """Stack record images into an [N×1×H×W] batch."""
    if not records:
        raise ContractError("cannot stack an empty record list")
    return np.stack([r.image for r in records])[:, None, :, :].astype(np.float64)


def _load_schema() -> dict[str, Any]:
    schema_path = Path(__file__).parent / "manifest.schema.json"
    with open(schema_path, encoding="utf-8") as f:
        schema: dict[str, Any] = json.load(f)
    return schema


def validate_manifest_dict(data: Any) -> tuple[bool, list[str]]:
    """Validate a manifest document against its JSON schema."""
    validator = jsonschema.Draft201909Validator(_load_schema())
    errors = [
        f"{'/'.join(str(p) for p in error.absolute_path) or '<root>'}: {error.message}"
        for error in sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    ]
    return len(errors) == 0, errors


def _generate_record(
    split: str, index: int, seed: int, cfg: GeneratorConfig
) -> SampleRecord:
    record = generate_normal(seed, cfg)
    record.record_id = f"{split}-{index:05d}"
    if split == "test_abnormal":
        return inject_lesion(record, seed, cfg)
    return record


def build_dataset(
    cfg: GeneratorConfig,
    n_train: int,
    n_test_normal: int,
    n_test_abnormal: int,
    out_dir: PathLike,
    workers: int = 1,
) -> DatasetManifest:
    """Generate every split, write PGM files and ``manifest.json``."""
    root = Path(out_dir)
    if root.exists() and not root.is_dir():
        raise DatasetIOError(f"output path {root} exists and is not a directory")
    try:
        for split in SPLITS:
            (root / split).mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DatasetIOError(f"cannot create dataset directory {root}: {e}") from e

    plan: list[tuple[str, int, int]] = []
    offset = 0
    for split, count in zip(SPLITS, (n_train, n_test_normal, n_test_abnormal)):
        if count < 0:
            raise ConfigError(f"{split} size must be >= 0, got {count}")
        plan.extend((split, i, cfg.seed + offset + i) for i in range(count))
        offset += count

    def _materialise(item: tuple[str, int, int]) -> ManifestEntry:
        split, index, seed = item
        record = _generate_record(split, index, seed, cfg)
        image_rel = f"{split}/img_{index:05d}.pgm"
        write_pgm(root / image_rel, record.image)
        mask_rel = None
        if record.is_abnormal:
            mask_rel = f"{split}/mask_{index:05d}.pgm"
            write_pgm(root / mask_rel, record.mask.astype(np.float64))
        return ManifestEntry(
            record.record_id, image_rel, mask_rel, record.label, seed, list(record.factors)
        )

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        entries = list(pool.map(_materialise, plan))

    splits: dict[str, list[ManifestEntry]] = {name: [] for name in SPLITS}
    for (split, _, _), entry in zip(plan, entries):
        splits[split].append(entry)
    if any(e.label is not Label.NORMAL for e in splits["train"]):
        raise ContaminationError("generated train split contains abnormal records")

    manifest = DatasetManifest(cfg.to_dict(), splits, root / MANIFEST_NAME)
    text = json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n"
    try:
        (root / MANIFEST_NAME).write_text(text, encoding="utf-8")
    except OSError as e:
        raise DatasetIOError(f"cannot write {root / MANIFEST_NAME}: {e}") from e
    logger.info("Wrote %d records to %s", len(manifest), root)
    return manifest


def resolve_manifest_path(path: PathLike) -> Path:
    candidate = Path(path)
    if candidate.is_dir():
        candidate = candidate / MANIFEST_NAME
    return candidate


def read_manifest(manifest_path: PathLike) -> DatasetManifest:
    """Parse and schema-validate a manifest without touching the images."""
    path = resolve_manifest_path(manifest_path)
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError as e:
        raise DatasetLoadError(f"manifest not found: {path}") from e
    except (OSError, json.JSONDecodeError) as e:
        raise DatasetLoadError(f"cannot read manifest {path}: {e}") from e
    is_valid, errors = validate_manifest_dict(data)
    if not is_valid:
        raise DatasetLoadError(f"invalid manifest {path}", errors)
    splits = {
        name: [
            ManifestEntry.from_dict(item, f"{name}-{i:05d}")
            for i, item in enumerate(data["splits"][name])
        ]
        for name in SPLITS
    }
    return DatasetManifest(data["generator_config"], splits, path)


def _load_entry(root: Path, split: str, entry: ManifestEntry, image_size: int) -> SampleRecord:
    if split == "train" and entry.label is not Label.NORMAL:
        raise ContaminationError(f"train split record {entry.record_id} is labelled abnormal")
    expected = Label.ABNORMAL if split == "test_abnormal" else Label.NORMAL
    if entry.label is not expected:
        raise DatasetLoadError(
            f"record {entry.record_id} in split {split} is labelled {entry.label.value}"
        )
    image_path = root / entry.image_path
    if not image_path.is_file():
        raise DatasetLoadError(f"record {entry.record_id}: missing image file {image_path}")
    image = read_pgm(image_path, image_size)
    if entry.mask_path is None:
        mask = np.zeros_like(image, dtype=np.uint8)
    else:
        mask_path = root / entry.mask_path
        if not mask_path.is_file():
            raise DatasetLoadError(f"record {entry.record_id}: missing mask file {mask_path}")
        mask = (read_pgm_raw(mask_path, image_size) > 0).astype(np.uint8)
    record = SampleRecord(
        image=image,
        label=entry.label,
        mask=mask,
        factors=np.asarray(entry.factors, dtype=np.float64),
        seed=entry.seed,
        record_id=entry.record_id,
    )
    errors = record.check()
    if errors:
        raise DatasetLoadError(f"record {entry.record_id}: " + "; ".join(errors))
    return record


def load_dataset(manifest_path: PathLike) -> Dataset:
    """Load every record of a manifest with its invariants checked."""
    manifest = read_manifest(manifest_path)
    assert manifest.path is not None
    root = manifest.path.parent
    image_size = int(manifest.generator_config.get("image_size", 64))
    loaded = {
        split: [_load_entry(root, split, entry, image_size) for entry in manifest.splits[split]]
        for split in SPLITS
    }
    logger.info(
        "Loaded dataset %s: %d train, %d test normal, %d test abnormal",
        root,
        len(loaded["train"]),
        len(loaded["test_normal"]),
        len(loaded["test_abnormal"]),
    )
    return Dataset(
        train=loaded["train"],
        test_normal=loaded["test_normal"],
        test_abnormal=loaded["test_abnormal"],
        generator_config=manifest.generator_config,
        root=root,
    )
