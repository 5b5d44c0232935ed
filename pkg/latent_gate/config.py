"""
Run Configuration.

Loads run settings from JSON or TOML files, validates them against the
bundled JSON schema, and merges them with command-line flags. Precedence,
lowest first: built-in defaults, config file, full-length schedule
(``paper_scale``), explicit command-line flags.
"""

import json
import logging
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping, Optional, Union

import jsonschema
import tomlkit
from tomlkit.exceptions import TOMLKitError

from .exceptions import ConfigError
from .models import ArchSpec, MaskConfig, ModelKind, ModelOptions, TrainConfig
from .synth_data import GeneratorConfig

logger = logging.getLogger(__name__)

DEFAULT_SWEEP = (1, 2, 4, 8, 16, 32, 64, 128)

PAPER_SCALE = {
    "epochs": 250,
    "n_train": 4000,
    "n_test_normal": 1000,
    "n_test_abnormal": 1000,
}

CELL_SETTING_KEYS = (
    "dataset",
    "bottleneck_width",
    "epochs",
    "batch_size",
    "lr",
    "seed",
    "memory_size",
    "shrink_threshold",
    "entropy_weight",
    "vae_beta",
    "entropy_k",
    "probe_noise",
)


@dataclass
class RunConfig:
    """Flat settings shared by every command."""

    dataset: str = "data"
    out: str = "runs"
    model_kind: str = "ae"
    latent_dim: int = 16
    bottleneck_width: int = 1024
    epochs: int = 50
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 17
    workers: int = 1
    sweep: list[int] = field(default_factory=lambda: list(DEFAULT_SWEEP))
    repeats: int = 3
    k_factors: int = 4
    noise_sigma: float = 0.01
    n_train: int = 2000
    n_test_normal: int = 500
    n_test_abnormal: int = 500
    paper_scale: bool = False
    checkpoint: Optional[str] = None
    sweep_dir: Optional[str] = None
    prop1_dims: list[int] = field(default_factory=lambda: [4, 8, 16])
    prop1_extra: int = 2
    prop1_iters: int = 5000
    prop1_lr: float = 0.01
    n_chains: int = 100
    max_alphabet: int = 8
    memory_size: int = 100
    shrink_threshold: float = 0.0025
    entropy_weight: float = 0.0002
    vae_beta: float = 1.0
    entropy_k: int = 3
    probe_noise: int = 100
    explicit: frozenset[str] = field(default_factory=frozenset, compare=False, repr=False)

    def validate(self) -> list[str]:
        """Cross-field checks the schema cannot express."""
        errors: list[str] = []
        if any(b <= a for a, b in zip(self.sweep, self.sweep[1:])):
            errors.append(f"sweep must be strictly increasing, got {self.sweep}")
        if self.latent_dim > self.bottleneck_width:
            errors.append(
                f"latent_dim {self.latent_dim} exceeds bottleneck_width {self.bottleneck_width}"
            )
        if self.sweep and self.sweep[-1] > self.bottleneck_width:
            errors.append(
                f"sweep value {self.sweep[-1]} exceeds bottleneck_width {self.bottleneck_width}"
            )
        if self.shrink_threshold > 1.0 / self.memory_size:
            errors.append(
                f"shrink_threshold {self.shrink_threshold} exceeds 1/memory_size"
            )
        return errors

    def to_dict(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "explicit"}

    def cell_settings(self) -> dict[str, Any]:
        """Settings a sweep cell's result depends on, besides its kind, width and repeat."""
        return {key: getattr(self, key) for key in CELL_SETTING_KEYS}

    @property
    def kind(self) -> ModelKind:
        return ModelKind(self.model_kind)

    def arch_spec(self, latent_dim: Optional[int] = None) -> ArchSpec:
        return ArchSpec(
            latent_dim=latent_dim if latent_dim is not None else self.latent_dim,
            bottleneck_width=self.bottleneck_width,
        )

    def train_config(self, seed: Optional[int] = None) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            seed=self.seed if seed is None else seed,
        )

    def model_options(self) -> ModelOptions:
        return ModelOptions(
            memory_size=self.memory_size,
            shrink_threshold=self.shrink_threshold,
            entropy_weight=self.entropy_weight,
            vae_beta=self.vae_beta,
            mask=MaskConfig(),
        )

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(
            k_factors=self.k_factors, noise_sigma=self.noise_sigma, seed=self.seed
        )


def load_config_file(path: Union[str, Path]) -> dict[str, Any]:
    """Read a ``.json`` or ``.toml`` config file into a plain dict."""
    config_path = Path(path)
    try:
        text = config_path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config file {config_path}: {e}") from e
    try:
        if config_path.suffix == ".toml":
            data = tomlkit.loads(text).unwrap()
        elif config_path.suffix == ".json":
            data = json.loads(text)
        else:
            raise ConfigError(
                f"unsupported config format {config_path.suffix!r}, use .json or .toml"
            )
    except (json.JSONDecodeError, TOMLKitError) as e:
        raise ConfigError(f"cannot parse config file {config_path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"config file {config_path} must hold a mapping at top level")
    return data


def _load_schema() -> dict[str, Any]:
    schema_path = Path(__file__).parent / "schema.json"
    with open(schema_path, encoding="utf-8") as f:
        schema: dict[str, Any] = json.load(f)
    return schema


def validate_config_dict(data: Mapping[str, Any]) -> tuple[bool, list[str]]:
    """Validate settings against the schema; returns every error found."""
    validator = jsonschema.Draft201909Validator(_load_schema())
    errors = []
    for error in sorted(validator.iter_errors(dict(data)), key=lambda e: list(e.absolute_path)):
        where = "/".join(str(p) for p in error.absolute_path)
        errors.append(f"{where}: {error.message}" if where else error.message)
    return len(errors) == 0, errors


def resolve_config(
    config_path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> RunConfig:
    """Merge defaults, config file, full-length schedule and flags into a RunConfig."""
    file_values: dict[str, Any] = {}
    if config_path is not None:
        file_values = load_config_file(config_path)
        is_valid, errors = validate_config_dict(file_values)
        if not is_valid:
            raise ConfigError(f"invalid configuration in {config_path}", errors)

    flags = {key: value for key, value in (overrides or {}).items() if value is not None}
    is_valid, errors = validate_config_dict(flags)
    if not is_valid:
        raise ConfigError("invalid command-line options", errors)

    merged = dict(file_values)
    if flags.get("paper_scale", merged.get("paper_scale", False)):
        merged.update(PAPER_SCALE)
        merged["paper_scale"] = True
    merged.update(flags)

    config = RunConfig(**merged, explicit=frozenset(file_values) | frozenset(flags))
    errors = config.validate()
    if errors:
        raise ConfigError("invalid configuration", errors)
    logger.debug("Resolved configuration: %s", config.to_dict())
    return config
