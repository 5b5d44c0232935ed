"""
Autoencoder Family.

The convolutional autoencoder whose latent width ``d`` gates how much
information reaches the decoder, and three latent-restriction baselines
built on the same backbone:

* ``AE``: plain reconstruction autoencoder.
* ``VAE``: the ``D -> d`` map is split into mean and log-variance heads.
* ``MemAE``: the latent is replaced by a sparse convex combination of
  learned memory prototypes.
* ``CeAE``: random square regions are blanked during training and the
  model learns to in-paint them.

Backbone: four stride-2 convolutions (16-32-64-64 channels), four fully
connected layers ``1024-D-d-D-1024`` and four stride-2 transposed
convolutions (64-32-16-1 channels). Every layer except the output is
followed by batch normalisation and ReLU; the output is a sigmoid.
"""

import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, NamedTuple, Optional, Sequence, Union

import numpy as np

from . import tensor_core as tc
from .exceptions import (
    ConfigError,
    ContaminationError,
    ContractError,
    DimensionError,
    InvalidSpecError,
)
from .synth_data import Label, SampleRecord, stack_images
from .tensor_core import AdamState, BatchNormStats, Tape, Tensor

logger = logging.getLogger(__name__)

LOGVAR_LIMIT = 10.0
ADDRESS_EPS = 1e-12


class ModelKind(str, Enum):
    AE = "ae"
    VAE = "vae"
    MEMAE = "memae"
    CEAE = "ceae"

    @property
    def display_name(self) -> str:
        return {"ae": "AE", "vae": "VAE", "memae": "MemAE", "ceae": "CeAE"}[self.value]


@dataclass(frozen=True)
class ArchSpec:
    """Shape of the backbone; every parameter shape derives from it."""

    latent_dim: int = 16
    bottleneck_width: int = 1024
    input_size: int = 64
    encoder_channels: tuple[int, ...] = (16, 32, 64, 64)
    decoder_channels: tuple[int, ...] = (64, 32, 16, 1)
    kernel: int = 4
    stride: int = 2
    padding: int = 1

    def __post_init__(self) -> None:
        errors = self.validate()
        if errors:
            raise InvalidSpecError("invalid architecture: " + "; ".join(errors))

    def validate(self) -> list[str]:
        errors: list[str] = []
        if self.latent_dim < 1:
            errors.append(f"latent_dim must be >= 1, got {self.latent_dim}")
        if self.bottleneck_width < self.latent_dim:
            errors.append(
                f"latent_dim {self.latent_dim} exceeds bottleneck_width {self.bottleneck_width}"
            )
        if len(self.encoder_channels) != len(self.decoder_channels):
            errors.append("encoder and decoder need the same number of layers")
        elif self.decoder_channels[-1] != 1:
            errors.append("decoder must end with a single output channel")
        if self.input_size % (self.stride ** len(self.encoder_channels)):
            errors.append(
                f"input_size {self.input_size} is not divisible by "
                f"{self.stride ** len(self.encoder_channels)}"
            )
        return errors

    @property
    def feature_size(self) -> int:
        return self.input_size // self.stride ** len(self.encoder_channels)

    @property
    def flat_width(self) -> int:
        """Width of the flattened encoder output (1024 for 64×64 inputs)."""
        return self.encoder_channels[-1] * self.feature_size**2

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["encoder_channels"] = list(self.encoder_channels)
        data["decoder_channels"] = list(self.decoder_channels)
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ArchSpec":
        values = dict(data)
        for key in ("encoder_channels", "decoder_channels"):
            if key in values:
                values[key] = tuple(values[key])
        return cls(**values)


@dataclass(frozen=True)
class MaskConfig:
    """Square in-painting masks drawn per image during CeAE training."""

    min_masks: int = 1
    max_masks: int = 3
    min_side: int = 8
    max_side: int = 16

    def __post_init__(self) -> None:
        if not 0 <= self.min_masks <= self.max_masks:
            raise ConfigError(
                f"mask count range must satisfy 0 <= min <= max, "
                f"got ({self.min_masks}, {self.max_masks})"
            )
        if not 1 <= self.min_side <= self.max_side:
            raise ConfigError(
                f"mask side range must satisfy 1 <= min <= max, "
                f"got ({self.min_side}, {self.max_side})"
            )


@dataclass(frozen=True)
class ModelOptions:
    """Hyperparameters of the baseline variants."""

    memory_size: int = 100
    shrink_threshold: float = 0.0025
    entropy_weight: float = 0.0002
    vae_beta: float = 1.0
    mask: MaskConfig = field(default_factory=MaskConfig)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ModelOptions":
        values = dict(data)
        if isinstance(values.get("mask"), dict):
            values["mask"] = MaskConfig(**values["mask"])
        return cls(**values)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 250
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0
    epoch_override: Optional[int] = None

    def __post_init__(self) -> None:
        if self.effective_epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.effective_epochs}")
        if self.batch_size < 8:
            raise ConfigError(f"batch_size must be >= 8, got {self.batch_size}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")

    @property
    def effective_epochs(self) -> int:
        return self.epoch_override if self.epoch_override is not None else self.epochs


class ForwardOutput(NamedTuple):
    reconstruction: Tensor
    latent: Tensor
    aux: dict[str, Any]


class Addressing(NamedTuple):
    z_hat: Tensor
    weights: Tensor
    fallback_rows: np.ndarray


class AEModel:
    """Plain autoencoder; base class of the variants."""

    kind = ModelKind.AE

    def __init__(
        self, spec: ArchSpec, seed: int = 0, options: Optional[ModelOptions] = None
    ) -> None:
        self.spec = spec
        self.seed = seed
        self.options = options or ModelOptions()
        self.training = False
        self.params: dict[str, Tensor] = {}
        self.bn_stats: dict[str, BatchNormStats] = {}
        self._rng = np.random.default_rng(seed)
        self._build()

    # -- parameter construction --------------------------------------------------------

    def _kaiming(self, name: str, shape: tuple[int, ...], fan_in: int) -> None:
        bound = np.sqrt(6.0 / fan_in)
        self.params[name] = Tensor(
            self._rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name
        )

    def _bias(self, name: str, size: int, fan_in: int) -> None:
        bound = 1.0 / np.sqrt(fan_in)
        self.params[name] = Tensor(
            self._rng.uniform(-bound, bound, size=size), requires_grad=True, name=name
        )

    def _norm(self, name: str, channels: int) -> None:
        self.params[f"{name}.gamma"] = Tensor(np.ones(channels), requires_grad=True)
        self.params[f"{name}.beta"] = Tensor(np.zeros(channels), requires_grad=True)
        self.bn_stats[name] = BatchNormStats.create(channels)

    def _fc(self, name: str, fan_in: int, fan_out: int, norm: bool = True) -> None:
        self._kaiming(f"{name}.weight", (fan_in, fan_out), fan_in)
        self._bias(f"{name}.bias", fan_out, fan_in)
        if norm:
            self._norm(f"{name}.bn", fan_out)

    def _build(self) -> None:
        spec = self.spec
        k = spec.kernel
        in_channels = 1
        for i, out_channels in enumerate(spec.encoder_channels):
            fan_in = in_channels * k * k
            self._kaiming(f"enc{i}.weight", (out_channels, in_channels, k, k), fan_in)
            self._bias(f"enc{i}.bias", out_channels, fan_in)
            self._norm(f"enc{i}.bn", out_channels)
            in_channels = out_channels

        self._fc("fc_in", spec.flat_width, spec.bottleneck_width)
        self._build_latent()
        self._fc("fc_up", spec.latent_dim, spec.bottleneck_width)
        self._fc("fc_out", spec.bottleneck_width, spec.flat_width)

        last = len(spec.decoder_channels) - 1
        for i, out_channels in enumerate(spec.decoder_channels):
            fan_in = out_channels * k * k
            self._kaiming(f"dec{i}.weight", (in_channels, out_channels, k, k), fan_in)
            self._bias(f"dec{i}.bias", out_channels, fan_in)
            if i != last:
                self._norm(f"dec{i}.bn", out_channels)
            in_channels = out_channels

    def _build_latent(self) -> None:
        self._fc("fc_latent", self.spec.bottleneck_width, self.spec.latent_dim)

    # -- state ---------------------------------------------------------------------

    def train_mode(self) -> None:
        self.training = True

    def eval_mode(self) -> None:
        self.training = False

    def zero_grad(self) -> None:
        for param in self.params.values():
            param.zero_grad()

    def parameter_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.params.items()}

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Every tensor that defines the model: parameters and running statistics."""
        arrays = dict(self.parameter_arrays())
        for name, stats in self.bn_stats.items():
            arrays[f"{name}.running_mean"] = stats.running_mean
            arrays[f"{name}.running_var"] = stats.running_var
        return arrays

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        expected = self.state_arrays()
        missing = sorted(set(expected) - set(arrays))
        unexpected = sorted(set(arrays) - set(expected))
        if missing or unexpected:
            raise ContractError(
                f"state tensors disagree: missing {missing}, unexpected {unexpected}"
            )
        for name, current in expected.items():
            if arrays[name].shape != current.shape:
                raise DimensionError(f"state tensor {name} has the wrong shape",
                                     arrays[name].shape, current.shape)
        for name, param in self.params.items():
            param.data = np.array(arrays[name], dtype=np.float64)
        for name, stats in self.bn_stats.items():
            stats.running_mean = np.array(arrays[f"{name}.running_mean"], dtype=np.float64)
            stats.running_var = np.array(arrays[f"{name}.running_var"], dtype=np.float64)

    # -- layers --------------------------------------------------------------------

    def _bn_relu(self, x: Tensor, name: str) -> Tensor:
        gamma, beta = self.params[f"{name}.gamma"], self.params[f"{name}.beta"]
        return tc.relu(tc.batch_norm(x, gamma, beta, self.bn_stats[name], self.training))

    def _dense(self, x: Tensor, name: str, norm: bool = True) -> Tensor:
        out = tc.linear(x, self.params[f"{name}.weight"], self.params[f"{name}.bias"])
        return self._bn_relu(out, f"{name}.bn") if norm else out

    def features(self, x: Tensor) -> Tensor:
        """Convolutional encoder and first FC layer: [N×1×H×W] -> [N×D]."""
        spec = self.spec
        expected = (1, spec.input_size, spec.input_size)
        if x.data.ndim != 4 or x.shape[1:] != expected:
            raise DimensionError(
                f"expected input of shape [N×{expected[0]}×{expected[1]}×{expected[2]}]",
                x.shape,
            )
        h = x
        for i in range(len(spec.encoder_channels)):
            h = tc.conv2d(
                h,
                self.params[f"enc{i}.weight"],
                self.params[f"enc{i}.bias"],
                spec.stride,
                spec.padding,
            )
            h = self._bn_relu(h, f"enc{i}.bn")
        h = tc.reshape(h, (x.shape[0], spec.flat_width))
        return self._dense(h, "fc_in")

    def latent(self, h: Tensor, rng: np.random.Generator) -> tuple[Tensor, dict[str, Any]]:
        return self._dense(h, "fc_latent"), {}

    def decode(self, z: Tensor) -> Tensor:
        spec = self.spec
        h = self._dense(z, "fc_up")
        h = self._dense(h, "fc_out")
        channels = spec.encoder_channels[-1]
        h = tc.reshape(h, (z.shape[0], channels, spec.feature_size, spec.feature_size))
        last = len(spec.decoder_channels) - 1
        for i in range(len(spec.decoder_channels)):
            h = tc.conv_transpose2d(
                h,
                self.params[f"dec{i}.weight"],
                self.params[f"dec{i}.bias"],
                spec.stride,
                spec.padding,
            )
            h = tc.sigmoid(h) if i == last else self._bn_relu(h, f"dec{i}.bn")
        return h

    def prepare_input(
        self, x: Tensor, rng: np.random.Generator
    ) -> tuple[Tensor, dict[str, Any]]:
        return x, {}

    def forward(self, x: Tensor, rng: np.random.Generator) -> ForwardOutput:
        inp, aux = self.prepare_input(x, rng)
        z, latent_aux = self.latent(self.features(inp), rng)
        aux.update(latent_aux)
        decoder_input = aux.get("z_hat", z)
        return ForwardOutput(self.decode(decoder_input), z, aux)

    def loss(self, output: ForwardOutput, target: Tensor) -> tuple[Tensor, Tensor]:
        """Training objective and its reconstruction-MSE component."""
        mse = tc.mse_loss(output.reconstruction, target)
        return mse, mse


class VAEModel(AEModel):
    kind = ModelKind.VAE

    def _build_latent(self) -> None:
        self._fc("fc_mu", self.spec.bottleneck_width, self.spec.latent_dim, norm=False)
        self._fc("fc_logvar", self.spec.bottleneck_width, self.spec.latent_dim, norm=False)

    def latent(self, h: Tensor, rng: np.random.Generator) -> tuple[Tensor, dict[str, Any]]:
        mu = self._dense(h, "fc_mu", norm=False)
        logvar = tc.clamp(self._dense(h, "fc_logvar", norm=False), -LOGVAR_LIMIT, LOGVAR_LIMIT)
        aux: dict[str, Any] = {"mu": mu, "logvar": logvar}
        if self.training:
            eps = rng.standard_normal(mu.shape)
            aux["z_hat"] = mu + tc.exp(logvar * 0.5) * eps
        return mu, aux

    def loss(self, output: ForwardOutput, target: Tensor) -> tuple[Tensor, Tensor]:
        mse = tc.mse_loss(output.reconstruction, target)
        mu, logvar = output.aux["mu"], output.aux["logvar"]
        total = vae_loss(output.reconstruction, target, mu, logvar, self.options.vae_beta)
        return total, mse


class MemAEModel(AEModel):
    kind = ModelKind.MEMAE

    def _build(self) -> None:
        super()._build()
        size, d = self.options.memory_size, self.spec.latent_dim
        rows = self._rng.standard_normal((size, d))
        rows /= np.linalg.norm(rows, axis=1, keepdims=True)
        self.params["mem.memory"] = Tensor(rows, requires_grad=True, name="mem.memory")

    def latent(self, h: Tensor, rng: np.random.Generator) -> tuple[Tensor, dict[str, Any]]:
        z = self._dense(h, "fc_latent")
        addressed = memae_address(z, self.params["mem.memory"], self.options.shrink_threshold)
        return z, {
            "z_hat": addressed.z_hat,
            "attention": addressed.weights,
            "fallback_rows": addressed.fallback_rows,
        }

    def loss(self, output: ForwardOutput, target: Tensor) -> tuple[Tensor, Tensor]:
        mse = tc.mse_loss(output.reconstruction, target)
        weights: Tensor = output.aux["attention"]
        entropy = tc.tensor_sum(-(weights * tc.log(weights + ADDRESS_EPS)), axis=1)
        return mse + tc.tensor_mean(entropy) * self.options.entropy_weight, mse


class CeAEModel(AEModel):
    kind = ModelKind.CEAE

    def prepare_input(
        self, x: Tensor, rng: np.random.Generator
    ) -> tuple[Tensor, dict[str, Any]]:
        if not self.training:
            return x, {}
        masked, mask = ceae_mask(x, rng, self.options.mask)
        return masked, {"mask": mask}


Model = AEModel

_MODEL_CLASSES: dict[ModelKind, type[AEModel]] = {
    ModelKind.AE: AEModel,
    ModelKind.VAE: VAEModel,
    ModelKind.MEMAE: MemAEModel,
    ModelKind.CEAE: CeAEModel,
}


def build_model(
    kind: Union[ModelKind, str],
    spec: ArchSpec,
    seed: int = 0,
    options: Optional[ModelOptions] = None,
) -> AEModel:
    """Instantiate a freshly initialised model in eval mode."""
    errors = spec.validate()
    if errors:
        raise InvalidSpecError("invalid architecture: " + "; ".join(errors))
    model_kind = ModelKind(kind)
    opts = options or ModelOptions()
    if model_kind is ModelKind.MEMAE:
        if opts.memory_size < 1:
            raise InvalidSpecError(f"memory_size must be >= 1, got {opts.memory_size}")
        if not 0.0 <= opts.shrink_threshold <= 1.0 / opts.memory_size:
            raise InvalidSpecError(
                f"shrink_threshold must lie in [0, 1/{opts.memory_size}], "
                f"got {opts.shrink_threshold}"
            )
    return _MODEL_CLASSES[model_kind](spec, seed, opts)


def _input_tensor(batch: Union[Tensor, np.ndarray]) -> Tensor:
    return batch if isinstance(batch, Tensor) else Tensor(batch)


def encode(model: AEModel, batch: Union[Tensor, np.ndarray]) -> Tensor:
    """Latent codes [N×d]; the VAE returns its posterior mean."""
    x = _input_tensor(batch)
    z, _ = model.latent(model.features(x), np.random.default_rng(model.seed))
    return z


def forward(
    model: AEModel,
    batch: Union[Tensor, np.ndarray],
    rng: Optional[np.random.Generator] = None,
) -> ForwardOutput:
    """Reconstruction, latent and model-specific extras for one batch."""
    return model.forward(_input_tensor(batch), rng or np.random.default_rng(0))


def reconstruct(model: AEModel, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Eval-mode reconstructions of an [N×1×H×W] array, computed in chunks."""
    was_training = model.training
    model.eval_mode()
    try:
        chunks = [
            forward(model, images[start : start + batch_size]).reconstruction.data
            for start in range(0, len(images), batch_size)
        ]
    finally:
        model.training = was_training
    return np.concatenate(chunks) if chunks else np.empty_like(images)


def encode_array(model: AEModel, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Eval-mode latent codes of an [N×1×H×W] array as [N×d]."""
    was_training = model.training
    model.eval_mode()
    try:
        chunks = [
            encode(model, images[start : start + batch_size]).data
            for start in range(0, len(images), batch_size)
        ]
    finally:
        model.training = was_training
    return np.concatenate(chunks)


def reconstruction_mse(model: AEModel, images: np.ndarray) -> float:
    """Mean squared reconstruction error over every pixel of ``images``."""
    return float(np.mean((reconstruct(model, images) - images) ** 2))


def kl_divergence(
    mu: Union[Tensor, np.ndarray], logvar: Union[Tensor, np.ndarray]
) -> Tensor:
    """Batch mean of KL(N(mu, exp(logvar)) || N(0, I))."""
    m, lv = _input_tensor(mu), _input_tensor(logvar)
    if m.shape != lv.shape:
        raise DimensionError("mu and logvar shapes differ", m.shape, lv.shape)
    per_dim = m * m + tc.exp(lv) - lv - 1.0
    per_sample = tc.tensor_sum(per_dim, axis=-1) * 0.5
    return tc.tensor_mean(per_sample)


def vae_loss(
    recon: Tensor,
    target: Union[Tensor, np.ndarray],
    mu: Union[Tensor, np.ndarray],
    logvar: Union[Tensor, np.ndarray],
    beta: float = 1.0,
) -> Tensor:
    return tc.mse_loss(recon, target) + kl_divergence(mu, logvar) * beta


def _row_normalise(x: Tensor) -> Tensor:
    return x / tc.sqrt(tc.tensor_sum(x * x, axis=1, keepdims=True) + ADDRESS_EPS)


def memae_address(
    z: Union[Tensor, np.ndarray], memory: Union[Tensor, np.ndarray], shrink: float
) -> Addressing:
    """Sparse convex re-expression of ``z`` through the memory rows.

    Rows whose hard-shrunk weights vanish entirely keep their plain softmax
    weights; those rows are flagged in ``fallback_rows``.
    """
    zt, mt = _input_tensor(z), _input_tensor(memory)
    if zt.data.ndim != 2 or mt.data.ndim != 2 or zt.shape[1] != mt.shape[1]:
        raise DimensionError("latent and memory widths differ", zt.shape, mt.shape)
    n_mem = mt.shape[0]
    if not 0.0 <= shrink <= 1.0 / n_mem:
        raise ContractError(f"shrink threshold {shrink} outside [0, 1/{n_mem}]")

    similarity = tc.matmul(_row_normalise(zt), tc.transpose(_row_normalise(mt)))
    weights = tc.softmax(similarity, axis=1)
    fallback = np.zeros(zt.shape[0], dtype=bool)
    if shrink > 0.0:
        shifted = weights - shrink
        shrunk = tc.relu(shifted) * weights / (tc.absolute(shifted) + ADDRESS_EPS)
        fallback = shrunk.data.sum(axis=1) <= 0.0
        total = tc.tensor_sum(shrunk, axis=1, keepdims=True) + fallback[:, None].astype(float)
        weights = tc.where(fallback[:, None], weights, shrunk / total)
        if fallback.any():
            logger.debug("Memory addressing fell back to softmax for %d rows", fallback.sum())
    return Addressing(tc.matmul(weights, mt), weights, fallback)


def ceae_mask(
    batch: Union[Tensor, np.ndarray], rng: np.random.Generator, cfg: MaskConfig
) -> tuple[Tensor, Tensor]:
    """Blank random squares of each image; returns the masked batch and the mask."""
    x = _input_tensor(batch)
    if x.data.ndim != 4:
        raise DimensionError("ceae_mask expects [N×C×H×W] input", x.shape)
    n, _, height, width = x.shape
    if cfg.max_side > min(height, width):
        raise ContractError(f"mask side {cfg.max_side} exceeds image size {height}x{width}")
    mask = np.zeros((n, 1, height, width))
    for i in range(n):
        count = int(rng.integers(cfg.min_masks, cfg.max_masks + 1))
        for _ in range(count):
            side = int(rng.integers(cfg.min_side, cfg.max_side + 1))
            top = int(rng.integers(0, height - side + 1))
            left = int(rng.integers(0, width - side + 1))
            mask[i, 0, top : top + side, left : left + side] = 1.0
    return x * (1.0 - mask), Tensor(mask)


@dataclass
class TrainResult:
    model: AEModel
    loss_trace: list[float]
    initial_mse: float
    final_mse: float
    adam: AdamState


def train(
    model: AEModel,
    records: Sequence[SampleRecord],
    cfg: TrainConfig,
    adam: Optional[AdamState] = None,
) -> TrainResult:
    """Fit ``model`` to normal records with Adam over shuffled mini-batches."""
    abnormal = [r.record_id or str(i) for i, r in enumerate(records) if r.label is not Label.NORMAL]
    if abnormal:
        raise ContaminationError(
            f"training data contains {len(abnormal)} abnormal record(s), first: {abnormal[0]}"
        )
    if len(records) < 2:
        raise ContractError(f"training needs at least 2 records, got {len(records)}")

    images = stack_images(list(records))
    rng = np.random.default_rng(cfg.seed)
    state = adam or AdamState(lr=cfg.lr)
    initial_mse = reconstruction_mse(model, images)
    trace: list[float] = []

    model.train_mode()
    try:
        for epoch in range(cfg.effective_epochs):
            order = rng.permutation(len(images))
            batch_losses = []
            for start in range(0, len(order), cfg.batch_size):
                index = order[start : start + cfg.batch_size]
                if len(index) < 2:
                    continue
                target = Tensor(images[index])
                with Tape() as tape:
                    output = model.forward(target, rng)
                    objective, mse = model.loss(output, target)
                    tc.backward(objective, tape)
                grads = {name: p.grad for name, p in model.params.items()}
                tc.adam_step(model.parameter_arrays(), grads, state)
                model.zero_grad()
                batch_losses.append(mse.item())
            trace.append(float(np.mean(batch_losses)))
            logger.info(
                "%s d=%d epoch %d/%d: mse %.6f",
                model.kind.display_name,
                model.spec.latent_dim,
                epoch + 1,
                cfg.effective_epochs,
                trace[-1],
            )
    finally:
        model.eval_mode()

    final_mse = reconstruction_mse(model, images)
    return TrainResult(model, trace, initial_mse, final_mse, state)
