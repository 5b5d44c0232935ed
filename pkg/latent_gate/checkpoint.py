"""
Model Checkpoints.

Binary layout, all integers unsigned 64-bit little-endian:

    magic   b"LGCKPT1\\0"
    u64     header length, then the header as sorted-key JSON
            (format version, model kind, architecture, model options,
            training metadata, Adam hyperparameters)
    u64     tensor count, then per tensor:
            u64 name length, UTF-8 name, u64 rank, rank × u64 dims,
            float64 little-endian payload

Tensors are written in name order, so saving a loaded checkpoint again
reproduces the file byte for byte.
"""

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from .exceptions import CheckpointError, CheckpointMismatchError, ContractError
from .models import AEModel, ArchSpec, ModelKind, ModelOptions, build_model
from .tensor_core import AdamState

logger = logging.getLogger(__name__)

MAGIC = b"LGCKPT1\0"
FORMAT_VERSION = 1
_U64 = struct.Struct("<Q")

MODEL_PREFIX = "model/"
ADAM_M_PREFIX = "adam.m/"
ADAM_V_PREFIX = "adam.v/"


@dataclass
class Checkpoint:
    model: AEModel
    kind: ModelKind
    metadata: dict[str, Any] = field(default_factory=dict)
    adam: Optional[AdamState] = None


def _header(model: AEModel, metadata: dict[str, Any], adam: Optional[AdamState]) -> bytes:
    header = {
        "format_version": FORMAT_VERSION,
        "kind": model.kind.value,
        "arch": model.spec.to_dict(),
        "model_config": model.options.to_dict(),
        "metadata": metadata,
        "adam": None
        if adam is None
        else {
            "lr": adam.lr,
            "beta1": adam.beta1,
            "beta2": adam.beta2,
            "epsilon": adam.epsilon,
            "t": adam.t,
        },
    }
    return json.dumps(header, sort_keys=True).encode("utf-8")


def _encode_tensor(name: str, array: np.ndarray) -> bytes:
    encoded = name.encode("utf-8")
    parts = [_U64.pack(len(encoded)), encoded, _U64.pack(array.ndim)]
    parts.extend(_U64.pack(dim) for dim in array.shape)
    parts.append(np.ascontiguousarray(array, dtype="<f8").tobytes())
    return b"".join(parts)


def encode_checkpoint(
    model: AEModel,
    metadata: Optional[dict[str, Any]] = None,
    adam: Optional[AdamState] = None,
) -> bytes:
    tensors = {MODEL_PREFIX + name: arr for name, arr in model.state_arrays().items()}
    if adam is not None:
        tensors.update({ADAM_M_PREFIX + name: arr for name, arr in adam.m.items()})
        tensors.update({ADAM_V_PREFIX + name: arr for name, arr in adam.v.items()})
    header = _header(model, metadata or {}, adam)
    parts = [MAGIC, _U64.pack(len(header)), header, _U64.pack(len(tensors))]
    parts.extend(_encode_tensor(name, tensors[name]) for name in sorted(tensors))
    return b"".join(parts)


def save_checkpoint(
    model: AEModel,
    path: Union[str, Path],
    metadata: Optional[dict[str, Any]] = None,
    adam: Optional[AdamState] = None,
) -> None:
    target = Path(path)
    try:
        target.write_bytes(encode_checkpoint(model, metadata, adam))
    except OSError as e:
        raise CheckpointError(f"cannot write checkpoint {target}: {e}") from e
    logger.info("Saved %s checkpoint to %s", model.kind.display_name, target)


class _Reader:
    """Sequential reader that names the field it was reading on truncation."""

    def __init__(self, data: bytes, source: str) -> None:
        self.data = data
        self.source = source
        self.offset = 0

    def take(self, size: int, field_name: str) -> bytes:
        available = len(self.data) - self.offset
        if size > available:
            raise CheckpointError(
                f"{self.source}: truncated {field_name}: expected {size} bytes, got {available}"
            )
        chunk = self.data[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def u64(self, field_name: str) -> int:
        value: int = _U64.unpack(self.take(_U64.size, field_name))[0]
        return value


def decode_checkpoint(data: bytes, source: str = "<bytes>") -> Checkpoint:
    reader = _Reader(data, source)
    magic = reader.take(len(MAGIC), "magic")
    if magic != MAGIC:
        raise CheckpointError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
    raw_header = reader.take(reader.u64("header length"), "header")
    try:
        header = json.loads(raw_header.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{source}: header is not valid JSON: {e}") from e
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{source}: unsupported format_version {version}, expected {FORMAT_VERSION}"
        )

    tensors: dict[str, np.ndarray] = {}
    for index in range(reader.u64("tensor count")):
        name = reader.take(reader.u64(f"tensor {index} name length"), f"tensor {index} name")
        label = name.decode("utf-8", errors="replace")
        rank = reader.u64(f"tensor {label} rank")
        shape = tuple(reader.u64(f"tensor {label} dims") for _ in range(rank))
        count = int(np.prod(shape, dtype=np.int64))
        payload = reader.take(8 * count, f"tensor {label} payload")
        tensors[label] = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)
    if reader.offset != len(data):
        raise CheckpointError(
            f"{source}: {len(data) - reader.offset} unexpected trailing bytes"
        )

    try:
        kind = ModelKind(header["kind"])
        spec = ArchSpec.from_dict(header["arch"])
        options = ModelOptions.from_dict(header["model_config"])
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"{source}: malformed header field: {e}") from e
    metadata = header.get("metadata") or {}
    model = build_model(kind, spec, int(metadata.get("seed", 0)), options)
    state = {
        name[len(MODEL_PREFIX) :]: arr
        for name, arr in tensors.items()
        if name.startswith(MODEL_PREFIX)
    }
    try:
        model.load_state_arrays(state)
    except ContractError as e:
        raise CheckpointMismatchError(
            f"{source}: tensors do not match the embedded architecture: {e}"
        ) from e

    adam = None
    if header.get("adam") is not None:
        adam = AdamState(**header["adam"])
        for name, arr in tensors.items():
            if name.startswith(ADAM_M_PREFIX):
                adam.m[name[len(ADAM_M_PREFIX) :]] = arr
            elif name.startswith(ADAM_V_PREFIX):
                adam.v[name[len(ADAM_V_PREFIX) :]] = arr
    return Checkpoint(model, kind, metadata, adam)


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    source = Path(path)
    try:
        data = source.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {source}: {e}") from e
    checkpoint = decode_checkpoint(data, str(source))
    logger.info("Loaded %s checkpoint from %s", checkpoint.kind.display_name, source)
    return checkpoint


def check_compatible(
    checkpoint: Checkpoint,
    kind: Optional[ModelKind] = None,
    latent_dim: Optional[int] = None,
    bottleneck_width: Optional[int] = None,
) -> None:
    """Raise when the checkpoint differs from an explicitly requested architecture."""
    spec = checkpoint.model.spec
    problems = []
    if kind is not None and kind is not checkpoint.kind:
        problems.append(f"model kind {checkpoint.kind.value} != requested {kind.value}")
    if latent_dim is not None and latent_dim != spec.latent_dim:
        problems.append(f"latent_dim {spec.latent_dim} != requested {latent_dim}")
    if bottleneck_width is not None and bottleneck_width != spec.bottleneck_width:
        problems.append(
            f"bottleneck_width {spec.bottleneck_width} != requested {bottleneck_width}"
        )
    if problems:
        raise CheckpointMismatchError("checkpoint architecture mismatch: " + "; ".join(problems))
