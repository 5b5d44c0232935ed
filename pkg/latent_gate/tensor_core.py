"""
Dense Float64 Tensors with Reverse-Mode Differentiation.

Provides the Tensor type, the Tape that records differentiable operations,
the layers the autoencoder family needs (affine maps, strided convolutions
and their transposes, batch normalisation, activations), the reconstruction
loss, a central finite-difference oracle, and the Adam update.

Operations are recorded only while a Tape is active in the current context
(``with Tape() as tape:``) and at least one operand requires gradients.
Outside a tape every operation is a pure function of its inputs.
"""

import contextvars
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Optional, Sequence, Union

import numpy as np
from scipy.special import expit

from .exceptions import ContractError, DegenerateBatchError, DimensionError

logger = logging.getLogger(__name__)

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
Operand = Union["Tensor", float, int, np.ndarray]

_ACTIVE_TAPE: "contextvars.ContextVar[Optional[Tape]]" = contextvars.ContextVar(
    "latent_gate_active_tape", default=None
)


class Tensor:
    """Dense float64 array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "node_id", "name")
    __array_priority__ = 1000

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        name: Optional[str] = None,
    ) -> None:
        self.data: np.ndarray = np.array(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.node_id: Optional[int] = None
        self.name = name

    @classmethod
    def _wrap(cls, data: np.ndarray) -> "Tensor":
        """Wrap a freshly computed array without copying it."""
        out = cls.__new__(cls)
        out.data = np.asarray(data, dtype=np.float64)
        out.grad = None
        out.requires_grad = False
        out.node_id = None
        out.name = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    def __add__(self, other: Operand) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: Operand) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: Operand) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: Operand) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: Operand) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: Operand) -> "Tensor":
        return mul(other, self)

    def __truediv__(self, other: Operand) -> "Tensor":
        return div(self, other)

    def __rtruediv__(self, other: Operand) -> "Tensor":
        return div(other, self)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __pow__(self, exponent: float) -> "Tensor":
        return power(self, exponent)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def sum(self, axis: Optional[Any] = None, keepdims: bool = False) -> "Tensor":
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Optional[Any] = None, keepdims: bool = False) -> "Tensor":
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: int) -> "Tensor":
        return reshape(self, shape)

    def transpose(self) -> "Tensor":
        return transpose(self)

    def exp(self) -> "Tensor":
        return exp(self)

    def log(self) -> "Tensor":
        return log(self)

    def sqrt(self) -> "Tensor":
        return sqrt(self)

    def abs(self) -> "Tensor":
        return absolute(self)

    def relu(self) -> "Tensor":
        return relu(self)

    def sigmoid(self) -> "Tensor":
        return sigmoid(self)


@dataclass
class TapeEntry:
    """One recorded operation."""

    input_ids: tuple[int, ...]
    output_id: int
    backward: BackwardFn
    op: str = ""


class Tape:
    """Ordered record of differentiable operations for one training run.

    A tape is owned by a single run; it is activated for the current
    context with ``with Tape() as tape:``.
    """

    def __init__(self) -> None:
        self.entries: list[TapeEntry] = []
        self._tensors: dict[int, Tensor] = {}
        self._token: Optional[contextvars.Token[Optional["Tape"]]] = None

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc: object) -> None:
        if self._token is not None:
            _ACTIVE_TAPE.reset(self._token)
            self._token = None

    def __len__(self) -> int:
        return len(self.entries)

    def owns(self, tensor: Tensor) -> bool:
        return tensor.node_id is not None and self._tensors.get(tensor.node_id) is tensor

    def register(self, tensor: Tensor) -> int:
        if not self.owns(tensor):
            tensor.node_id = len(self._tensors)
            self._tensors[tensor.node_id] = tensor
        assert tensor.node_id is not None
        return tensor.node_id

    def record(
        self,
        inputs: Sequence[Tensor],
        output: Tensor,
        backward_fn: BackwardFn,
        op: str = "",
    ) -> None:
        input_ids = tuple(self.register(t) for t in inputs)
        output_id = self.register(output)
        self.entries.append(TapeEntry(input_ids, output_id, backward_fn, op))

    def tensor(self, node_id: int) -> Tensor:
        return self._tensors[node_id]

    def clear(self) -> None:
        self.entries.clear()
        self._tensors.clear()


def active_tape() -> Optional[Tape]:
    return _ACTIVE_TAPE.get()


def _as_tensor(value: Operand) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor._wrap(np.asarray(value, dtype=np.float64))


def _result(
    data: np.ndarray, inputs: Sequence[Tensor], backward_fn: BackwardFn, op: str
) -> Tensor:
    out = Tensor._wrap(data)
    tape = _ACTIVE_TAPE.get()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(inputs, out, backward_fn, op)
    return out


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise arithmetic --------------------------------------------------


def add(a: Operand, b: Operand) -> Tensor:
    ta, tb = _as_tensor(a), _as_tensor(b)
    sa, sb = ta.shape, tb.shape

    def _backward(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        return unbroadcast(g, sa), unbroadcast(g, sb)

    return _result(ta.data + tb.data, (ta, tb), _backward, "add")


def sub(a: Operand, b: Operand) -> Tensor:
    ta, tb = _as_tensor(a), _as_tensor(b)
    sa, sb = ta.shape, tb.shape

    def _backward(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        return unbroadcast(g, sa), unbroadcast(-g, sb)

    return _result(ta.data - tb.data, (ta, tb), _backward, "sub")


def mul(a: Operand, b: Operand) -> Tensor:
    ta, tb = _as_tensor(a), _as_tensor(b)

    def _backward(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        return unbroadcast(g * tb.data, ta.shape), unbroadcast(g * ta.data, tb.shape)

    return _result(ta.data * tb.data, (ta, tb), _backward, "mul")


def div(a: Operand, b: Operand) -> Tensor:
    ta, tb = _as_tensor(a), _as_tensor(b)
    out = ta.data / tb.data

    def _backward(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        ga = unbroadcast(g / tb.data, ta.shape)
        gb = unbroadcast(-g * out / tb.data, tb.shape)
        return ga, gb

    return _result(out, (ta, tb), _backward, "div")


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def power(a: Tensor, exponent: float) -> Tensor:
    def _backward(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        return (g * exponent * a.data ** (exponent - 1),)

    return _result(a.data**exponent, (a,), _backward, "pow")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _result(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def absolute(a: Tensor) -> Tensor:
    return _result(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def relu(a: Tensor) -> Tensor:
    """Rectifier; the subgradient at exactly 0 is 0."""
    active = a.data > 0
    return _result(np.where(active, a.data, 0.0), (a,), lambda g: (g * active,), "relu")


def sigmoid(a: Tensor) -> Tensor:
    out = expit(a.data)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def clamp(a: Tensor, low: float, high: float) -> Tensor:
    inside = (a.data >= low) & (a.data <= high)
    return _result(np.clip(a.data, low, high), (a,), lambda g: (g * inside,), "clamp")


def where(condition: np.ndarray, a: Operand, b: Operand) -> Tensor:
    """Select from ``a`` where ``condition`` holds, else from ``b``."""
    ta, tb = _as_tensor(a), _as_tensor(b)
    cond = np.asarray(condition, dtype=bool)

    def _backward(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        return (
            unbroadcast(np.where(cond, g, 0.0), ta.shape),
            unbroadcast(np.where(cond, 0.0, g), tb.shape),
        )

    return _result(np.where(cond, ta.data, tb.data), (ta, tb), _backward, "where")


# -- reductions and reshaping -------------------------------------------------


def tensor_sum(a: Tensor, axis: Optional[Any] = None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)
    shape = a.shape

    def _backward(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(np.asarray(out), (a,), _backward, "sum")


def tensor_mean(a: Tensor, axis: Optional[Any] = None, keepdims: bool = False) -> Tensor:
    total = tensor_sum(a, axis=axis, keepdims=keepdims)
    count = a.data.size // max(total.data.size, 1)
    return total * (1.0 / count)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    original = a.shape
    out = a.data.reshape(tuple(shape))
    return _result(out, (a,), lambda g: (g.reshape(original),), "reshape")


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError("transpose expects a matrix", a.shape)
    return _result(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def _backward(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _result(out, (a,), _backward, "softmax")


# -- affine maps ----------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of an [m×k] and a [k×n] tensor."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError("matmul inner dimensions disagree", a.shape, b.shape)

    def _backward(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        return g @ b.data.T, a.data.T @ g

    return _result(a.data @ b.data, (a, b), _backward, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Row-wise affine map ``x @ weight + bias`` with weight laid out [in×out]."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise DimensionError("linear input width does not match weight", x.shape, weight.shape)
    out = matmul(x, weight)
    if bias is None:
        return out
    if bias.shape != (weight.shape[1],):
        raise DimensionError("linear bias does not match weight", bias.shape, weight.shape)
    return add(out, bias)


# -- convolutions ---------------------------------------------------------------


def _output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    span = size + 2 * padding - kernel
    if span < 0 or span % stride:
        raise DimensionError(
            f"spatial size {size} is incompatible with kernel {kernel}, "
            f"stride {stride}, padding {padding}"
        )
    return span // stride + 1


def _im2col(
    padded: np.ndarray, kernel: int, stride: int, out_h: int, out_w: int
) -> np.ndarray:
    """Unfold a padded [N×C×H×W] array into [N × C·k·k × out_h·out_w] columns."""
    padded = np.ascontiguousarray(padded)
    n, c = padded.shape[:2]
    s0, s1, s2, s3 = padded.strides
    windows = np.lib.stride_tricks.as_strided(
        padded,
        shape=(n, c, kernel, kernel, out_h, out_w),
        strides=(s0, s1, s2, s3, stride * s2, stride * s3),
        writeable=False,
    )
    return windows.reshape(n, c * kernel * kernel, out_h * out_w)


def _col2im(
    cols: np.ndarray,
    channels: int,
    padded_h: int,
    padded_w: int,
    kernel: int,
    stride: int,
    out_h: int,
    out_w: int,
) -> np.ndarray:
    """Scatter-add columns back into a padded [N×C×H×W] array."""
    n = cols.shape[0]
    cols = cols.reshape(n, channels, kernel, kernel, out_h, out_w)
    padded = np.zeros((n, channels, padded_h, padded_w))
    for kh in range(kernel):
        for kw in range(kernel):
            padded[
                :, :, kh : kh + stride * out_h : stride, kw : kw + stride * out_w : stride
            ] += cols[:, :, kh, kw]
    return padded


def _crop(padded: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return padded
    return padded[:, :, padding:-padding, padding:-padding]


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 2,
    padding: int = 1,
) -> Tensor:
    """Strided cross-correlation; weight laid out [F×C×k×k]."""
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise DimensionError("conv2d expects 4-D input and weight", x.shape, weight.shape)
    n, c, h, w = x.shape
    f, wc, kernel, kernel_w = weight.shape
    if wc != c or kernel != kernel_w:
        raise DimensionError("conv2d channel mismatch", x.shape, weight.shape)
    out_h = _output_size(h, kernel, stride, padding)
    out_w = _output_size(w, kernel, stride, padding)
    pad = ((0, 0), (0, 0), (padding, padding), (padding, padding))
    cols = _im2col(np.pad(x.data, pad), kernel, stride, out_h, out_w)
    w2 = weight.data.reshape(f, c * kernel * kernel)
    out = np.matmul(w2, cols).reshape(n, f, out_h, out_w)
    if bias is not None:
        out = out + bias.data.reshape(1, f, 1, 1)

    def _backward(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        g2 = g.reshape(n, f, out_h * out_w)
        dw = np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(weight.shape)
        dx: Optional[np.ndarray] = None
        if x.requires_grad:
            dcols = np.matmul(w2.T, g2)
            padded_dx = _col2im(
                dcols, c, h + 2 * padding, w + 2 * padding, kernel, stride, out_h, out_w
            )
            dx = _crop(padded_dx, padding)
        grads: list[Optional[np.ndarray]] = [dx, dw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, inputs, _backward, "conv2d")


def conv_transpose2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 2,
    padding: int = 1,
) -> Tensor:
    """Adjoint of conv2d plus bias; weight laid out [C_in×C_out×k×k]."""
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise DimensionError(
            "conv_transpose2d expects 4-D input and weight", x.shape, weight.shape
        )
    n, c_in, h, w = x.shape
    wc, c_out, kernel, kernel_w = weight.shape
    if wc != c_in or kernel != kernel_w:
        raise DimensionError("conv_transpose2d channel mismatch", x.shape, weight.shape)
    out_h = (h - 1) * stride - 2 * padding + kernel
    out_w = (w - 1) * stride - 2 * padding + kernel
    if out_h <= 0 or out_w <= 0:
        raise DimensionError("conv_transpose2d output would be empty", x.shape, weight.shape)
    w2 = weight.data.reshape(c_in, c_out * kernel * kernel)
    x2 = x.data.reshape(n, c_in, h * w)
    cols = np.matmul(w2.T, x2)
    padded = _col2im(
        cols, c_out, out_h + 2 * padding, out_w + 2 * padding, kernel, stride, h, w
    )
    out = _crop(padded, padding)
    if bias is not None:
        out = out + bias.data.reshape(1, c_out, 1, 1)

    def _backward(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        pad = ((0, 0), (0, 0), (padding, padding), (padding, padding))
        gcols = _im2col(np.pad(g, pad), kernel, stride, h, w)
        dx = np.matmul(w2, gcols).reshape(x.shape) if x.requires_grad else None
        dw = np.tensordot(x2, gcols, axes=([0, 2], [0, 2])).reshape(weight.shape)
        grads: list[Optional[np.ndarray]] = [dx, dw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _result(np.ascontiguousarray(out), inputs, _backward, "conv_transpose2d")


# -- batch normalisation ---------------------------------------------------------


@dataclass
class BatchNormStats:
    """Running statistics of one batch-normalisation layer."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def create(cls, channels: int) -> "BatchNormStats":
        return cls(np.zeros(channels), np.ones(channels))


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    stats: BatchNormStats,
    training: bool,
) -> Tensor:
    """Normalise per channel (axis 1) over every other axis."""
    if x.data.ndim not in (2, 4):
        raise DimensionError("batch_norm expects [N×F] or [N×C×H×W] input", x.shape)
    channels = x.shape[1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise DimensionError("batch_norm affine parameters mismatch", x.shape, gamma.shape)
    axes = (0,) if x.data.ndim == 2 else (0, 2, 3)
    bshape = (1, channels) if x.data.ndim == 2 else (1, channels, 1, 1)
    count = x.data.size // channels

    if training:
        if x.shape[0] < 2:
            raise DegenerateBatchError(
                f"batch statistics need at least 2 samples, got batch of {x.shape[0]}"
            )
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        stats.running_mean = (
            1.0 - stats.momentum
        ) * stats.running_mean + stats.momentum * mean
        stats.running_var = (1.0 - stats.momentum) * stats.running_var + (
            stats.momentum * var * count / (count - 1)
        )
    else:
        mean, var = stats.running_mean, stats.running_var

    inv_std = 1.0 / np.sqrt(var + stats.eps)
    x_hat = (x.data - mean.reshape(bshape)) * inv_std.reshape(bshape)
    out = gamma.data.reshape(bshape) * x_hat + beta.data.reshape(bshape)

    def _backward(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        dgamma = (g * x_hat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dx_hat = g * gamma.data.reshape(bshape)
        if training:
            dx = (inv_std.reshape(bshape) / count) * (
                count * dx_hat
                - dx_hat.sum(axis=axes, keepdims=True)
                - x_hat * (dx_hat * x_hat).sum(axis=axes, keepdims=True)
            )
        else:
            dx = dx_hat * inv_std.reshape(bshape)
        return dx, dgamma, dbeta

    return _result(out, (x, gamma, beta), _backward, "batch_norm")


def batchnorm1d(
    x: Tensor, gamma: Tensor, beta: Tensor, stats: BatchNormStats, training: bool
) -> Tensor:
    if x.data.ndim != 2:
        raise DimensionError("batchnorm1d expects [N×F] input", x.shape)
    return batch_norm(x, gamma, beta, stats, training)


def batchnorm2d(
    x: Tensor, gamma: Tensor, beta: Tensor, stats: BatchNormStats, training: bool
) -> Tensor:
    if x.data.ndim != 4:
        raise DimensionError("batchnorm2d expects [N×C×H×W] input", x.shape)
    return batch_norm(x, gamma, beta, stats, training)


# -- loss and differentiation -------------------------------------------------------


def mse_loss(pred: Tensor, target: Operand) -> Tensor:
    """Mean over every element of the squared difference."""
    t = _as_tensor(target)
    if pred.shape != t.shape:
        raise DimensionError("mse_loss shapes differ", pred.shape, t.shape)
    diff = pred.data - t.data
    numel = diff.size

    def _backward(g: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        grad = g * 2.0 * diff / numel
        return grad, -grad

    return _result(np.asarray((diff * diff).mean()), (pred, t), _backward, "mse_loss")


def backward(loss: Tensor, tape: Tape) -> None:
    """Replay ``tape`` in reverse, accumulating gradients into leaf tensors."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not tape.owns(loss):
        raise ContractError("loss was not recorded on this tape")
    assert loss.node_id is not None
    grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    for entry in reversed(tape.entries):
        g = grads.pop(entry.output_id, None)
        if g is None:
            continue
        input_grads = entry.backward(g)
        for node_id, grad in zip(entry.input_ids, input_grads):
            if grad is None or not tape.tensor(node_id).requires_grad:
                continue
            if node_id in grads:
                grads[node_id] = grads[node_id] + grad
            else:
                grads[node_id] = grad
    for node_id, grad in grads.items():
        leaf = tape.tensor(node_id)
        leaf.grad = grad.copy() if leaf.grad is None else leaf.grad + grad


def central_difference(f: Callable[[], float], tensor: Tensor, index: int, h: float) -> float:
    """Central difference of ``f`` along one element of ``tensor``, in place."""
    flat = tensor.data.reshape(-1)
    original = flat[index]
    flat[index] = original + h
    upper = f()
    flat[index] = original - h
    lower = f()
    flat[index] = original
    return (upper - lower) / (2.0 * h)


def finite_difference_grad(
    f: Callable[[Tensor], Operand], x: Tensor, h: float = 1e-6
) -> Tensor:
    """Central-difference gradient of a scalar function at ``x``."""
    probe = Tensor(x.data)

    def _evaluate() -> float:
        value = f(probe)
        if isinstance(value, Tensor):
            return value.item()
        return float(np.asarray(value))

    grad = np.array(
        [central_difference(_evaluate, probe, i, h) for i in range(probe.size)]
    )
    return Tensor(grad.reshape(x.shape))


# -- optimisation ---------------------------------------------------------------------


@dataclass
class AdamState:
    """Moment buffers and step counter of the Adam optimiser."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, Optional[np.ndarray]],
    state: AdamState,
) -> None:
    """Apply one bias-corrected Adam update to ``params`` in place."""
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for name, param in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != param.shape:
            raise DimensionError(f"gradient for {name} has the wrong shape", g.shape, param.shape)
        if name not in state.m:
            state.m[name] = np.zeros_like(param)
            state.v[name] = np.zeros_like(param)
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        param -= state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
