"""
Identity-Mapping Checks for Linear Bottlenecks.

A linear bottleneck ``x -> (x W1 + b1) W2 + b2`` with ``W1: D×d`` and
``W2: d×D`` can only reproduce every input when ``W1 W2 = I_D``, which needs
``d >= D``. This module reports the equation-counting bound (``d < D/2``)
next to the rank bound (``d < D``), measures the smallest reachable
``||W1 W2 - I||_F^2`` by gradient descent against its closed form ``D - d``,
checks the bias part of the identity equations, and probes trained
autoencoders with off-manifold inputs.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import tensor_core as tc
from .exceptions import ContractError, DimensionError, OptimizationDivergedError
from .models import AEModel, reconstruction_mse
from .synth_data import SampleRecord, stack_images
from .tensor_core import Tape, Tensor

logger = logging.getLogger(__name__)

DIVERGENCE_PATIENCE = 100


@dataclass
class BottleneckInstance:
    """Affine encoder/decoder pair around a d-wide bottleneck."""

    w1: np.ndarray
    w2: np.ndarray
    b1: np.ndarray
    b2: np.ndarray

    def __post_init__(self) -> None:
        big_d, d = self.w1.shape
        if self.w2.shape != (d, big_d) or self.b1.shape != (d,) or self.b2.shape != (big_d,):
            raise DimensionError(
                "bottleneck shapes disagree", self.w1.shape, self.w2.shape,
                self.b1.shape, self.b2.shape,
            )

    @property
    def input_dim(self) -> int:
        return int(self.w1.shape[0])

    @property
    def latent_dim(self) -> int:
        return int(self.w1.shape[1])

    def apply(self, x: np.ndarray) -> np.ndarray:
        result: np.ndarray = (x @ self.w1 + self.b1) @ self.w2 + self.b2
        return result


@dataclass
class SolvabilityReport:
    input_dim: int
    latent_dim: int
    paper_bound_blocks: bool
    rank_bound_blocks: bool
    exactly_solvable: bool


@dataclass
class ResidualResult:
    input_dim: int
    latent_dim: int
    residual: float
    closed_form: float
    iterations: int


def _check_dims(big_d: int, d: int) -> None:
    if big_d < 1 or d < 1:
        raise ContractError(f"dimensions must be >= 1, got D={big_d}, d={d}")


def solvability_check(big_d: int, d: int) -> SolvabilityReport:
    _check_dims(big_d, d)
    return SolvabilityReport(
        input_dim=big_d,
        latent_dim=d,
        paper_bound_blocks=d < big_d / 2,
        rank_bound_blocks=d < big_d,
        exactly_solvable=d >= big_d,
    )


def identity_witness(big_d: int, d: int) -> BottleneckInstance:
    """W1 = [I | 0], W2 = [I ; 0] with zero biases, for d >= D."""
    _check_dims(big_d, d)
    if d < big_d:
        raise ContractError(f"no exact identity factorisation through d={d} < D={big_d}")
    w1 = np.eye(big_d, d)
    return BottleneckInstance(w1, w1.T.copy(), np.zeros(d), np.zeros(big_d))


def closed_form_residual(big_d: int, d: int) -> float:
    """Smallest ||W1 W2 - I_D||_F^2 over rank-d products: D - d, floored at 0."""
    return float(max(big_d - d, 0))


def truncation_residual(matrix: np.ndarray, rank: int) -> float:
    """Squared Frobenius error of the best rank-``rank`` approximation via SVD."""
    singular = np.linalg.svd(np.asarray(matrix, dtype=np.float64), compute_uv=False)
    return float(np.sum(singular[rank:] ** 2))


def identity_residual_optimize(
    big_d: int,
    d: int,
    seed: int = 0,
    iters: int = 5000,
    lr: float = 0.01,
) -> ResidualResult:
    """Minimise ||W1 W2 - I||_F^2 by gradient descent from W2 = W1^T, W1 ~ N(0, 1/D)."""
    _check_dims(big_d, d)
    rng = np.random.default_rng(seed)
    a = rng.normal(0.0, 1.0 / np.sqrt(big_d), size=(big_d, d))
    w1 = Tensor(a, requires_grad=True, name="w1")
    w2 = Tensor(a.T, requires_grad=True, name="w2")
    identity = np.eye(big_d)

    def objective() -> Tensor:
        diff = tc.matmul(w1, w2) - identity
        return tc.tensor_sum(diff * diff)

    previous = np.inf
    rising = 0
    for step in range(iters):
        with Tape() as tape:
            loss = objective()
            tc.backward(loss, tape)
        loss_value = loss.item()
        if not np.isfinite(loss_value):
            raise OptimizationDivergedError(
                f"residual became non-finite at iteration {step} (D={big_d}, d={d})"
            )
        rising = rising + 1 if loss_value > previous else 0
        if rising >= DIVERGENCE_PATIENCE:
            raise OptimizationDivergedError(
                f"residual increased for {DIVERGENCE_PATIENCE} consecutive iterations "
                f"(D={big_d}, d={d}, lr={lr})"
            )
        previous = loss_value
        for param in (w1, w2):
            assert param.grad is not None
            param.data -= lr * param.grad
            param.zero_grad()
    residual = float(objective().item())
    logger.debug("Identity residual D=%d d=%d: %.6g", big_d, d, residual)
    return ResidualResult(big_d, d, residual, closed_form_residual(big_d, d), iters)


def affine_composition(instance: BottleneckInstance) -> tuple[np.ndarray, np.ndarray]:
    """Linear part and offset of the composed map: (W1 W2, b1 W2 + b2)."""
    return instance.w1 @ instance.w2, bias_offset(instance.b1, instance.w2, instance.b2)


def bias_offset(b1: np.ndarray, w2: np.ndarray, b2: np.ndarray) -> np.ndarray:
    """Offset of the composed map; zero exactly when the biases cancel."""
    result: np.ndarray = np.asarray(b1) @ np.asarray(w2) + np.asarray(b2)
    return result


def bias_solution_check(big_d: int, d: int, seed: int = 0) -> bool:
    """Zero biases leave no offset for arbitrary weights."""
    _check_dims(big_d, d)
    rng = np.random.default_rng(seed)
    instance = BottleneckInstance(
        rng.standard_normal((big_d, d)),
        rng.standard_normal((d, big_d)),
        np.zeros(d),
        np.zeros(big_d),
    )
    _, offset = affine_composition(instance)
    return bool(np.all(offset == 0.0))


def verification_grid(
    dims: Sequence[int],
    extra: int = 2,
    iters: int = 5000,
    lr: float = 0.01,
    seed: int = 0,
) -> list[dict[str, object]]:
    """One row per (D, d) with 1 <= d <= D + extra."""
    rows: list[dict[str, object]] = []
    for big_d in dims:
        for d in range(1, big_d + extra + 1):
            check = solvability_check(big_d, d)
            result = identity_residual_optimize(big_d, d, seed + 1000 * big_d + d, iters, lr)
            rows.append(
                {
                    "D": big_d,
                    "d": d,
                    "paper_bound_blocks": check.paper_bound_blocks,
                    "rank_bound_blocks": check.rank_bound_blocks,
                    "exactly_solvable": check.exactly_solvable,
                    "residual": result.residual,
                    "closed_form": result.closed_form,
                }
            )
        logger.info("Identity residual grid done for D=%d", big_d)
    return rows


@dataclass
class IdentityProbe:
    mse_train_normal: float
    mse_test_normal: float
    mse_abnormal: float
    mse_noise: float

    @property
    def ordering_holds(self) -> bool:
        """Noise > abnormal > test normal > train normal."""
        return (
            self.mse_noise > self.mse_abnormal > self.mse_test_normal > self.mse_train_normal
        )


def uniform_noise_images(count: int, image_size: int = 64, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.uniform(0.0, 1.0, size=(count, 1, image_size, image_size))


def empirical_identity_probe(
    model: AEModel,
    train_normal: Sequence[SampleRecord],
    test_normal: Sequence[SampleRecord],
    test_abnormal: Sequence[SampleRecord],
    noise: Optional[np.ndarray] = None,
    seed: int = 0,
) -> IdentityProbe:
    """Mean reconstruction MSE on four input groups, from on- to off-manifold."""
    if noise is None:
        noise = uniform_noise_images(
            max(len(test_abnormal), 1), model.spec.input_size, seed
        )
    return IdentityProbe(
        mse_train_normal=reconstruction_mse(model, stack_images(list(train_normal))),
        mse_test_normal=reconstruction_mse(model, stack_images(list(test_normal))),
        mse_abnormal=reconstruction_mse(model, stack_images(list(test_abnormal))),
        mse_noise=reconstruction_mse(model, noise),
    )
