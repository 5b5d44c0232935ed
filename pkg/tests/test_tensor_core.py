"""Tests for the float64 tensor engine and its gradients."""

from typing import Callable

import numpy as np
import pytest

from latent_gate import tensor_core as tc
from latent_gate.exceptions import ContractError, DegenerateBatchError, DimensionError
from latent_gate.tensor_core import AdamState, BatchNormStats, Tape, Tensor


GRADIENT_TRIALS = range(100)


def _relative_error(actual: np.ndarray, expected: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(expected))), 1e-8)
    return float(np.max(np.abs(actual - expected))) / scale


def _tape_grad(f: Callable[[Tensor], Tensor], x: np.ndarray) -> np.ndarray:
    leaf = Tensor(x, requires_grad=True)
    with Tape() as tape:
        loss = f(leaf)
        tc.backward(loss, tape)
    assert leaf.grad is not None
    return leaf.grad


def _check_gradient(f: Callable[[Tensor], Tensor], x: np.ndarray, tol: float = 1e-4) -> None:
    analytic = _tape_grad(f, x)
    numeric = tc.finite_difference_grad(f, Tensor(x)).data
    assert _relative_error(analytic, numeric) < tol


class TestArithmetic:
    """Matrix products and elementwise ops."""

    def test_matmul_identity(self) -> None:
        """Identity times a matrix leaves it unchanged."""
        a = Tensor(np.eye(2))
        b = Tensor([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(tc.matmul(a, b).data, b.data)

    def test_matmul_hand_product(self) -> None:
        """[[1,2]]·[[3],[4]] = [[11]]."""
        out = tc.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        np.testing.assert_array_equal(out.data, [[11.0]])

    def test_matmul_shape_mismatch_reports_shapes(self) -> None:
        """Inner dimension mismatch names both shapes."""
        with pytest.raises(DimensionError) as info:
            tc.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
        assert info.value.shapes == ((2, 3), (2, 3))

    def test_matmul_gradient_of_sum(self) -> None:
        """d sum(A·I) / dA is all ones."""
        b = Tensor(np.eye(2))
        grad = _tape_grad(lambda a: tc.tensor_sum(tc.matmul(a, b)), np.ones((2, 2)))
        np.testing.assert_array_equal(grad, np.ones((2, 2)))

    def test_activations(self) -> None:
        """ReLU and sigmoid at reference points."""
        np.testing.assert_array_equal(tc.relu(Tensor([-1.0, 2.0])).data, [0.0, 2.0])
        assert tc.sigmoid(Tensor(0.0)).item() == 0.5

    @pytest.mark.parametrize("x0", [-0.7, 0.7])
    def test_activation_gradients(self, x0: float) -> None:
        """ReLU and sigmoid derivatives agree with finite differences."""
        x = np.array([x0])
        _check_gradient(lambda t: tc.tensor_sum(tc.sigmoid(t)), x, tol=1e-6)
        _check_gradient(lambda t: tc.tensor_sum(tc.relu(t)), x, tol=1e-6)

    def test_relu_subgradient_at_zero(self) -> None:
        """The derivative at exactly zero is zero."""
        grad = _tape_grad(lambda t: tc.tensor_sum(tc.relu(t)), np.zeros(3))
        np.testing.assert_array_equal(grad, np.zeros(3))

    def test_softmax_rows_sum_to_one(self, rng: np.random.Generator) -> None:
        """Softmax output is a distribution along the chosen axis."""
        out = tc.softmax(Tensor(rng.normal(size=(4, 5))), axis=1)
        np.testing.assert_allclose(out.data.sum(axis=1), np.ones(4), atol=1e-12)


class TestConvolutions:
    """Strided convolution and its transpose."""

    def test_conv_output_spatial_size(self, rng: np.random.Generator) -> None:
        """A 64×64 input halves to 32×32."""
        x = Tensor(rng.normal(size=(1, 1, 64, 64)))
        w = Tensor(rng.normal(size=(16, 1, 4, 4)))
        assert tc.conv2d(x, w).shape == (1, 16, 32, 32)

    def test_conv_zero_input(self, rng: np.random.Generator) -> None:
        """Zero input with zero bias gives zero output."""
        w = Tensor(rng.normal(size=(2, 1, 4, 4)))
        out = tc.conv2d(Tensor(np.zeros((1, 1, 8, 8))), w, Tensor(np.zeros(2)))
        assert not out.data.any()

    def test_conv_ones_hand_count(self) -> None:
        """Each 4×4 window over a padded 4×4 block of ones covers 9 ones."""
        out = tc.conv2d(Tensor(np.ones((1, 1, 4, 4))), Tensor(np.ones((1, 1, 4, 4))))
        np.testing.assert_array_equal(out.data[0, 0], [[9.0, 9.0], [9.0, 9.0]])

    def test_conv_channel_mismatch(self) -> None:
        """Weight input channels must match the input."""
        with pytest.raises(DimensionError):
            tc.conv2d(Tensor(np.ones((1, 2, 8, 8))), Tensor(np.ones((3, 1, 4, 4))))

    def test_conv_transpose_doubles_size(self, rng: np.random.Generator) -> None:
        """The first decoder layer maps 64×4×4 to 32×8×8."""
        x = Tensor(rng.normal(size=(1, 64, 4, 4)))
        w = Tensor(rng.normal(size=(64, 32, 4, 4)))
        assert tc.conv_transpose2d(x, w).shape == (1, 32, 8, 8)

    def test_conv_transpose_zero_input(self, rng: np.random.Generator) -> None:
        w = Tensor(rng.normal(size=(2, 3, 4, 4)))
        out = tc.conv_transpose2d(Tensor(np.zeros((1, 2, 4, 4))), w, Tensor(np.zeros(3)))
        assert not out.data.any()

    @pytest.mark.parametrize("trial", range(5))
    def test_adjoint_identity(self, trial: int) -> None:
        """<conv(x), y> equals <x, conv_transpose(y)> for the same weights."""
        rng = np.random.default_rng(trial)
        x = Tensor(rng.normal(size=(2, 3, 8, 8)))
        w = Tensor(rng.normal(size=(5, 3, 4, 4)))
        y = Tensor(rng.normal(size=(2, 5, 4, 4)))
        lhs = float(np.sum(tc.conv2d(x, w).data * y.data))
        rhs = float(np.sum(x.data * tc.conv_transpose2d(y, w).data))
        assert abs(lhs - rhs) < 1e-10 * max(1.0, abs(lhs))

    @pytest.mark.parametrize("seed", GRADIENT_TRIALS)
    def test_conv_gradients(self, seed: int) -> None:
        """Input, weight and bias gradients agree with finite differences."""
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(2, 2, 4, 4))
        w = rng.normal(size=(3, 2, 4, 4))
        b = rng.normal(size=3)
        r = rng.normal(size=(2, 3, 2, 2))
        _check_gradient(lambda t: tc.tensor_sum(tc.conv2d(t, Tensor(w), Tensor(b)) * r), x)
        _check_gradient(lambda t: tc.tensor_sum(tc.conv2d(Tensor(x), t, Tensor(b)) * r), w)
        _check_gradient(lambda t: tc.tensor_sum(tc.conv2d(Tensor(x), Tensor(w), t) * r), b)

    @pytest.mark.parametrize("seed", GRADIENT_TRIALS)
    def test_conv_transpose_gradients(self, seed: int) -> None:
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(2, 3, 2, 2))
        w = rng.normal(size=(3, 2, 4, 4))
        r = rng.normal(size=(2, 2, 4, 4))
        _check_gradient(lambda t: tc.tensor_sum(tc.conv_transpose2d(t, Tensor(w)) * r), x)
        _check_gradient(lambda t: tc.tensor_sum(tc.conv_transpose2d(Tensor(x), t) * r), w)


class TestLinearAndBatchNorm:
    """Affine layers and batch normalisation."""

    def test_linear_zero_weight_gives_bias(self) -> None:
        out = tc.linear(Tensor(np.ones((3, 4))), Tensor(np.zeros((4, 2))), Tensor([1.0, -2.0]))
        np.testing.assert_array_equal(out.data, np.tile([1.0, -2.0], (3, 1)))

    @pytest.mark.parametrize("seed", GRADIENT_TRIALS)
    def test_linear_gradient(self, seed: int) -> None:
        rng = np.random.default_rng(seed)
        w = rng.normal(size=(5, 3))
        b = rng.normal(size=3)
        r = rng.normal(size=(4, 3))
        _check_gradient(
            lambda t: tc.tensor_sum(tc.linear(t, Tensor(w), Tensor(b)) * r),
            rng.normal(size=(4, 5)),
            tol=1e-5,
        )

    def test_train_mode_normalises(self, rng: np.random.Generator) -> None:
        """Per-channel mean 0 and variance 1 in train mode."""
        x = Tensor(rng.normal(3.0, 10.0, size=(16, 4, 3, 3)))
        out = tc.batchnorm2d(
            x, Tensor(np.ones(4)), Tensor(np.zeros(4)), BatchNormStats.create(4), True
        )
        np.testing.assert_allclose(out.data.mean(axis=(0, 2, 3)), np.zeros(4), atol=1e-6)
        np.testing.assert_allclose(out.data.var(axis=(0, 2, 3)), np.ones(4), atol=1e-6)

    def test_running_statistics_update(self) -> None:
        """Momentum 0.1 with the unbiased batch variance."""
        x = Tensor([[0.0], [2.0]])
        stats = BatchNormStats.create(1)
        tc.batchnorm1d(x, Tensor([1.0]), Tensor([0.0]), stats, True)
        np.testing.assert_allclose(stats.running_mean, [0.1])
        np.testing.assert_allclose(stats.running_var, [0.9 + 0.1 * 2.0])

    def test_batch_of_one_is_degenerate(self) -> None:
        with pytest.raises(DegenerateBatchError):
            tc.batchnorm1d(
                Tensor(np.ones((1, 3))),
                Tensor(np.ones(3)),
                Tensor(np.zeros(3)),
                BatchNormStats.create(3),
                True,
            )

    @pytest.mark.parametrize("seed", GRADIENT_TRIALS)
    @pytest.mark.parametrize("training", [True, False])
    def test_batch_norm_gradient(self, training: bool, seed: int) -> None:
        rng = np.random.default_rng(seed)
        gamma = rng.normal(size=3)
        beta = rng.normal(size=3)
        r = rng.normal(size=(6, 3))
        stats = BatchNormStats(rng.normal(size=3), rng.uniform(0.5, 2.0, size=3))
        _check_gradient(
            lambda t: tc.tensor_sum(
                tc.batchnorm1d(t, Tensor(gamma), Tensor(beta), stats, training) * r
            ),
            rng.normal(size=(6, 3)),
        )


class TestLossAndBackward:
    """Reconstruction loss and tape replay."""

    def test_mse_values(self) -> None:
        assert tc.mse_loss(Tensor([1.0, 2.0]), [1.0, 2.0]).item() == 0.0
        assert tc.mse_loss(Tensor([0.0, 0.0]), [1.0, 3.0]).item() == 5.0

    def test_mse_gradient(self) -> None:
        """Gradient is 2 (pred - target) / numel."""
        target = np.array([[1.0, -1.0], [0.5, 2.0]])
        pred = np.array([[0.0, 0.0], [1.0, 1.0]])
        grad = _tape_grad(lambda t: tc.mse_loss(t, target), pred)
        np.testing.assert_allclose(grad, 2.0 * (pred - target) / 4)
        numeric = tc.finite_difference_grad(lambda t: tc.mse_loss(t, target), Tensor(pred))
        assert _relative_error(grad, numeric.data) < 1e-6

    def test_square_gradient(self) -> None:
        assert _tape_grad(lambda t: tc.tensor_sum(t * t), np.array(3.0)) == 6.0

    def test_reuse_accumulates(self) -> None:
        """A tensor used twice receives both contributions."""
        assert _tape_grad(lambda t: tc.tensor_sum(t + t), np.array(1.5)) == 2.0

    def test_non_scalar_loss_rejected(self) -> None:
        leaf = Tensor(np.ones(3), requires_grad=True)
        with Tape() as tape:
            out = leaf * 2.0
            with pytest.raises(ContractError):
                tc.backward(out, tape)

    def test_no_recording_without_tape(self) -> None:
        leaf = Tensor(np.ones(3), requires_grad=True)
        out = leaf * 2.0
        assert not out.requires_grad
        assert tc.active_tape() is None

    def test_finite_difference_reference_values(self) -> None:
        ones = tc.finite_difference_grad(lambda t: tc.tensor_sum(t), Tensor(np.arange(4.0)))
        np.testing.assert_allclose(ones.data, np.ones(4), atol=1e-8)
        cube = tc.finite_difference_grad(lambda t: tc.tensor_sum(t**3), Tensor(2.0))
        assert abs(cube.item() - 12.0) < 1e-5

    @pytest.mark.parametrize(
        "op",
        [
            lambda t: tc.exp(t),
            lambda t: tc.log(tc.absolute(t) + 1.0),
            lambda t: tc.sqrt(t * t + 1.0),
            lambda t: tc.softmax(t, axis=1),
            lambda t: tc.div(t, t * t + 2.0),
            lambda t: tc.clamp(t, -0.5, 0.5),
            lambda t: tc.tensor_mean(t, axis=0, keepdims=True),
        ],
    )
    def test_elementwise_gradients(self, op: Callable[[Tensor], Tensor]) -> None:
        """Randomised finite-difference checks."""
        for trial in GRADIENT_TRIALS:
            rng = np.random.default_rng(trial)
            r = rng.normal(size=(3, 4))
            x = rng.normal(size=(3, 4))
            _check_gradient(lambda t: tc.tensor_sum(op(t) * r), x)


def _reference_adam(
    param: float, grads: list[float], lr: float = 1e-3, b1: float = 0.9, b2: float = 0.999
) -> float:
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * (g * g)
        param -= lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + 1e-8)
    return param


class TestAdam:
    """Bias-corrected Adam updates."""

    def test_zero_gradient_is_fixed_point(self) -> None:
        params = {"w": np.array([1.0, -2.0])}
        state = AdamState()
        tc.adam_step(params, {"w": np.zeros(2)}, state)
        np.testing.assert_array_equal(params["w"], [1.0, -2.0])
        assert state.t == 1

    def test_first_step_moves_by_lr(self) -> None:
        params = {"w": np.array([0.0])}
        tc.adam_step(params, {"w": np.array([1.0])}, AdamState(lr=1e-3))
        assert params["w"][0] == pytest.approx(-9.99999990e-4, abs=1e-12)

    def test_matches_scalar_reference(self) -> None:
        """Two steps reproduce a hand-rolled implementation bit for bit."""
        params = {"w": np.array([0.5])}
        state = AdamState()
        for g in (0.3, 0.3):
            tc.adam_step(params, {"w": np.array([g])}, state)
        assert params["w"][0] == _reference_adam(0.5, [0.3, 0.3])
        assert state.m["w"].shape == params["w"].shape

    def test_gradient_shape_mismatch(self) -> None:
        with pytest.raises(DimensionError):
            tc.adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, AdamState())
