"""Tensor/tape semantics and finite-difference checks for the primitives."""

import numpy as np
import pytest

from f0vc.errors import NumericError, ShapeError
from f0vc.nn import (
    Tensor,
    check_gradients,
    concat,
    flip_time,
    l1,
    matmul,
    mse,
    no_grad,
    relu,
    sigmoid,
    tanh,
    tsum,
)


def test_sum_gradient_is_ones():
    x = Tensor(np.random.default_rng(0).normal(size=(3, 4)), requires_grad=True)
    tsum(x).backward()
    assert np.array_equal(x.grad, np.ones((3, 4)))


def test_squared_norm_gradient_is_2x():
    x = Tensor(np.random.default_rng(1).normal(size=7), requires_grad=True)
    mse(x, Tensor(np.zeros(7))).backward()
    assert np.allclose(x.grad, 2 * x.data)


def test_losses_zero_on_equal_inputs():
    a = Tensor(np.random.default_rng(2).normal(size=(4, 5)))
    assert float(mse(a, Tensor(a.data.copy())).data) == 0.0
    assert float(l1(a, Tensor(a.data.copy())).data) == 0.0


def test_losses_all_ones_difference():
    a = Tensor(np.ones(10))
    b = Tensor(np.zeros(10))
    assert float(mse(a, b).data) == 10.0
    assert float(l1(a, b).data) == 10.0


def test_loss_shape_mismatch_reports_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(3, 2\)"):
        mse(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError, match=r"\(2, 3\) vs \(2, 3\)"):
        matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError):
        (x * 2.0).backward()


def test_second_backward_raises():
    x = Tensor(np.ones(3), requires_grad=True)
    loss = tsum(x)
    loss.backward()
    with pytest.raises(RuntimeError, match="re-running forward"):
        loss.backward()


def test_non_finite_op_output_raises():
    with pytest.raises(NumericError):
        matmul(Tensor(np.array([[1e308]])), Tensor(np.array([[10.0]])))  # overflows to inf


def test_no_grad_builds_no_tape():
    x = Tensor(np.ones(4), requires_grad=True)
    with no_grad():
        y = relu(x * 3.0)
    assert y._parents == ()
    assert not y.requires_grad


def test_mask_excludes_entries_from_losses():
    a = Tensor(np.ones((1, 4, 2)))
    b = Tensor(np.zeros((1, 4, 2)))
    mask = np.array([[1.0, 1.0, 0.0, 0.0]])
    assert float(mse(a, b, mask).data) == 4.0
    assert float(l1(a, b, mask).data) == 4.0


@pytest.mark.parametrize("seed", range(3))
def test_primitive_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(size=(3, 6)), requires_grad=True)
    w = Tensor(rng.normal(size=(6, 4)), requires_grad=True)
    t = Tensor(rng.normal(size=(3, 4)))

    def forward():
        h = tanh(matmul(x, w))
        g = sigmoid(h) * relu(h) + h * 0.5
        return mse(g, t)

    errs = check_gradients(forward, {"x": x, "w": w})
    assert max(errs.values()) < 1e-6, errs


def test_concat_and_flip_gradients():
    rng = np.random.default_rng(3)
    a = Tensor(rng.normal(size=(2, 5, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=(2, 5, 2)), requires_grad=True)
    t = Tensor(rng.normal(size=(2, 5, 5)))

    def forward():
        return mse(flip_time(concat([a, b], axis=2)), t)

    errs = check_gradients(forward, {"a": a, "b": b})
    assert max(errs.values()) < 1e-6, errs


def test_l1_gradient_matches_finite_differences_away_from_kinks():
    rng = np.random.default_rng(4)
    a = Tensor(rng.normal(size=(3, 3)) + 5.0, requires_grad=True)
    t = Tensor(rng.normal(size=(3, 3)))
    errs = check_gradients(lambda: l1(a, t), {"a": a})
    assert errs["a"] < 1e-6
