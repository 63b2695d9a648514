"""Layer semantics: conv identity, batchnorm statistics, BiLSTM structure,
Adam arithmetic, and gradient checks through the full layer stack."""

import numpy as np
import pytest

from f0vc.errors import NumericError, ShapeError
from f0vc.nn import (
    LSTM,
    Adam,
    BatchNorm1d,
    BiLSTM,
    Conv1d,
    Linear,
    Tensor,
    check_gradients,
    clip_grad_norm,
    flip_time,
    mse,
    relu,
    tsum,
)


def test_relu_values():
    out = relu(Tensor(np.array([-1.0, 0.0, 2.0])))
    assert np.array_equal(out.data, [0.0, 0.0, 2.0])


def test_conv_identity_kernel_preserves_input():
    rng = np.random.default_rng(0)
    conv = Conv1d(1, 1, rng)
    w = np.zeros((5, 1))
    w[2, 0] = 1.0  # center tap
    conv.weight.data = w
    conv.bias.data = np.zeros(1)
    x = rng.normal(size=(2, 9, 1))
    out = conv(Tensor(x))
    assert np.allclose(out.data, x)


def test_conv_shape_error_names_shapes():
    conv = Conv1d(3, 4, np.random.default_rng(0))
    with pytest.raises(ShapeError, match=r"\(B, T, 3\)"):
        conv(Tensor(np.zeros((2, 5, 7))))


def test_batchnorm_training_statistics():
    rng = np.random.default_rng(1)
    bn = BatchNorm1d(6)
    x = Tensor(rng.normal(loc=3.0, scale=2.5, size=(4, 11, 6)))
    out = bn(x, training=True).data
    assert np.abs(out.mean(axis=(0, 1))).max() < 1e-5
    assert np.abs(out.var(axis=(0, 1)) - 1.0).max() < 1e-5


def test_batchnorm_inference_uses_running_stats():
    rng = np.random.default_rng(2)
    bn = BatchNorm1d(3)
    for _ in range(200):
        bn(Tensor(rng.normal(loc=1.0, scale=2.0, size=(2, 8, 3))), training=True)
    out = bn(Tensor(np.full((1, 4, 3), 1.0)), training=False).data
    # inputs at the running mean should map near zero
    assert np.abs(out).max() < 0.2


def test_bilstm_halves_match_unidirectional_runs():
    rng = np.random.default_rng(3)
    bil = BiLSTM(4, 5, rng)
    x = Tensor(rng.normal(size=(2, 7, 4)))
    out = bil(x).data
    fwd = bil.fwd(Tensor(x.data)).data
    bwd = flip_time(bil.bwd(flip_time(Tensor(x.data)))).data
    assert np.allclose(out[:, :, :5], fwd)
    assert np.allclose(out[:, :, 5:], bwd)


def test_lstm_forget_bias_initialized_to_one():
    lstm = LSTM(3, 4, np.random.default_rng(0))
    assert np.array_equal(lstm.bias.data[4:8], np.ones(4))
    assert np.array_equal(lstm.bias.data[:4], np.zeros(4))


def test_adam_zero_gradient_leaves_parameters_unchanged():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = Adam({"p": p}, lr=0.1)
    p.grad = np.zeros(2)
    opt.step()
    assert np.array_equal(p.data, [1.0, -2.0])


def test_adam_first_step_matches_hand_computation():
    p = Tensor(np.array([1.0]), requires_grad=True)
    opt = Adam({"p": p}, lr=1e-4)
    p.grad = np.array([1.0])
    opt.step()
    # bias-corrected m_hat = 1, v_hat = 1 -> step = lr / (1 + eps)
    expected = 1.0 - 1e-4 / (1.0 + 1e-8)
    assert abs(float(p.data[0]) - expected) < 1e-12
    assert p.grad is None


def test_adam_identical_parameters_stay_identical():
    rng = np.random.default_rng(4)
    a = Tensor(np.array([0.5, -0.5]), requires_grad=True)
    b = Tensor(np.array([0.5, -0.5]), requires_grad=True)
    opt = Adam({"a": a, "b": b}, lr=0.01)
    for _ in range(25):
        g = rng.normal(size=2)
        a.grad = g.copy()
        b.grad = g.copy()
        opt.step()
    assert np.array_equal(a.data, b.data)


def test_adam_missing_gradient_errors():
    p = Tensor(np.ones(2), requires_grad=True)
    opt = Adam({"p": p})
    with pytest.raises(NumericError, match="missing gradient"):
        opt.step()


def test_clip_grad_norm_scales_to_bound():
    p = Tensor(np.zeros(4), requires_grad=True)
    p.grad = np.full(4, 3.0)
    norm = clip_grad_norm({"p": p}, 1.0)
    assert norm == pytest.approx(6.0)
    assert np.linalg.norm(p.grad) == pytest.approx(1.0)


def test_linear_applies_to_leading_dims():
    rng = np.random.default_rng(5)
    lin = Linear(3, 2, rng)
    x = rng.normal(size=(2, 4, 3))
    out = lin(Tensor(x)).data
    assert out.shape == (2, 4, 2)
    assert np.allclose(out, x @ lin.weight.data + lin.bias.data)


@pytest.mark.parametrize("seed", range(2))
def test_full_stack_gradients(seed):
    rng = np.random.default_rng(seed)
    conv = Conv1d(3, 4, rng)
    bn = BatchNorm1d(4)
    bil = BiLSTM(4, 3, rng)
    lstm = LSTM(6, 5, rng)
    lin = Linear(5, 2, rng)
    x = Tensor(rng.normal(size=(2, 8, 3)), requires_grad=True)
    t = Tensor(rng.normal(size=(2, 8, 2)))

    def forward():
        return mse(lin(lstm(bil(bn(relu(conv(x)), training=True)))), t)

    params = {"x": x}
    for mod, tag in ((conv, "conv"), (bn, "bn"), (bil, "bil"), (lstm, "lstm"), (lin, "lin")):
        params.update({f"{tag}.{k}": v for k, v in mod.named_parameters().items()})
    errs = check_gradients(forward, params)
    assert max(errs.values()) < 1e-5, errs


def test_fixed_seed_forward_backward_is_bit_identical():
    def run():
        rng = np.random.default_rng(42)
        lstm = LSTM(4, 6, rng)
        x = Tensor(rng.normal(size=(2, 10, 4)), requires_grad=True)
        loss = tsum(lstm(x))
        loss.backward()
        return float(loss.data), x.grad.copy(), lstm.w_x.grad.copy()

    l1_, gx1, gw1 = run()
    l2_, gx2, gw2 = run()
    assert l1_ == l2_
    assert np.array_equal(gx1, gx2)
    assert np.array_equal(gw1, gw2)
