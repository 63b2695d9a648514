"""Layer set for the conversion network: linear, 5x1 conv, batch norm,
LSTM/BiLSTM, and the Adam optimizer.

Convolution, batch normalization and LSTM are fused tape nodes with
hand-written backwards; everything else composes autodiff primitives.
Array convention is (batch, time, channels).

Initialization: weights ~ uniform(-k, k) with k = 1/sqrt(fan_in), biases
zero, LSTM forget gate bias 1.
"""

from __future__ import annotations

import numpy as np

from ..errors import NumericError, ShapeError
from .autodiff import Tensor, concat, flip_time, make_node, matmul, reshape

__all__ = [
    "Module",
    "Linear",
    "Conv1d",
    "BatchNorm1d",
    "LSTM",
    "BiLSTM",
    "Adam",
    "clip_grad_norm",
]


def _uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    k = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-k, k, size=shape)


class Module:
    """Minimal parameter container with recursive name scoping."""

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        """All parameter tensors, frozen ones included (filter by requires_grad)."""
        out: dict[str, Tensor] = {}
        for name, value in vars(self).items():
            if isinstance(value, Tensor):
                out[prefix + name] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(f"{prefix}{name}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{prefix}{name}.{i}."))
        return out

    def named_buffers(self, prefix: str = "") -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for name, value in vars(self).items():
            if isinstance(value, Module):
                out.update(value.named_buffers(f"{prefix}{name}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_buffers(f"{prefix}{name}.{i}."))
        buffers = getattr(self, "_buffers", None)
        if buffers:
            for name, value in buffers.items():
                out[prefix + name] = value
        return out

    def set_trainable(self, trainable: bool) -> None:
        for p in self.named_parameters().values():
            p.requires_grad = trainable


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.weight = Tensor(_uniform_init(rng, in_dim, (in_dim, out_dim)), requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True)
        self.in_dim = in_dim
        self.out_dim = out_dim

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"linear expects last dim {self.in_dim}, got input shape {x.shape}")
        lead = x.shape[:-1]
        flat = reshape(x, (-1, self.in_dim))
        y = matmul(flat, self.weight) + self.bias
        return reshape(y, lead + (self.out_dim,))


class Conv1d(Module):
    """Length-preserving 1-D convolution along time, kernel 5, stride 1."""

    KERNEL = 5

    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator):
        k = self.KERNEL
        self.weight = Tensor(_uniform_init(rng, k * in_ch, (k * in_ch, out_ch)), requires_grad=True)
        self.bias = Tensor(np.zeros(out_ch), requires_grad=True)
        self.in_ch = in_ch
        self.out_ch = out_ch

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 3 or x.shape[2] != self.in_ch:
            raise ShapeError(f"conv expects (B, T, {self.in_ch}), got {x.shape}")
        k, pad = self.KERNEL, self.KERNEL // 2
        B, T, C = x.shape
        w, b = self.weight, self.bias

        xp = np.zeros((B, T + 2 * pad, C))
        xp[:, pad:pad + T] = x.data
        cols = np.concatenate([xp[:, i:i + T] for i in range(k)], axis=2)  # (B,T,kC)
        y = cols.reshape(B * T, k * C) @ w.data + b.data

        def backward(g):
            gf = g.reshape(B * T, self.out_ch)
            w._accumulate(cols.reshape(B * T, k * C).T @ gf)
            b._accumulate(gf.sum(axis=0))
            dcols = (gf @ w.data.T).reshape(B, T, k * C)
            dxp = np.zeros_like(xp)
            for i in range(k):
                dxp[:, i:i + T] += dcols[:, :, i * C:(i + 1) * C]
            x._accumulate(dxp[:, pad:pad + T])

        return make_node(y.reshape(B, T, self.out_ch), (x, w, b), backward, "conv1d")


class BatchNorm1d(Module):
    """Per-channel normalization over (batch x time); running stats for inference."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self._buffers = {
            "running_mean": np.zeros(channels),
            "running_var": np.ones(channels),
        }

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        if x.ndim != 3 or x.shape[2] != self.channels:
            raise ShapeError(f"batchnorm expects (B, T, {self.channels}), got {x.shape}")
        gamma, beta = self.gamma, self.beta
        if training:
            mean = x.data.mean(axis=(0, 1))
            var = x.data.var(axis=(0, 1))
            rb = self._buffers
            rb["running_mean"] = (1 - self.momentum) * rb["running_mean"] + self.momentum * mean
            rb["running_var"] = (1 - self.momentum) * rb["running_var"] + self.momentum * var
        else:
            mean = self._buffers["running_mean"]
            var = self._buffers["running_var"]

        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x.data - mean) * inv_std
        y = gamma.data * xhat + beta.data
        n = x.shape[0] * x.shape[1]

        def backward(g):
            gamma._accumulate((g * xhat).sum(axis=(0, 1)))
            beta._accumulate(g.sum(axis=(0, 1)))
            dxhat = g * gamma.data
            if training:
                dx = (inv_std / n) * (
                    n * dxhat
                    - dxhat.sum(axis=(0, 1))
                    - xhat * (dxhat * xhat).sum(axis=(0, 1))
                )
            else:
                dx = dxhat * inv_std
            x._accumulate(dx)

        return make_node(y, (x, gamma, beta), backward, "batchnorm")


class LSTM(Module):
    """Unidirectional LSTM over (B, T, in_dim) returning all hidden states.

    Gate layout along the 4H axis is (input, forget, output, candidate) so the
    three sigmoid gates are one contiguous block.
    """

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator):
        self.w_x = Tensor(_uniform_init(rng, in_dim, (in_dim, 4 * hidden)), requires_grad=True)
        self.w_h = Tensor(_uniform_init(rng, hidden, (hidden, 4 * hidden)), requires_grad=True)
        bias = np.zeros(4 * hidden)
        bias[hidden:2 * hidden] = 1.0  # forget gate
        self.bias = Tensor(bias, requires_grad=True)
        self.in_dim = in_dim
        self.hidden = hidden

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 3 or x.shape[2] != self.in_dim:
            raise ShapeError(f"lstm expects (B, T, {self.in_dim}), got {x.shape}")
        B, T, _ = x.shape
        H = self.hidden
        w_x, w_h, bias = self.w_x, self.w_h, self.bias

        zx = (x.data.reshape(B * T, self.in_dim) @ w_x.data).reshape(B, T, 4 * H) + bias.data
        gates = np.empty((B, T, 4 * H))
        cells = np.empty((B, T, H))
        tanh_c = np.empty((B, T, H))
        hidden = np.empty((B, T, H))
        h = np.zeros((B, H))
        c = np.zeros((B, H))
        for t in range(T):
            z = zx[:, t] + h @ w_h.data
            z[:, :3 * H] = 1.0 / (1.0 + np.exp(-z[:, :3 * H]))
            np.tanh(z[:, 3 * H:], out=z[:, 3 * H:])
            i, f, o, g = z[:, :H], z[:, H:2 * H], z[:, 2 * H:3 * H], z[:, 3 * H:]
            c = f * c + i * g
            tc = np.tanh(c)
            h = o * tc
            gates[:, t] = z
            cells[:, t] = c
            tanh_c[:, t] = tc
            hidden[:, t] = h

        def backward(grad_h):
            dz_all = np.empty((B, T, 4 * H))
            dh_next = np.zeros((B, H))
            dc_next = np.zeros((B, H))
            w_h_t = w_h.data.T
            for t in range(T - 1, -1, -1):
                z = gates[:, t]
                i, f, o, g = z[:, :H], z[:, H:2 * H], z[:, 2 * H:3 * H], z[:, 3 * H:]
                tc = tanh_c[:, t]
                c_prev = cells[:, t - 1] if t > 0 else 0.0
                dh = grad_h[:, t] + dh_next
                dc = dc_next + dh * o * (1.0 - tc * tc)
                dz = dz_all[:, t]
                dz[:, :H] = dc * g * i * (1.0 - i)
                dz[:, H:2 * H] = dc * c_prev * f * (1.0 - f)
                dz[:, 2 * H:3 * H] = dh * tc * o * (1.0 - o)
                dz[:, 3 * H:] = dc * i * (1.0 - g * g)
                dh_next = dz @ w_h_t
                dc_next = dc * f
            dz_flat = dz_all.reshape(B * T, 4 * H)
            w_x._accumulate(x.data.reshape(B * T, self.in_dim).T @ dz_flat)
            h_prev = np.concatenate([np.zeros((B, 1, H)), hidden[:, :-1]], axis=1)
            w_h._accumulate(h_prev.reshape(B * T, H).T @ dz_flat)
            bias._accumulate(dz_flat.sum(axis=0))
            x._accumulate((dz_flat @ w_x.data.T).reshape(B, T, self.in_dim))

        return make_node(hidden, (x, w_x, w_h, bias), backward, "lstm")


class BiLSTM(Module):
    """Bidirectional LSTM; output is (forward states || time-reversed backward states)."""

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator):
        self.fwd = LSTM(in_dim, hidden, rng)
        self.bwd = LSTM(in_dim, hidden, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return concat([self.fwd(x), flip_time(self.bwd(flip_time(x)))], axis=2)


class Adam:
    """Adam with bias correction over a fixed set of named parameters."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self) -> None:
        """Apply one update; consumes and clears the gradients."""
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            if p.grad is None:
                raise NumericError(f"missing gradient on parameter '{name}'")
            g = p.grad
            if not np.isfinite(g).all():
                raise NumericError(f"non-finite gradient on parameter '{name}'")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name in self.params:
            out[f"adam_m/{name}"] = self.m[name]
            out[f"adam_v/{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], step_count: int) -> None:
        for name in self.params:
            self.m[name] = arrays[f"adam_m/{name}"].copy()
            self.v[name] = arrays[f"adam_v/{name}"].copy()
        self.step_count = step_count


def clip_grad_norm(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale
    return norm
