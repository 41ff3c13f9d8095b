"""Small layer toolkit over the tensor core: parameter containers,
convolution layers, LSTM stacks, and the snake activation."""

from __future__ import annotations

import numpy as np

from vqcodec import nd
from vqcodec.errors import CodecError, ShapeError

SNAKE_EPS = 1e-9
INIT_STD = 0.02


def truncated_normal(rng, shape, std=INIT_STD):
    """Normal(0, std) resampled until within two standard deviations."""
    out = rng.standard_normal(shape) * std
    bad = np.abs(out) > 2.0 * std
    while np.any(bad):
        out[bad] = rng.standard_normal(int(bad.sum())) * std
        bad = np.abs(out) > 2.0 * std
    return out


class Module:
    """Parameter container with recursive discovery through attributes."""

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            path = f"{prefix}{name}"
            if isinstance(value, nd.Parameter):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix=f"{path}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(prefix=f"{path}.{i}.")
                    elif isinstance(item, nd.Parameter):
                        yield f"{path}.{i}", item

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def freeze(self):
        for p in self.parameters():
            p.requires_grad = False

    def unfreeze(self):
        for p in self.parameters():
            p.requires_grad = True

    def state_arrays(self):
        return {name: p.data for name, p in self.named_parameters()}

    def load_state(self, arrays, dtype=None):
        for name, p in self.named_parameters():
            if name not in arrays:
                raise CodecError(f"checkpoint is missing parameter '{name}'")
            src = np.asarray(arrays[name])
            if src.shape != p.data.shape:
                raise ShapeError(
                    f"parameter '{name}': stored shape {src.shape} != "
                    f"model shape {p.data.shape}"
                )
            p.data = np.array(src, dtype=dtype or p.data.dtype)

    def count_params(self):
        return sum(p.data.size for p in self.parameters())


class Conv1d(Module):
    def __init__(self, c_in, c_out, kernel, stride=1, dilation=1, padding=0,
                 rng=None, dtype=np.float32):
        super().__init__()
        self.stride = stride
        self.dilation = dilation
        self.padding = padding
        self.weight = nd.Parameter(
            truncated_normal(rng, (c_out, c_in, kernel)).astype(dtype)
        )
        self.bias = nd.Parameter(np.zeros(c_out, dtype=dtype), decay=False)

    def __call__(self, x):
        return nd.conv1d(x, self.weight, self.bias, stride=self.stride,
                         dilation=self.dilation, padding=self.padding)


class ConvTranspose1d(Module):
    def __init__(self, c_in, c_out, kernel, stride=1, padding=0,
                 rng=None, dtype=np.float32):
        super().__init__()
        self.stride = stride
        self.padding = padding
        self.weight = nd.Parameter(
            truncated_normal(rng, (c_in, c_out, kernel)).astype(dtype)
        )
        self.bias = nd.Parameter(np.zeros(c_out, dtype=dtype), decay=False)

    def __call__(self, x):
        return nd.conv_transpose1d(x, self.weight, self.bias,
                                   stride=self.stride, padding=self.padding)


class Conv2d(Module):
    def __init__(self, c_in, c_out, kernel, stride=(1, 1), padding=(0, 0),
                 rng=None, dtype=np.float32):
        super().__init__()
        self.stride = stride
        self.padding = padding
        self.weight = nd.Parameter(
            truncated_normal(rng, (c_out, c_in, kernel[0], kernel[1])).astype(dtype)
        )
        self.bias = nd.Parameter(np.zeros(c_out, dtype=dtype), decay=False)

    def __call__(self, x):
        return nd.conv2d(x, self.weight, self.bias,
                         stride=self.stride, padding=self.padding)


class LSTM(Module):
    """Stacked unidirectional LSTM over [B, T, D]."""

    def __init__(self, input_dim, hidden_dim, layers=2, rng=None, dtype=np.float32):
        super().__init__()
        self.layers = []
        d = input_dim
        for _ in range(layers):
            w_x = nd.Parameter(truncated_normal(rng, (d, 4 * hidden_dim)).astype(dtype))
            w_h = nd.Parameter(
                truncated_normal(rng, (hidden_dim, 4 * hidden_dim)).astype(dtype)
            )
            b = nd.Parameter(np.zeros(4 * hidden_dim, dtype=dtype), decay=False)
            self.layers.append((w_x, w_h, b))
            d = hidden_dim

    def named_parameters(self, prefix=""):
        for i, (w_x, w_h, b) in enumerate(self.layers):
            yield f"{prefix}layers.{i}.w_x", w_x
            yield f"{prefix}layers.{i}.w_h", w_h
            yield f"{prefix}layers.{i}.b", b

    def __call__(self, x):
        return nd.lstm_forward(x, self.layers)


class Snake(Module):
    """Periodic-bias activation x + sin^2(alpha*x)/(alpha+eps), per channel."""

    def __init__(self, channels, dtype=np.float32):
        super().__init__()
        self.alpha = nd.Parameter(np.ones((1, channels, 1), dtype=dtype), decay=False)

    def __call__(self, x):
        return snake(x, self.alpha)


def snake(x, alpha, eps=SNAKE_EPS):
    """y = x + sin^2(alpha * x) / (alpha + eps); identity at alpha = 0."""
    return nd.snake(x, alpha, eps=eps)
