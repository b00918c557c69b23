"""Modality-specific feature extractors.

Vector modalities (clinical, genetic) use a three-layer fully connected
network of (linear -> ReLU -> dropout) blocks; the image modality uses a
three-layer CNN of (conv -> ReLU) blocks followed by a flatten and a linear
head.  Every backbone maps ``(batch, modality shape)`` to
``(batch, out_dim)`` and is exactly deterministic in evaluation mode.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor, conv2d, dropout, glorot_uniform, matmul, relu


class DenseBackbone:
    """Three fully connected layers, each followed by ReLU and dropout."""

    def __init__(
        self,
        in_dim: int,
        hidden: tuple[int, int],
        out_dim: int,
        dropout_rates: tuple[float, float, float],
        rng: np.random.Generator,
    ):
        widths = (in_dim, hidden[0], hidden[1], out_dim)
        if len(dropout_rates) != 3:
            raise ConfigError(f"need one dropout rate per layer (3), got {dropout_rates}")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.dropout_rates = tuple(float(r) for r in dropout_rates)
        self.layers = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            weight = Tensor(glorot_uniform(rng, (fan_in, fan_out), fan_in, fan_out), requires_grad=True)
            # Small random biases keep pre-activations off the exact ReLU kink.
            bias = Tensor(rng.uniform(-0.05, 0.05, fan_out), requires_grad=True)
            self.layers.append((weight, bias))

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for i, (weight, bias) in enumerate(self.layers):
            out[f"layer{i}.weight"] = weight
            out[f"layer{i}.bias"] = bias
        return out

    def forward(self, x, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"input width {x.shape} does not match backbone input {self.in_dim}")
        h = x
        for (weight, bias), rate in zip(self.layers, self.dropout_rates):
            h = relu(matmul(h, weight) + bias)
            h = dropout(h, rate, training, rng)
        return h


class ConvBackbone:
    """Three conv layers, flatten, and a linear head to the latent width."""

    def __init__(
        self,
        out_dim: int,
        rng: np.random.Generator,
        in_shape: tuple[int, int, int] = (3, 72, 72),
        channels: tuple[int, int, int] = (8, 16, 32),
        kernels: tuple[int, int, int] = (3, 3, 3),
        strides: tuple[int, int, int] = (2, 2, 2),
    ):
        self.in_shape = tuple(in_shape)
        self.out_dim = out_dim
        c, h, w = self.in_shape
        self.conv_layers = []
        for c_out, k, s in zip(channels, kernels, strides):
            if k > h or k > w:
                raise ConfigError(f"kernel {k} exceeds spatial dims ({h}, {w}) for input {in_shape}")
            fan_in, fan_out = c * k * k, c_out * k * k
            kernel = Tensor(glorot_uniform(rng, (c_out, c, k, k), fan_in, fan_out), requires_grad=True)
            bias = Tensor(rng.uniform(-0.05, 0.05, c_out), requires_grad=True)
            self.conv_layers.append((kernel, bias, int(s)))
            h = (h - k) // s + 1
            w = (w - k) // s + 1
            c = c_out
            if h < 1 or w < 1:
                raise ConfigError(f"spatial dims collapse to ({h}, {w}) with channels={channels}, kernels={kernels}, strides={strides}")
        self.flat_dim = c * h * w
        self.head_weight = Tensor(glorot_uniform(rng, (self.flat_dim, out_dim), self.flat_dim, out_dim), requires_grad=True)
        self.head_bias = Tensor(np.zeros(out_dim), requires_grad=True)

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for i, (kernel, bias, _) in enumerate(self.conv_layers):
            out[f"conv{i}.kernel"] = kernel
            out[f"conv{i}.bias"] = bias
        out["head.weight"] = self.head_weight
        out["head.bias"] = self.head_bias
        return out

    def forward(self, x, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        if x.ndim != 4 or x.shape[1:] != self.in_shape:
            raise ShapeError(f"expected batch of shape (n, {self.in_shape}), got {x.shape}")
        h = x
        for kernel, bias, stride in self.conv_layers:
            h = relu(conv2d(h, kernel, stride) + bias.reshape(1, bias.size, 1, 1))
        h = h.reshape(h.shape[0], self.flat_dim)
        return matmul(h, self.head_weight) + self.head_bias
