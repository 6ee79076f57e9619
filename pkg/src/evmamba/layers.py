"""Parameter-owning layers.

A Layer registers tensors and child layers in insertion order; parameter
enumeration is deterministic, and the checkpoint writer and the profiler
both rely on that single enumeration.  Each layer also knows how to count
its own multiply-accumulates analytically via ``profile``.
"""

from __future__ import annotations

from typing import Iterator, Optional

import numpy as np

from . import ops
from .tensor import Tensor, get_dtype


class Layer:
    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._children: dict[str, "Layer"] = {}

    def add_param(self, name: str, data: np.ndarray) -> Tensor:
        t = Tensor(data, requires_grad=True)
        self._params[name] = t
        return t

    def register_param(self, name: str, t: Tensor) -> Tensor:
        self._params[name] = t
        return t

    def add_child(self, name: str, child: "Layer") -> "Layer":
        self._children[name] = child
        return child

    def parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, t in self._params.items():
            yield (f"{prefix}{name}", t)
        for name, child in self._children.items():
            yield from child.parameters(prefix=f"{prefix}{name}.")

    def param_count(self) -> int:
        return sum(t.size for _, t in self.parameters())

    def zero_grad(self) -> None:
        for _, t in self.parameters():
            t.zero_grad()

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def profile(self, h: int, w: int):
        """Analytic cost: ([(name, params, macs, scan_steps), ...], out_h, out_w).

        MACs count conv/linear/scan multiplies only; normalization and
        activations are excluded.
        """
        raise NotImplementedError


def he_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(get_dtype())


class Conv2d(Layer):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator, *,
                 stride: int = 1, groups: int = 1, bias: bool = True):
        super().__init__()
        self.c_in, self.c_out, self.k = c_in, c_out, k
        self.stride, self.groups = stride, groups
        fan_in = (c_in // groups) * k * k
        self.w = self.add_param("w", he_normal(rng, (c_out, c_in // groups, k, k), fan_in))
        self.b = self.add_param("b", np.zeros(c_out, dtype=get_dtype())) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.w, self.b, stride=self.stride,
                          padding="same", groups=self.groups)

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        pad = self.k // 2
        return ((h + 2 * pad - self.k) // self.stride + 1,
                (w + 2 * pad - self.k) // self.stride + 1)

    def profile(self, h: int, w: int):
        ho, wo = self.out_hw(h, w)
        macs = self.c_out * (self.c_in // self.groups) * self.k * self.k * ho * wo
        return [("conv", self.param_count(), macs, 0)], ho, wo


class Linear(Layer):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, *,
                 bias: bool = True):
        super().__init__()
        self.d_in, self.d_out = d_in, d_out
        self.w = self.add_param("w", (rng.standard_normal((d_out, d_in))
                                      / np.sqrt(d_in)).astype(get_dtype()))
        self.b = self.add_param("b", np.zeros(d_out, dtype=get_dtype())) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.w, self.b)

    def profile(self, h: int = 1, w: int = 1):
        return [("linear", self.param_count(), self.d_in * self.d_out, 0)], h, w


class ChannelNorm(Layer):
    """Layer normalization over the channel axis at every spatial position."""

    def __init__(self, channels: int, eps: float = 1e-6):
        super().__init__()
        self.channels, self.eps = channels, eps
        self.gamma = self.add_param("gamma", np.ones(channels, dtype=get_dtype()))
        self.beta = self.add_param("beta", np.zeros(channels, dtype=get_dtype()))

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm_channels(x, self.gamma, self.beta, self.eps)

    def profile(self, h: int, w: int):
        return [("norm", self.param_count(), 0, 0)], h, w


class SEGate(Layer):
    """Squeeze-and-excite channel gate: x * sigmoid(W2 relu(W1 mean_hw(x))).

    With all-zero weights the gate is sigmoid(0) = 0.5 everywhere.
    """

    def __init__(self, channels: int, squeezed: int, rng: np.random.Generator):
        super().__init__()
        self.channels, self.squeezed = channels, squeezed
        self.w1 = self.add_param("w1", he_normal(rng, (squeezed, channels), channels))
        self.b1 = self.add_param("b1", np.zeros(squeezed, dtype=get_dtype()))
        self.w2 = self.add_param("w2", he_normal(rng, (channels, squeezed), squeezed))
        self.b2 = self.add_param("b2", np.zeros(channels, dtype=get_dtype()))

    def forward(self, x: Tensor) -> Tensor:
        z = ops.global_avg_pool(x)
        z = ops.relu(ops.linear(z, self.w1, self.b1))
        g = ops.sigmoid(ops.linear(z, self.w2, self.b2))
        return ops.scale_channels(x, g)

    def profile(self, h: int, w: int):
        macs = 2 * self.channels * self.squeezed
        return [("se", self.param_count(), macs, 0)], h, w


def squeeze_width(channels: int, reduction: int) -> int:
    """Bottleneck width of an SE gate: channels/reduction, floored at 4."""
    return max(channels // reduction, 4)


class Sequential(Layer):
    def __init__(self, layers):
        super().__init__()
        for i, layer in enumerate(layers):
            self.add_child(str(i), layer)

    def __len__(self) -> int:
        return len(self._children)

    def __iter__(self):
        return iter(self._children.values())

    def forward(self, x: Tensor) -> Tensor:
        for layer in self._children.values():
            x = layer(x)
        return x

    def profile(self, h: int, w: int):
        entries = []
        for name, child in self._children.items():
            sub, h, w = child.profile(h, w)
            entries.extend((f"{name}.{n}", p, m, s) for n, p, m, s in sub)
        return entries, h, w
