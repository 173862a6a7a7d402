"""Parameter containers and the handful of layers the models are built from."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import grad as G
from .grad import Tensor


class Module:
    """Anything holding parameters; names are dotted attribute paths."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def zero_grad(self):
        for p in self.parameters().values():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True):
        params = self.parameters()
        missing = set(params) - set(state)
        if strict and missing:
            raise KeyError(f"missing parameters: {sorted(missing)[:5]}")
        for name, p in params.items():
            if name in state:
                value = np.asarray(state[name])
                if value.shape != p.shape:
                    raise ValueError(f"{name}: shape {value.shape} != {p.shape}")
                p.data = value.astype(p.dtype).copy()

    def astype(self, dtype):
        for p in self.parameters().values():
            p.data = p.data.astype(dtype)
        return self


def param(values: np.ndarray) -> Tensor:
    return Tensor(np.asarray(values, dtype=G.default_dtype()), requires_grad=True)


def he_uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = np.sqrt(6.0 / fan_in)
    return param(rng.uniform(-bound, bound, size=shape))


def zeros(shape) -> Tensor:
    return param(np.zeros(shape))


class Linear(Module):
    def __init__(self, rng, d_in: int, d_out: int, bias: bool = True, zero: bool = False):
        self.weight = zeros((d_in, d_out)) if zero else he_uniform(rng, (d_in, d_out), d_in)
        self.bias = zeros((d_out,)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = G.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class Conv1d(Module):
    def __init__(self, rng, c_in: int, c_out: int, kernel: int, stride: int = 1, padding: int | None = None,
                 dilation: int = 1, groups: int = 1, zero: bool = False):
        shape = (c_out, c_in // groups, kernel)
        self.weight = zeros(shape) if zero else he_uniform(rng, shape, c_in // groups * kernel)
        self.bias = zeros((c_out,))
        self.stride, self.dilation, self.groups = stride, dilation, groups
        self.padding = dilation * (kernel - 1) // 2 if padding is None else padding

    def __call__(self, x: Tensor) -> Tensor:
        return G.conv1d(x, self.weight, self.bias, self.stride, self.padding, self.dilation, self.groups)


class Conv2d(Module):
    def __init__(self, rng, c_in: int, c_out: int, kernel, stride=(1, 1), padding=None):
        kh, kw = kernel
        self.weight = he_uniform(rng, (c_out, c_in, kh, kw), c_in * kh * kw)
        self.bias = zeros((c_out,))
        self.stride = tuple(stride)
        self.padding = ((kh - 1) // 2, (kw - 1) // 2) if padding is None else tuple(padding)

    def __call__(self, x: Tensor) -> Tensor:
        return G.conv2d(x, self.weight, self.bias, self.stride, self.padding)


def sinusoid(positions: np.ndarray, dim: int) -> np.ndarray:
    """Interleaved sin/cos encoding: out[:, 2i] = sin(p / 10000^(2i/dim)), out[:, 2i+1] = cos(...)."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 1)
    freqs = 10000.0 ** (-np.arange(0, dim, 2) / dim)
    out = np.zeros((positions.shape[0], dim))
    out[:, 0::2] = np.sin(positions * freqs)
    out[:, 1::2] = np.cos(positions * freqs)
    return out
