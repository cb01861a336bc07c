"""Layers built on the autodiff substrate: conv, linear, batchnorm, pooling.

Modules hold Parameters and child modules in insertion order so that
`named_parameters()` yields a stable, documented naming scheme
(e.g. "stages.0.blocks.1.sdfe.dense.conv1.weight").  All initialization is
driven by an explicit numpy Generator for bit-reproducibility.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import DimensionError


def scaled_normal(rng: np.random.Generator, shape, fan_in: int, gain: float = 1.0) -> np.ndarray:
    """Variance-preserving normal init: std = gain / sqrt(fan_in).

    gain 1.0 keeps activation scale roughly constant through linear maps; the
    squared-ReLU nonlinearity amplifies quadratically, so residual branches
    use reduced gains on their output projections to start near identity.
    """
    return rng.standard_normal(shape) * (gain / np.sqrt(fan_in))


class Module:
    """Minimal container with stable parameter/buffer naming."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, arr: np.ndarray):
        self._buffers[name] = np.asarray(arr, dtype=np.float64)

    def get_buffer(self, name: str) -> np.ndarray:
        return self._buffers[name]

    def set_buffer(self, name: str, arr: np.ndarray):
        if name not in self._buffers:
            raise KeyError(name)
        if self._buffers[name].shape != np.asarray(arr).shape:
            raise DimensionError(f"buffer {name}: shape {np.asarray(arr).shape} != {self._buffers[name].shape}")
        self._buffers[name] = np.asarray(arr, dtype=np.float64)

    def set_buffer_by_name(self, dotted: str, arr: np.ndarray):
        """Set a buffer through a dotted path as yielded by named_buffers()."""
        mod = self
        parts = dotted.split(".")
        for part in parts[:-1]:
            mod = mod._children[part]
        mod.set_buffer(parts[-1], arr)

    def named_parameters(self, prefix: str = ""):
        for n, p in self._params.items():
            yield prefix + n, p
        for n, c in self._children.items():
            yield from c.named_parameters(prefix + n + ".")

    def named_buffers(self, prefix: str = ""):
        for n in self._buffers:
            yield prefix + n, self._buffers[n]
        for n, c in self._children.items():
            yield from c.named_buffers(prefix + n + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def parameter_count(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def train(self, mode: bool = True):
        object.__setattr__(self, "training", mode)
        for c in self._children.values():
            c.train(mode)
        return self

    def eval(self):
        return self.train(False)


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._list = []
        for m in modules:
            self.append(m)

    def append(self, m: Module):
        self._children[str(len(self._list))] = m
        self._list.append(m)

    def __iter__(self):
        return iter(self._list)

    def __getitem__(self, i):
        return self._list[i]

    def __len__(self):
        return len(self._list)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, kernel: int, stride: int = 1,
                 padding: int = 0, bias: bool = True, gain: float = 1.0,
                 *, rng: np.random.Generator):
        super().__init__()
        self.stride = stride
        self.padding = padding
        self.weight = Parameter(
            scaled_normal(rng, (cout, cin, kernel, kernel), cin * kernel * kernel, gain), "weight")
        self.bias = Parameter(np.zeros(cout), "bias") if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class Linear(Module):
    def __init__(self, fin: int, fout: int, gain: float = 1.0, *, rng: np.random.Generator):
        super().__init__()
        self.weight = Parameter(scaled_normal(rng, (fin, fout), fin, gain), "weight")
        self.bias = Parameter(np.zeros(fout), "bias")

    def __call__(self, x: Tensor) -> Tensor:
        return ad.linear(x, self.weight, self.bias)


class BatchNorm2d(Module):
    """Per-channel batch normalization with running statistics.

    Train mode normalizes by batch moments and updates the running estimates
    (momentum 0.1, unbiased variance); eval mode uses the stored estimates, so
    per-sample outputs are independent of batch composition.
    """

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = Parameter(np.ones(channels), "gamma")
        self.beta = Parameter(np.zeros(channels), "beta")
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))

    def __call__(self, x: Tensor) -> Tensor:
        if x.data.ndim != 4 or x.data.shape[1] != self.channels:
            raise DimensionError(f"batchnorm2d: expected (B,{self.channels},H,W), got {x.data.shape}")
        c = self.channels
        if self.training:
            mu = ad.mean_(x, axis=(0, 2, 3), keepdims=True)
            xc = ad.sub(x, mu)
            var = ad.mean_(ad.square(xc), axis=(0, 2, 3), keepdims=True)
            n = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]
            m = self.momentum
            bvar = var.data.reshape(c)
            unbiased = bvar * (n / (n - 1)) if n > 1 else bvar
            self._buffers["running_mean"] = (1 - m) * self._buffers["running_mean"] + m * mu.data.reshape(c)
            self._buffers["running_var"] = (1 - m) * self._buffers["running_var"] + m * unbiased
            xhat = ad.div(xc, ad.sqrt(ad.add(var, self.eps)))
        else:
            rm = self._buffers["running_mean"].reshape(1, c, 1, 1)
            rv = self._buffers["running_var"].reshape(1, c, 1, 1)
            scale = 1.0 / np.sqrt(rv + self.eps)
            xhat = ad.mul(ad.sub(x, Tensor(rm)), Tensor(scale))
        g = ad.reshape(self.gamma, (1, c, 1, 1))
        b = ad.reshape(self.beta, (1, c, 1, 1))
        return ad.add(ad.mul(xhat, g), b)
