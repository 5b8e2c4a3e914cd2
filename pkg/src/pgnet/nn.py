"""Minimal module system: parameter registry, conv/BN layers and the
single-net / double-net building blocks."""

from __future__ import annotations

from collections import OrderedDict
from typing import Dict, Iterator, Optional, Tuple

import numpy as np

from .errors import FormatError
from .tensor import (BN_MOMENTUM, LEAKY_SLOPE, Parameter, Tensor, batch_norm, conv2d,
                     leaky_relu)


class Module:
    """Registers Parameters, child Modules and buffers in assignment order."""

    def __init__(self):
        object.__setattr__(self, "_params", OrderedDict())
        object.__setattr__(self, "_modules", OrderedDict())
        object.__setattr__(self, "_buffers", OrderedDict())
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(f"{prefix}{name}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name, b in self._buffers.items():
            yield prefix + name, b
        for name, m in self._modules.items():
            yield from m.named_buffers(f"{prefix}{name}.")

    def modules(self) -> Iterator["Module"]:
        yield self
        for m in self._modules.values():
            yield from m.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            object.__setattr__(m, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        out = OrderedDict()
        for name, p in self.named_parameters():
            out[name] = p.data
        for name, b in self.named_buffers():
            out[name] = b
        return out

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        own = self.state_dict()
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise FormatError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, arr in own.items():
            src = np.asarray(state[name])
            if src.shape != arr.shape:
                raise FormatError(f"{name}: shape {src.shape} != expected {arr.shape}")
            arr[...] = src

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList(Module):
    def __init__(self, items=()):
        super().__init__()
        self._n = 0
        for m in items:
            self.append(m)

    def append(self, m: Module) -> None:
        setattr(self, str(self._n), m)
        self._n += 1

    def __getitem__(self, i: int) -> Module:
        return self._modules[str(range(self._n)[i])]

    def __len__(self):
        return self._n

    def __iter__(self):
        return iter(self._modules.values())


def he_normal(rng: np.random.Generator, shape, slope: float = LEAKY_SLOPE) -> np.ndarray:
    fan_in = int(np.prod(shape[1:]))
    std = np.sqrt(2.0 / ((1 + slope ** 2) * fan_in))
    return rng.normal(0.0, std, size=shape).astype(np.float32)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: Optional[int] = None):
        super().__init__()
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        self.weight = Parameter(he_normal(rng, (c_out, c_in, kernel, kernel)))
        self.bias = Parameter(np.zeros(c_out, dtype=np.float32))

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = BN_MOMENTUM):
        super().__init__()
        self.momentum = momentum
        self.weight = Parameter(np.ones(channels, dtype=np.float32))
        self.bias = Parameter(np.zeros(channels, dtype=np.float32))
        self.register_buffer("running_mean", np.zeros(channels, dtype=np.float32))
        self.register_buffer("running_var", np.ones(channels, dtype=np.float32))

    def forward(self, x: Tensor) -> Tensor:
        return batch_norm(x, self.weight, self.bias, self.running_mean, self.running_var,
                          self.training, self.momentum)


class SingleNet(Module):
    """conv -> batch norm -> Leaky ReLU."""

    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: Optional[int] = None, slope: float = LEAKY_SLOPE):
        super().__init__()
        self.slope = slope
        self.conv = Conv2d(c_in, c_out, kernel, rng, stride, padding)
        self.bn = BatchNorm2d(c_out)

    def forward(self, x: Tensor) -> Tensor:
        return leaky_relu(self.bn(self.conv(x)), self.slope)


class DoubleNet(Module):
    """Two cascaded single-nets."""

    def __init__(self, first: SingleNet, second: SingleNet):
        super().__init__()
        self.first = first
        self.second = second

    def forward(self, x: Tensor) -> Tensor:
        return self.second(self.first(x))


class ConvAct(Module):
    """conv -> Leaky ReLU, without normalization."""

    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 slope: float = LEAKY_SLOPE):
        super().__init__()
        self.slope = slope
        self.conv = Conv2d(c_in, c_out, kernel, rng)

    def forward(self, x: Tensor) -> Tensor:
        return leaky_relu(self.conv(x), self.slope)


def param_count(module: Module) -> int:
    return sum(p.data.size for p in module.parameters())
