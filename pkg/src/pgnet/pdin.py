"""PAN detail injection block.

Two trainable lines in the (abundance STD, PAN intensity) plane split
pixels into an accepted band and outliers above/below it. Outliers get a
moving weight q > 1 via hinge + sigmoid; q then scales a PAN-learned
multiplicative map P1 and additive map P2:

    X_e = q * P1 * X + q * P2 (+ X)

Since P1, q and P2 are single-channel maps broadcast over the abundance
channels, q * P1 rescales each pixel's channel STD and q * P2 leaves it
unchanged.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .nn import Conv2d, ConvAct, Module
from .tensor import LEAKY_SLOPE, Parameter, Tensor, channel_std, conv2d, relu, sigmoid

LINE_INITS = ("constant", "normal", "uniform")


@dataclass
class PdinAblation:
    use_q: bool = True
    use_pan_weights: bool = True
    use_bias: bool = True
    use_residual: bool = True

    @classmethod
    def identity(cls) -> "PdinAblation":
        return cls(False, False, False, False)

    def to_dict(self):
        return asdict(self)


def line_init(method: str, rng: np.random.Generator):
    """Initial (k1, b1, k2, b2)."""
    if method == "constant":
        return 1.0, 0.3, -1.0, 0.3
    if method == "normal":
        return tuple(float(v) for v in rng.normal(0.0, 1.0, 4))
    if method == "uniform":
        return tuple(float(v) for v in rng.uniform(-1.0, 1.0, 4))
    raise ConfigError(f"unknown line init {method!r}; choose from {LINE_INITS}")


def moving_weight(y: Tensor, astd: Tensor, k1: Tensor, b1: Tensor, k2: Tensor, b2: Tensor) -> Tensor:
    """q = sigmoid(relu(y - upper)) + sigmoid(relu(lower - y)); equals 1 between the lines."""
    upper = k1 * astd + b1
    lower = k2 * astd + b2
    return sigmoid(relu(y - upper)) + sigmoid(relu(lower - y))


class Pdin(Module):
    """Injection block fed by an abundance map and a k-channel PAN feature."""

    def __init__(self, pan_channels: int, rng: np.random.Generator, init: str = "constant",
                 ablation: PdinAblation = None, slope: float = LEAKY_SLOPE):
        super().__init__()
        self.ablation = ablation or PdinAblation()
        k1, b1, k2, b2 = line_init(init, rng)
        self.k1 = Parameter(np.array([k1], dtype=np.float32))
        self.b1 = Parameter(np.array([b1], dtype=np.float32))
        self.k2 = Parameter(np.array([k2], dtype=np.float32))
        self.b2 = Parameter(np.array([b2], dtype=np.float32))
        # intensity y: 1x1 projection starting at the channel average
        self.w_y = Conv2d(pan_channels, 1, 1, rng)
        self.w_y.weight.data[...] = 1.0 / pan_channels
        # P1 starts at 1 and P2 at 0, so the block starts near identity
        self.p1 = ConvAct(pan_channels, 1, 3, rng, slope)
        self.p1.conv.weight.data[...] = 0.0
        self.p1.conv.bias.data[...] = 1.0
        self.p2 = ConvAct(pan_channels, 1, 3, rng, slope)
        self.p2.conv.weight.data[...] = 0.0
        self.p2.conv.bias.data[...] = 0.0

    def lines(self):
        return self.k1, self.b1, self.k2, self.b2

    def intensity(self, pan_feat: Tensor) -> Tensor:
        return self.w_y(pan_feat)

    def weight(self, abun: Tensor, pan_feat: Tensor) -> Tensor:
        return moving_weight(self.intensity(pan_feat), channel_std(abun), *self.lines())

    def forward(self, abun: Tensor, pan_feat: Tensor) -> Tensor:
        if abun.ndim != 4 or pan_feat.ndim != 4 or abun.shape[2:] != pan_feat.shape[2:] \
                or abun.shape[0] != pan_feat.shape[0]:
            raise DimensionError(f"abundance {abun.shape} and PAN feature {pan_feat.shape} do not align")
        abl = self.ablation
        q = self.weight(abun, pan_feat) if abl.use_q else None
        p1 = self.p1(pan_feat) if abl.use_pan_weights else None

        out = abun
        if p1 is not None:
            out = out * p1
        if q is not None:
            out = out * q
        if abl.use_bias and abl.use_pan_weights:
            bias = self.p2(pan_feat)
            out = out + (bias * q if q is not None else bias)
        if abl.use_residual:
            out = out + abun
        return out
