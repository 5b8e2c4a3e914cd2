"""Pgnet fusion network.

Four parts, in order:

1. encoder: 1x1 single-net mapping LR bands to ``endmembers`` abundance channels;
2. PAN-guided upsampling: per stage, bicubic x factor + 1x1 single-net, a PAN
   double-net bringing the PAN to the stage resolution, and a PDIN block; the
   last stage adds a bicubic x r copy of the encoder output;
3. attention: a chain of SABs (PDIN, pixel-wise gate from a single-net,
   output single-net on the residual sum), whose outputs are concatenated,
   fused by a 1x1 single-net and added to the bicubic x r encoder output;
4. decoder: 3x3 single-net to ``decoder_mid_channels`` then 1x1 single-net to bands.

``f_sig``/``f_sig_m`` in the original formulation denote single-nets, not the
logistic function; the gate here is therefore conv + BN + Leaky ReLU.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .errors import ConfigError, DimensionError
from .nn import DoubleNet, Module, ModuleList, SingleNet, param_count
from .pdin import LINE_INITS, Pdin, PdinAblation
from .tensor import LEAKY_SLOPE, Tensor, as_tensor, bicubic_resize, concat

DEFAULT_STAGES = {2: [2], 3: [3], 4: [4], 6: [3, 2], 8: [4, 2], 9: [3, 3], 12: [4, 3], 16: [4, 4]}


def default_stage_factors(ratio: int) -> List[int]:
    if ratio in DEFAULT_STAGES:
        return list(DEFAULT_STAGES[ratio])
    factors, rest = [], ratio
    for f in (4, 3, 2):
        while rest % f == 0:
            factors.append(f)
            rest //= f
    if rest != 1 or len(factors) > 4:
        raise ConfigError(f"ratio {ratio} cannot be split into at most 4 factors from {{2, 3, 4}}")
    return factors


@dataclass
class PgnetConfig:
    bands: int = 128
    endmembers: int = 20
    sab_count: int = 4
    pan_mid_channels: int = 32
    decoder_mid_channels: int = 64
    ratio: int = 16
    stage_factors: Optional[List[int]] = None
    leaky_slope: float = LEAKY_SLOPE
    pdin_init: str = "constant"
    pdin_ablation: PdinAblation = field(default_factory=PdinAblation)
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.pdin_ablation, dict):
            self.pdin_ablation = PdinAblation(**self.pdin_ablation)
        if self.stage_factors is None:
            self.stage_factors = default_stage_factors(self.ratio)
        self.stage_factors = [int(f) for f in self.stage_factors]
        if int(np.prod(self.stage_factors)) != self.ratio:
            raise ConfigError(f"stage factors {self.stage_factors} do not multiply to ratio {self.ratio}")
        if not 1 <= len(self.stage_factors) <= 4 or any(f not in (2, 3, 4) for f in self.stage_factors):
            raise ConfigError(f"need 1-4 stage factors from {{2, 3, 4}}, got {self.stage_factors}")
        if not 1 <= self.endmembers < self.bands:
            raise ConfigError(f"endmembers ({self.endmembers}) must be below bands ({self.bands})")
        if self.sab_count < 0:
            raise ConfigError("sab_count must be >= 0")
        if self.pdin_init not in LINE_INITS:
            raise ConfigError(f"pdin_init must be one of {LINE_INITS}")

    def to_dict(self) -> Dict:
        d = asdict(self)
        d["pdin_ablation"] = self.pdin_ablation.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: Dict) -> "PgnetConfig":
        return cls(**d)


class PanNet(Module):
    """PAN double-net for one stage: strided k=s=d conv then 3x3, or two 3x3 at full resolution."""

    def __init__(self, down: int, mid: int, rng, slope):
        super().__init__()
        self.down = down
        if down == 1:
            first = SingleNet(1, mid, 3, rng, slope=slope)
        else:
            first = SingleNet(1, mid, down, rng, stride=down, padding=0, slope=slope)
        self.net = DoubleNet(first, SingleNet(mid, mid, 3, rng, slope=slope))

    def forward(self, pan: Tensor) -> Tensor:
        return self.net(pan)


class UpsampleStage(Module):
    def __init__(self, factor: int, down: int, cfg: PgnetConfig, rng):
        super().__init__()
        self.factor = factor
        c = cfg.endmembers
        self.up = SingleNet(c, c, 1, rng, slope=cfg.leaky_slope)
        self.pan = PanNet(down, cfg.pan_mid_channels, rng, cfg.leaky_slope)
        self.pdin = Pdin(cfg.pan_mid_channels, rng, cfg.pdin_init, cfg.pdin_ablation, cfg.leaky_slope)

    def upsample(self, abun: Tensor) -> Tensor:
        return self.up(bicubic_resize(abun, self.factor))

    def forward(self, abun: Tensor, pan: Tensor):
        up = self.upsample(abun)
        feat = self.pan(pan)
        if feat.shape[2:] != up.shape[2:]:
            raise DimensionError(f"PAN feature {feat.shape[2:]} != upsampled abundance {up.shape[2:]}")
        return up, feat, self.pdin(up, feat)


class Sab(Module):
    """PDIN, then out = f_out(abun + Y_fea * f_gate(Y_fea))."""

    def __init__(self, cfg: PgnetConfig, rng):
        super().__init__()
        c = cfg.endmembers
        self.pdin = Pdin(cfg.pan_mid_channels, rng, cfg.pdin_init, cfg.pdin_ablation, cfg.leaky_slope)
        self.gate = SingleNet(c, c, 1, rng, slope=cfg.leaky_slope)
        self.out = SingleNet(c, c, 1, rng, slope=cfg.leaky_slope)
        self.use_gate = True
        self.use_out = True

    def forward(self, abun: Tensor, pan_feat: Tensor) -> Tensor:
        fea = self.pdin(abun, pan_feat)
        mid = fea * self.gate(fea) if self.use_gate else fea
        s = abun + mid
        return self.out(s) if self.use_out else s


class Pgnet(Module):
    def __init__(self, cfg: PgnetConfig):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        c, slope = cfg.endmembers, cfg.leaky_slope
        self.encoder = SingleNet(cfg.bands, c, 1, rng, slope=slope)
        self.stages = ModuleList()
        remaining = cfg.ratio
        for f in cfg.stage_factors:
            remaining //= f
            self.stages.append(UpsampleStage(f, remaining, cfg, rng))
        self.sabs = ModuleList(Sab(cfg, rng) for _ in range(cfg.sab_count))
        self.aggregate = SingleNet(max(cfg.sab_count, 1) * c, c, 1, rng, slope=slope)
        self.decoder = DoubleNet(SingleNet(c, cfg.decoder_mid_channels, 3, rng, slope=slope),
                                 SingleNet(cfg.decoder_mid_channels, cfg.bands, 1, rng, slope=slope))
        for name, p in self.named_parameters():
            p.name = name

    # -- parts -----------------------------------------------------------

    def encode(self, lr: Tensor) -> Tensor:
        if lr.ndim != 4 or lr.shape[1] != self.cfg.bands:
            raise DimensionError(f"expected (b, {self.cfg.bands}, h, w) LR input, got {lr.shape}")
        return self.encoder(lr)

    def residual(self, abun0: Tensor) -> Tensor:
        return bicubic_resize(abun0, self.cfg.ratio)

    def upsample_stage(self, abun: Tensor, pan: Tensor, idx: int):
        """Returns (upsampled abundance, stage PAN feature, PDIN output)."""
        return self.stages[idx](abun, pan)

    def sab_forward(self, abun: Tensor, pan_feat: Tensor, idx: int) -> Tensor:
        return self.sabs[idx](abun, pan_feat)

    def aggregate_features(self, sab_outputs: List[Tensor], abun16: Tensor, abun0: Tensor) -> Tensor:
        if len(sab_outputs) != self.cfg.sab_count:
            raise ConfigError(f"expected {self.cfg.sab_count} SAB outputs, got {len(sab_outputs)}")
        cat = concat(sab_outputs, axis=1) if sab_outputs else abun16
        return self.aggregate(cat) + self.residual(abun0)

    def decode(self, abun: Tensor) -> Tensor:
        return self.decoder(abun)

    # -- full pass -------------------------------------------------------

    def forward(self, lr, pan, taps: bool = False):
        lr, pan = as_tensor(lr), as_tensor(pan)
        if pan.ndim == 3:
            pan = pan.reshape(pan.shape[0], 1, *pan.shape[1:])
        if pan.ndim != 4 or pan.shape[1] != 1:
            raise DimensionError(f"PAN must be (b, 1, H, W), got {pan.shape}")
        r = self.cfg.ratio
        if lr.ndim != 4 or pan.shape[2:] != (lr.shape[2] * r, lr.shape[3] * r) or pan.shape[0] != lr.shape[0]:
            raise DimensionError(f"PAN {pan.shape} is not LR {lr.shape} times ratio {r}")
        abun0 = self.encode(lr)
        abun = abun0
        up = feat = None
        for i in range(len(self.stages)):
            up, feat, abun = self.upsample_stage(abun, pan, i)
        abun16 = abun + self.residual(abun0)
        outs = []
        cur = abun16
        for i in range(len(self.sabs)):
            cur = self.sab_forward(cur, feat, i)
            outs.append(cur)
        last = self.aggregate_features(outs, abun16, abun0)
        hr = self.decode(last)
        if taps:
            return hr, {"upsample": up, "pdin": abun, "attention": last, "encoder": abun0}
        return hr

    def param_count(self) -> int:
        return param_count(self)
