"""Full visuomotor policy: stem, three mixing stages, multi-scale fusion,
linear action head, and the MSE objective.

Resolution schedule for an H x W input (H, W divisible by 32):

  stem   conv3x3/2 + bn + srelu + maxpool2   -> H/4,  C
  stage1 two blocks @ C   + conv3x3/2        -> H/8,  2C   (tap F1)
  stage2 two blocks @ 2C  + conv3x3/2        -> H/16, 4C   (tap F2)
  stage3 two blocks @ 4C  + conv3x3/2        -> H/32, 4C   (tap F3)
  fusion alpha1*proj(F1) + alpha2*proj(up2(F2)) + alpha3*up4(F3) at H/8
  head   conv3x3 -> flatten -> linear -> action vector
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .blocks import Stage
from .errors import ConfigurationError, DimensionError
from .nn import BatchNorm2d, Conv2d, Linear, Module, ModuleList


@dataclass
class PolicyConfig:
    height: int = 64
    width: int = 64
    in_channels: int = 3
    base_channels: int = 32
    reduction: int = 4
    patch: int = 4
    spike_steps: int = 4
    action_dim: int = 6
    wkv_mode: str = "adaptive"
    raw_keys: bool = False
    spike_threshold: float = 1.0
    spike_reset: float = 0.0
    spike_alpha: float = 4.0
    mask_cap: int = 1024

    def validate(self):
        if self.height % 32 or self.width % 32:
            raise ConfigurationError(
                f"input {self.height}x{self.width} must be divisible by 32 "
                "(stem /4 then three /2 downsamples)")
        if self.base_channels % 2:
            raise ConfigurationError("base_channels must be even for rotary pairs")
        for c in self.stage_channels():
            if c % self.reduction:
                raise ConfigurationError(
                    f"stage channels {c} not divisible by reduction {self.reduction}")
        if self.wkv_mode not in ("adaptive", "static"):
            raise ConfigurationError(f"unknown wkv_mode {self.wkv_mode!r}")
        if self.patch < 1 or self.spike_steps < 1 or self.action_dim < 1:
            raise ConfigurationError("patch, spike_steps and action_dim must be >= 1")
        return self

    def stage_channels(self) -> list[int]:
        c = self.base_channels
        return [c, 2 * c, 4 * c]

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "PolicyConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ConfigurationError(f"unknown config keys: {sorted(extra)}")
        return cls(**d).validate()

    def digest(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_json(), sort_keys=True).encode()
        ).hexdigest()


class PolicyNet(Module):
    model_kind = "rasnet"

    def __init__(self, config: PolicyConfig, seed: int = 0):
        super().__init__()
        config.validate()
        self.config = config
        rng = np.random.default_rng(seed)
        c = config.base_channels
        chans = config.stage_channels()          # [C, 2C, 4C]
        down_out = [chans[1], chans[2], chans[2]]  # last downsample keeps 4C
        h0, w0 = config.height // 4, config.width // 4

        self.stem_conv = Conv2d(config.in_channels, c, 3, stride=2, padding=1, rng=rng)
        self.stem_bn = BatchNorm2d(c)
        stages = []
        h, w = h0, w0
        for i, (ci, co) in enumerate(zip(chans, down_out)):
            stages.append(Stage(ci, co, h, w, config.patch, config.wkv_mode,
                                config.raw_keys, config.reduction, config.spike_steps,
                                config.spike_threshold, config.spike_reset,
                                config.spike_alpha, config.mask_cap, rng=rng))
            h, w = h // 2, w // 2
        self.stages = ModuleList(stages)
        cf = chans[2]
        self.fuse_proj1 = Conv2d(down_out[0], cf, 1, rng=rng)
        self.fuse_proj2 = Conv2d(down_out[1], cf, 1, rng=rng)
        self.fuse_alpha = Parameter(np.full(3, 1.0 / 3.0), "fuse_alpha")
        self.head_conv = Conv2d(cf, c, 3, padding=1, rng=rng)
        hf, wf = config.height // 8, config.width // 8
        self.head_fc = Linear(c * hf * wf, config.action_dim, rng=rng)

    def set_spike_mode(self, mode: str):
        """'binary' (default) or 'smooth' for finite-difference checks."""
        for st in self.stages:
            for blk in st.blocks:
                blk.sdfe.spike_mode = mode

    def stem(self, x: Tensor) -> Tensor:
        return ad.maxpool2d(ad.srelu(self.stem_bn(self.stem_conv(x))), 2, 2)

    def fuse(self, f1: Tensor, f2: Tensor, f3: Tensor) -> Tensor:
        a1 = ad.index_axis(self.fuse_alpha, 0, 0)
        a2 = ad.index_axis(self.fuse_alpha, 1, 0)
        a3 = ad.index_axis(self.fuse_alpha, 2, 0)
        t1 = ad.mul(self.fuse_proj1(f1), a1)
        t2 = ad.mul(self.fuse_proj2(ad.upsample_bilinear(f2, 2)), a2)
        t3 = ad.mul(ad.upsample_bilinear(f3, 4), a3)
        shapes = {t.data.shape[2:] for t in (t1, t2, t3)}
        if len(shapes) != 1:
            raise DimensionError(
                f"fusion taps disagree on resolution after upsampling: {shapes}")
        return ad.add(ad.add(t1, t2), t3)

    def forward(self, x) -> Tensor:
        """Images (B, C, H, W) in [0, 1] -> actions (B, action_dim)."""
        x = x if isinstance(x, Tensor) else Tensor(x)
        cfg = self.config
        if x.data.ndim != 4 or x.data.shape[1:] != (cfg.in_channels, cfg.height, cfg.width):
            raise DimensionError(
                f"forward expects (B, {cfg.in_channels}, {cfg.height}, {cfg.width}), "
                f"got {x.data.shape}")
        f = self.stem(x)
        taps = []
        for st in self.stages:
            _, f = st(f)
            taps.append(f)
        ff = self.fuse(*taps)
        h = self.head_conv(ff)
        flat = ad.reshape(h, (h.data.shape[0], -1))
        return self.head_fc(flat)

    __call__ = forward


def mse_loss(pred: Tensor, target) -> Tensor:
    t = target if isinstance(target, Tensor) else Tensor(target)
    if pred.data.shape != t.data.shape:
        raise DimensionError(f"loss shapes differ: {pred.data.shape} vs {t.data.shape}")
    return ad.mean_(ad.square(ad.sub(pred, t)))
