"""Plain convolutional baseline, parameter-matched to the recurrent policy.

Four stride-2 conv+srelu blocks with channel widths [m, 2m, 4m, 8m] followed
by a single linear readout.  The width ``m`` is solved so the total parameter
count lands within 10% of a reference policy's count, making sample-efficiency
comparisons capacity-fair.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, DimensionError
from .nn import Conv2d, Linear, Module, ModuleList


@dataclass
class CNNConfig:
    height: int = 64
    width: int = 64
    in_channels: int = 3
    base_channels: int = 95
    action_dim: int = 6

    def validate(self):
        if self.height % 16 or self.width % 16:
            raise ConfigurationError(
                f"input {self.height}x{self.width} must be divisible by 16 "
                "(four stride-2 convolutions)")
        if self.base_channels < 1 or self.action_dim < 1:
            raise ConfigurationError("base_channels and action_dim must be >= 1")
        return self

    def channel_widths(self) -> list[int]:
        m = self.base_channels
        return [m, 2 * m, 4 * m, 8 * m]

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "CNNConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ConfigurationError(f"unknown config keys: {sorted(extra)}")
        return cls(**d).validate()

    def digest(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_json(), sort_keys=True).encode()
        ).hexdigest()


def cnn_parameter_count(config: CNNConfig) -> int:
    """Closed-form parameter count (weights + biases) for a given width."""
    widths = config.channel_widths()
    cin = config.in_channels
    total = 0
    for w in widths:
        total += cin * w * 9 + w
        cin = w
    fc_in = widths[-1] * (config.height // 16) * (config.width // 16)
    total += fc_in * config.action_dim + config.action_dim
    return total


def matched_width(target_params: int, height: int = 64, width: int = 64,
                  in_channels: int = 3, action_dim: int = 6) -> int:
    """Smallest-error integer width whose count is within 10% of the target."""
    best_m, best_err = 1, float("inf")
    for m in range(1, 2048):
        cfg = CNNConfig(height=height, width=width, in_channels=in_channels,
                        base_channels=m, action_dim=action_dim)
        err = abs(cnn_parameter_count(cfg) - target_params)
        if err < best_err:
            best_m, best_err = m, err
        elif cnn_parameter_count(cfg) > 1.5 * target_params:
            break
    if best_err > 0.10 * target_params:
        raise ConfigurationError(
            f"no baseline width matches {target_params} parameters within 10% "
            f"(closest: width {best_m}, off by {best_err})")
    return best_m


class CNNBaseline(Module):
    model_kind = "cnn"

    def __init__(self, config: CNNConfig, seed: int = 0):
        super().__init__()
        config.validate()
        self.config = config
        rng = np.random.default_rng(seed)
        convs = []
        cin = config.in_channels
        for w in config.channel_widths():
            convs.append(Conv2d(cin, w, 3, stride=2, padding=1, rng=rng))
            cin = w
        self.convs = ModuleList(convs)
        self.fc_in = cin * (config.height // 16) * (config.width // 16)
        self.fc = Linear(self.fc_in, config.action_dim, rng=rng)

    @classmethod
    def matched_to(cls, reference, seed: int = 0) -> "CNNBaseline":
        """Build a baseline whose parameter count is within 10% of ``reference``'s."""
        target = reference.parameter_count()
        cfg = reference.config
        m = matched_width(target, cfg.height, cfg.width, cfg.in_channels,
                          cfg.action_dim)
        model = cls(CNNConfig(height=cfg.height, width=cfg.width,
                              in_channels=cfg.in_channels, base_channels=m,
                              action_dim=cfg.action_dim), seed=seed)
        actual = model.parameter_count()
        if abs(actual - target) > 0.10 * target:
            raise ConfigurationError(
                f"no baseline width matches {target} parameters within 10% "
                f"(closest: width {m} with {actual})")
        return model

    def forward(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        cfg = self.config
        if x.data.ndim != 4 or x.data.shape[1:] != (cfg.in_channels, cfg.height, cfg.width):
            raise DimensionError(
                f"forward expects (B, {cfg.in_channels}, {cfg.height}, {cfg.width}), "
                f"got {x.data.shape}")
        h = x
        for conv in self.convs:
            h = ad.srelu(conv(h))
        flat = ad.reshape(h, (h.data.shape[0], -1))
        return self.fc(flat)

    __call__ = forward
