"""Recurrent spatial/channel mixing and attention-fused stage blocks.

A stage block runs two branches off the same input F:

  recursive branch: spatial mixing (decay-gated WKV over rotary-encoded patch
  keys) followed by channel mixing -> F_C
  dense/spiking branch: SDFE -> Q_A

and fuses them with relative-bias scaled-dot attention (queries from Q_A,
keys/values from F_C), adding the result back onto F as a residual.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import ConfigurationError, DimensionError
from .nn import Conv2d, Module, ModuleList
from .rope import rope_encode_map
from .sdfe import SDFE
from .wkv import wkv_scan


def patch_mean(x: Tensor, patch: int) -> Tensor:
    """(B, C, H, W) -> (B, L, C) per-patch means in raster order."""
    b, c, h, w = x.data.shape
    if h % patch or w % patch:
        raise DimensionError(f"patch {patch} does not tile {h}x{w}")
    hp, wp = h // patch, w // patch
    r = ad.reshape(x, (b, c, hp, patch, wp, patch))
    m = ad.mean_(r, axis=(3, 5))                      # (B, C, hp, wp)
    return ad.transpose(ad.reshape(m, (b, c, hp * wp)), (0, 2, 1))


def patch_broadcast(y: Tensor, patch: int, h: int, w: int) -> Tensor:
    """(B, L, C) -> (B, C, H, W), constant within each patch."""
    b, length, c = y.data.shape
    hp, wp = h // patch, w // patch
    if length != hp * wp:
        raise DimensionError(f"sequence length {length} != patch grid {hp}x{wp}")
    m = ad.reshape(ad.transpose(y, (0, 2, 1)), (b, c, hp, wp))
    return ad.nearest_tile(m, patch)


class SpatialMixing(Module):
    """Decay-conditioned WKV token mixing gated back onto the pixel grid.

    The decay field W = sigmoid(conv1x1(srelu(conv3x3(F)))) is mean-pooled per
    patch ("adaptive" mode) or globally ("static" mode); keys are rotary
    encoded at pixel level before patch pooling; the per-channel bonus u is a
    free parameter mapped through a sigmoid so u in (0,1) always holds.
    """

    def __init__(self, c: int, patch: int, mode: str = "adaptive",
                 raw_keys: bool = False, *, rng: np.random.Generator):
        super().__init__()
        if mode not in ("adaptive", "static"):
            raise ConfigurationError(f"unknown wkv mode {mode!r}")
        self.patch = patch
        self.mode = mode
        self.raw_keys = raw_keys
        self.decay_conv3 = Conv2d(c, c, 3, padding=1, rng=rng)
        self.decay_conv1 = Conv2d(c, c, 1, rng=rng)
        self.key_conv = Conv2d(c, c, 1, rng=rng)
        self.val_conv = Conv2d(c, c, 1, rng=rng)
        self.gate_conv = Conv2d(c, c, 1, rng=rng)
        self.u_raw = Parameter(np.zeros(c), "u_raw")

    def decay_field(self, x: Tensor) -> Tensor:
        return ad.sigmoid(self.decay_conv1(ad.srelu(self.decay_conv3(x))))

    def __call__(self, x: Tensor) -> Tensor:
        b, c, h, w = x.data.shape
        p = min(self.patch, h, w)
        wfield = self.decay_field(x)
        keys = rope_encode_map(self.key_conv(x))
        vals = self.val_conv(x)
        kp = patch_mean(keys, p)
        vp = patch_mean(vals, p)
        length = kp.data.shape[1]
        if self.mode == "adaptive":
            wp = patch_mean(wfield, p)
        else:
            wmean = ad.reshape(ad.mean_(wfield, axis=(2, 3)), (b, 1, c))
            wp = ad.add(wmean, Tensor(np.zeros((1, length, 1))))
        u = ad.sigmoid(self.u_raw)
        y = wkv_scan(kp, vp, wp, u, raw_keys=self.raw_keys)
        ymap = patch_broadcast(y, p, h, w)
        return ad.mul(ad.sigmoid(self.gate_conv(x)), ymap)


class ChannelMixing(Module):
    """sigmoid(conv1x1(F_S)) * srelu(conv3x3(F_S))."""

    def __init__(self, c: int, *, rng: np.random.Generator):
        super().__init__()
        self.gate_conv = Conv2d(c, c, 1, rng=rng)
        self.mix_conv = Conv2d(c, c, 3, padding=1, rng=rng)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.mul(ad.sigmoid(self.gate_conv(x)), ad.srelu(self.mix_conv(x)))


class GuidedAttention(Module):
    """Scaled dot-product attention with a learnable relative position bias.

    Queries come from the dense/spiking branch, keys and values from the
    recursive branch.  The bias table has (2h-1)(2w-1) entries indexed by the
    relative (row, col) offset of each token pair.
    """

    def __init__(self, c: int, h: int, w: int, *, rng: np.random.Generator):
        super().__init__()
        self.c = c
        self.h = h
        self.w = w
        self.q_conv = Conv2d(c, c, 1, rng=rng)
        self.k_conv = Conv2d(c, c, 1, rng=rng)
        # reduced gain so the residual branch starts near identity; squared
        # activations upstream would otherwise compound through the stages
        self.v_conv = Conv2d(c, c, 1, gain=0.25, rng=rng)
        self.bias_table = Parameter(np.zeros((2 * h - 1) * (2 * w - 1)), "bias_table")
        rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        ri, ci = rows.reshape(-1), cols.reshape(-1)
        di = ri[:, None] - ri[None, :] + h - 1
        dj = ci[:, None] - ci[None, :] + w - 1
        self._bias_index = di * (2 * w - 1) + dj  # (n, n) int

    def __call__(self, qa: Tensor, fc: Tensor) -> Tensor:
        b, c, h, w = qa.data.shape
        if (h, w) != (self.h, self.w):
            raise DimensionError(f"guided attention built for {self.h}x{self.w}, got {h}x{w}")
        n = h * w
        def tokens(t):
            return ad.transpose(ad.reshape(t, (b, c, n)), (0, 2, 1))
        q = tokens(self.q_conv(qa))
        k = tokens(self.k_conv(fc))
        v = tokens(self.v_conv(fc))
        logits = ad.mul(ad.matmul(q, ad.swap_last2(k)), 1.0 / np.sqrt(c))
        bias = ad.reshape(ad.gather(self.bias_table, self._bias_index.reshape(-1)), (1, n, n))
        att = ad.softmax(ad.add(logits, bias), axis=-1)
        g = ad.matmul(att, v)
        return ad.reshape(ad.transpose(g, (0, 2, 1)), (b, c, h, w))


class StageBlock(Module):
    def __init__(self, c: int, h: int, w: int, patch: int, wkv_mode: str,
                 raw_keys: bool, reduction: int, spike_steps: int,
                 spike_threshold: float, spike_reset: float, spike_alpha: float,
                 mask_cap: int, *, rng: np.random.Generator):
        super().__init__()
        self.spatial = SpatialMixing(c, patch, wkv_mode, raw_keys, rng=rng)
        self.channel = ChannelMixing(c, rng=rng)
        self.sdfe = SDFE(c, reduction, spike_steps, spike_threshold,
                         spike_reset, spike_alpha, mask_cap, rng=rng)
        self.attn = GuidedAttention(c, h, w, rng=rng)

    def __call__(self, x: Tensor) -> Tensor:
        fs = self.spatial(x)
        fc = self.channel(fs)
        qa = self.sdfe(x)
        g = self.attn(qa, fc)
        return ad.add(x, g)


class Stage(Module):
    """Two residual blocks followed by a stride-2 conv3x3 downsample."""

    def __init__(self, c: int, c_out: int, h: int, w: int, patch: int,
                 wkv_mode: str, raw_keys: bool, reduction: int, spike_steps: int,
                 spike_threshold: float, spike_reset: float, spike_alpha: float,
                 mask_cap: int, *, rng: np.random.Generator):
        super().__init__()
        self.blocks = ModuleList([
            StageBlock(c, h, w, patch, wkv_mode, raw_keys, reduction, spike_steps,
                       spike_threshold, spike_reset, spike_alpha, mask_cap, rng=rng)
            for _ in range(2)
        ])
        self.down = Conv2d(c, c_out, 3, stride=2, padding=1, rng=rng)

    def __call__(self, x: Tensor):
        for blk in self.blocks:
            x = blk(x)
        return x, self.down(x)
