"""2-D rotary position encoding for attention keys.

Channel pair j of a key vector is rotated by theta_j * x_h + theta_j * x_w
where theta_j = 10000^(-2j/C) and (x_h, x_w) are the element's grid
coordinates.  Because both axes share theta_j the angle collapses to
theta_j * (x_h + x_w): attention logits built from these keys depend only on
coordinate-sum differences.  Rotations preserve the norm of every channel
pair exactly.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError


def rotation_angles(coords: np.ndarray, channels: int) -> np.ndarray:
    """Per-element angles, shape (N, channels//2)."""
    if channels % 2:
        raise DimensionError(f"rotary encoding needs an even channel count, got {channels}")
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise DimensionError(f"coords must be (N, 2), got {coords.shape}")
    j = np.arange(channels // 2, dtype=np.float64)
    theta = 10000.0 ** (-2.0 * j / channels)
    return np.outer(coords[:, 0] + coords[:, 1], theta)


def _rotate(x_even, x_odd, cos, sin):
    return x_even * cos - x_odd * sin, x_even * sin + x_odd * cos


def rope_encode(keys, coords) -> Tensor:
    """Rotate a (N, C) key sequence in place-order (even, odd) channel pairs."""
    k = keys if isinstance(keys, Tensor) else Tensor(keys)
    if k.data.ndim != 2:
        raise DimensionError(f"rope_encode expects (N, C), got {k.data.shape}")
    n, c = k.data.shape
    ang = rotation_angles(coords, c)
    if ang.shape[0] != n:
        raise DimensionError(f"coords rows {ang.shape[0]} != sequence length {n}")
    cos, sin = np.cos(ang), np.sin(ang)
    out = np.empty_like(k.data)
    out[:, 0::2], out[:, 1::2] = _rotate(k.data[:, 0::2], k.data[:, 1::2], cos, sin)

    def bwd(g):
        dk = np.empty_like(g)
        # transpose of a rotation is the rotation by the negated angle
        dk[:, 0::2] = g[:, 0::2] * cos + g[:, 1::2] * sin
        dk[:, 1::2] = -g[:, 0::2] * sin + g[:, 1::2] * cos
        ad.accumulate(k, dk)

    return ad.custom_op(out, (k,), bwd)


def rope_encode_map(keys) -> Tensor:
    """Rotate an NCHW key map using each pixel's (row, col) coordinates."""
    k = keys if isinstance(keys, Tensor) else Tensor(keys)
    if k.data.ndim != 4:
        raise DimensionError(f"rope_encode_map expects (B, C, H, W), got {k.data.shape}")
    b, c, h, w = k.data.shape
    if c % 2:
        raise DimensionError(f"rotary encoding needs an even channel count, got {c}")
    j = np.arange(c // 2, dtype=np.float64)
    theta = 10000.0 ** (-2.0 * j / c)
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    ang = theta[:, None, None] * (rows + cols)[None, :, :]  # (C/2, H, W)
    cos, sin = np.cos(ang), np.sin(ang)
    out = np.empty_like(k.data)
    out[:, 0::2], out[:, 1::2] = _rotate(k.data[:, 0::2], k.data[:, 1::2], cos, sin)

    def bwd(g):
        dk = np.empty_like(g)
        dk[:, 0::2] = g[:, 0::2] * cos + g[:, 1::2] * sin
        dk[:, 1::2] = -g[:, 0::2] * sin + g[:, 1::2] * cos
        ad.accumulate(k, dk)

    return ad.custom_op(out, (k,), bwd)
