"""Linear-attention WKV recurrence over a patch sequence.

For per-patch keys k_i, values v_i, decay W_i and bonus parameter u
(elementwise over channels, u in (0,1)):

    n_0 = k_0 * v_0,  d_0 = k_0
    n_i = n_{i-1} * exp(-W_i) + k_i * v_i
    d_i = d_{i-1} * exp(-W_i) + k_i
    WKV_i = (n_i + exp(u) * k_i * v_i) / (d_i + exp(u) * k_i)

The current patch therefore enters twice at step i: once through the running
state and once through the bonus term.  WKV_0 reduces to v_0 exactly.  The
scan runs in raster order and O(L) time; the O(L^2) closed form used by the
tests is

    n_i = sum_{j<=i} (prod_{m=j+1..i} exp(-W_m)) * k_j * v_j.

Keys are stabilized as softplus(k) + 1e-3 by default so every denominator is
positive; `raw_keys=True` bypasses this for literal-recurrence tests on
controlled inputs, with the denominator guard then enforced explicitly.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError, NumericError

EPS_DIV = 1e-6
KEY_FLOOR = 1e-3


def wkv_scan(keys, values, decay, u, *, raw_keys: bool = False,
             eps_div: float = EPS_DIV) -> Tensor:
    """Run the recurrence; inputs (L, C) or (B, L, C), u of shape (C,)."""
    k = keys if isinstance(keys, Tensor) else Tensor(keys)
    v = values if isinstance(values, Tensor) else Tensor(values)
    w = decay if isinstance(decay, Tensor) else Tensor(decay)
    u = u if isinstance(u, Tensor) else Tensor(u)

    squeeze = k.data.ndim == 2
    if squeeze:
        k, v, w = (ad.reshape(t, (1,) + t.data.shape) for t in (k, v, w))
    if k.data.ndim != 3:
        raise DimensionError(f"wkv_scan expects (L, C) or (B, L, C), got {keys.shape}")
    if not (k.data.shape == v.data.shape == w.data.shape):
        raise DimensionError(
            f"wkv_scan shape mismatch: k {k.data.shape}, v {v.data.shape}, w {w.data.shape}")
    b, length, c = k.data.shape
    if u.data.shape != (c,):
        raise DimensionError(f"u must have shape ({c},), got {u.data.shape}")
    if np.any(u.data <= 0.0) or np.any(u.data >= 1.0):
        raise NumericError("wkv bonus parameter u must lie in (0, 1) elementwise")

    if not raw_keys:
        k = ad.add(ad.softplus(k), KEY_FLOOR)
    bonus = ad.exp(u)  # (C,) broadcasts over (B, C)

    n = None
    d = None
    ys = []
    for i in range(length):
        ki = ad.index_axis(k, i, 1)
        vi = ad.index_axis(v, i, 1)
        kv = ad.mul(ki, vi)
        if i == 0:
            n, d = kv, ki
        else:
            e = ad.exp(ad.neg(ad.index_axis(w, i, 1)))
            n = ad.add(ad.mul(n, e), kv)
            d = ad.add(ad.mul(d, e), ki)
        den = ad.add(d, ad.mul(bonus, ki))
        min_den = np.abs(den.data).min()
        if min_den < eps_div:
            raise NumericError(
                f"wkv denominator magnitude {min_den:.3e} below {eps_div:.1e} at patch index {i}")
        num = ad.add(n, ad.mul(bonus, kv))
        ys.append(ad.reshape(ad.div(num, den), (b, 1, c)))
    out = ys[0] if length == 1 else ad.concat(ys, axis=1)
    if squeeze:
        out = ad.reshape(out, (length, c))
    return out
