"""Dense feature extraction with covariance-style spatial masking and a
leaky integrate-and-fire branch.

Pipeline per feature map F (B, c, h, w):

  dense block   -> F_k (B, 4c, h, w): two conv3x3+bn+srelu layers, each
                   adding c channels to a growing concatenation, then a 1x1
                   conv to exactly 4c channels
  B_k, D_k      -> 1x1 convs to c/r channels
  spatial mask  -> X_k = B I_bar B^T with I_bar = (1/n)(I - (1/n) * ones),
                   I_bar of size (c/r, c/r), n = h*w a scalar
  attend        -> U_k = row-softmax(X_k) @ D_k
  spike branch  -> rate-coded T-step leaky integrate-and-fire over a 1x1 conv
                   drive, readout mean_t(S_t * V_t), time constant from the
                   adaptive tau head
  output        -> Q_A = conv1x1(U_k reshaped) + spike readout, with the same
                   channel count c as the input so downstream attention can
                   consume it

Grids larger than `mask_cap` tokens are average-pooled before the mask and
the attended map is upsampled back afterwards.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import ConfigurationError, DimensionError
from .nn import BatchNorm2d, Conv2d, Module

SPIKE_ALPHA = 4.0
MASK_CAP = 1024


def centering_matrix(c: int, n: int) -> np.ndarray:
    """I_bar = (1/n) (I_c - (1/n) ones(c, c))."""
    return (np.eye(c) - np.ones((c, c)) / n) / n


def spatial_mask(b_map, n: int | None = None) -> Tensor:
    """X_k for a (B, c', h, w) map (or (B, n, c') token matrix).

    X_k is symmetric positive-semidefinite up to the sign of I_bar's spectrum;
    symmetry X_k = X_k^T holds exactly by construction.
    """
    b = b_map if isinstance(b_map, Tensor) else Tensor(b_map)
    if b.data.ndim == 4:
        bb, cp, h, w = b.data.shape
        tokens = ad.transpose(ad.reshape(b, (bb, cp, h * w)), (0, 2, 1))
        n = h * w
    elif b.data.ndim == 3:
        if n is None:
            n = b.data.shape[1]
        tokens = b
    else:
        raise DimensionError(f"spatial_mask expects (B,c',h,w) or (B,n,c'), got {b.data.shape}")
    cp = tokens.data.shape[2]
    ibar = Tensor(centering_matrix(cp, n))
    return ad.matmul(ad.matmul(tokens, ibar), ad.swap_last2(tokens))


def attend(x_mask, d_tokens) -> Tensor:
    """Row-softmax of X_k applied to D_k: U_k = softmax(X_k) @ D_k."""
    x = x_mask if isinstance(x_mask, Tensor) else Tensor(x_mask)
    d = d_tokens if isinstance(d_tokens, Tensor) else Tensor(d_tokens)
    if x.data.shape[-1] != d.data.shape[-2]:
        raise DimensionError(f"attend: X {x.data.shape} does not align with D {d.data.shape}")
    return ad.matmul(ad.softmax(x, axis=-1), d)


def spike_fn(v_minus_th, alpha: float = SPIKE_ALPHA, mode: str = "binary") -> Tensor:
    """Heaviside spike with sigmoid surrogate gradient.

    Forward: S = 1 for V - u_th >= 0 ("binary") or the smoothed
    sigmoid(alpha * (V - u_th)) ("smooth", used by finite-difference checks).
    Backward (both modes): dS/dV = alpha * sigmoid'(alpha * (V - u_th)).
    """
    t = v_minus_th if isinstance(v_minus_th, Tensor) else Tensor(v_minus_th)
    x = alpha * t.data
    sig = np.empty_like(x)
    pos = x >= 0
    sig[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    sig[~pos] = ex / (1.0 + ex)
    if mode == "binary":
        out = (t.data >= 0.0).astype(np.float64)
    elif mode == "smooth":
        out = sig
    else:
        raise ConfigurationError(f"unknown spike mode {mode!r}")

    def bwd(g):
        ad.accumulate(t, g * (alpha * sig * (1.0 - sig)))

    return ad.custom_op(out, (t,), bwd)


def spike_neuron_step(h_prev, x_t, tau, u_th: float = 1.0, v_reset: float = 0.0,
                      dt: float = 1.0, alpha: float = SPIKE_ALPHA,
                      mode: str = "binary"):
    """One leaky integrate-and-fire step.

    V_t = H_{t-1} + X_t
    S_t = Theta(V_t - u_th)          (Theta(x) = 1 for x >= 0)
    H_t = V_t * exp(-dt/tau) * (1 - S_t) + V_reset * S_t

    Returns (S_t, H_t, V_t).  tau must be positive: scalar, or a (B,) tensor
    broadcast over a 4-D state.
    """
    h = h_prev if isinstance(h_prev, Tensor) else Tensor(h_prev)
    x = x_t if isinstance(x_t, Tensor) else Tensor(x_t)
    if h.data.shape != x.data.shape:
        raise DimensionError(f"spike state {h.data.shape} vs drive {x.data.shape}")
    if not isinstance(tau, Tensor):
        tau = Tensor(np.asarray(tau, dtype=np.float64))
    if np.any(tau.data <= 0.0):
        raise ConfigurationError("spike neuron requires tau > 0")
    if tau.data.ndim == 1 and x.data.ndim == 4:
        tau = ad.reshape(tau, (tau.data.shape[0], 1, 1, 1))
    v = ad.add(h, x)
    s = spike_fn(ad.sub(v, u_th), alpha=alpha, mode=mode)
    decay = ad.exp(ad.neg(ad.div(dt, tau)))
    h_next = ad.mul(ad.mul(v, decay), ad.sub(1.0, s))
    if v_reset != 0.0:
        h_next = ad.add(h_next, ad.mul(s, v_reset))
    return s, h_next, v


class DenseBlock(Module):
    """Two densely concatenated conv+bn+srelu layers, projected to 4c."""

    def __init__(self, c: int, *, rng: np.random.Generator):
        super().__init__()
        self.conv1 = Conv2d(c, c, 3, padding=1, rng=rng)
        self.bn1 = BatchNorm2d(c)
        self.conv2 = Conv2d(2 * c, c, 3, padding=1, rng=rng)
        self.bn2 = BatchNorm2d(c)
        self.proj = Conv2d(3 * c, 4 * c, 1, rng=rng)

    def __call__(self, x: Tensor) -> Tensor:
        y1 = ad.srelu(self.bn1(self.conv1(x)))
        y2 = ad.srelu(self.bn2(self.conv2(ad.concat([x, y1], axis=1))))
        return self.proj(ad.concat([x, y1, y2], axis=1))


class AdaptiveTau(Module):
    """tau = softplus(mean_channels(conv1x1(pool(conv1x1(F_k))))) + 0.1.

    The inner reshape is realized as a global average pool to a 1x1 map, so
    both 1x1 convs act on channel vectors.  With zero weights this yields
    softplus(0) + 0.1 = ln 2 + 0.1.
    """

    def __init__(self, cin: int, hidden: int, *, rng: np.random.Generator):
        super().__init__()
        self.conv1 = Conv2d(cin, hidden, 1, rng=rng)
        self.conv2 = Conv2d(hidden, hidden, 1, rng=rng)

    def __call__(self, fk: Tensor) -> Tensor:
        z = ad.mean_(self.conv1(fk), axis=(2, 3), keepdims=True)
        z = self.conv2(z)
        raw = ad.mean_(z, axis=(1, 2, 3))  # (B,)
        return ad.add(ad.softplus(raw), 0.1)


class SDFE(Module):
    """Dense + masked-attention + spiking feature extractor."""

    def __init__(self, c: int, reduction: int = 4, spike_steps: int = 4,
                 u_th: float = 1.0, v_reset: float = 0.0, alpha: float = SPIKE_ALPHA,
                 mask_cap: int = MASK_CAP, *, rng: np.random.Generator):
        super().__init__()
        if c % reduction:
            raise ConfigurationError(f"channels {c} not divisible by reduction {reduction}")
        if spike_steps < 1:
            raise ConfigurationError("spike_steps must be >= 1")
        cp = c // reduction
        self.c = c
        self.cp = cp
        self.spike_steps = spike_steps
        self.u_th = u_th
        self.v_reset = v_reset
        self.alpha = alpha
        self.mask_cap = mask_cap
        self.spike_mode = "binary"
        self.dense = DenseBlock(c, rng=rng)
        self.b_conv = Conv2d(4 * c, cp, 1, rng=rng)
        self.d_conv = Conv2d(4 * c, cp, 1, rng=rng)
        self.u_proj = Conv2d(cp, c, 1, rng=rng)
        self.drive = Conv2d(4 * c, c, 1, rng=rng)
        self.tau_head = AdaptiveTau(4 * c, cp, rng=rng)

    def _pool_factor(self, h: int, w: int) -> int:
        f = 1
        while h * w // (f * f) > self.mask_cap:
            f *= 2
            if h % f or w % f:
                raise ConfigurationError(
                    f"grid {h}x{w} exceeds mask cap {self.mask_cap} and is not divisible by {f}")
        return f

    def _spike_readout(self, fk: Tensor) -> Tensor:
        tau = self.tau_head(fk)
        xd = self.drive(fk)
        h = Tensor(np.zeros_like(xd.data))
        acc = None
        for _ in range(self.spike_steps):
            s, h, v = spike_neuron_step(h, xd, tau, u_th=self.u_th,
                                        v_reset=self.v_reset, alpha=self.alpha,
                                        mode=self.spike_mode)
            term = ad.mul(s, v)
            acc = term if acc is None else ad.add(acc, term)
        return ad.mul(acc, 1.0 / self.spike_steps)

    def __call__(self, x: Tensor) -> Tensor:
        b, c, h, w = x.data.shape
        fk = self.dense(x)
        bm = self.b_conv(fk)
        dm = self.d_conv(fk)
        f = self._pool_factor(h, w)
        if f > 1:
            def pool(t):
                bb, cc, hh, ww = t.data.shape
                r = ad.reshape(t, (bb, cc, hh // f, f, ww // f, f))
                return ad.mean_(r, axis=(3, 5))
            bm, dm = pool(bm), pool(dm)
        hp, wp = h // f, w // f
        xk = spatial_mask(bm)
        d_tokens = ad.transpose(ad.reshape(dm, (b, self.cp, hp * wp)), (0, 2, 1))
        u = attend(xk, d_tokens)
        umap = ad.reshape(ad.transpose(u, (0, 2, 1)), (b, self.cp, hp, wp))
        if f > 1:
            umap = ad.upsample_bilinear(umap, f)
        return ad.add(self.u_proj(umap), self._spike_readout(fk))
