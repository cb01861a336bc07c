"""Dense float64 tensors with reverse-mode automatic differentiation.

A `Tape` records primitive operations as they execute; `Tape.backward` replays
the record in reverse and accumulates gradients into every `Parameter` that was
touched, exactly once per call (repeated calls accumulate explicitly, clear
with `Parameter.zero_grad`).  Outside an active tape the same functions run as
plain numpy and build no graph, which is the inference path.

All arithmetic is float64.  Finiteness policy: operations that can manufacture
non-finite values from finite inputs (div, exp, log, sqrt) check their outputs
and raise NumericError; pure sums/products of finite desk-scale values cannot
overflow and are left unchecked for speed.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, NumericError

_ACTIVE_TAPES: list["Tape"] = []


def _current_tape():
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


class Tensor:
    """Immutable-by-convention float64 array node.

    `requires` marks the node as needing a gradient; it is set for Parameters
    and propagates through operations while a tape is active.
    """

    __slots__ = ("data", "requires", "_bwd", "tgrad")

    def __init__(self, data, requires: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires = requires
        self._bwd = None
        self.tgrad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires={self.requires})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """Trainable leaf with a persistent gradient buffer and a stable name."""

    __slots__ = ("name", "grad")

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires=True)
        self.name = name
        self.grad = None

    def zero_grad(self):
        self.grad = None

    def assign(self, data):
        """Explicit in-place value replacement (optimizer updates, loading)."""
        arr = np.asarray(data, dtype=np.float64)
        if arr.shape != self.data.shape:
            raise DimensionError(
                f"assign to {self.name or 'parameter'}: shape {arr.shape} != {self.data.shape}"
            )
        self.data = arr

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


class Tape:
    """Ordered record of executed primitives, replayed in reverse for grads."""

    def __init__(self):
        self._nodes: list[Tensor] = []
        self._leaves: list[Parameter] = []
        self._leaf_ids: set[int] = set()

    def __enter__(self):
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE_TAPES.pop()
        return False

    def _record(self, out: Tensor, bwd):
        out._bwd = bwd
        self._nodes.append(out)

    def _touch_leaf(self, t: Tensor):
        if isinstance(t, Parameter) and id(t) not in self._leaf_ids:
            self._leaf_ids.add(id(t))
            self._leaves.append(t)

    def backward(self, loss: Tensor):
        """Accumulate d(loss)/d(param) into .grad for every touched Parameter."""
        if loss.data.shape != ():
            raise DimensionError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        loss.tgrad = np.ones((), dtype=np.float64)
        for node in reversed(self._nodes):
            g = node.tgrad
            if g is None:
                continue
            if node._bwd is not None:
                node._bwd(g)
            node.tgrad = None
        for p in self._leaves:
            if p.tgrad is not None:
                if p.grad is None:
                    p.grad = np.zeros_like(p.data)
                p.grad = p.grad + p.tgrad
                p.tgrad = None


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _accum(t: Tensor, g: np.ndarray):
    if not t.requires:
        return
    t.tgrad = g if t.tgrad is None else t.tgrad + g


def _make(out_data, parents, bwd) -> Tensor:
    """Create an output node; record it when a tape is active and needed."""
    tape = _current_tape()
    out = Tensor(out_data)
    if tape is not None:
        needed = False
        for p in parents:
            if p.requires:
                needed = True
            tape._touch_leaf(p)
        if needed:
            out.requires = True
            tape._record(out, bwd)
    return out


def _check_finite(arr: np.ndarray, what: str):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values produced by {what}")


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic (numpy broadcasting semantics)

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(out, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data - b.data

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _make(out, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data

    def bwd(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(out, (a, b), bwd)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data
    _check_finite(out, "div")

    def bwd(g):
        _accum(a, _unbroadcast(g / b.data, a.data.shape))
        _accum(b, _unbroadcast(-g * out / b.data, b.data.shape))

    return _make(out, (a, b), bwd)


def neg(a) -> Tensor:
    a = _as_tensor(a)

    def bwd(g):
        _accum(a, -g)

    return _make(-a.data, (a,), bwd)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)
    _check_finite(out, "exp")

    def bwd(g):
        _accum(a, g * out)

    return _make(out, (a,), bwd)


def log(a) -> Tensor:
    a = _as_tensor(a)
    out = np.log(a.data)
    _check_finite(out, "log")

    def bwd(g):
        _accum(a, g / a.data)

    return _make(out, (a,), bwd)


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    out = np.sqrt(a.data)
    _check_finite(out, "sqrt")

    def bwd(g):
        _accum(a, g * (0.5 / out))

    return _make(out, (a,), bwd)


def square(a) -> Tensor:
    a = _as_tensor(a)

    def bwd(g):
        _accum(a, g * (2.0 * a.data))

    return _make(a.data * a.data, (a,), bwd)


def srelu(a) -> Tensor:
    """Squared ReLU: max(x, 0)^2, smooth at 0 with derivative 2*max(x, 0)."""
    a = _as_tensor(a)
    pos = np.maximum(a.data, 0.0)
    out = pos * pos

    def bwd(g):
        _accum(a, g * (2.0 * pos))

    return _make(out, (a,), bwd)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bwd(g):
        _accum(a, g * (out * (1.0 - out)))

    return _make(out, (a,), bwd)


def softplus(a) -> Tensor:
    a = _as_tensor(a)
    out = np.logaddexp(0.0, a.data)

    def bwd(g):
        x = a.data
        sig = np.empty_like(x)
        pos = x >= 0
        sig[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        sig[~pos] = ex / (1.0 + ex)
        _accum(a, g * sig)

    return _make(out, (a,), bwd)


# ---------------------------------------------------------------------------
# reductions / shape

def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    a_nd = a.data.ndim

    def bwd(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape).copy())
            return
        axes = axis if isinstance(axis, tuple) else (axis,)
        axes = tuple(ax % a_nd for ax in axes)
        gg = g
        if not keepdims:
            for ax in sorted(axes):
                gg = np.expand_dims(gg, ax)
        _accum(a, np.broadcast_to(gg, a.data.shape).copy())

    return _make(out, (a,), bwd)


def mean_(a, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for ax in axes:
            count *= a.data.shape[ax % a.data.ndim]
    a_nd = a.data.ndim

    def bwd(g):
        gg = g / count
        if axis is None:
            _accum(a, np.broadcast_to(gg, a.data.shape).copy())
            return
        axes = axis if isinstance(axis, tuple) else (axis,)
        axes = tuple(ax % a_nd for ax in axes)
        if not keepdims:
            for ax in sorted(axes):
                gg = np.expand_dims(gg, ax)
        _accum(a, np.broadcast_to(gg, a.data.shape).copy())

    return _make(out, (a,), bwd)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)

    def bwd(g):
        _accum(a, g.reshape(a.data.shape))

    return _make(a.data.reshape(shape), (a,), bwd)


def transpose(a, axes) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bwd(g):
        _accum(a, g.transpose(inv))

    return _make(a.data.transpose(axes), (a,), bwd)


def swap_last2(a) -> Tensor:
    a = _as_tensor(a)

    def bwd(g):
        _accum(a, np.swapaxes(g, -1, -2))

    return _make(np.swapaxes(a.data, -1, -2), (a,), bwd)


def concat(tensors, axis: int) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accum(t, g[tuple(idx)])

    return _make(out, tuple(ts), bwd)


def index_axis(a, i: int, axis: int) -> Tensor:
    """Select index i along axis, dropping that axis."""
    a = _as_tensor(a)
    out = np.take(a.data, i, axis=axis)

    def bwd(g):
        dx = np.zeros_like(a.data)
        idx = [slice(None)] * a.data.ndim
        idx[axis] = i
        dx[tuple(idx)] = g
        _accum(a, dx)

    return _make(out, (a,), bwd)


def gather(table, idx) -> Tensor:
    """Look up a 1-D table at integer indices; backward scatter-adds."""
    table = _as_tensor(table)
    if table.data.ndim != 1:
        raise DimensionError("gather expects a 1-D table")
    idx = np.asarray(idx)
    out = table.data[idx]

    def bwd(g):
        dt = np.zeros_like(table.data)
        np.add.at(dt, idx, g)
        _accum(table, dt)

    return _make(out, (table,), bwd)


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise DimensionError("matmul expects >=2-D operands")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError(f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}")
    out = np.matmul(a.data, b.data)

    def bwd(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        _accum(a, _unbroadcast(ga, a.data.shape))
        _accum(b, _unbroadcast(gb, b.data.shape))

    return _make(out, (a, b), bwd)


def linear(x, w, b=None) -> Tensor:
    """x @ w + b with x: (B, F), w: (F, O), b: (O,)."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.data.ndim != 2 or w.data.ndim != 2:
        raise DimensionError(f"linear expects 2-D x and w, got {x.data.shape}, {w.data.shape}")
    if x.data.shape[1] != w.data.shape[0]:
        raise DimensionError(f"linear feature mismatch: x {x.data.shape} vs w {w.data.shape}")
    out = x.data @ w.data
    if b is not None:
        b = _as_tensor(b)
        out = out + b.data

    def bwd(g):
        _accum(x, g @ w.data.T)
        _accum(w, x.data.T @ g)
        if b is not None:
            _accum(b, g.sum(axis=0))

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, bwd)


def softmax(a, axis: int = -1) -> Tensor:
    """Numerically stable softmax (max-subtracted) along one axis."""
    a = _as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    ez = np.exp(z)
    out = ez / ez.sum(axis=axis, keepdims=True)

    def bwd(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        _accum(a, out * (g - inner))

    return _make(out, (a,), bwd)


# ---------------------------------------------------------------------------
# convolution and friends

def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int):
    B, C, H, W = x.shape
    OH = (H + 2 * padding - kh) // stride + 1
    OW = (W + 2 * padding - kw) // stride + 1
    if OH <= 0 or OW <= 0:
        raise DimensionError(f"conv window {kh}x{kw} does not fit input {H}x{W} (pad {padding})")
    if padding:
        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x
    s0, s1, s2, s3 = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp, (B, C, OH, OW, kh, kw), (s0, s1, s2 * stride, s3 * stride, s2, s3)
    )
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * OH * OW, C * kh * kw)
    return np.ascontiguousarray(cols), OH, OW


def _corr2d_raw(x: np.ndarray, w: np.ndarray, stride: int, padding) -> np.ndarray:
    """Plain cross-correlation used by the conv backward pass."""
    ph, pw = padding if isinstance(padding, tuple) else (padding, padding)
    B, C, H, W = x.shape
    Co, Ci, KH, KW = w.shape
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    OH = (x.shape[2] - KH) // stride + 1
    OW = (x.shape[3] - KW) // stride + 1
    s0, s1, s2, s3 = x.strides
    win = np.lib.stride_tricks.as_strided(
        x, (B, C, OH, OW, KH, KW), (s0, s1, s2 * stride, s3 * stride, s2, s3)
    )
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(B * OH * OW, C * KH * KW)
    out = cols @ w.reshape(Co, Ci * KH * KW).T
    return out.reshape(B, OH, OW, Co).transpose(0, 3, 1, 2)


def conv2d(x, w, b=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation, NCHW layout, kernel (Cout, Cin, KH, KW)."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D x and w, got {x.data.shape}, {w.data.shape}")
    B, C, H, W = x.data.shape
    Co, Ci, KH, KW = w.data.shape
    if C != Ci:
        raise DimensionError(f"conv2d channel mismatch: input has {C}, kernel expects {Ci}")
    if b is not None:
        b = _as_tensor(b)
        if b.data.shape != (Co,):
            raise DimensionError(f"conv2d bias shape {b.data.shape} != ({Co},)")
    pointwise = KH == 1 and KW == 1 and stride == 1 and padding == 0
    if pointwise:
        # 1x1 stride-1 convolution is a plain channel matmul; skip the
        # windowing machinery in both directions.
        cols = x.data.transpose(0, 2, 3, 1).reshape(B * H * W, Ci)
        OH, OW = H, W
    else:
        cols, OH, OW = _im2col(x.data, KH, KW, stride, padding)
    out = cols @ w.data.reshape(Co, Ci * KH * KW).T
    out = out.reshape(B, OH, OW, Co).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + b.data[None, :, None, None]

    def bwd(g):
        gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(B * OH * OW, Co)
        if w.requires:
            dw = (gmat.T @ cols).reshape(Co, Ci, KH, KW)
            _accum(w, dw)
        if b is not None and b.requires:
            _accum(b, gmat.sum(axis=0))
        if pointwise:
            if x.requires:
                dx = (gmat @ w.data.reshape(Co, Ci)).reshape(B, OH, OW, Ci)
                _accum(x, np.ascontiguousarray(dx.transpose(0, 3, 1, 2)))
            return
        if x.requires:
            # input grad as a correlation of the (dilated) output grad with the
            # spatially flipped kernel, in/out channels swapped
            if stride > 1:
                # trailing zeros cover input positions past the last window start
                oph = (H + 2 * padding - KH) % stride
                opw = (W + 2 * padding - KW) % stride
                gd = np.zeros((B, Co, (OH - 1) * stride + 1 + oph,
                               (OW - 1) * stride + 1 + opw))
                gd[:, :, ::stride, ::stride] = g
            else:
                gd = g
            ph, pw = KH - 1 - padding, KW - 1 - padding
            if ph < 0 or pw < 0:
                raise DimensionError("conv2d backward requires padding <= kernel-1")
            wf = np.ascontiguousarray(w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
            dx = _corr2d_raw(gd, wf, 1, (ph, pw))
            assert dx.shape == (B, C, H, W)
            _accum(x, dx)

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, bwd)


def maxpool2d(x, kernel: int, stride: int | None = None) -> Tensor:
    """Max pooling; ties within a window route the gradient to the first
    maximal element in row-major scan order."""
    x = _as_tensor(x)
    if x.data.ndim != 4:
        raise DimensionError(f"maxpool2d expects 4-D input, got {x.data.shape}")
    stride = kernel if stride is None else stride
    B, C, H, W = x.data.shape
    if (H - kernel) % stride or (W - kernel) % stride or H < kernel or W < kernel:
        raise DimensionError(f"maxpool2d window {kernel}/{stride} does not tile input {H}x{W}")
    OH = (H - kernel) // stride + 1
    OW = (W - kernel) // stride + 1
    s0, s1, s2, s3 = x.data.strides
    win = np.lib.stride_tricks.as_strided(
        x.data, (B, C, OH, OW, kernel, kernel), (s0, s1, s2 * stride, s3 * stride, s2, s3)
    )
    flat = np.ascontiguousarray(win).reshape(B, C, OH, OW, kernel * kernel)
    amax = flat.argmax(axis=-1)  # argmax returns the first max: the tie rule
    out = np.take_along_axis(flat, amax[..., None], axis=-1)[..., 0]

    def bwd(g):
        dx = np.zeros((B * C, H * W))
        oh_idx, ow_idx = np.meshgrid(np.arange(OH), np.arange(OW), indexing="ij")
        rows = oh_idx[None, None] * stride + amax // kernel
        cols_ = ow_idx[None, None] * stride + amax % kernel
        flat_idx = (rows * W + cols_).reshape(B * C, OH * OW)
        np.add.at(dx, (np.arange(B * C)[:, None], flat_idx), g.reshape(B * C, OH * OW))
        _accum(x, dx.reshape(B, C, H, W))

    return _make(out, (x,), bwd)


def _bilinear_matrix(n_out: int, n_in: int, scale: int) -> np.ndarray:
    """Interpolation weights for align_corners=False sampling."""
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        src = (i + 0.5) / scale - 0.5
        i0 = int(np.floor(src))
        f = src - i0
        i0c = min(max(i0, 0), n_in - 1)
        i1c = min(max(i0 + 1, 0), n_in - 1)
        m[i, i0c] += 1.0 - f
        m[i, i1c] += f
    return m


def upsample_bilinear(x, scale: int) -> Tensor:
    """Bilinear upsampling by an integer factor, align_corners=False."""
    x = _as_tensor(x)
    if x.data.ndim != 4:
        raise DimensionError(f"upsample_bilinear expects 4-D input, got {x.data.shape}")
    B, C, H, W = x.data.shape
    R = _bilinear_matrix(H * scale, H, scale)
    Cm = _bilinear_matrix(W * scale, W, scale)
    t = np.einsum("oh,bchw->bcow", R, x.data, optimize=True)
    out = np.einsum("pw,bcow->bcop", Cm, t, optimize=True)

    def bwd(g):
        dt = np.einsum("pw,bcop->bcow", Cm, g, optimize=True)
        dx = np.einsum("oh,bcow->bchw", R, dt, optimize=True)
        _accum(x, dx)

    return _make(out, (x,), bwd)


def nearest_tile(x, factor: int) -> Tensor:
    """Repeat every spatial cell factor x factor times (patch broadcast)."""
    x = _as_tensor(x)
    B, C, H, W = x.data.shape
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def bwd(g):
        gr = g.reshape(B, C, H, factor, W, factor).sum(axis=(3, 5))
        _accum(x, gr)

    return _make(out, (x,), bwd)


def custom_op(out_data, parents, bwd) -> Tensor:
    """Record an externally defined primitive on the active tape.

    `bwd(g)` must push gradients into the parents via `accumulate`.
    """
    return _make(out_data, tuple(parents), bwd)


def accumulate(t: Tensor, g: np.ndarray):
    _accum(t, g)
