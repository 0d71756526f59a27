"""NCHW tensor primitives with reverse-mode automatic differentiation.

Everything runs on plain numpy arrays. float32 is the working precision;
feed float64 arrays to run the same graph in wide precision (the gradient
oracles in the test suite do this).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_DTYPE = np.float32


class Tensor:
    """A numpy array plus an optional gradient buffer and a backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None
        self._parents = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def zero_grad(self):
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self):
        """Reverse-mode sweep from a scalar root."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar root tensor")
        topo, seen = [], set()

        def visit(t):
            if id(t) in seen:
                return
            seen.add(id(t))
            for p in t._parents:
                visit(p)
            topo.append(t)

        visit(self)
        for t in topo:
            t.grad = None
        self.grad = np.ones_like(self.data)
        for t in reversed(topo):
            if t._backward is not None and t.grad is not None:
                t._backward(t.grad)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward) -> Tensor:
    t = Tensor(data)
    t._parents = tuple(p for p in parents if isinstance(p, Tensor))
    t._backward = backward
    return t


def _accum(t: Tensor, g: np.ndarray):
    if not (t.requires_grad or t._parents):
        return
    t.grad = g if t.grad is None else t.grad + g


def _sum_to(g: np.ndarray, shape) -> np.ndarray:
    """Collapse a broadcast gradient back to the original operand shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def backward(go):
        _accum(a, _sum_to(go, a.shape))
        _accum(b, _sum_to(go, b.shape))

    return _node(out_data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def backward(go):
        _accum(a, _sum_to(go * b.data, a.shape))
        _accum(b, _sum_to(go * a.data, b.shape))

    return _node(out_data, (a, b), backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Channel concatenation, a's channels first."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ValueError(f"concat_channels: incompatible shapes {a.shape} vs {b.shape}")
    ca = a.shape[1]
    out_data = np.concatenate([a.data, b.data], axis=1)

    def backward(go):
        _accum(a, go[:, :ca])
        _accum(b, go[:, ca:])

    return _node(out_data, (a, b), backward)


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    out_data = np.where(mask, x.data, 0)

    def backward(go):
        _accum(x, go * mask)

    return _node(out_data, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    d = x.data
    # split by sign to avoid overflow in exp
    s = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                 np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    s = s.astype(d.dtype)

    def backward(go):
        _accum(x, go * s * (1 - s))

    return _node(s, (x,), backward)


def mean_all(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out_data = np.asarray(x.data.mean())

    def backward(go):
        _accum(x, np.broadcast_to(go / x.data.size, x.shape).astype(x.dtype))

    return _node(out_data, (x,), backward)


# ---------------------------------------------------------------------------
# convolution

@dataclass
class ConvParams:
    """Grouped 2-d convolution description.

    weights: (C_out, C_in // groups, kH, kW); bias: optional (C_out,).
    """
    weights: np.ndarray
    bias: np.ndarray | None = None
    groups: int = 1
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.weights.ndim != 4:
            raise ValueError("conv weights must be rank 4")
        if self.groups < 1 or self.weights.shape[0] % self.groups:
            raise ValueError(
                f"C_out={self.weights.shape[0]} not divisible by groups={self.groups}")


def _patch_view(xp: np.ndarray, kh: int, kw: int, stride: int):
    n, c, h, w = xp.shape
    ho = (h - kh) // stride + 1
    wo = (w - kw) // stride + 1
    sn, sc, sh, sw = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp, (n, c, ho, wo, kh, kw), (sn, sc, sh * stride, sw * stride, sh, sw),
        writeable=False)
    return view, ho, wo


def conv2d_grouped(x: Tensor, params: ConvParams) -> Tensor:
    """Grouped convolution; group g of the output depends only on group g of
    the input (block-diagonal weight structure)."""
    x = as_tensor(x)
    w = params.weights
    g, stride, pad = params.groups, params.stride, params.padding
    n, c, h, w_in = x.shape
    co, cig, kh, kw = w.shape
    if c % g:
        raise ValueError(f"C_in={c} not divisible by groups={g}")
    if cig != c // g:
        raise ValueError(f"weights expect C_in/groups={cig}, input has {c // g}")
    if h + 2 * pad < kh or w_in + 2 * pad < kw:
        raise ValueError("spatial dims too small for kernel")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    patches, ho, wo = _patch_view(xp, kh, kw, stride)
    # (n, g, c/g, ho, wo, kh, kw) x (g, co/g, c/g, kh, kw) -> (n, g, co/g, ho, wo)
    pv = patches.reshape(n, g, c // g, ho, wo, kh, kw)
    wv = w.reshape(g, co // g, c // g, kh, kw)
    out = np.einsum("ngchwyx,gocyx->ngohw", pv, wv, optimize=True)
    out = np.ascontiguousarray(out).reshape(n, co, ho, wo)
    if params.bias is not None:
        out += params.bias[None, :, None, None]

    def backward(go):
        gov = go.reshape(n, g, co // g, ho, wo)
        if x.requires_grad or x._parents:
            gcols = np.einsum("gocyx,ngohw->ngchwyx", wv, gov, optimize=True)
            gcols = gcols.reshape(n, c, ho, wo, kh, kw)
            gxp = np.zeros_like(xp)
            for dy in range(kh):
                for dx in range(kw):
                    gxp[:, :, dy:dy + ho * stride:stride,
                        dx:dx + wo * stride:stride] += gcols[:, :, :, :, dy, dx]
            gx = gxp[:, :, pad:pad + h, pad:pad + w_in] if pad else gxp
            _accum(x, gx)
        gw = np.einsum("ngchwyx,ngohw->gocyx", pv, gov, optimize=True)
        params.weight_grad = gw.reshape(co, c // g, kh, kw)
        if params.bias is not None:
            params.bias_grad = go.sum(axis=(0, 2, 3))

    return _node(out, (x,), backward)


def conv2d(x: Tensor, weights: Tensor, bias: Tensor | None = None,
           groups: int = 1, stride: int = 1, padding: int = 0) -> Tensor:
    """Autograd wrapper: like conv2d_grouped but weights/bias are Tensors that
    receive gradients."""
    x = as_tensor(x)
    w = weights
    p = ConvParams(w.data, None if bias is None else bias.data, groups, stride, padding)
    out = conv2d_grouped(x, p)
    inner_backward = out._backward

    def backward(go):
        inner_backward(go)
        _accum(w, p.weight_grad)
        if bias is not None:
            _accum(bias, p.bias_grad)

    out._parents = tuple(t for t in (x, w, bias) if isinstance(t, Tensor))
    out._backward = backward
    return out


# ---------------------------------------------------------------------------
# channel shuffle

@dataclass(frozen=True)
class ShufflePlan:
    """Channel permutation between the two group convolutions.

    Input channel l*M + m moves to output channel m*L + l, so each of the M
    second-stage groups draws one channel from every first-stage group.
    """
    groups: int            # L
    channels_per_group: int  # M
    forward_index: np.ndarray
    inverse_index: np.ndarray

    @classmethod
    def create(cls, groups: int, channels_per_group: int) -> "ShufflePlan":
        l, m = groups, channels_per_group
        fwd = np.arange(l * m).reshape(l, m).T.ravel()
        return cls(l, m, fwd, np.argsort(fwd))

    @property
    def channels(self) -> int:
        return self.groups * self.channels_per_group


def _permute_channels(x: Tensor, index: np.ndarray) -> Tensor:
    out_data = x.data[:, index]
    inv = np.argsort(index)

    def backward(go):
        _accum(x, go[:, inv])

    return _node(out_data, (x,), backward)


def channel_shuffle(x: Tensor, plan: ShufflePlan) -> Tensor:
    x = as_tensor(x)
    if x.shape[1] != plan.channels:
        raise ValueError(f"channel count {x.shape[1]} != plan L*M={plan.channels}")
    return _permute_channels(x, plan.forward_index)


def channel_unshuffle(x: Tensor, plan: ShufflePlan) -> Tensor:
    x = as_tensor(x)
    if x.shape[1] != plan.channels:
        raise ValueError(f"channel count {x.shape[1]} != plan L*M={plan.channels}")
    return _permute_channels(x, plan.inverse_index)


# ---------------------------------------------------------------------------
# pooling

def max_pool_2x2(x: Tensor) -> Tensor:
    """2x2/stride-2 max pooling with exact argmax gradient routing."""
    x = as_tensor(x)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"max_pool_2x2 needs even spatial dims, got {h}x{w}")
    ho, wo = h // 2, w // 2
    win = x.data.reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(n, c, ho, wo, 4)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def backward(go):
        gwin = np.zeros((n, c, ho, wo, 4), dtype=go.dtype)
        np.put_along_axis(gwin, arg[..., None], go[..., None], axis=-1)
        gx = gwin.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        _accum(x, gx)

    return _node(out, (x,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    x = as_tensor(x)
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)

    def backward(go):
        _accum(x, np.broadcast_to(go / (h * w), x.shape).astype(go.dtype))

    return _node(out, (x,), backward)


# ---------------------------------------------------------------------------
# normalization

@dataclass
class RunningStats:
    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def create(cls, channels: int, dtype=DEFAULT_DTYPE) -> "RunningStats":
        return cls(np.zeros(channels, dtype), np.ones(channels, dtype))


def batch_norm(x: Tensor, scale: Tensor, shift: Tensor, stats: RunningStats,
               training: bool, eps: float = 1e-5, momentum: float = 0.1) -> Tensor:
    """Per-channel normalization over (N, H, W); updates running stats in
    train mode, uses them in eval mode."""
    x = as_tensor(x)
    g = scale.data[None, :, None, None]
    b = shift.data[None, :, None, None]
    if training:
        m = x.data.mean(axis=(0, 2, 3))
        v = x.data.var(axis=(0, 2, 3))
        stats.mean = ((1 - momentum) * stats.mean + momentum * m).astype(stats.mean.dtype)
        stats.var = ((1 - momentum) * stats.var + momentum * v).astype(stats.var.dtype)
    else:
        m, v = stats.mean.astype(x.dtype), stats.var.astype(x.dtype)
    std = np.sqrt(v + eps)[None, :, None, None]
    xhat = (x.data - m[None, :, None, None]) / std
    out = g * xhat + b

    def backward(go):
        _accum(scale, (go * xhat).sum(axis=(0, 2, 3)))
        _accum(shift, go.sum(axis=(0, 2, 3)))
        if not (x.requires_grad or x._parents):
            return
        if training:
            n_eff = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]
            gsum = go.sum(axis=(0, 2, 3), keepdims=True)
            gxhat_sum = (go * xhat).sum(axis=(0, 2, 3), keepdims=True)
            gx = g / std / n_eff * (n_eff * go - gsum - xhat * gxhat_sum)
        else:
            gx = go * g / std
        _accum(x, gx)

    return _node(out, (x, scale, shift), backward)


# ---------------------------------------------------------------------------
# dense layers

def flatten(x: Tensor) -> Tensor:
    x = as_tensor(x)
    n = x.shape[0]
    out = x.data.reshape(n, -1)

    def backward(go):
        _accum(x, go.reshape(x.shape))

    return _node(out, (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)
    out = x.data.reshape(shape)

    def backward(go):
        _accum(x, go.reshape(x.shape))

    return _node(out, (x,), backward)


def fully_connected(x: Tensor, weights: Tensor, bias: Tensor | None = None) -> Tensor:
    """x: (N, F), weights: (O, F), bias: (O,)."""
    x = as_tensor(x)
    out = x.data @ weights.data.T
    if bias is not None:
        out = out + bias.data

    def backward(go):
        _accum(x, go @ weights.data)
        _accum(weights, go.T @ x.data)
        if bias is not None:
            _accum(bias, go.sum(axis=0))

    return _node(out, (x, weights, bias), backward)


# ---------------------------------------------------------------------------
# gradient checking

def grad_check(fn, inputs, eps: float = 1e-4, max_elems: int = 10_000,
               seed: int = 0) -> float:
    """Compare analytic gradients of a scalar-valued fn against central
    finite differences.

    Checks every element of every input, or a seeded random subsample when an
    input exceeds max_elems elements.  Returns the worst relative error.
    """
    inputs = [as_tensor(t) for t in inputs]
    for t in inputs:
        t.requires_grad = True
    out = fn(*inputs)
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy()
                for t in inputs]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t, a in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        aflat = a.reshape(-1)
        if flat.size <= max_elems:
            idxs = np.arange(flat.size)
        else:
            idxs = rng.choice(flat.size, size=max_elems, replace=False)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + eps
            f_hi = float(fn(*inputs).data)
            flat[i] = orig - eps
            f_lo = float(fn(*inputs).data)
            flat[i] = orig
            numeric = (f_hi - f_lo) / (2 * eps)
            an = aflat[i]
            rel = abs(an - numeric) / max(abs(an) + abs(numeric), 1e-3)
            worst = max(worst, rel)
    return worst
