"""Differentiable primitives.

Image tensors are ``(channels, height, width)``. Every primitive computes its
forward value eagerly and records a vector-Jacobian product on the tape.
"""

import math

import numpy as np
from scipy import ndimage

from .. import boxfilter
from ..errors import ContractError
from .tape import Node


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Node):
            return x.tape
    raise ContractError("at least one operand must be a tape node")


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ----------------------------------------------------------------- elementwise

def add(a, b):
    t = _tape_of(a, b)
    a, b = t.lift(a), t.lift(b)
    sa, sb = a.shape, b.shape
    return t.record("add", a.value + b.value, (a, b),
                    lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    t = _tape_of(a, b)
    a, b = t.lift(a), t.lift(b)
    sa, sb = a.shape, b.shape
    return t.record("sub", a.value - b.value, (a, b),
                    lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    t = _tape_of(a, b)
    a, b = t.lift(a), t.lift(b)
    av, bv = a.value, b.value
    return t.record("mul", av * bv, (a, b),
                    lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def div(a, b):
    t = _tape_of(a, b)
    a, b = t.lift(a), t.lift(b)
    av, bv = a.value, b.value
    out = av / bv

    def vjp(g):
        ga = g / bv
        return _unbroadcast(ga, av.shape), _unbroadcast(-ga * out, bv.shape)

    return t.record("div", out, (a, b), vjp)


def neg(a):
    return a.tape.record("neg", -a.value, (a,), lambda g: (-g,))


def square(a):
    av = a.value
    return a.tape.record("square", av * av, (a,), lambda g: (2.0 * av * g,))


def sqrt(a):
    """Square root with subgradient 0 at exactly 0."""
    out = np.sqrt(a.value)

    def vjp(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(out > 0, 0.5 / out, 0.0)
        return (g * d,)

    return a.tape.record("sqrt", out, (a,), vjp)


def abs(a):  # noqa: A001 - mirrors numpy naming
    av = a.value
    return a.tape.record("abs", np.abs(av), (a,), lambda g: (g * np.sign(av),))


def relu(a):
    mask = a.value > 0
    return a.tape.record("relu", np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def leaky_relu(a, slope=0.2):
    mask = a.value > 0
    scale = np.where(mask, 1.0, slope)
    return a.tape.record("leaky_relu", a.value * scale, (a,), lambda g: (g * scale,))


# ------------------------------------------------------------------- reductions

def sum(a):  # noqa: A001
    shape = a.shape
    return a.tape.record("sum", np.sum(a.value), (a,),
                         lambda g: (np.broadcast_to(g, shape),))


def mean(a):
    shape, n = a.shape, a.value.size
    return a.tape.record("mean", np.mean(a.value), (a,),
                         lambda g: (np.broadcast_to(g / n, shape),))


# -------------------------------------------------------------------- structure

def concat(nodes, axis=0):
    t = _tape_of(*nodes)
    nodes = [t.lift(n) for n in nodes]
    sizes = [n.shape[axis] for n in nodes]
    bounds = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:]))

    return t.record("concat", np.concatenate([n.value for n in nodes], axis=axis), nodes, vjp)


def getitem(a, index):
    """Basic (non-fancy) slicing."""
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape, dtype=g.dtype)
        out[index] = g
        return (out,)

    return a.tape.record("slice", a.value[index], (a,), vjp)


def reshape(a, shape):
    old = a.shape
    return a.tape.record("reshape", a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


# ------------------------------------------------------------------ convolution

def _conv_out(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def _im2col(xp, k, stride, ho, wo):
    c = xp.shape[0]
    cols = np.empty((c, k, k, ho, wo), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xp[:, i:i + stride * ho:stride, j:j + stride * wo:stride]
    return cols.reshape(c * k * k, ho * wo)


def _col2im(cols, shape_p, k, stride, ho, wo):
    c = shape_p[0]
    out = np.zeros(shape_p, dtype=cols.dtype)
    cols = cols.reshape(c, k, k, ho, wo)
    for i in range(k):
        for j in range(k):
            out[:, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[:, i, j]
    return out


def conv2d(x, weight, bias=None, stride=1, padding="same"):
    """2-D cross-correlation of a ``(C, H, W)`` tensor with ``(O, C, k, k)`` weights.

    ``padding`` is ``"same"`` (zero padding ``k // 2``), ``"valid"`` or an int.
    Output size per axis is ``(n + 2 * pad - k) // stride + 1``.
    """
    t = _tape_of(x, weight)
    x, weight = t.lift(x), t.lift(weight)
    xv, wv = x.value, weight.value
    if xv.ndim != 3 or wv.ndim != 4:
        raise ContractError(f"conv2d expects (C,H,W) input and (O,C,k,k) weight, got {xv.shape}, {wv.shape}")
    o, c, k, k2 = wv.shape
    if k != k2 or c != xv.shape[0]:
        raise ContractError(f"conv2d channel/kernel mismatch: input {xv.shape}, weight {wv.shape}")
    if padding == "same":
        pad = k // 2
    elif padding == "valid":
        pad = 0
    elif isinstance(padding, int) and padding >= 0:
        pad = padding
    else:
        raise ContractError(f"unsupported padding {padding!r}")
    _, h, w = xv.shape
    ho, wo = _conv_out(h, k, stride, pad), _conv_out(w, k, stride, pad)
    if ho < 1 or wo < 1:
        raise ContractError(f"conv2d output would be empty for input {xv.shape} and kernel {k}")
    xp = np.pad(xv, ((0, 0), (pad, pad), (pad, pad))) if pad else xv
    cols = _im2col(xp, k, stride, ho, wo)
    wmat = wv.reshape(o, -1)
    out = (wmat @ cols).reshape(o, ho, wo)
    parents = [x, weight]
    if bias is not None:
        bias = t.lift(bias)
        if bias.shape != (o,):
            raise ContractError(f"bias shape {bias.shape} does not match {o} output channels")
        out = out + bias.value[:, None, None]
        parents.append(bias)
    shape_p = xp.shape

    def vjp(g):
        g2 = g.reshape(o, -1)
        gw = (g2 @ cols.T).reshape(wv.shape)
        gx = None
        if x.requires_grad:
            gxp = _col2im(wmat.T @ g2, shape_p, k, stride, ho, wo)
            gx = gxp[:, pad:pad + h, pad:pad + w] if pad else gxp
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(1, 2)))
        return tuple(grads)

    return t.record("conv2d", out, parents, vjp)


# ------------------------------------------------------------------- resampling

def separable_linear(x, rows, cols, op="separable"):
    """Apply ``rows @ x[c] @ cols.T`` to every channel. Adjoint uses the transposes."""
    rows = np.asarray(rows, dtype=x.tape.dtype)
    cols = np.asarray(cols, dtype=x.tape.dtype)
    out = np.einsum("ij,cjk,lk->cil", rows, x.value, cols, optimize=True)
    return x.tape.record(op, out, (x,),
                         lambda g: (np.einsum("ij,cil,lk->cjk", rows, g, cols, optimize=True),))


def bilinear_matrix(n_in, n_out):
    """Interpolation matrix for half-pixel-centre bilinear resampling (align_corners=False).

    Output sample ``y`` reads source coordinate ``s = (y + 0.5) * n_in / n_out - 0.5``,
    clamped to ``[0, n_in - 1]``, and mixes ``floor(s)`` and ``floor(s) + 1`` with
    weights ``1 - frac(s)`` and ``frac(s)``.
    """
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for y in range(n_out):
        s = min(max((y + 0.5) * scale - 0.5, 0.0), n_in - 1)
        i0 = int(math.floor(s))
        i1 = min(i0 + 1, n_in - 1)
        f = s - i0
        m[y, i0] += 1.0 - f
        m[y, i1] += f
    return m


def bilinear_resize(x, out_h, out_w):
    if out_h < 1 or out_w < 1:
        raise ContractError("output dimensions must be >= 1")
    _, h, w = x.shape
    return separable_linear(x, bilinear_matrix(h, out_h), bilinear_matrix(w, out_w), op="bilinear")


def bilinear_resize_array(img, out_h, out_w):
    """Non-differentiable convenience for 2-D arrays."""
    img = np.asarray(img, dtype=np.float64)
    return bilinear_matrix(img.shape[0], out_h) @ img @ bilinear_matrix(img.shape[1], out_w).T


def pixel_shuffle(x, factor):
    c, h, w = x.shape
    s = factor
    if c % (s * s):
        raise ContractError(f"channels ({c}) not divisible by factor^2 ({s * s})")
    oc = c // (s * s)

    def fwd(v):
        return v.reshape(oc, s, s, h, w).transpose(0, 3, 1, 4, 2).reshape(oc, h * s, w * s)

    def vjp(g):
        return (g.reshape(oc, h, s, w, s).transpose(0, 2, 4, 1, 3).reshape(c, h, w),)

    return x.tape.record("pixel_shuffle", fwd(x.value), (x,), vjp)


def pixel_unshuffle(x, factor):
    c, h, w = x.shape
    s = factor
    if h % s or w % s:
        raise ContractError(f"spatial dims {h}x{w} not divisible by {s}")
    oh, ow = h // s, w // s

    def fwd(v):
        return v.reshape(c, oh, s, ow, s).transpose(0, 2, 4, 1, 3).reshape(c * s * s, oh, ow)

    def vjp(g):
        return (g.reshape(c, s, s, oh, ow).transpose(0, 3, 1, 4, 2).reshape(c, h, w),)

    return x.tape.record("pixel_unshuffle", fwd(x.value), (x,), vjp)


def avg_pool2(x):
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise ContractError(f"avg_pool2 needs even spatial dims, got {h}x{w}")
    out = x.value.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))
    return x.tape.record("avg_pool2", out, (x,),
                         lambda g: (np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) * 0.25,))


# ---------------------------------------------------------------- normalization

def instance_norm(x, eps=1e-5):
    """Per-channel standardization over the spatial axes (no affine parameters)."""
    xv = x.value
    mu = xv.mean(axis=(1, 2), keepdims=True)
    xc = xv - mu
    var = (xc * xc).mean(axis=(1, 2), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv

    def vjp(g):
        gm = g.mean(axis=(1, 2), keepdims=True)
        gy = (g * y).mean(axis=(1, 2), keepdims=True)
        return (inv * (g - gm - y * gy),)

    return x.tape.record("instance_norm", y, (x,), vjp)


# ------------------------------------------------------------------ box filters

def box_mean(x, radius):
    """Clipped-window box mean over the last two axes.

    Linear with a symmetric window-sum operator ``S`` and per-pixel counts ``n``:
    ``y = S x / n``, so the adjoint is ``S (g / n)``.
    """
    xv = x.value
    h, w = xv.shape[-2:]
    out = boxfilter.box_mean(xv, radius)
    if radius == 0:
        return x.tape.record("box_mean", out, (x,), lambda g: (g,))
    count = boxfilter.window_count(w, h, radius)
    return x.tape.record("box_mean", out, (x,),
                         lambda g: (boxfilter.box_sum(g / count, radius),))


def gaussian_window_matrix(n, size=11, sigma=1.5):
    """``n x n`` operator of 1-D Gaussian smoothing with reflected borders."""
    half = size // 2
    taps = np.exp(-0.5 * (np.arange(-half, half + 1) / sigma) ** 2)
    taps /= taps.sum()
    return ndimage.correlate1d(np.eye(n), taps, axis=0, mode="reflect")


def gaussian_blur(x, size=11, sigma=1.5):
    _, h, w = x.shape
    return separable_linear(x, gaussian_window_matrix(h, size, sigma),
                            gaussian_window_matrix(w, size, sigma), op="gaussian_blur")
