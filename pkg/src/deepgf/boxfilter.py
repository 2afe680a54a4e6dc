"""Sliding-window box sums and means in radius-independent time.

Windows are ``(2r+1) x (2r+1)`` squares clipped at the image border; means are
normalized by the number of pixels that actually fall inside the image.
"""

import numpy as np

from .errors import ConfigError


def _check_radius(shape, radius):
    if radius < 0:
        raise ConfigError(f"radius must be >= 0, got {radius}")
    if radius >= min(shape):
        raise ConfigError(
            f"radius {radius} must be smaller than the smallest image dimension {min(shape)}"
        )


def _window_bounds(n, radius):
    idx = np.arange(n)
    lo = np.maximum(idx - radius, 0)
    hi = np.minimum(idx + radius, n - 1) + 1
    return lo, hi


def _running_sum(x, radius, axis):
    # Prefix sums with a leading zero so window sum = S[hi] - S[lo].
    n = x.shape[axis]
    lo, hi = _window_bounds(n, radius)
    pad = [(0, 0)] * x.ndim
    pad[axis] = (1, 0)
    s = np.pad(np.cumsum(x, axis=axis), pad)
    return np.take(s, hi, axis=axis) - np.take(s, lo, axis=axis)


def _accumulator(image):
    # float64 at least; wider inputs (longdouble) keep their precision
    x = np.asarray(image)
    return x.astype(np.result_type(x.dtype, np.float64), copy=False)


def box_sum(image, radius):
    """Sum over the clipped window around every pixel (last two axes)."""
    x = _accumulator(image)
    _check_radius(x.shape[-2:], radius)
    if radius == 0:
        return x.copy()
    return _running_sum(_running_sum(x, radius, x.ndim - 1), radius, x.ndim - 2)


def window_count(width, height, radius):
    """Number of in-bounds pixels of each pixel's window, as a ``(height, width)`` array."""
    _check_radius((height, width), radius)
    lo_r, hi_r = _window_bounds(height, radius)
    lo_c, hi_c = _window_bounds(width, radius)
    return np.outer(hi_r - lo_r, hi_c - lo_c).astype(np.float64)


def box_mean(image, radius):
    """Mean over the clipped ``(2r+1)^2`` window around each pixel.

    Runs in O(N) via prefix sums along each axis, so the cost does not depend on
    ``radius``. Accumulation is float64, or wider for extended-precision
    input. Leading axes (channels) are filtered independently.

    >>> box_mean(np.arange(1.0, 10.0).reshape(3, 3), 1)[1, 1]
    5.0
    """
    x = _accumulator(image)
    if radius == 0:
        _check_radius(x.shape[-2:], radius)
        return x.copy()
    h, w = x.shape[-2:]
    return box_sum(x, radius) / window_count(w, h, radius)


def box_mean_bruteforce(image, radius):
    """Reference box mean with explicit per-pixel window loops. Test oracle only."""
    x = np.asarray(image, dtype=np.float64)
    _check_radius(x.shape, radius)
    h, w = x.shape
    out = np.empty_like(x)
    for i in range(h):
        for j in range(w):
            acc = 0.0
            cnt = 0
            for u in range(max(i - radius, 0), min(i + radius, h - 1) + 1):
                for v in range(max(j - radius, 0), min(j + radius, w - 1) + 1):
                    acc += x[u, v]
                    cnt += 1
            out[i, j] = acc / cnt
    return out
