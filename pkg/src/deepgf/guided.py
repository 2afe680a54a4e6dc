"""Locally linear guided image filter (He et al.), forward computation.

For input ``I`` and guidance map ``M`` every window ``w_k`` gets a linear model
``P = a_k * M + b_k``::

    a_k = (mean_k(M*I) - mean_k(M) * mean_k(I)) / (var_k(M) + eps)
    b_k = mean_k(I) - a_k * mean_k(M)

and each output pixel averages the models of all windows covering it, i.e.
``P = box_mean(a) * M + box_mean(b)``.
"""

from dataclasses import dataclass

import numpy as np

from .boxfilter import box_mean
from .errors import ConfigError, ContractError


@dataclass(frozen=True)
class GuidedFilterParams:
    radius: int = 2
    epsilon: float = 1e-4

    def __post_init__(self):
        if int(self.radius) != self.radius or self.radius < 0:
            raise ConfigError(f"radius must be a non-negative integer, got {self.radius!r}")
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon!r}")


# Radius 8 suits low-resolution tomographic-scale SR, 2 projection-scale images.
SR_TOMOGRAPHIC_PARAMS = GuidedFilterParams(radius=8, epsilon=1e-4)
PROJECTION_PARAMS = GuidedFilterParams(radius=2, epsilon=1e-4)


@dataclass(frozen=True)
class CoefficientMaps:
    A: np.ndarray
    B: np.ndarray
    A_bar: np.ndarray
    B_bar: np.ndarray


def _pair(I, M):
    I = np.asarray(I, dtype=np.float64)
    M = np.asarray(M, dtype=np.float64)
    if I.ndim != 2 or I.shape != M.shape:
        raise ContractError(
            f"guided filter needs two 2-D images of equal shape, got {I.shape} and {M.shape}"
        )
    return I, M


def guided_filter_coefficients(I, M, params):
    I, M = _pair(I, M)
    r, eps = params.radius, params.epsilon
    mean_I = box_mean(I, r)
    mean_M = box_mean(M, r)
    corr_MI = box_mean(M * I, r)
    corr_MM = box_mean(M * M, r)
    var_M = corr_MM - mean_M * mean_M
    cov_MI = corr_MI - mean_M * mean_I
    a = cov_MI / (var_M + eps)
    b = mean_I - a * mean_M
    return CoefficientMaps(A=a, B=b, A_bar=box_mean(a, r), B_bar=box_mean(b, r))


def guided_filter(I, M, params, dtype=None):
    """Filter ``I`` with guidance map ``M``.

    Coefficients are computed in float64; the result is cast to ``dtype``
    (default: the dtype of ``I`` if floating, else float64).
    """
    if dtype is None:
        dtype = np.asarray(I).dtype
        if not np.issubdtype(dtype, np.floating):
            dtype = np.float64
    c = guided_filter_coefficients(I, M, params)
    M64 = np.asarray(M, dtype=np.float64)
    return (c.A_bar * M64 + c.B_bar).astype(dtype, copy=False)


def guided_filter_bruteforce(I, M, params):
    """Literal per-window evaluation: fit every window, average the per-window outputs.

    Returns ``(P, A, B)``. Quadratic in the window size; only for testing.
    """
    I, M = _pair(I, M)
    r, eps = params.radius, params.epsilon
    h, w = I.shape
    A = np.empty_like(I)
    B = np.empty_like(I)
    for i in range(h):
        for j in range(w):
            win = (slice(max(i - r, 0), min(i + r, h - 1) + 1),
                   slice(max(j - r, 0), min(j + r, w - 1) + 1))
            mi, ii = M[win], I[win]
            n = mi.size
            m_bar = mi.sum() / n
            i_bar = ii.sum() / n
            var = (mi * mi).sum() / n - m_bar * m_bar
            A[i, j] = ((mi * ii).sum() / n - m_bar * i_bar) / (var + eps)
            B[i, j] = i_bar - A[i, j] * m_bar
    acc = np.zeros_like(I)
    cnt = np.zeros_like(I)
    for i in range(h):
        for j in range(w):
            win = (slice(max(i - r, 0), min(i + r, h - 1) + 1),
                   slice(max(j - r, 0), min(j + r, w - 1) + 1))
            acc[win] += A[i, j] * M[win] + B[i, j]
            cnt[win] += 1
    return acc / cnt, A, B
