"""Guided filter as a differentiable layer.

The backward pass is not hand-derived: the forward is written with the same
sequence of primitives as :func:`deepgf.guided.guided_filter_coefficients`, and
the tape composes their adjoints. Gradients reach both the filtered image and
the guidance map.
"""

from ..errors import ContractError
from . import ops


def guided_filter_node(I, M, params):
    """``P = box_mean(a) * M + box_mean(b)`` on single-channel ``(1, H, W)`` nodes."""
    if I.shape != M.shape or len(I.shape) != 3 or I.shape[0] != 1:
        raise ContractError(f"guided filter layer needs matching (1,H,W) inputs, got {I.shape} and {M.shape}")
    r, eps = params.radius, params.epsilon
    mean_I = ops.box_mean(I, r)
    mean_M = ops.box_mean(M, r)
    corr_MI = ops.box_mean(ops.mul(M, I), r)
    corr_MM = ops.box_mean(ops.mul(M, M), r)
    var_M = ops.sub(corr_MM, ops.mul(mean_M, mean_M))
    cov_MI = ops.sub(corr_MI, ops.mul(mean_M, mean_I))
    a = ops.div(cov_MI, ops.add(var_M, eps))
    b = ops.sub(mean_I, ops.mul(a, mean_M))
    return ops.add(ops.mul(ops.box_mean(a, r), M), ops.box_mean(b, r))
