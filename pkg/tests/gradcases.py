"""Gradient-check cases: one small scalar graph per differentiable primitive.

Each case maps a name to ``(graph, inputs)`` for :func:`deepgf.autodiff.gradcheck.grad_check`.
Outputs are contracted with a fixed random weight so every output coordinate
contributes a distinct sensitivity.
"""

import numpy as np

from deepgf.autodiff import ops
from deepgf.autodiff.layers import guided_filter_node
from deepgf.guided import GuidedFilterParams


def _weighted(node, seed=99):
    w = np.random.default_rng(seed).standard_normal(node.shape)
    return ops.sum(ops.mul(node, w))


def primitive_cases():
    rng = np.random.default_rng(2024)

    def r(*shape, lo=-1.0, hi=1.0):
        return rng.uniform(lo, hi, size=shape)

    x = r(2, 6, 5)
    y = r(2, 6, 5)
    cases = {
        "add": (lambda t, n: _weighted(ops.add(n["x"], n["y"])), dict(x=x, y=y)),
        "add_broadcast": (lambda t, n: _weighted(ops.add(n["x"], n["b"])), dict(x=x, b=r(2, 1, 1))),
        "sub": (lambda t, n: _weighted(ops.sub(n["x"], n["y"])), dict(x=x, y=y)),
        "mul": (lambda t, n: _weighted(ops.mul(n["x"], n["y"])), dict(x=x, y=y)),
        "mul_broadcast": (lambda t, n: _weighted(ops.mul(n["x"], n["s"])), dict(x=x, s=r(1, 6, 5))),
        "div": (lambda t, n: _weighted(ops.div(n["x"], n["y"])), dict(x=x, y=r(2, 6, 5, lo=0.5, hi=2.0))),
        "neg": (lambda t, n: _weighted(ops.neg(n["x"])), dict(x=x)),
        "square": (lambda t, n: _weighted(ops.square(n["x"])), dict(x=x)),
        "sqrt": (lambda t, n: _weighted(ops.sqrt(n["x"])), dict(x=r(2, 6, 5, lo=0.1, hi=2.0))),
        "abs": (lambda t, n: _weighted(ops.abs(n["x"])), dict(x=x)),
        "relu": (lambda t, n: _weighted(ops.relu(n["x"])), dict(x=x)),
        "leaky_relu": (lambda t, n: _weighted(ops.leaky_relu(n["x"], 0.2)), dict(x=x)),
        "sum": (lambda t, n: ops.sum(ops.square(n["x"])), dict(x=x)),
        "mean": (lambda t, n: ops.mean(ops.square(n["x"])), dict(x=x)),
        "concat": (lambda t, n: _weighted(ops.concat([n["x"], n["y"]])), dict(x=x, y=y)),
        "getitem": (lambda t, n: _weighted(ops.getitem(n["x"], (slice(None), slice(1, 5), slice(None, -1)))),
                    dict(x=x)),
        "reshape": (lambda t, n: _weighted(ops.reshape(n["x"], (4, 15))), dict(x=x)),
        "conv2d_same": (lambda t, n: _weighted(ops.conv2d(n["x"], n["w"], n["b"])),
                        dict(x=x, w=r(3, 2, 3, 3), b=r(3))),
        "conv2d_stride2": (lambda t, n: _weighted(ops.conv2d(n["x"], n["w"], n["b"], stride=2)),
                           dict(x=r(2, 8, 8), w=r(3, 2, 3, 3), b=r(3))),
        "conv2d_valid_5x5": (lambda t, n: _weighted(ops.conv2d(n["x"], n["w"], padding="valid")),
                             dict(x=r(1, 7, 8), w=r(2, 1, 5, 5))),
        "bilinear_up": (lambda t, n: _weighted(ops.bilinear_resize(n["x"], 12, 20)), dict(x=r(2, 3, 5))),
        "bilinear_down": (lambda t, n: _weighted(ops.bilinear_resize(n["x"], 4, 3)), dict(x=x)),
        "pixel_shuffle": (lambda t, n: _weighted(ops.pixel_shuffle(n["x"], 2)), dict(x=r(8, 3, 4))),
        "pixel_unshuffle": (lambda t, n: _weighted(ops.pixel_unshuffle(n["x"], 2)), dict(x=r(2, 4, 6))),
        "avg_pool2": (lambda t, n: _weighted(ops.avg_pool2(n["x"])), dict(x=r(2, 6, 4))),
        "instance_norm": (lambda t, n: _weighted(ops.instance_norm(n["x"])), dict(x=x)),
        "box_mean": (lambda t, n: _weighted(ops.box_mean(n["x"], 2)), dict(x=x)),
        "gaussian_blur": (lambda t, n: _weighted(ops.gaussian_blur(n["x"])), dict(x=r(1, 13, 12))),
        "guided_filter": (lambda t, n: ops.sum(guided_filter_node(n["I"], n["M"], GuidedFilterParams(2, 0.01))),
                          dict(I=r(1, 12, 12, lo=0, hi=1), M=r(1, 12, 12, lo=0, hi=1))),
    }
    return cases
