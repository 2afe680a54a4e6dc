"""The guided filtering pipeline of the three ablation variants.

* ``withGF``: ``P = GF(I_in, M = φ(I, G))``
* ``withoutGF``: ``P = φ(I, G)``
* ``onlyGF``: ``P = GF(I_in, M = G)``, no network

For SR, ``I_in`` is the bilinear ×4 upsampled input ``I_up``; for denoising it
is ``I`` itself.
"""

import numpy as np

from .autodiff import ops
from .autodiff.layers import guided_filter_node
from .autodiff.tape import Tape
from .errors import ConfigError, ContractError
from .imaging import SR_FACTOR

VARIANTS = ("withGF", "withoutGF", "onlyGF")


def _as_chw(x):
    x = np.asarray(x, dtype=np.float64)
    return x[None] if x.ndim == 2 else x


def _lift(tape, x):
    return tape.lift(_as_chw(x) if not hasattr(x, "tape") else x)


def build_prediction(tape, net, image, guide, task, variant, gf_params, params=None, filter_image=None):
    """Record the pipeline on ``tape`` and return the prediction node ``(1, H, W)``.

    ``image`` and ``guide`` may be raw arrays or nodes (for attacks on the inputs).
    ``params`` are the network's parameter nodes; constants when omitted.
    ``filter_image`` replaces ``image`` as the guided filter's input (the network
    still sees ``image``); attacks use it to keep the filtered input clean.
    """
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}")
    image, guide = _lift(tape, image), _lift(tape, guide)
    source = image if filter_image is None else _lift(tape, filter_image)
    if source.shape != image.shape:
        raise ContractError(f"filter image {source.shape} does not match input {image.shape}")
    if task == "sr":
        _, h, w = source.shape
        filtered = ops.bilinear_resize(source, h * SR_FACTOR, w * SR_FACTOR)
    elif task == "denoising":
        filtered = source
    else:
        raise ConfigError(f"unknown task {task!r}")
    if variant == "onlyGF":
        return guided_filter_node(filtered, guide, gf_params)
    if net is None:
        raise ConfigError(f"variant {variant} needs a generator network")
    if task == "denoising" and net.config.scale != 1:
        raise ConfigError("denoising requires a generator with scale 1")
    if task == "sr" and net.config.scale != SR_FACTOR:
        raise ConfigError(f"super-resolution requires a generator with scale {SR_FACTOR}")
    if net.config.architecture == "wdsr-mini":
        net_input = image
    elif filter_image is None:
        net_input = filtered
    else:
        net_input = image if task == "denoising" else ops.bilinear_resize(image, *filtered.shape[1:])
    guidance = net.forward(tape, net_input, guide, params)
    if variant == "withoutGF":
        return guidance
    return guided_filter_node(filtered, guidance, gf_params)


def forward_pipeline(net, pair, variant, gf_params, dtype=np.float64, filter_image=None):
    """Inference on one :class:`~deepgf.imaging.ImagePair`; returns a ``(H, W)`` array."""
    tape = Tape(dtype)
    out = build_prediction(tape, net, pair.input, pair.guide, pair.task, variant, gf_params,
                           filter_image=filter_image)
    return out.value[0]


def guidance_map(net, image, guide, task):
    """φ evaluated outside any training graph; ``image`` is the raw input."""
    tape = Tape()
    image = _as_chw(image)
    if task == "sr" and net.config.architecture == "unet-mini":
        image = ops.bilinear_resize(tape.constant(image), image.shape[1] * SR_FACTOR,
                                    image.shape[2] * SR_FACTOR)
    return net.forward(tape, image, _as_chw(guide)).value[0]


def upsampled_input(pair):
    if pair.task != "sr":
        return np.asarray(pair.input, dtype=np.float64)
    h, w = pair.input.shape
    return ops.bilinear_resize_array(pair.input, h * SR_FACTOR, w * SR_FACTOR)
