"""Guidance-map generators: miniature dual-encoder U-net and WDSR-style SR network.

Both map an (input, guide) pair to a single-channel guidance map with the
ground-truth resolution. Parameters are plain float64 arrays keyed by name;
the graph is rebuilt on every forward call.
"""

from dataclasses import asdict, dataclass, fields

import numpy as np

from ..errors import ConfigError, ContractError
from . import ops

ARCHITECTURES = ("unet-mini", "wdsr-mini")
UPSAMPLERS = ("bilinear+conv", "pixel-shuffle")
ACTIVATIONS = ("relu", "leaky-relu")
NORMALIZATIONS = ("none", "instance")


@dataclass(frozen=True)
class GeneratorConfig:
    """Architecture of the guidance-map generator.

    ``scale`` is the ratio between guide and input resolution (4 for SR, 1 for
    denoising). ``fusion_level`` is the U-net encoder level after which the two
    modality paths are concatenated (-1: after the last level). ``n_blocks`` and
    ``expansion`` apply to wdsr-mini only.
    """

    architecture: str = "wdsr-mini"
    scale: int = 4
    encoder_depth: int = 2
    base_channels: int = 8
    fusion_level: int = -1
    upsample: str = "pixel-shuffle"
    activation: str = "relu"
    leaky_slope: float = 0.2
    normalization: str = "none"
    n_blocks: int = 4
    expansion: int = 4
    residual: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.architecture!r}")
        if self.upsample not in UPSAMPLERS:
            raise ConfigError(f"unknown upsample mode {self.upsample!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.normalization not in NORMALIZATIONS:
            raise ConfigError(f"unknown normalization {self.normalization!r}")
        if self.scale < 1 or self.scale & (self.scale - 1):
            raise ConfigError(f"scale must be a power of two, got {self.scale}")
        if self.base_channels < 1 or self.encoder_depth < 1:
            raise ConfigError("base_channels and encoder_depth must be >= 1")
        if self.architecture == "wdsr-mini":
            if self.scale == 1:
                raise ConfigError("wdsr-mini is a super-resolution network; scale must be > 1")
            if self.n_blocks < 1 or self.expansion < 1:
                raise ConfigError("wdsr-mini needs n_blocks >= 1 and expansion >= 1")
        if self.architecture == "unet-mini":
            f = self.resolved_fusion_level
            if not 0 <= f < self.encoder_depth:
                raise ConfigError(
                    f"fusion_level {self.fusion_level} outside encoder depth {self.encoder_depth}")

    @property
    def resolved_fusion_level(self):
        return self.fusion_level if self.fusion_level >= 0 else self.encoder_depth + self.fusion_level

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name: f.type for f in fields(cls)}
        unknown = set(d) - set(names)
        if unknown:
            raise ConfigError(f"unknown generator keys: {sorted(unknown)}")
        return cls(**d)


class Network:
    """A generator φ with named parameters.

    ``forward(tape, image, guide, params)`` builds the graph. ``image`` is the
    raw low-resolution input for wdsr-mini and the (upsampled) full-resolution
    input for unet-mini; ``params`` maps names to tape nodes (see
    :meth:`parameter_nodes`).
    """

    def __init__(self, config, params, layers):
        self.config = config
        self.params = params
        self._layers = layers  # name -> (out, in, k)

    @property
    def parameter_count(self):
        return int(sum(p.size for p in self.params.values()))

    def parameter_nodes(self, tape, trainable=True):
        make = tape.variable if trainable else tape.constant
        return {name: make(value, name=name) for name, value in self.params.items()}

    def copy(self):
        return Network(self.config, {k: v.copy() for k, v in self.params.items()}, dict(self._layers))

    def checksum(self):
        import hashlib

        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name], dtype="<f8").tobytes())
        return h.hexdigest()

    # ------------------------------------------------------------------ graph
    def _act(self, x):
        if self.config.activation == "relu":
            return ops.relu(x)
        return ops.leaky_relu(x, self.config.leaky_slope)

    def _norm(self, x):
        return ops.instance_norm(x) if self.config.normalization == "instance" else x

    def _conv(self, p, name, x, stride=1):
        return ops.conv2d(x, p[name + ".w"], p[name + ".b"], stride=stride, padding="same")

    def forward(self, tape, image, guide, params=None):
        if params is None:
            params = self.parameter_nodes(tape, trainable=False)
        image, guide = tape.lift(image), tape.lift(guide)
        if self.config.architecture == "unet-mini":
            return self._unet(params, image, guide)
        return self._wdsr(params, image, guide)

    def _block(self, p, prefix, x):
        x = self._act(self._norm(self._conv(p, prefix + ".conv1", x)))
        return self._act(self._norm(self._conv(p, prefix + ".conv2", x)))

    def _unet(self, p, image, guide):
        cfg = self.config
        depth, fuse = cfg.encoder_depth, cfg.resolved_fusion_level
        if image.shape != guide.shape:
            raise ContractError(f"unet-mini needs equally sized inputs, got {image.shape} and {guide.shape}")
        h, w = image.shape[1:]
        if h % 2 ** (depth - 1) or w % 2 ** (depth - 1):
            raise ContractError(f"input {h}x{w} not divisible by 2^{depth - 1}")
        skips = []
        xi, xg = image, guide
        for level in range(fuse + 1):
            if level:
                xi, xg = ops.avg_pool2(xi), ops.avg_pool2(xg)
            xi = self._block(p, f"enc_i.{level}", xi)
            xg = self._block(p, f"enc_g.{level}", xg)
            skips.append([xi, xg])
        x = ops.concat([xi, xg])
        for level in range(fuse + 1, depth):
            x = self._block(p, f"enc_s.{level}", ops.avg_pool2(x))
            skips.append([x])
        for level in range(depth - 2, -1, -1):
            lh, lw = skips[level][0].shape[1:]
            if cfg.upsample == "pixel-shuffle":
                x = ops.pixel_shuffle(self._conv(p, f"up.{level}", x), 2)
            else:
                x = self._conv(p, f"up.{level}", ops.bilinear_resize(x, lh, lw))
            x = self._act(x)
            x = self._block(p, f"dec.{level}", ops.concat([x] + skips[level]))
        out = self._conv(p, "head", x)
        if cfg.residual:
            out = ops.add(out, image)
        return out

    def _wdsr(self, p, image, guide):
        cfg = self.config
        s = cfg.scale
        _, h, w = image.shape
        if guide.shape != (1, h * s, w * s):
            raise ContractError(
                f"wdsr-mini expects a guide of shape (1, {h * s}, {w * s}), got {guide.shape}")
        g = guide
        for i in range(int(np.log2(s))):
            g = self._act(self._conv(p, f"genc.{i}", g, stride=2))
        x = self._conv(p, "head", ops.concat([image, g]))
        for i in range(cfg.n_blocks):
            y = self._act(self._conv(p, f"body.{i}.conv1", x))
            x = ops.add(x, self._conv(p, f"body.{i}.conv2", y))
        out = self._upsample(p, "tail", x)
        out = ops.add(out, self._upsample(p, "skip_i", image))
        out = ops.add(out, self._upsample(p, "skip_g", g))
        if cfg.residual:
            out = ops.add(out, ops.bilinear_resize(image, h * s, w * s))
        return out

    def _upsample(self, p, name, x):
        _, h, w = x.shape
        s = self.config.scale
        if self.config.upsample == "pixel-shuffle":
            return ops.pixel_shuffle(self._conv(p, name, x), s)
        return self._conv(p, name, ops.bilinear_resize(x, h * s, w * s))


def _layer_table(cfg):
    """Ordered ``name -> (out_channels, in_channels, kernel)`` for every conv."""
    layers = {}
    if cfg.architecture == "unet-mini":
        b, depth, fuse = cfg.base_channels, cfg.encoder_depth, cfg.resolved_fusion_level
        ch = [b * 2 ** level for level in range(depth)]
        for path in ("enc_i", "enc_g"):
            cin = 1
            for level in range(fuse + 1):
                layers[f"{path}.{level}.conv1"] = (ch[level], cin, 3)
                layers[f"{path}.{level}.conv2"] = (ch[level], ch[level], 3)
                cin = ch[level]
        cin = 2 * ch[fuse]
        for level in range(fuse + 1, depth):
            layers[f"enc_s.{level}.conv1"] = (ch[level], cin, 3)
            layers[f"enc_s.{level}.conv2"] = (ch[level], ch[level], 3)
            cin = ch[level]
        for level in range(depth - 2, -1, -1):
            up_out = ch[level] * (4 if cfg.upsample == "pixel-shuffle" else 1)
            layers[f"up.{level}"] = (up_out, cin, 3)
            n_skip = 2 if level <= fuse else 1
            layers[f"dec.{level}.conv1"] = (ch[level], ch[level] * (1 + n_skip), 3)
            layers[f"dec.{level}.conv2"] = (ch[level], ch[level], 3)
            cin = ch[level]
        layers["head"] = (1, cin, 1)
    else:
        c, s = cfg.base_channels, cfg.scale
        up = s * s if cfg.upsample == "pixel-shuffle" else 1
        cin = 1
        for i in range(int(np.log2(s))):
            layers[f"genc.{i}"] = (c, cin, 3)
            cin = c
        layers["head"] = (c, 1 + c, 3)
        for i in range(cfg.n_blocks):
            layers[f"body.{i}.conv1"] = (c * cfg.expansion, c, 3)
            layers[f"body.{i}.conv2"] = (c, c * cfg.expansion, 3)
        layers["tail"] = (up, c, 3)
        layers["skip_i"] = (up, 1, 5)
        layers["skip_g"] = (up, c, 3)
    return layers


def _is_output_layer(cfg, name):
    if cfg.architecture == "unet-mini":
        return name == "head"
    return name in ("tail", "skip_i", "skip_g")


def expected_parameter_count(cfg):
    return sum(o * i * k * k + o for o, i, k in _layer_table(cfg).values())


def build_generator(config):
    """Instantiate a generator with He fan-in normal weights and zero biases, seeded.

    With ``residual`` enabled the layers that write into the output sum start at
    zero, so the untrained network returns its (upsampled) input image.
    """
    layers = _layer_table(config)
    rng = np.random.default_rng(config.seed)
    params = {}
    for name, (o, i, k) in layers.items():
        std = np.sqrt(2.0 / (i * k * k))
        w = rng.normal(0.0, std, size=(o, i, k, k))
        if config.residual and _is_output_layer(config, name):
            w[:] = 0.0
        params[name + ".w"] = w
        params[name + ".b"] = np.zeros(o)
    return Network(config, params, layers)
