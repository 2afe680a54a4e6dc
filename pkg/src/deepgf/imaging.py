"""Synthetic two-modality phantoms, degraded image pairs and evaluation masks.

Images are 2-D float64 numpy arrays in nominal range [0, 1]; masks are boolean
arrays of the same shape. The two modalities share their geometry (every shape
boundary is an edge in both) but draw their intensities independently.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .boxfilter import box_mean
from .errors import ConfigError, ContractError

SR_FACTOR = 4
TASKS = ("sr", "denoising")


@dataclass(frozen=True)
class PhantomSpec:
    seed: int = 0
    size: int = 64
    n_shapes: int = 8
    contrast_a: tuple = (0.2, 1.0)
    contrast_b: tuple = (0.2, 1.0)
    texture_amplitude: float = 0.02
    min_separation: float = 0.1

    def __post_init__(self):
        if self.size < 32:
            raise ConfigError(f"phantom size must be >= 32, got {self.size}")
        if self.n_shapes < 1:
            raise ConfigError(f"n_shapes must be >= 1, got {self.n_shapes}")
        for name in ("contrast_a", "contrast_b"):
            lo, hi = getattr(self, name)
            if not 0.0 <= lo <= hi:
                raise ConfigError(f"{name} must satisfy 0 <= lo <= hi, got {(lo, hi)}")
        if self.texture_amplitude < 0:
            raise ConfigError("texture_amplitude must be >= 0")

    def with_seed(self, seed):
        return PhantomSpec(int(seed), self.size, self.n_shapes, self.contrast_a,
                           self.contrast_b, self.texture_amplitude, self.min_separation)


@dataclass
class ImagePair:
    input: np.ndarray
    guide: np.ndarray
    ground_truth: np.ndarray
    mask: np.ndarray
    task: str
    degradation: str = "none"
    seed: int = 0
    id: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        shape = self.ground_truth.shape
        if self.guide.shape != shape or self.mask.shape != shape:
            raise ContractError("guide, ground truth and mask must share dimensions")
        if self.task == "sr":
            expected = (shape[0] // SR_FACTOR, shape[1] // SR_FACTOR)
        elif self.task == "denoising":
            expected = shape
        else:
            raise ConfigError(f"unknown task {self.task!r}")
        if self.input.shape != expected:
            raise ContractError(f"{self.task} input must be {expected}, got {self.input.shape}")


def check_image(image, name="image"):
    a = np.asarray(image, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ContractError(f"{name} must be a non-empty 2-D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ContractError(f"{name} contains non-finite values")
    return a


def derive_seed(base, index):
    """Stable 63-bit child seed for item ``index`` of a collection seeded with ``base``."""
    state = np.random.SeedSequence([int(base) & (2**64 - 1), int(index)]).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


# ---------------------------------------------------------------------- shapes

def _shape_support(kind, cy, cx, ry, rx, theta, yy, xx):
    c, s = np.cos(theta), np.sin(theta)
    u = (xx - cx) * c + (yy - cy) * s
    v = -(xx - cx) * s + (yy - cy) * c
    if kind == "ellipse":
        return (u / rx) ** 2 + (v / ry) ** 2 <= 1.0
    return (np.abs(u) <= rx) & (np.abs(v) <= ry)


def _draw_levels(rng, n, lo, hi, min_sep):
    levels = [0.0]
    for _ in range(n):
        for _attempt in range(64):
            v = rng.uniform(lo, hi)
            if all(abs(v - u) >= min_sep for u in levels):
                break
        levels.append(v)
    return levels[1:]


def _texture(rng, size, amplitude):
    if amplitude == 0:
        return np.zeros((size, size))
    yy, xx = np.mgrid[0:size, 0:size] / size
    t = np.zeros((size, size))
    for _ in range(3):
        fy, fx = rng.uniform(0.5, 2.0, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        t += np.cos(2 * np.pi * (fy * yy + fx * xx) + phase)
    return amplitude * t / 3.0


def make_phantom(spec):
    """Return ``(modality_a, modality_b, mask)`` for ``spec``; a pure function of it.

    The first shape is a large ellipse ("head"); the remaining ones are random
    ellipses and rotated rectangles centred inside it. Shapes are painted in
    order, each overwriting what lies beneath with its own per-modality level.
    Levels are resampled until they differ by ``min_separation`` from the
    background and every earlier level, so boundaries stay visible in both
    modalities. The mask is the union of all shape supports.
    """
    rng = np.random.default_rng(spec.seed)
    n = spec.size
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    c = (n - 1) / 2.0
    shapes = [("ellipse", c + rng.uniform(-0.03, 0.03) * n, c + rng.uniform(-0.03, 0.03) * n,
               rng.uniform(0.36, 0.44) * n, rng.uniform(0.30, 0.40) * n, rng.uniform(-0.3, 0.3))]
    head_ry, head_rx = shapes[0][3], shapes[0][4]
    for _ in range(spec.n_shapes - 1):
        kind = "ellipse" if rng.uniform() < 0.6 else "rect"
        ang = rng.uniform(0, 2 * np.pi)
        rad = np.sqrt(rng.uniform()) * 0.55
        cy = shapes[0][1] + rad * head_ry * np.sin(ang)
        cx = shapes[0][2] + rad * head_rx * np.cos(ang)
        ry, rx = rng.uniform(0.05, 0.16, size=2) * n
        shapes.append((kind, cy, cx, ry, rx, rng.uniform(0, np.pi)))
    levels_a = _draw_levels(rng, spec.n_shapes, *spec.contrast_a, spec.min_separation)
    levels_b = _draw_levels(rng, spec.n_shapes, *spec.contrast_b, spec.min_separation)
    tex_a = _texture(rng, n, spec.texture_amplitude)
    tex_b = _texture(rng, n, spec.texture_amplitude)

    img_a = np.zeros((n, n))
    img_b = np.zeros((n, n))
    mask = np.zeros((n, n), dtype=bool)
    for shape, va, vb in zip(shapes, levels_a, levels_b):
        support = _shape_support(shape[0], *shape[1:], yy, xx)
        img_a[support] = va
        img_b[support] = vb
        mask |= support
    img_a = np.where(mask, img_a + tex_a, 0.0)
    img_b = np.where(mask, img_b + tex_b, 0.0)
    return img_a, img_b, mask


def nearest_downsample(image, factor=SR_FACTOR):
    """Keep the top-left sample of each ``factor x factor`` block."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    return image[: h - h % factor: factor, : w - w % factor: factor].copy()


def make_dataset(spec, task, noise=None, n=1):
    """Generate ``n`` image pairs; pair ``i`` uses phantom seed ``derive_seed(spec.seed, i)``.

    SR: input is the nearest-neighbour ×4 downsample of modality A. Denoising:
    input is modality A corrupted by ``noise`` (identity when ``None``). The
    guide is always modality B at full resolution.
    """
    from .metrics import apply_noise

    if n < 1:
        raise ConfigError(f"dataset size must be >= 1, got {n}")
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}")
    pairs = []
    for i in range(n):
        seed = derive_seed(spec.seed, i)
        a, b, mask = make_phantom(spec.with_seed(seed))
        if task == "sr":
            inp, desc = nearest_downsample(a), f"nearest-x{SR_FACTOR}"
        elif noise is None:
            inp, desc = a.copy(), "none"
        else:
            noise_i = noise.with_seed(derive_seed(noise.seed, i))
            inp, desc = apply_noise(a, noise_i), noise.describe()
        pairs.append(ImagePair(inp, b, a, mask, task, desc, seed, id=f"{i:04d}"))
    return pairs


def head_mask(image, threshold):
    """Foreground mask: 5x5 box-smoothed image above ``threshold``, then closed with a radius-2 disk."""
    if not 0 <= threshold < 1:
        raise ConfigError(f"threshold must be in [0, 1), got {threshold}")
    image = check_image(image)
    r = min(2, min(image.shape) - 1)
    fg = box_mean(image, r) > threshold
    disk = np.hypot(*np.mgrid[-2:3, -2:3]) <= 2.0
    closed = ndimage.binary_dilation(fg, structure=disk)
    # Treat the outside as foreground while eroding so closing does not eat the border.
    return ndimage.binary_erosion(closed, structure=disk, border_value=1)
