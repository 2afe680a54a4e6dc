"""Degradations, masked image-quality metrics and the wavelet low-frequency audit."""

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff.ops import gaussian_window_matrix
from .errors import ConfigError, ContractError

NOISE_LEVELS = {"low": 4000.0, "medium": 1000.0, "strong": 250.0}


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "poisson"
    photons_at_white: float = 1000.0
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("poisson", "gaussian"):
            raise ConfigError(f"unknown noise kind {self.kind!r}")
        if self.kind == "poisson" and not self.photons_at_white > 0:
            raise ConfigError("photons_at_white must be > 0")
        if self.sigma < 0:
            raise ConfigError("sigma must be >= 0")

    @classmethod
    def preset(cls, level, seed=0):
        try:
            return cls("poisson", NOISE_LEVELS[level], seed=seed)
        except KeyError:
            raise ConfigError(f"unknown noise level {level!r}; choose from {sorted(NOISE_LEVELS)}") from None

    def with_seed(self, seed):
        return NoiseSpec(self.kind, self.photons_at_white, self.sigma, int(seed))

    def describe(self):
        if self.kind == "poisson":
            return f"poisson-{self.photons_at_white:g}"
        return f"gaussian-{self.sigma:g}"


def apply_noise(image, spec):
    """Poisson: counts ~ Poisson(pixel * photons_at_white), rescaled back. Gaussian: additive N(0, sigma^2)."""
    image = np.asarray(image, dtype=np.float64)
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "gaussian":
        if spec.sigma == 0:
            return image.copy()
        return image + rng.normal(0.0, spec.sigma, size=image.shape)
    if np.any(image < 0):
        raise ContractError("Poisson noise requires non-negative pixel values")
    return rng.poisson(image * spec.photons_at_white).astype(np.float64) / spec.photons_at_white


# ---------------------------------------------------------------------- metrics

def _check(a, b, mask):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"shape mismatch {a.shape} vs {b.shape}")
    if mask is None:
        mask = np.ones(a.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape:
        raise ContractError(f"mask shape {mask.shape} does not match image shape {a.shape}")
    if not mask.any():
        raise ContractError("mask is empty")
    return a, b, mask


def mae_masked(a, b, mask=None):
    a, b, mask = _check(a, b, mask)
    return float(np.mean(np.abs(a - b)[mask]))


K1, K2, DATA_RANGE = 0.01, 0.03, 1.0
SSIM_WINDOW, SSIM_SIGMA = 11, 1.5


def ssim_map(a, b):
    """Per-pixel SSIM with an 11x11 Gaussian window (sigma 1.5), reflected borders."""
    h, w = a.shape
    gh = gaussian_window_matrix(h, SSIM_WINDOW, SSIM_SIGMA)
    gw = gaussian_window_matrix(w, SSIM_WINDOW, SSIM_SIGMA)

    def blur(x):
        return gh @ x @ gw.T

    c1 = (K1 * DATA_RANGE) ** 2
    c2 = (K2 * DATA_RANGE) ** 2
    mu_a, mu_b = blur(a), blur(b)
    var_a = blur(a * a) - mu_a * mu_a
    var_b = blur(b * b) - mu_b * mu_b
    cov = blur(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim_masked(a, b, mask=None):
    a, b, mask = _check(a, b, mask)
    return float(np.mean(ssim_map(a, b)[mask]))


# ---------------------------------------------------------------------- wavelets

SQRT3 = math.sqrt(3.0)
D4_LOWPASS = np.array([1 + SQRT3, 3 + SQRT3, 3 - SQRT3, 1 - SQRT3]) / (4 * math.sqrt(2.0))
D4_HIGHPASS = np.array([(-1) ** n * D4_LOWPASS[len(D4_LOWPASS) - 1 - n] for n in range(len(D4_LOWPASS))])


def _analysis_1d(x, axis):
    # Periodized: lo[k] = sum_n h[n] x[(2k + n) mod N]; odd N is first padded by repeating the last sample.
    n = x.shape[axis]
    if n % 2:
        x = np.concatenate([x, np.take(x, [n - 1], axis=axis)], axis=axis)
    lo = sum(c * np.roll(x, -i, axis=axis) for i, c in enumerate(D4_LOWPASS))
    hi = sum(c * np.roll(x, -i, axis=axis) for i, c in enumerate(D4_HIGHPASS))
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(None, None, 2)
    return lo[tuple(sl)], hi[tuple(sl)]


def _synthesis_1d(lo, hi, axis, n_out):
    shape = list(lo.shape)
    n = 2 * shape[axis]
    shape[axis] = n
    sl = [slice(None)] * lo.ndim
    sl[axis] = slice(None, None, 2)
    out = np.zeros(shape)
    for i, (h, g) in enumerate(zip(D4_LOWPASS, D4_HIGHPASS)):
        up = np.zeros(shape)
        up[tuple(sl)] = h * lo + g * hi
        out += np.roll(up, i, axis=axis)
    return np.take(out, np.arange(n_out), axis=axis)


@dataclass
class WaveletPyramid:
    """``details[l]`` holds the (LH, HL, HH) bands of level ``l + 1``; ``approx`` is the coarsest LL."""

    approx: np.ndarray
    details: list
    shapes: list = field(default_factory=list)

    @property
    def levels(self):
        return len(self.details)


def dwt2(image, levels=2):
    """Separable orthogonal D4 wavelet transform with periodized borders.

    Each level halves both dimensions (rounding up). Coefficient energy equals
    image energy for even sizes.
    """
    x = np.asarray(image, dtype=np.float64)
    if x.ndim != 2 or levels < 1 or min(x.shape) < 2 ** levels:
        raise ContractError(f"cannot take {levels} DWT levels of an image of shape {x.shape}")
    details, shapes = [], []
    for _ in range(levels):
        shapes.append(x.shape)
        lo, hi = _analysis_1d(x, 1)
        ll, lh = _analysis_1d(lo, 0)
        hl, hh = _analysis_1d(hi, 0)
        details.append((lh, hl, hh))
        x = ll
    return WaveletPyramid(x, details, shapes)


def idwt2(pyr):
    x = pyr.approx
    for (lh, hl, hh), shape in zip(reversed(pyr.details), reversed(pyr.shapes)):
        lo = _synthesis_1d(x, lh, 0, shape[0])
        hi = _synthesis_1d(hl, hh, 0, shape[0])
        x = _synthesis_1d(lo, hi, 1, shape[1])
    return x


def lowpass(image, levels=2):
    """Reconstruction from the coarsest approximation band only."""
    pyr = dwt2(image, levels)
    pyr.details = [tuple(np.zeros_like(d) for d in band) for band in pyr.details]
    return idwt2(pyr)


def lowfreq_ssim(pred, ref, mask=None, levels=2):
    pred, ref, mask = _check(pred, ref, mask)
    return ssim_masked(lowpass(pred, levels), lowpass(ref, levels), mask)


# ------------------------------------------------------------------------ report

CSV_HEADER = ("id", "variant", "task", "mae", "ssim", "lowfreq_ssim")


def fmt(value):
    return f"{value:.9g}"


@dataclass
class MetricReport:
    rows: list = field(default_factory=list)

    def add(self, id, variant, task, mae, ssim, lowfreq_ssim):
        self.rows.append(dict(id=id, variant=variant, task=task, mae=float(mae),
                              ssim=float(ssim), lowfreq_ssim=float(lowfreq_ssim)))

    def variants(self):
        seen = []
        for r in self.rows:
            if r["variant"] not in seen:
                seen.append(r["variant"])
        return seen

    def aggregate(self, variant, metric):
        """``(mean, std)`` of ``metric`` over the rows of ``variant``."""
        vals = np.array([r[metric] for r in self.rows if r["variant"] == variant])
        if vals.size == 0:
            raise KeyError(variant)
        return float(vals.mean()), float(vals.std())

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow([r["id"], r["variant"], r["task"], fmt(r["mae"]), fmt(r["ssim"]), fmt(r["lowfreq_ssim"])])
        return buf.getvalue()

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(self.to_csv())

    @classmethod
    def read_csv(cls, path):
        with open(path, encoding="utf-8", newline="") as f:
            reader = csv.reader(f)
            header = tuple(next(reader))
            if header != CSV_HEADER:
                raise ContractError(f"unexpected metrics header {header}")
            rep = cls()
            for row in reader:
                rep.add(row[0], row[1], row[2], *map(float, row[3:]))
            return rep
