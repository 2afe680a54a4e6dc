"""Comprehensibility experiments: content preservation, guide robustness,
adversarial residuals, and the ablation table runner.

Every experiment takes trained :class:`~deepgf.training.Checkpoint` objects and
held-out :class:`~deepgf.imaging.ImagePair` lists; results are merged in a
fixed order so the CSV outputs are byte-stable.
"""

import csv
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import ops
from .autodiff.tape import Tape
from .errors import ConfigError, ContractError, NumericalError
from .guided import GuidedFilterParams
from .imaging import derive_seed, make_dataset
from .metrics import NOISE_LEVELS, MetricReport, NoiseSpec, fmt, lowfreq_ssim, mae_masked, ssim_masked
from .pipeline import build_prediction, forward_pipeline, upsampled_input
from .training import OptimizerState, adam_step

SWEEP_HEADER = ("sweep_kind", "param", "variant", "metric", "value")
TRACE_HEADER = ("iteration", "objective", "deviation", "res_norm")
DEFAULT_SIGMAS = (0.0, 0.02, 0.05, 0.1, 0.2, 0.4)
DEFAULT_RADII = (2, 4, 8, 16)


@dataclass
class SweepResult:
    kind: str
    rows: list = field(default_factory=list)  # (param, variant, metric, value)

    def add(self, param, variant, metric, value):
        self.rows.append((param, variant, metric, float(value)))

    def value(self, param, variant, metric="ssim"):
        for p, v, m, x in self.rows:
            if p == param and v == variant and m == metric:
                return x
        raise KeyError((param, variant, metric))

    def series(self, variant, metric="ssim"):
        """``[(param, value), ...]`` in insertion order."""
        return [(p, x) for p, v, m, x in self.rows if v == variant and m == metric]

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        for p, v, m, x in self.rows:
            w.writerow([self.kind, p if isinstance(p, str) else fmt(p), v, m, fmt(x)])
        return buf.getvalue()

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(self.to_csv())


def _evaluate(cp, pairs, variant, gf=None):
    net = cp.network if cp is not None else None
    gf = gf or (cp.gf if cp is not None else GuidedFilterParams())
    return [forward_pipeline(net, p, variant, gf) for p in pairs]


def _lowfreq_reference(pair):
    # SR is compared against the upsampled input, denoising against the label.
    return upsampled_input(pair) if pair.task == "sr" else pair.ground_truth


def _require(cp, variant, what):
    if cp is None:
        raise ConfigError(f"{what}: missing {variant} checkpoint")
    if cp.variant != variant:
        raise ConfigError(f"{what}: expected a {variant} checkpoint, got {cp.variant}")


# ------------------------------------------------------------------ robustness

def robustness_sweep(cp_withgf, cp_withoutgf, test_set, sigmas=DEFAULT_SIGMAS, seed=0):
    """Masked SSIM of both learned variants while the guide carries Gaussian noise.

    Image ``i`` receives ``sigma * z_i`` with one standard-normal field ``z_i``
    per image, so sigma = 0 is exactly the clean evaluation and larger sigmas
    scale the same realization.
    """
    _require(cp_withgf, "withGF", "robustness sweep")
    _require(cp_withoutgf, "withoutGF", "robustness sweep")
    sigmas = [float(s) for s in sigmas]
    if not sigmas or any(s < 0 for s in sigmas) or sigmas != sorted(sigmas):
        raise ConfigError("sigmas must be non-negative and sorted ascending")
    fields_ = [np.random.default_rng(derive_seed(seed, i)).standard_normal(p.guide.shape)
               for i, p in enumerate(test_set)]
    out = SweepResult("robustness")
    for sigma in sigmas:
        noisy = [replace(p, guide=p.guide + sigma * z) if sigma else p for p, z in zip(test_set, fields_)]
        for cp in (cp_withgf, cp_withoutgf):
            preds = _evaluate(cp, noisy, cp.variant)
            out.add(sigma, cp.variant, "ssim",
                    np.mean([ssim_masked(P, p.ground_truth, p.mask) for P, p in zip(preds, noisy)]))
    return out


# -------------------------------------------------------- content preservation

def content_preservation_sweep(withgf, cp_withoutgf, test_set, radii=DEFAULT_RADII):
    """Low-frequency SSIM of predictions against the lowfreq reference, per radius.

    ``withgf`` maps radius -> withGF checkpoint trained at that radius; a single
    checkpoint is instead evaluated at every radius. One extra row holds the
    withoutGF reference level (param ``"ref"``).
    """
    _require(cp_withoutgf, "withoutGF", "content preservation sweep")
    out = SweepResult("radius")
    for r in radii:
        cp = withgf.get(r) if isinstance(withgf, dict) else withgf
        _require(cp, "withGF", f"content preservation sweep (radius {r})")
        gf = GuidedFilterParams(int(r), cp.gf.epsilon)
        preds = _evaluate(cp, test_set, "withGF", gf)
        out.add(int(r), "withGF", "lowfreq_ssim",
                np.mean([lowfreq_ssim(P, _lowfreq_reference(p), p.mask) for P, p in zip(preds, test_set)]))
    preds = _evaluate(cp_withoutgf, test_set, "withoutGF")
    out.add("ref", "withoutGF", "lowfreq_ssim",
            np.mean([lowfreq_ssim(P, _lowfreq_reference(p), p.mask) for P, p in zip(preds, test_set)]))
    return out


# ---------------------------------------------------------------- noise levels

def noise_sweep(cp_withgf, cp_withoutgf, spec, levels=("low", "medium", "strong"), n=4):
    """Denoising at each Poisson preset: MAE, SSIM and lowfreq SSIM per variant.

    ``spec`` is the phantom spec of the held-out set; the param column is the
    preset's photons_at_white.
    """
    _require(cp_withgf, "withGF", "noise sweep")
    _require(cp_withoutgf, "withoutGF", "noise sweep")
    out = SweepResult("noise")
    for level in levels:
        noise = NoiseSpec.preset(level, seed=derive_seed(spec.seed, 1 << 20))
        pairs = make_dataset(spec, "denoising", noise, n)
        for variant, cp in (("onlyGF", None), ("withGF", cp_withgf), ("withoutGF", cp_withoutgf)):
            gf = cp_withgf.gf if cp is None else cp.gf
            preds = _evaluate(cp, pairs, variant, gf)
            photons = NOISE_LEVELS[level]
            out.add(photons, variant, "mae",
                    np.mean([mae_masked(P, p.ground_truth, p.mask) for P, p in zip(preds, pairs)]))
            out.add(photons, variant, "ssim",
                    np.mean([ssim_masked(P, p.ground_truth, p.mask) for P, p in zip(preds, pairs)]))
            out.add(photons, variant, "lowfreq_ssim",
                    np.mean([lowfreq_ssim(P, p.ground_truth, p.mask) for P, p in zip(preds, pairs)]))
    return out


# ------------------------------------------------------------------- ablation

def evaluate_variants(test_set, task, checkpoints, gf=None):
    """Per-image metrics of the interpolation baseline, onlyGF and every given checkpoint.

    ``checkpoints`` maps variant name to checkpoint; any subset of
    ``withGF``/``withoutGF`` is accepted. The baseline is bilinear upsampling
    for SR and the (noisy) input itself for denoising. onlyGF uses ``gf``,
    defaulting to the withGF checkpoint's filter parameters when present.
    """
    for v, cp in checkpoints.items():
        _require(cp, v, "evaluation")
        if cp.task != task:
            raise ConfigError(f"{v} checkpoint was trained for {cp.task}, not {task}")
    for p in test_set:
        if p.task != task:
            raise ConfigError(f"pair {p.id} has task {p.task}, expected {task}")
    if gf is None:
        gf = checkpoints["withGF"].gf if "withGF" in checkpoints else GuidedFilterParams()
    baseline = "bilinear" if task == "sr" else "identity"
    preds = {baseline: [upsampled_input(p) for p in test_set],
             "onlyGF": _evaluate(None, test_set, "onlyGF", gf)}
    for v in ("withGF", "withoutGF"):
        if v in checkpoints:
            preds[v] = _evaluate(checkpoints[v], test_set, v)
    report = MetricReport()
    for variant, ps in preds.items():
        for P, p in zip(ps, test_set):
            report.add(p.id, variant, task, mae_masked(P, p.ground_truth, p.mask),
                       ssim_masked(P, p.ground_truth, p.mask),
                       lowfreq_ssim(P, _lowfreq_reference(p), p.mask))
    return report


def ablation_run(test_set, task, checkpoints, gf=None):
    """The full ablation table: requires separately trained withGF and withoutGF checkpoints."""
    for v in ("withGF", "withoutGF"):
        if checkpoints.get(v) is None:
            raise ConfigError(f"ablation: missing {v} checkpoint")
    return evaluate_variants(test_set, task, checkpoints, gf)


# --------------------------------------------------------------------- attack

@dataclass(frozen=True)
class AttackSpec:
    """Adversarial residual training.

    Adam's step size decays geometrically from ``initial_lr`` to ``final_lr``
    over ``iterations``; ``lam`` weights the L2 norm penalty. The residuals reach
    the network only: the guided filter keeps filtering the clean input, as in
    ``P = GF(phi(I + E_I, G + E_G), I)``. ``perturb_filter_input`` also feeds
    ``I + E_I`` to the filter.
    """

    lam: float = 0.1
    initial_lr: float = 1e-2
    final_lr: float = 1e-5
    iterations: int = 200
    variant: str = "withGF"
    lambda_adversarial: float = 1.0
    perturb_filter_input: bool = False

    def __post_init__(self):
        if not self.lam >= 0 or not self.lambda_adversarial >= 0:
            raise ConfigError("lam and lambda_adversarial must be >= 0")
        if not 0 < self.final_lr <= self.initial_lr:
            raise ConfigError("need 0 < final_lr <= initial_lr")
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.variant not in ("withGF", "withoutGF"):
            raise ConfigError(f"attacks target withGF or withoutGF, got {self.variant!r}")

    def lr_at(self, it):
        """Step size for 0-based iteration ``it``."""
        if self.iterations <= 1:
            return self.initial_lr
        return self.initial_lr * (self.final_lr / self.initial_lr) ** (it / (self.iterations - 1))


@dataclass
class AttackResult:
    E_I: np.ndarray
    E_G: np.ndarray
    trace: list  # (iteration, objective, deviation, res_norm)
    variant: str
    perturb_filter_input: bool = False

    def filter_image(self, pair):
        return None if self.perturb_filter_input else pair.input

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for it, obj, dev, norm in self.trace:
            w.writerow([it, fmt(obj), fmt(dev), fmt(norm)])
        return buf.getvalue()

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(self.to_csv())

    @property
    def final_deviation(self):
        return self.trace[-1][2] if self.trace else math.nan


def _l2(node):
    return ops.sqrt(ops.sum(ops.square(node)))


def train_attack(cp, pair, spec):
    """Learn residuals ``E_I``, ``E_G`` that maximize ``|L - P|_1 - lam (|E_I|_2 + |E_G|_2)``.

    ``P`` is the pipeline of ``spec.variant`` on ``(I + E_I, G + E_G)``; the
    deviation is the L1 norm of ``L - P`` summed over the mask (a per-pixel
    mean would shrink its gradient below the norm penalty and pin E at zero).
    The network is frozen. Trace rows are recorded before each update.
    """
    _require(cp, spec.variant, "attack")
    if pair.task != cp.task:
        raise ConfigError(f"checkpoint trained for {cp.task}, pair is {pair.task}")
    net, gf = cp.network, cp.gf
    before = net.checksum()
    E = {"E_I": np.zeros((1,) + pair.input.shape), "E_G": np.zeros((1,) + pair.guide.shape)}
    state = OptimizerState(lr=spec.initial_lr)
    gt, mask = pair.ground_truth[None], pair.mask[None].astype(np.float64)
    trace = []
    for it in range(spec.iterations):
        tape = Tape()
        e_i, e_g = tape.variable(E["E_I"], name="E_I"), tape.variable(E["E_G"], name="E_G")
        image = ops.add(tape.constant(pair.input[None]), e_i)
        guide = ops.add(tape.constant(pair.guide[None]), e_g)
        pred = build_prediction(tape, net, image, guide, pair.task, spec.variant, gf,
                                filter_image=None if spec.perturb_filter_input else pair.input)
        deviation = ops.sum(ops.mul(ops.abs(ops.sub(pred, gt)), mask))
        norm = ops.add(_l2(e_i), _l2(e_g))
        objective = ops.sub(deviation, ops.mul(norm, spec.lam))
        row = (it + 1, float(objective.value), float(deviation.value), float(norm.value))
        trace.append(row)
        if not all(math.isfinite(x) for x in row[1:]):
            raise NumericalError(f"attack diverged at iteration {it + 1}", trace)
        tape.backward(ops.neg(objective))
        grads = {"E_I": e_i.grad, "E_G": e_g.grad}
        state.lr = spec.lr_at(it)
        try:
            adam_step(E, grads, state)
        except NumericalError as exc:
            raise NumericalError(f"attack iteration {it + 1}: {exc}", trace) from None
    if net.checksum() != before:
        raise ContractError("attack modified the network parameters")
    return AttackResult(E["E_I"][0], E["E_G"][0], trace, spec.variant, spec.perturb_filter_input)


def _unit_max(e):
    m = float(np.max(np.abs(e)))
    return e / m if m > 0 else np.zeros_like(e)


def attacked_pair(pair, result, lambda_adversarial):
    """``pair`` with max-abs-normalized residuals scaled by ``lambda_adversarial`` added."""
    if result.E_I.shape != pair.input.shape or result.E_G.shape != pair.guide.shape:
        raise ContractError("residual shapes do not match the pair")
    if lambda_adversarial < 0:
        raise ConfigError("lambda_adversarial must be >= 0")
    if lambda_adversarial == 0:
        return pair
    return replace(pair, input=pair.input + lambda_adversarial * _unit_max(result.E_I),
                   guide=pair.guide + lambda_adversarial * _unit_max(result.E_G))


def apply_attack(cp, pair, result, lambda_adversarial):
    """Return ``(P_attacked, deviation)``; the deviation is the masked MAE vs the label."""
    _require(cp, result.variant, "apply attack")
    attacked = attacked_pair(pair, result, lambda_adversarial)
    P = forward_pipeline(cp.network, attacked, result.variant, cp.gf, filter_image=result.filter_image(pair))
    return P, mae_masked(P, pair.ground_truth, pair.mask)


def attack_curve(cp, pair, result, lambdas):
    """Deviation versus ``lambda_adversarial`` as a :class:`SweepResult`."""
    out = SweepResult("attack")
    for lam in lambdas:
        out.add(float(lam), result.variant, "mae", apply_attack(cp, pair, result, lam)[1])
    return out

