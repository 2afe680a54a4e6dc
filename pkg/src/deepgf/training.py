"""Losses, Adam with plateau decay, and the training loop.

Only the generator is trained; guided-filter radius and epsilon are fixed
hyperparameters of the pipeline.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ops
from .autodiff.nn import GeneratorConfig, Network, build_generator
from .autodiff.tape import Tape
from .errors import ConfigError, ContractError, NumericalError
from .guided import GuidedFilterParams
from .pipeline import build_prediction

log = logging.getLogger(__name__)

LOSS_KINDS = ("l1", "ssim", "l1+grad")


@dataclass(frozen=True)
class LossSpec:
    kind: str = "l1+grad"
    grad_weight: float = 0.5

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ConfigError(f"unknown loss {self.kind!r}; choose from {LOSS_KINDS}")
        if self.grad_weight < 0:
            raise ConfigError("grad_weight must be >= 0")


def _masked_mean(x, mask):
    """Mean of node ``x`` over the true pixels of a boolean ``mask`` (broadcast over channels)."""
    m = np.asarray(mask, dtype=np.float64)
    return ops.div(ops.sum(ops.mul(x, m)), float(m.sum()))


def l1_masked(pred, target, mask):
    return _masked_mean(ops.abs(ops.sub(pred, target)), mask)


def ssim_loss(pred, target, mask):
    """``1 - mean SSIM`` over the mask, same window and constants as :func:`deepgf.metrics.ssim_map`."""
    from .metrics import DATA_RANGE, K1, K2

    tape = pred.tape
    t = tape.lift(target)
    c1 = (K1 * DATA_RANGE) ** 2
    c2 = (K2 * DATA_RANGE) ** 2
    blur = ops.gaussian_blur
    mu_p, mu_t = blur(pred), blur(t)
    mu_pt = ops.mul(mu_p, mu_t)
    var_p = ops.sub(blur(ops.mul(pred, pred)), ops.mul(mu_p, mu_p))
    var_t = ops.sub(blur(ops.mul(t, t)), ops.mul(mu_t, mu_t))
    cov = ops.sub(blur(ops.mul(pred, t)), mu_pt)
    num = ops.mul(ops.add(ops.mul(mu_pt, 2.0), c1), ops.add(ops.mul(cov, 2.0), c2))
    den = ops.mul(ops.add(ops.add(ops.mul(mu_p, mu_p), ops.mul(mu_t, mu_t)), c1),
                  ops.add(ops.add(var_p, var_t), c2))
    return ops.sub(1.0, _masked_mean(ops.div(num, den), mask))


def gradient_difference(pred, target, mask):
    """L1 between forward-difference image gradients, over pixel pairs inside the mask."""
    t = pred.tape.lift(target)
    m = np.asarray(mask, dtype=bool)
    terms = []
    for ax in (1, 2):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[ax], hi[ax] = slice(None, -1), slice(1, None)
        lo, hi = tuple(lo), tuple(hi)
        dp = ops.sub(ops.getitem(pred, hi), ops.getitem(pred, lo))
        dt = ops.sub(ops.getitem(t, hi), ops.getitem(t, lo))
        mm = m[None][hi] & m[None][lo]
        if mm.any():
            terms.append(_masked_mean(ops.abs(ops.sub(dp, dt)), mm))
    out = terms[0]
    for term in terms[1:]:
        out = ops.add(out, term)
    return out


def loss(pred, target, spec, mask=None):
    """Differentiable scalar loss between a ``(1, H, W)`` prediction node and a target array."""
    target = np.asarray(target, dtype=np.float64)
    if target.ndim == 2:
        target = target[None]
    if pred.shape != target.shape:
        raise ContractError(f"prediction {pred.shape} and target {target.shape} differ in shape")
    if mask is None:
        mask = np.ones(target.shape[1:], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ContractError("loss mask is empty")
    if spec.kind == "l1":
        return l1_masked(pred, target, mask)
    if spec.kind == "ssim":
        return ssim_loss(pred, target, mask)
    out = l1_masked(pred, target, mask)
    if spec.grad_weight:
        out = ops.add(out, ops.mul(gradient_difference(pred, target, mask), spec.grad_weight))
    return out


# ---------------------------------------------------------------------- Adam

@dataclass
class OptimizerState:
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """Bias-corrected Adam update, applied to ``params`` in place.

    Nothing is modified when any gradient is non-finite; a
    :class:`~deepgf.errors.NumericalError` is raised instead.
    """
    for name, g in grads.items():
        if name not in params or params[name].shape != np.shape(g):
            raise ContractError(f"gradient {name!r} does not match a parameter")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for {name!r}; step aborted")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, g in grads.items():
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        params[name] -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


class PlateauSchedule:
    """Multiply the learning rate by ``factor`` after ``patience`` evaluations without
    a relative improvement of ``threshold``; never below ``min_lr``."""

    def __init__(self, lr, min_lr, patience=5, factor=0.5, threshold=1e-4):
        self.lr, self.min_lr = lr, min_lr
        self.patience, self.factor, self.threshold = patience, factor, threshold
        self.best = math.inf
        self.bad = 0

    def update(self, metric):
        if metric < self.best * (1.0 - self.threshold):
            self.best = metric
            self.bad = 0
        else:
            self.bad += 1
            if self.bad >= self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.bad = 0
        return self.lr


# ------------------------------------------------------------------- training

@dataclass(frozen=True)
class TrainConfig:
    variant: str = "withGF"
    initial_lr: float = 1e-5
    min_lr: float = 1e-6
    patience: int = 5
    decay: float = 0.5
    threshold: float = 1e-4
    max_iterations: int = 1000
    val_every: int = 50
    seed: int = 0
    loss: LossSpec = LossSpec()
    gf: GuidedFilterParams = GuidedFilterParams()

    def __post_init__(self):
        if self.variant not in ("withGF", "withoutGF"):
            raise ConfigError(f"only withGF/withoutGF can be trained, got {self.variant!r}")
        if not 0 < self.min_lr <= self.initial_lr:
            raise ConfigError("need 0 < min_lr <= initial_lr")
        if not 0 < self.decay < 1:
            raise ConfigError("decay must lie in (0, 1)")
        if self.max_iterations < 0 or self.val_every < 1 or self.patience < 1:
            raise ConfigError("max_iterations >= 0, val_every >= 1 and patience >= 1 required")


FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    """Trained generator plus everything needed to reproduce or resume it.

    ``history`` rows are ``(iteration, train_loss, val_loss, lr)``; ``network``
    holds the best-validation parameters.
    """

    network: Network
    optimizer: OptimizerState
    train_config: TrainConfig
    task: str
    history: list = field(default_factory=list)
    best_iteration: int = 0
    best_val: float = math.inf
    version: int = FORMAT_VERSION

    @property
    def variant(self):
        return self.train_config.variant

    @property
    def gf(self):
        return self.train_config.gf


def _sample_loss(net, pair, cfg, params, tape):
    pred = build_prediction(tape, net, pair.input, pair.guide, pair.task, cfg.variant, cfg.gf, params)
    return loss(pred, pair.ground_truth, cfg.loss, pair.mask)


def evaluate_loss(net, pairs, cfg):
    total = 0.0
    for pair in pairs:
        tape = Tape()
        total += float(_sample_loss(net, pair, cfg, None, tape).value)
    return total / len(pairs)


def train(dataset, val_set, cfg, generator):
    """Train ``generator`` (a :class:`GeneratorConfig` or an initialized :class:`Network`).

    Batch size is one; sample order is a seeded permutation per epoch. Validation
    loss is evaluated every ``cfg.val_every`` iterations and after the last one,
    driving the plateau schedule and best-parameter selection.
    """
    if not dataset or not val_set:
        raise ConfigError("training and validation sets must be non-empty")
    train_ids = {id(p.input) for p in dataset}
    if any(id(p.input) in train_ids for p in val_set):
        raise ConfigError("validation pairs must be disjoint from training pairs")
    task = dataset[0].task
    if any(p.task != task for p in list(dataset) + list(val_set)):
        raise ConfigError("all pairs must share one task")
    net = build_generator(generator) if isinstance(generator, GeneratorConfig) else generator.copy()
    state = OptimizerState(lr=cfg.initial_lr)
    sched = PlateauSchedule(cfg.initial_lr, cfg.min_lr, cfg.patience, cfg.decay, cfg.threshold)
    rng = np.random.default_rng(cfg.seed)
    order = []
    history = []
    best_params = {k: v.copy() for k, v in net.params.items()}
    best_val, best_it = math.inf, 0
    if cfg.max_iterations == 0:
        best_val = evaluate_loss(net, val_set, cfg)
        history.append((0, math.nan, best_val, state.lr))
    running, n_running = 0.0, 0
    trace = []
    for it in range(1, cfg.max_iterations + 1):
        if not order:
            order = list(rng.permutation(len(dataset)))
        pair = dataset[order.pop(0)]
        tape = Tape()
        params = net.parameter_nodes(tape)
        value = _sample_loss(net, pair, cfg, params, tape)
        lv = float(value.value)
        trace.append(lv)
        if not math.isfinite(lv) or lv > 1e6:
            raise NumericalError(f"training diverged at iteration {it} (loss {lv})", trace)
        tape.backward(value)
        grads = {k: n.grad if n.grad is not None else np.zeros_like(n.value) for k, n in params.items()}
        try:
            adam_step(net.params, grads, state)
        except NumericalError as exc:
            raise NumericalError(f"iteration {it}: {exc}", trace) from None
        running += lv
        n_running += 1
        if it % cfg.val_every == 0 or it == cfg.max_iterations:
            val = evaluate_loss(net, val_set, cfg)
            history.append((it, running / n_running, val, state.lr))
            log.debug("iter %d train %.6g val %.6g lr %.3g", it, running / n_running, val, state.lr)
            running, n_running = 0.0, 0
            if val < best_val:
                best_val, best_it = val, it
                best_params = {k: v.copy() for k, v in net.params.items()}
            state.lr = sched.update(val)
    best = Network(net.config, best_params, net._layers)
    return Checkpoint(best, state, cfg, task, history, best_it, best_val)
