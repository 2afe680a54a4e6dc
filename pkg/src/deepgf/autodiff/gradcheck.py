"""Central-difference verification of tape gradients."""

import numpy as np

from ..errors import ContractError, NumericalError
from .tape import Tape


def relative_error(analytic, numeric, floor=1e-8):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(graph, inputs, h=1e-5, max_coords=None, seed=0, reference_dtype=np.longdouble):
    """Worst relative error between tape gradients and central differences.

    ``graph(tape, nodes)`` must build a scalar node from ``nodes``, a dict of
    leaf variables created from ``inputs`` (name -> float64 array). At most
    ``max_coords`` randomly chosen coordinates per input are probed. A
    coordinate is skipped when either perturbation flips the sign of any
    ReLU/abs input, i.e. the difference quotient straddles a kink.

    The analytic gradient comes from a float64 tape. The perturbed forward
    passes run in ``reference_dtype``: in float64 the quotient carries a
    rounding error of about ``eps * |f| / h``, which swamps gradient
    coordinates near zero; extended precision (where the platform has it)
    pushes that floor below 1e-12.
    """
    inputs = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}

    def evaluate(values, want_grad=False, dtype=np.float64):
        tape = Tape(dtype)
        nodes = {k: tape.variable(v, name=k) for k, v in values.items()}
        out = graph(tape, nodes)
        if out.value.shape != ():
            raise ContractError(f"grad_check needs a scalar graph, got shape {out.shape}")
        if not np.isfinite(out.value):
            raise NumericalError("non-finite value in grad_check graph")
        if want_grad:
            tape.backward(out)
        return tape, nodes, out.value[()]

    tape, nodes, _ = evaluate(inputs, want_grad=True)
    kinks = _kink_signature(tape)
    analytic = {k: (n.grad if n.grad is not None else np.zeros_like(n.value)) for k, n in nodes.items()}
    rng = np.random.default_rng(seed)
    ref_inputs = {k: v.astype(reference_dtype) for k, v in inputs.items()}
    worst = 0.0
    for name, value in ref_inputs.items():
        flat = value.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            tp, _, fp = evaluate(ref_inputs, dtype=reference_dtype)
            kp = _kink_signature(tp)
            flat[c] = orig - h
            tm, _, fm = evaluate(ref_inputs, dtype=reference_dtype)
            km = _kink_signature(tm)
            flat[c] = orig
            if not (np.array_equal(kp, kinks) and np.array_equal(km, kinks)):
                continue
            numeric = float((fp - fm) / (2 * h))
            worst = max(worst, relative_error(float(analytic[name].reshape(-1)[c]), numeric))
    return worst


def _kink_signature(tape):
    # Sign pattern of every piecewise-linear node's input; equal patterns mean no kink was crossed.
    parts = []
    for node in tape.nodes:
        if node.op in ("relu", "leaky_relu", "abs"):
            parts.append(np.ravel(node.parents[0].value) > 0)
    return np.concatenate(parts) if parts else np.zeros(0, dtype=bool)
