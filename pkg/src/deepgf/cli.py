"""``deepgf`` command line: dataset generation, training, inference, evaluation,
sweeps, adversarial attacks and guidance-map inspection.

Experiments are defined in a run config (see :mod:`deepgf.runconfig`); flags
only name files or override single keys (``--set key=value``). All numeric
results are written as CSV. Exit codes: 0 ok, 2 configuration error, 3 I/O
error, 4 numerical failure.
"""

import argparse
import logging
import os
import sys

import numpy as np

from .errors import ConfigError, ContractError, DGFError, DGFIOError, NumericalError

log = logging.getLogger("deepgf")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


def _thread_limit():
    raw = os.environ.get("DGF_THREADS")
    if raw is None or raw.strip() == "":
        return None
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        raise ConfigError(f"DGF_THREADS must be a positive integer, got {raw!r}")
    return n


def _run_config(args):
    from .runconfig import RunConfig

    return RunConfig.load(args.config, args.set or ())


def _load_checkpoints(paths):
    from .checkpoint import load_checkpoint

    out = {}
    for path in paths:
        cp = load_checkpoint(path)
        out.setdefault(cp.variant, []).append(cp)
    return out


def _single(cps, variant, what):
    found = cps.get(variant, [])
    if len(found) != 1:
        raise ConfigError(f"{what} needs exactly one {variant} checkpoint, got {len(found)}")
    return found[0]


def _select_pair(pairs, key):
    if key is None:
        return pairs[0]
    for p in pairs:
        if p.id == key:
            return p
    raise ConfigError(f"no pair with id {key!r} in dataset")


# -------------------------------------------------------------------- commands

def cmd_gen(args):
    from .fileio import save_dataset
    from .imaging import make_dataset

    rc = _run_config(args)
    out = rc.path("data", args.out)
    n = rc.typed("n", int, 4)
    pairs = make_dataset(rc.phantom_spec(), rc.task, rc.noise_spec(), n)
    save_dataset(pairs, out)
    log.info("wrote %d pairs to %s", len(pairs), out)


def cmd_train(args):
    from .checkpoint import save_checkpoint
    from .fileio import load_dataset
    from .training import train

    rc = _run_config(args)
    train_set = load_dataset(rc.path("data", args.data))
    val_set = load_dataset(rc.path("val_data", args.val))
    cfg = rc.train_config()
    gen = rc.generator_config()
    if train_set[0].task != rc.task:
        raise ConfigError(f"config task {rc.task} but dataset holds {train_set[0].task} pairs")
    cp = train(train_set, val_set, cfg, gen)
    save_checkpoint(cp, rc.path("checkpoint", args.out))


def cmd_infer(args):
    from .checkpoint import load_checkpoint
    from .fileio import read_image, write_image
    from .guided import GuidedFilterParams
    from .imaging import SR_FACTOR, ImagePair
    from .pipeline import forward_pipeline

    image, guide = read_image(args.input), read_image(args.guide)
    if args.checkpoint == "none":
        net, variant = None, args.variant or "onlyGF"
        if variant != "onlyGF":
            raise ConfigError(f"variant {variant} needs a checkpoint")
        gf = GuidedFilterParams()
    else:
        cp = load_checkpoint(args.checkpoint)
        net, variant, gf = cp.network, args.variant or cp.variant, cp.gf
        if variant not in ("onlyGF", cp.variant):
            raise ConfigError(f"checkpoint was trained as {cp.variant}, cannot run {variant}")
    gf = GuidedFilterParams(args.radius if args.radius is not None else gf.radius,
                            args.epsilon if args.epsilon is not None else gf.epsilon)
    task = "sr" if image.shape != guide.shape else "denoising"
    if task == "sr" and guide.shape != (image.shape[0] * SR_FACTOR, image.shape[1] * SR_FACTOR):
        raise ContractError(f"guide {guide.shape} is neither the input size nor {SR_FACTOR}x it")
    pair = ImagePair(image, guide, np.zeros_like(guide), np.ones(guide.shape, dtype=bool), task)
    write_image(forward_pipeline(net, pair, variant, gf), args.out)


def cmd_eval(args):
    from .experiments import evaluate_variants
    from .fileio import load_dataset

    rc = _run_config(args)
    pairs = load_dataset(rc.path("test_data", args.data))
    cps = _load_checkpoints(rc.checkpoint_paths(args.checkpoint or ()))
    chosen = {v: _single(cps, v, "eval") for v in cps}
    gf = rc.gf_params() if any(k.startswith("gf.") for k in rc.values) else None
    report = evaluate_variants(pairs, pairs[0].task, chosen, gf)
    report.write_csv(rc.path("output", args.out))


def cmd_sweep(args):
    from . import experiments as ex
    from .fileio import load_dataset

    rc = _run_config(args)
    cps = _load_checkpoints(rc.checkpoint_paths(args.checkpoint or ()))
    without = _single(cps, "withoutGF", f"sweep {args.kind}")
    if args.kind == "radius":
        withgf = cps.get("withGF", [])
        if len(withgf) == 1:
            target = withgf[0]
        else:
            target = {cp.gf.radius: cp for cp in withgf}
            if len(target) != len(withgf):
                raise ConfigError("two withGF checkpoints share a radius")
        pairs = load_dataset(rc.path("test_data", args.data))
        result = ex.content_preservation_sweep(target, without, pairs, rc.radii)
    elif args.kind == "robustness":
        pairs = load_dataset(rc.path("test_data", args.data))
        result = ex.robustness_sweep(_single(cps, "withGF", "sweep robustness"), without, pairs,
                                     rc.sigmas, seed=rc.seed)
    else:
        result = ex.noise_sweep(_single(cps, "withGF", "sweep noise"), without, rc.phantom_spec(),
                                rc.levels, rc.typed("sweep.n", int, 4))
    result.write_csv(rc.path("output", args.out))


def cmd_attack(args):
    from .experiments import attack_curve, train_attack
    from .fileio import load_dataset, write_image

    rc = _run_config(args)
    spec = rc.attack_spec()
    cps = _load_checkpoints(rc.checkpoint_paths(args.checkpoint or ()))
    cp = _single(cps, spec.variant, "attack")
    pair = _select_pair(load_dataset(rc.path("test_data", args.data)), args.pair or rc.get("attack.pair"))
    out = rc.path("output", args.out)
    os.makedirs(out, exist_ok=True)
    result = train_attack(cp, pair, spec)
    write_image(result.E_I, os.path.join(out, "E_I.dgf"))
    write_image(result.E_G, os.path.join(out, "E_G.dgf"))
    result.write_csv(os.path.join(out, "trace.csv"))
    lambdas = rc.floats("attack.lambdas", (0.0, 0.25, 0.5, 0.75, 1.0))
    attack_curve(cp, pair, result, lambdas).write_csv(os.path.join(out, "curve.csv"))


def cmd_inspect(args):
    from .checkpoint import load_checkpoint
    from .fileio import load_dataset, write_image
    from .pipeline import guidance_map

    rc = _run_config(args)
    cp = load_checkpoint(rc.path("checkpoint", args.checkpoint))
    if cp.variant != "withGF":
        raise ConfigError(f"inspect needs a withGF checkpoint, got {cp.variant}")
    pair = _select_pair(load_dataset(rc.path("test_data", args.data)), args.pair)
    out = rc.path("output", args.out)
    os.makedirs(out, exist_ok=True)
    maps = {"full": (pair.input, pair.guide),
            "no_guide": (pair.input, np.zeros_like(pair.guide)),
            "no_input": (np.zeros_like(pair.input), pair.guide)}
    for name, (image, guide) in maps.items():
        write_image(guidance_map(cp.network, image, guide, pair.task), os.path.join(out, f"guidance_{name}.dgf"))


# ---------------------------------------------------------------------- parser

def build_parser():
    p = argparse.ArgumentParser(prog="deepgf", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="run config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        return sp

    sp = with_config(sub.add_parser("gen", help="generate a phantom dataset"))
    sp.add_argument("--out", help="dataset directory (config key: data)")
    sp.set_defaults(func=cmd_gen)

    sp = with_config(sub.add_parser("train", help="train a generator"))
    sp.add_argument("--data", help="training dataset directory")
    sp.add_argument("--val", help="validation dataset directory")
    sp.add_argument("--out", help="checkpoint path")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("infer", help="run one variant on an input/guide pair")
    sp.add_argument("--checkpoint", required=True, help='checkpoint path, or "none" for onlyGF')
    sp.add_argument("--input", required=True)
    sp.add_argument("--guide", required=True)
    sp.add_argument("--variant", choices=("withGF", "withoutGF", "onlyGF"))
    sp.add_argument("--radius", type=int)
    sp.add_argument("--epsilon", type=float)
    sp.add_argument("--out", required=True, help="prediction image (.pgm or DGF1)")
    sp.set_defaults(func=cmd_infer)

    for name, func, helptext in (("eval", cmd_eval, "per-image metrics CSV"),
                                 ("attack", cmd_attack, "train adversarial residuals")):
        sp = with_config(sub.add_parser(name, help=helptext))
        sp.add_argument("--checkpoint", action="append", help="checkpoint path (repeatable)")
        sp.add_argument("--data", help="test dataset directory")
        sp.add_argument("--out", help="output path")
        if name == "attack":
            sp.add_argument("--pair", help="pair id (default: first)")
        sp.set_defaults(func=func)

    sp = with_config(sub.add_parser("sweep", help="radius, noise or robustness sweep CSV"))
    sp.add_argument("kind", choices=("radius", "noise", "robustness"))
    sp.add_argument("--checkpoint", action="append", help="checkpoint path (repeatable)")
    sp.add_argument("--data", help="test dataset directory")
    sp.add_argument("--out", help="CSV path")
    sp.set_defaults(func=cmd_sweep)

    sp = with_config(sub.add_parser("inspect", help="dump guidance maps with shut-out inputs"))
    sp.add_argument("--checkpoint", help="withGF checkpoint")
    sp.add_argument("--data", help="test dataset directory")
    sp.add_argument("--pair", help="pair id (default: first)")
    sp.add_argument("--out", help="output directory")
    sp.set_defaults(func=cmd_inspect)
    return p


def _categorize(exc):
    if isinstance(exc, NumericalError):
        return EXIT_NUMERIC, "numerical error"
    if isinstance(exc, (DGFIOError, OSError)):
        return EXIT_IO, "io error"
    if isinstance(exc, (ConfigError, ContractError)):
        return EXIT_CONFIG, "config error"
    return getattr(exc, "exit_code", 1), "error"


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        limit = _thread_limit()
        if limit is None:
            args.func(args)
        else:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=limit):
                args.func(args)
    except (DGFError, ValueError, OSError) as exc:
        code, category = _categorize(exc)
        print(f"deepgf: {category}: {exc}", file=sys.stderr)
        trace = getattr(exc, "trace", None)
        if trace:
            print(f"deepgf: last {min(len(trace), 5)} trace values: {trace[-5:]}", file=sys.stderr)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
