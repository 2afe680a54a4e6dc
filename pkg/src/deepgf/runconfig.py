"""Experiment definitions for the command line.

A run config is canonical key-value text (see :mod:`deepgf.config`). Keys are
grouped by prefix::

    task, seed, n, noise            dataset: task, phantom seed, pair count,
                                    noise preset (none|low|medium|strong|custom)
    phantom.*                       PhantomSpec fields
    noise.*                         NoiseSpec fields (used when noise = custom)
    generator.*                     GeneratorConfig fields
    train.*                         TrainConfig scalars
    loss.*, gf.*                    LossSpec and GuidedFilterParams
    attack.*                        AttackSpec fields, attack.lambdas, attack.pair
    sweep.sigmas, sweep.radii, sweep.levels, sweep.n
    data, val_data, test_data, checkpoint, checkpoints, output   paths

Unknown keys are rejected; relative paths resolve against the config file's
directory.
"""

import os
from dataclasses import fields, replace

from . import config as kv
from .autodiff.nn import GeneratorConfig
from .errors import ConfigError, DGFIOError
from .experiments import DEFAULT_RADII, DEFAULT_SIGMAS, AttackSpec
from .guided import GuidedFilterParams
from .imaging import TASKS, PhantomSpec
from .metrics import NOISE_LEVELS, NoiseSpec
from .training import LossSpec, TrainConfig

PATH_KEYS = ("data", "val_data", "test_data", "checkpoint", "output")
_SECTIONS = {"phantom": PhantomSpec, "noise": NoiseSpec, "generator": GeneratorConfig,
             "loss": LossSpec, "gf": GuidedFilterParams, "attack": AttackSpec}
_TRAIN_SCALARS = tuple(f.name for f in fields(TrainConfig) if f.name not in ("loss", "gf"))
_EXTRA = {"task", "seed", "n", "noise", "checkpoints", "attack.lambdas", "attack.pair",
          "sweep.sigmas", "sweep.radii", "sweep.levels", "sweep.n"}


def known_keys():
    keys = set(_EXTRA) | set(PATH_KEYS)
    for prefix, cls in _SECTIONS.items():
        keys |= {f"{prefix}.{f.name}" for f in fields(cls)}
    keys |= {f"train.{name}" for name in _TRAIN_SCALARS}
    keys.discard("phantom.seed")  # the top-level seed drives the phantoms
    return keys


class RunConfig:
    def __init__(self, values=None, base_dir="."):
        self.values = dict(values or {})
        self.base_dir = base_dir
        unknown = sorted(set(self.values) - known_keys())
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")

    @classmethod
    def load(cls, path=None, overrides=()):
        values, base = {}, os.getcwd()
        if path is not None:
            try:
                with open(path, encoding="utf-8") as f:
                    text = f.read()
            except OSError as exc:
                raise DGFIOError(f"cannot read config {path}: {exc}") from exc
            values = kv.loads(text)
            base = os.path.dirname(os.path.abspath(path))
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override must be key=value, got {item!r}")
            key, value = (s.strip() for s in item.split("=", 1))
            values[key] = value
        return cls(values, base)

    def get(self, key, default=None):
        return self.values.get(key, default)

    def typed(self, key, kind, default):
        if key not in self.values:
            return default
        return kv.coerce(self.values[key], kind, key)

    def path(self, key, override=None, required=True):
        value = override if override is not None else self.values.get(key)
        if value is None:
            if required:
                raise ConfigError(f"no {key!r} path given (config key or command-line flag)")
            return None
        if override is not None:
            return value  # command-line paths are relative to the working directory
        return value if os.path.isabs(value) else os.path.join(self.base_dir, value)

    # ---------------------------------------------------------------- sections
    @property
    def task(self):
        task = self.values.get("task", "sr")
        if task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {task!r}")
        return task

    @property
    def seed(self):
        return self.typed("seed", int, 0)

    def phantom_spec(self):
        spec = kv.dataclass_from_kv(PhantomSpec, self.values, "phantom")
        return spec.with_seed(self.seed)

    def noise_spec(self):
        level = self.values.get("noise", "none")
        if level == "none":
            return None
        if level == "custom":
            return kv.dataclass_from_kv(NoiseSpec, self.values, "noise")
        if level not in NOISE_LEVELS:
            raise ConfigError(f"noise must be none, custom or one of {sorted(NOISE_LEVELS)}")
        return NoiseSpec.preset(level, seed=self.typed("noise.seed", int, 0))

    def generator_config(self):
        cfg = kv.dataclass_from_kv(GeneratorConfig, self.values, "generator")
        if "generator.scale" not in self.values:
            cfg = replace(cfg, scale=4 if self.task == "sr" else 1)
        return cfg

    def gf_params(self):
        return kv.dataclass_from_kv(GuidedFilterParams, self.values, "gf")

    def train_config(self):
        flat = {k: v for k, v in self.values.items() if k.startswith("train.")}
        base = kv.dataclass_from_kv(TrainConfig, flat, "train")
        return replace(base, loss=kv.dataclass_from_kv(LossSpec, self.values, "loss"), gf=self.gf_params())

    def attack_spec(self):
        flat = {k: v for k, v in self.values.items() if k not in ("attack.lambdas", "attack.pair")}
        return kv.dataclass_from_kv(AttackSpec, flat, "attack")

    def floats(self, key, default):
        return tuple(kv.coerce(self.values[key], kv.parse_floats, key)) if key in self.values else tuple(default)

    def ints(self, key, default):
        return tuple(kv.coerce(self.values[key], kv.parse_ints, key)) if key in self.values else tuple(default)

    @property
    def sigmas(self):
        return self.floats("sweep.sigmas", DEFAULT_SIGMAS)

    @property
    def radii(self):
        return self.ints("sweep.radii", DEFAULT_RADII)

    @property
    def levels(self):
        raw = self.values.get("sweep.levels", "low,medium,strong")
        return tuple(s.strip() for s in raw.split(",") if s.strip())

    def checkpoint_paths(self, override=()):
        """Checkpoints named on the command line replace those in the config."""
        if override:
            return list(override)
        raw = self.values.get("checkpoints", "")
        paths = [p.strip() for p in raw.split(",") if p.strip()]
        paths = [p if os.path.isabs(p) else os.path.join(self.base_dir, p) for p in paths]
        if "checkpoint" in self.values:
            paths.insert(0, self.path("checkpoint"))
        return paths
