"""Checkpoint file format.

Layout (all integers little-endian)::

    b"DGFC"                  magic
    u32                      format version
    u32 + bytes              UTF-8 canonical key-value text (configs, optimizer
                             scalars, history, block count)
    repeated blocks:
      u16 + bytes            UTF-8 block name ("param/...", "adam.m/...", "adam.v/...")
      u32 x 3                shape triple
      float64 x prod(shape)  values

Arrays are stored as shape triples: 4-D conv weights ``(O, I, k, k)`` become
``(O, I, k*k)`` and vectors ``(n,)`` become ``(1, 1, n)``. The reader rebuilds
the network from the stored configuration and reshapes accordingly.
"""

import math
import os
import struct

import numpy as np

from . import config as kvconf
from .autodiff.nn import GeneratorConfig, build_generator
from .errors import ConfigError, DGFIOError
from .guided import GuidedFilterParams
from .training import FORMAT_VERSION, Checkpoint, LossSpec, OptimizerState, TrainConfig

MAGIC = b"DGFC"


def _triple(shape):
    if len(shape) == 4:
        return shape[0], shape[1], shape[2] * shape[3]
    if len(shape) == 1:
        return 1, 1, shape[0]
    if len(shape) == 3:
        return tuple(shape)
    raise ValueError(f"cannot store array of shape {shape}")


def _train_kv(cfg):
    kv = {f"train.{k}": getattr(cfg, k) for k in
          ("variant", "initial_lr", "min_lr", "patience", "decay", "threshold",
           "max_iterations", "val_every", "seed")}
    kv.update(kvconf.dataclass_to_kv(cfg.loss, "train.loss"))
    kv.update(kvconf.dataclass_to_kv(cfg.gf, "train.gf"))
    return kv


def _train_from_kv(kv):
    loss = kvconf.dataclass_from_kv(LossSpec, kv, "train.loss")
    gf = kvconf.dataclass_from_kv(GuidedFilterParams, kv, "train.gf")
    flat = {k: v for k, v in kv.items() if k.startswith("train.") and k.count(".") == 1}
    cfg = kvconf.dataclass_from_kv(TrainConfig, flat, "train")
    return TrainConfig(**{**{k: getattr(cfg, k) for k in TrainConfig.__dataclass_fields__},
                          "loss": loss, "gf": gf})


def _history_text(history):
    return ";".join(":".join(kvconf.format_value(float(x)) if i else str(int(x)) for i, x in enumerate(row))
                    for row in history)


def _history_parse(text):
    rows = []
    for chunk in filter(None, text.split(";")):
        it, tr, va, lr = chunk.split(":")
        rows.append((int(it), float(tr), float(va), float(lr)))
    return rows


def encode_checkpoint(cp):
    opt = cp.optimizer
    blocks = [("param/" + k, v) for k, v in sorted(cp.network.params.items())]
    blocks += [("adam.m/" + k, v) for k, v in sorted(opt.m.items())]
    blocks += [("adam.v/" + k, v) for k, v in sorted(opt.v.items())]
    kv = {"format.version": cp.version, "task": cp.task, "blocks": len(blocks),
          "best_iteration": cp.best_iteration, "best_val": float(cp.best_val),
          "history": _history_text(cp.history),
          "adam.lr": float(opt.lr), "adam.beta1": float(opt.beta1), "adam.beta2": float(opt.beta2),
          "adam.eps": float(opt.eps), "adam.step": opt.step}
    kv.update(kvconf.dataclass_to_kv(cp.network.config, "generator"))
    kv.update(_train_kv(cp.train_config))
    text = kvconf.dumps(kv).encode("utf-8")
    out = [MAGIC, struct.pack("<I", cp.version), struct.pack("<I", len(text)), text]
    for name, arr in blocks:
        nb = name.encode("utf-8")
        out.append(struct.pack("<H", len(nb)) + nb + struct.pack("<III", *_triple(arr.shape)))
        out.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(out)


def decode_checkpoint(data, source="<bytes>"):
    def need(pos, n, what):
        if pos + n > len(data):
            raise DGFIOError(f"{source}: truncated {what}", offset=len(data))

    need(0, 12, "header")
    if data[:4] != MAGIC:
        raise DGFIOError(f"{source}: bad magic {data[:4]!r}", offset=0)
    version, text_len = struct.unpack_from("<II", data, 4)
    if version != FORMAT_VERSION:
        raise DGFIOError(f"{source}: unsupported checkpoint version {version}", offset=4)
    need(12, text_len, "config text")
    try:
        kv = kvconf.loads(data[12:12 + text_len].decode("utf-8"))
        gen_cfg = kvconf.dataclass_from_kv(GeneratorConfig, kv, "generator")
        train_cfg = _train_from_kv(kv)
        n_blocks = int(kv["blocks"])
        history = _history_parse(kv.get("history", ""))
    except (UnicodeDecodeError, KeyError, ValueError, ConfigError) as exc:
        raise DGFIOError(f"{source}: corrupt config text: {exc}", offset=12) from None
    pos = 12 + text_len
    arrays = {}
    for _ in range(n_blocks):
        need(pos, 2, "block name length")
        (nlen,) = struct.unpack_from("<H", data, pos)
        need(pos + 2, nlen + 12, "block header")
        name = data[pos + 2:pos + 2 + nlen].decode("utf-8", errors="strict")
        shape = struct.unpack_from("<III", data, pos + 2 + nlen)
        pos += 2 + nlen + 12
        nbytes = 8 * math.prod(shape)
        need(pos, nbytes, f"block {name!r}")
        arrays[name] = (shape, np.frombuffer(data, dtype="<f8", count=math.prod(shape), offset=pos).copy())
        pos += nbytes
    if pos != len(data):
        raise DGFIOError(f"{source}: {len(data) - pos} trailing bytes", offset=pos)

    net = build_generator(gen_cfg)

    def restore(prefix, ref_shapes):
        out = {}
        for key, ref in ref_shapes.items():
            name = prefix + key
            if name not in arrays:
                continue
            shape, flat = arrays.pop(name)
            if tuple(shape) != _triple(ref):
                raise DGFIOError(f"{source}: block {name!r} has shape {shape}, expected {_triple(ref)}")
            out[key] = flat.reshape(ref)
        return out

    shapes = {k: v.shape for k, v in net.params.items()}
    params = restore("param/", shapes)
    if set(params) != set(shapes):
        raise DGFIOError(f"{source}: missing parameters {sorted(set(shapes) - set(params))}")
    net.params = params
    opt = OptimizerState(lr=float(kv["adam.lr"]), beta1=float(kv["adam.beta1"]),
                         beta2=float(kv["adam.beta2"]), eps=float(kv["adam.eps"]),
                         step=int(kv["adam.step"]))
    opt.m = restore("adam.m/", shapes)
    opt.v = restore("adam.v/", shapes)
    if arrays:
        raise DGFIOError(f"{source}: unexpected blocks {sorted(arrays)}")
    return Checkpoint(net, opt, train_cfg, kv["task"], history,
                      int(kv["best_iteration"]), float(kv["best_val"]), version)


def save_checkpoint(cp, path):
    data = encode_checkpoint(cp)
    tmp = f"{path}.tmp{os.getpid()}"
    try:
        with open(tmp, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        raise DGFIOError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path):
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as exc:
        raise DGFIOError(f"cannot read checkpoint {path}: {exc}") from exc
    return decode_checkpoint(data, str(path))
