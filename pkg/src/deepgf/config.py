"""Canonical key-value text: one ``key = value`` per line, ``#`` comments.

Serialization sorts keys and writes floats with ``repr`` so that
``loads(dumps(d)) == d`` and ``dumps`` is byte-stable.
"""

from .errors import ConfigError


def loads(text):
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ",".join(format_value(x) for x in v)
    return str(v)


def dumps(d):
    return "".join(f"{k}={format_value(d[k])}\n" for k in sorted(d))


def parse_bool(s):
    s = s.strip().lower()
    if s in ("true", "1", "yes"):
        return True
    if s in ("false", "0", "no"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


def parse_floats(s):
    s = s.strip()
    return [float(x) for x in s.split(",")] if s else []


def parse_ints(s):
    s = s.strip()
    return [int(x) for x in s.split(",")] if s else []


def coerce(value, kind, key="value"):
    """Convert a raw string to ``kind`` (a type or parser), reporting the key on failure."""
    try:
        if kind is bool:
            return parse_bool(value)
        return kind(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: cannot parse {value!r}: {exc}") from None


def _parse_tuple(value):
    return tuple(parse_floats(value))


def dataclass_to_kv(obj, prefix):
    """Flatten a dataclass of scalars/float tuples to ``{prefix.field: value}``."""
    from dataclasses import fields

    return {f"{prefix}.{f.name}": getattr(obj, f.name) for f in fields(obj)}


def dataclass_from_kv(cls, kv, prefix, strict=True):
    """Inverse of :func:`dataclass_to_kv` for string values; missing keys keep defaults.

    With ``strict``, keys under ``prefix.`` that are not fields raise ConfigError.
    """
    from dataclasses import fields

    kinds = {f.name: f.type for f in fields(cls)}
    args = {}
    head = prefix + "."
    for key, raw in kv.items():
        if not key.startswith(head):
            continue
        name = key[len(head):]
        if name not in kinds:
            if strict:
                raise ConfigError(f"unknown key {key!r}")
            continue
        kind = kinds[name]
        parser = _parse_tuple if kind is tuple else kind
        args[name] = coerce(raw, parser, key) if isinstance(raw, str) else raw
    try:
        return cls(**args)
    except TypeError as exc:
        raise ConfigError(f"{prefix}: {exc}") from None
