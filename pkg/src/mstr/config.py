"""Flat ``key=value`` text configs mapped onto dataclasses."""
from __future__ import annotations

import dataclasses
import typing
from typing import Any, Iterable

from .errors import ConfigurationError


def parse_kv_lines(lines: Iterable[str]) -> dict[str, str]:
    out = {}
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {n}: expected key=value, got {raw.strip()!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def read_kv_file(path) -> dict[str, str]:
    with open(path, encoding="utf-8") as fh:
        return parse_kv_lines(fh)


def _convert(key: str, text: str, tp) -> Any:
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union:  # Optional[X]
        inner = [a for a in args if a is not type(None)][0]
        if text.lower() in ("", "none"):
            return None
        return _convert(key, text, inner)
    try:
        if tp is bool:
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if tp is int:
            return int(text)
        if tp is float:
            return float(text)
        if tp is str:
            return text
        if origin in (tuple, list):
            parts = [s for s in text.replace(" ", "").split(",") if s]
            elem = args[0]
            vals = [_convert(key, s, elem) for s in parts]
            return tuple(vals) if origin is tuple else vals
    except ValueError:
        raise ConfigurationError(f"bad value for {key!r}: {text!r}") from None
    raise ConfigurationError(f"unsupported field type for {key!r}: {tp}")


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(_format(v) for v in value)
    if value is None:
        return "none"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def from_kv(cls, values: dict[str, str], strict: bool = True):
    """Build ``cls`` from string values; unknown keys raise when ``strict``."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - names)
    if strict and unknown:
        raise ConfigurationError(f"unknown config key {unknown[0]!r}")
    kw = {k: _convert(k, v, hints[k]) for k, v in values.items() if k in names}
    return cls(**kw)


def to_kv(obj) -> str:
    return "".join(f"{f.name}={_format(getattr(obj, f.name))}\n" for f in dataclasses.fields(obj))


def field_names(cls) -> list[str]:
    return [f.name for f in dataclasses.fields(cls)]
