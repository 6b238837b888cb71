"""Strict JSON configuration for dataclass-typed settings.

Every key must name a field of the target dataclass; nested dataclasses
are parsed recursively, lists become tuples where the field is a tuple,
and missing keys take the dataclass defaults.  Serialisation is canonical
(sorted keys, fixed indentation) so configs diff cleanly.
"""
from __future__ import annotations

import dataclasses
import json
import types
import typing
from pathlib import Path

from .errors import InvalidArgumentError


def _is_dataclass_type(tp) -> bool:
    return isinstance(tp, type) and dataclasses.is_dataclass(tp)


def _convert(tp, value, where: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        errors = []
        for arg in args:
            if arg is type(None):
                continue
            try:
                return _convert(arg, value, where)
            except InvalidArgumentError as exc:
                errors.append(str(exc))
        raise InvalidArgumentError(f"{where}: value {value!r} matches no allowed type ({'; '.join(errors)})")
    if _is_dataclass_type(tp):
        return from_dict(tp, value, where)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise InvalidArgumentError(f"{where}: expected a list, got {type(value).__name__}")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_convert(args[0], v, f"{where}[{i}]") for i, v in enumerate(value))
        if len(args) != len(value):
            raise InvalidArgumentError(f"{where}: expected {len(args)} entries, got {len(value)}")
        return tuple(_convert(a, v, f"{where}[{i}]") for i, (a, v) in enumerate(zip(args, value)))
    if origin is dict or tp is dict:
        if not isinstance(value, dict):
            raise InvalidArgumentError(f"{where}: expected an object")
        return dict(value)
    if tp is bool:
        if not isinstance(value, bool):
            raise InvalidArgumentError(f"{where}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise InvalidArgumentError(f"{where}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise InvalidArgumentError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise InvalidArgumentError(f"{where}: expected a string, got {value!r}")
        return value
    return value


def from_dict(cls, data, where: str = "config"):
    """Build dataclass ``cls`` from a plain mapping, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise InvalidArgumentError(f"{where}: expected an object, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(data) - names)
    if unknown:
        raise InvalidArgumentError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {k: _convert(hints[k], v, f"{where}.{k}") for k, v in data.items()}
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise InvalidArgumentError(f"{where}: {exc}") from None


def to_dict(obj) -> dict:
    """Plain mapping of a dataclass (tuples as lists), only ``init`` fields."""
    out = {}
    for f in dataclasses.fields(obj):
        if not f.init:
            continue
        out[f.name] = _plain(getattr(obj, f.name))
    return out


def _plain(v):
    if dataclasses.is_dataclass(v) and not isinstance(v, type):
        return to_dict(v)
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    return v


def dumps(obj) -> str:
    data = to_dict(obj) if dataclasses.is_dataclass(obj) else obj
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def loads(cls, text: str, where: str = "config"):
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidArgumentError(f"{where}: not valid JSON ({exc})") from None
    return from_dict(cls, data, where)


def load(cls, path):
    path = Path(path)
    if not path.is_file():
        raise InvalidArgumentError(f"config file not found: {path}")
    return loads(cls, path.read_text(), str(path))
