"""Shared vocabulary: domain tags, the label alphabet, seed and config helpers."""

from __future__ import annotations

import dataclasses
import typing
from enum import Enum

import numpy as np

# Per-pixel label alphabet. Fixed for the whole pipeline.
BG, LV, MYO, RV = 0, 1, 2, 3
N_CLASSES = 4
CLASS_NAMES = ("bg", "lv", "myo", "rv")
LABEL_ALPHABET = frozenset((BG, LV, MYO, RV))


class Domain(str, Enum):
    """Which of the two unpaired image domains a sample belongs to."""

    SOURCE = "source"  # high-contrast, sharp boundaries, labeled
    TARGET = "target"  # heterogeneous, blurred boundaries, unlabeled in training

    @property
    def code(self) -> int:
        return 0 if self is Domain.SOURCE else 1


def substream_seed(*keys: int) -> int:
    """Derive an independent 63-bit seed from a tuple of integer keys.

    Used to split one master seed into reproducible, decorrelated streams
    (per patient, per slice, per domain, per purpose).
    """
    state = np.random.SeedSequence([int(k) for k in keys]).generate_state(2, np.uint32)
    return (int(state[0]) << 31) ^ int(state[1])


def validate_mask_alphabet(mask: np.ndarray, where: str = "mask") -> None:
    """Raise ValueError if `mask` contains values outside {0,1,2,3}."""
    values = np.unique(mask)
    bad = [int(v) for v in values if int(v) not in LABEL_ALPHABET]
    if bad:
        raise ValueError(f"{where} contains out-of-alphabet label values {bad}; expected subset of {sorted(LABEL_ALPHABET)}")


def _coerce(tp, value, where: str):
    origin = typing.get_origin(tp)
    if origin is typing.Union or str(origin) == "types.UnionType":
        arms = typing.get_args(tp)
        if value is None:
            if type(None) in arms:
                return None
            raise ValueError(f"{where}: null not allowed")
        last_err = None
        for arm in arms:
            if arm is type(None):
                continue
            try:
                return _coerce(arm, value, where)
            except ValueError as exc:
                last_err = exc
        raise ValueError(str(last_err))
    if origin is tuple:
        args = typing.get_args(tp)
        if not isinstance(value, (list, tuple)):
            raise ValueError(f"{where}: expected a sequence, got {type(value).__name__}")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(args[0], v, f"{where}[{i}]") for i, v in enumerate(value))
        if len(value) != len(args):
            raise ValueError(f"{where}: expected {len(args)} values, got {len(value)}")
        return tuple(_coerce(a, v, f"{where}[{i}]") for i, (a, v) in enumerate(zip(args, value)))
    if origin is list:
        (elem,) = typing.get_args(tp)
        if not isinstance(value, (list, tuple)):
            raise ValueError(f"{where}: expected a sequence, got {type(value).__name__}")
        return [_coerce(elem, v, f"{where}[{i}]") for i, v in enumerate(value)]
    if dataclasses.is_dataclass(tp):
        return dataclass_from_dict(tp, value, where)
    if isinstance(tp, type) and issubclass(tp, Enum):
        try:
            return tp(value)
        except ValueError:
            raise ValueError(f"{where}: {value!r} is not one of {[e.value for e in tp]}") from None
    if tp is bool:
        if isinstance(value, bool):
            return value
        raise ValueError(f"{where}: expected a boolean, got {value!r}")
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ValueError(f"{where}: expected an integer, got {value!r}")
        return int(value)
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValueError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ValueError(f"{where}: expected a string, got {value!r}")
        return value
    return value


def dataclass_from_dict(cls, payload, where: str = "config"):
    """Build a (possibly nested) dataclass from plain dicts, strictly.

    Unknown keys and type mismatches are collected and reported together so a
    bad config surfaces every problem at once.
    """
    if not isinstance(payload, dict):
        raise ValueError(f"{where}: expected a mapping for {cls.__name__}, got {type(payload).__name__}")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    errors = [f"{where}: unknown key '{k}'" for k in sorted(set(payload) - known)]
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in payload:
            if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
                errors.append(f"{where}.{f.name}: required key missing")
            continue
        try:
            kwargs[f.name] = _coerce(hints[f.name], payload[f.name], f"{where}.{f.name}")
        except ValueError as exc:
            errors.append(str(exc))
    if errors:
        raise ValueError("; ".join(errors))
    return cls(**kwargs)
