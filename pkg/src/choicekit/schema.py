"""Attribute schema and level transforms for the Underground choice experiment.

Raw levels are stored as floats: binary attributes as 0/1, vaccine adoption
in percent, travel time as the ratio applied to the respondent's own
reference trip, and daily cases per 100,000 inhabitants. Transforms map raw
levels to the regressor units the models are estimated in.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "Transform",
    "Attribute",
    "AttributeSchema",
    "STUDY_SCHEMA",
    "SchemaError",
    "ATTRIBUTE_NAMES",
]

_TRUE = {"yes", "y", "true", "1", "1.0"}
_FALSE = {"no", "n", "false", "0", "0.0"}

_RULES = ("identity", "divide_by_100", "fraction", "pivot_ratio", "sign_flip")


class SchemaError(ValueError):
    """Raised for unknown attributes, levels, or malformed transforms."""


@dataclass(frozen=True)
class Transform:
    """A named, deterministic map from a raw level to a regressor value.

    ``rule`` is one of ``identity``, ``divide_by_100``, ``fraction``,
    ``pivot_ratio`` and ``sign_flip``, or a tuple of those applied left to
    right (a composed transform).
    """

    rule: str | tuple[str, ...] = "identity"

    def __post_init__(self):
        for r in self.steps:
            if r not in _RULES:
                raise SchemaError(f"unknown transform rule {r!r}")

    @property
    def steps(self) -> tuple[str, ...]:
        return (self.rule,) if isinstance(self.rule, str) else tuple(self.rule)

    @property
    def needs_pivot(self) -> bool:
        return "pivot_ratio" in self.steps

    def apply(self, raw, pivot=None):
        x = np.asarray(raw, dtype=float)
        for r in self.steps:
            if r in ("divide_by_100", "fraction"):
                x = x / 100.0
            elif r == "pivot_ratio":
                if pivot is None:
                    raise SchemaError("pivot time missing for a pivoted attribute")
                x = x * np.asarray(pivot, dtype=float)
            elif r == "sign_flip":
                x = -x
        return x

    def invert(self, value, pivot=None):
        x = np.asarray(value, dtype=float)
        for r in reversed(self.steps):
            if r in ("divide_by_100", "fraction"):
                x = x * 100.0
            elif r == "pivot_ratio":
                if pivot is None:
                    raise SchemaError("pivot time missing for a pivoted attribute")
                x = x / np.asarray(pivot, dtype=float)
            elif r == "sign_flip":
                x = -x
        return x


@dataclass(frozen=True)
class Attribute:
    name: str
    kind: str  # "numeric" or "binary"
    levels: tuple[float, ...]
    scaling: Transform = field(default_factory=Transform)
    pivoted: bool = False
    label: str = ""

    def __post_init__(self):
        if self.kind not in ("numeric", "binary"):
            raise SchemaError(f"attribute {self.name}: kind must be numeric or binary")
        if self.kind == "binary" and set(self.levels) != {0.0, 1.0}:
            raise SchemaError(f"attribute {self.name}: binary levels must be 0/1")

    def parse_level(self, value) -> float:
        """Parse a raw level as written in a CSV cell (``"Yes"``, ``"35%"``, ``1.15``)."""
        if isinstance(value, str):
            s = value.strip()
            if self.kind == "binary":
                low = s.lower()
                if low in _TRUE:
                    return 1.0
                if low in _FALSE:
                    return 0.0
                raise SchemaError(f"unknown level {value!r} for {self.name}")
            s = s.rstrip("%").strip()
            try:
                v = float(s)
            except ValueError:
                raise SchemaError(f"unknown level {value!r} for {self.name}") from None
        else:
            v = float(value)
        return self.check_level(v)

    def check_level(self, v: float) -> float:
        for lev in self.levels:
            if abs(v - lev) <= 1e-9 * max(1.0, abs(lev)):
                return float(lev)
        raise SchemaError(f"unknown level {v!r} for {self.name}; allowed {list(self.levels)}")

    def format_level(self, v: float) -> str:
        if self.kind == "binary":
            return "Yes" if v == 1.0 else "No"
        return f"{v:g}"


@dataclass(frozen=True)
class AttributeSchema:
    attributes: tuple[Attribute, ...]

    def __post_init__(self):
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate attribute names")
        if sum(a.pivoted for a in self.attributes) > 1:
            raise SchemaError("at most one attribute may be pivoted")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.attributes)

    def __len__(self):
        return len(self.attributes)

    def __getitem__(self, name: str) -> Attribute:
        for a in self.attributes:
            if a.name == name:
                return a
        raise SchemaError(f"unknown attribute {name!r}")

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise SchemaError(f"unknown attribute {name!r}") from None

    def transform(self, raw: np.ndarray, pivot=None) -> np.ndarray:
        """Transform a raw level array whose last axis runs over attributes.

        ``pivot`` broadcasts against ``raw[..., 0]`` (one reference travel
        time per leading index, e.g. per respondent).
        """
        raw = np.asarray(raw, dtype=float)
        if raw.shape[-1] != len(self):
            raise SchemaError(f"expected {len(self)} attributes, got {raw.shape[-1]}")
        out = np.empty_like(raw)
        for k, a in enumerate(self.attributes):
            p = pivot if a.scaling.needs_pivot else None
            out[..., k] = a.scaling.apply(raw[..., k], p)
        return out

    def transform_levels(self, profile: Sequence, pivot=None) -> np.ndarray:
        """Validate and transform one raw profile (one value per attribute)."""
        if len(profile) != len(self):
            raise SchemaError(f"expected {len(self)} levels, got {len(profile)}")
        raw = np.array([a.parse_level(v) for a, v in zip(self.attributes, profile)])
        return self.transform(raw, pivot)


STUDY_SCHEMA = AttributeSchema((
    Attribute("crowding", "numeric", (0.0, 1.0, 2.0, 4.0, 6.0),
              label="Crowding density (persons per square meter)"),
    Attribute("standing", "binary", (0.0, 1.0), label="Standing in the Underground?"),
    Attribute("travel_time", "numeric", (0.7, 1.0, 1.15, 1.3),
              Transform(("pivot_ratio", "divide_by_100")), pivoted=True,
              label="Travel time (minutes/100)"),
    Attribute("cases", "numeric", (10.0, 30.0, 50.0, 70.0, 90.0),
              Transform("divide_by_100"), label="Daily new COVID cases (per 10^7)"),
    Attribute("mask", "binary", (0.0, 1.0), label="Mask compulsory?"),
    Attribute("vaccine", "numeric", (5.0, 20.0, 35.0, 50.0, 65.0, 80.0),
              Transform("fraction"), label="Vaccine adoption (%)"),
))

ATTRIBUTE_NAMES = STUDY_SCHEMA.names
