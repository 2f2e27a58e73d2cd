"""Declarative linear-in-parameters utility specifications.

A :class:`ModelSpec` lists utility terms (an alternative-specific constant,
attribute main effects, attribute-by-attribute and attribute-by-covariate
interactions) and a mixing rule per coefficient. :func:`expand` turns a
dataset into the (respondent, situation, alternative, term) regressor
tensor that both logit engines consume.

Model configs are JSON documents::

    {
      "schema_version": 1,
      "name": "table7-spec1",
      "asc_on": 2,
      "terms": [
        {"kind": "asc"},
        {"kind": "main", "attribute": "crowding"},
        {"kind": "attr_x_attr", "attributes": ["travel_time", "mask"]},
        {"kind": "attr_x_cov", "attribute": "mask", "covariate": "male"}
      ],
      "mixing": {"crowding": {"family": "lognormal", "sign": -1}},
      "values": {"asc": -0.11, "crowding": {"mu": -1.06, "sigma": 0.87}}
    }

Every term may also carry ``name``, ``label`` and ``reported_sign`` (the
sign used when printing a coefficient in "(-) attribute" convention).
Unknown keys anywhere are rejected.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .schema import STUDY_SCHEMA, AttributeSchema

__all__ = [
    "ConfigError",
    "MixingRule",
    "TermSpec",
    "ModelSpec",
    "DesignTensor",
    "expand",
    "expand_levels",
    "transform_levels",
    "load_model_spec",
    "model_spec_from_dict",
    "SCHEMA_VERSION",
]

SCHEMA_VERSION = 1
TERM_KINDS = ("asc", "main", "attr_x_attr", "attr_x_cov")
FAMILIES = ("fixed", "normal", "lognormal")


class ConfigError(ValueError):
    """Invalid model or scenario configuration; message names the field path."""


@dataclass(frozen=True)
class MixingRule:
    """Distribution of one coefficient across respondents.

    ``normal`` gives ``mu + sigma * z``; ``lognormal`` gives
    ``sign * exp(mu + sigma * z)`` so a coefficient known to be negative is
    modelled as minus a lognormal variate; ``fixed`` gives ``mu``.
    """

    family: str = "fixed"
    sign: int = 1
    mu: float = 0.0
    sigma: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"mixing family must be one of {FAMILIES}, got {self.family!r}")
        if self.sign not in (1, -1):
            raise ConfigError("mixing sign must be +1 or -1")
        if self.sigma < 0:
            raise ConfigError("sigma must be >= 0")

    @property
    def is_random(self) -> bool:
        return self.family != "fixed"


@dataclass(frozen=True)
class TermSpec:
    kind: str
    attributes: tuple[str, ...] = ()
    covariate: str | None = None
    name: str = ""
    label: str = ""
    reported_sign: int = 1

    def __post_init__(self):
        if self.kind not in TERM_KINDS:
            raise ConfigError(f"term kind must be one of {TERM_KINDS}, got {self.kind!r}")
        n_attr = {"asc": 0, "main": 1, "attr_x_attr": 2, "attr_x_cov": 1}[self.kind]
        if len(self.attributes) != n_attr:
            raise ConfigError(f"{self.kind} term needs {n_attr} attribute(s)")
        if self.kind == "attr_x_attr" and self.attributes[0] == self.attributes[1]:
            raise ConfigError("attr_x_attr needs two distinct attributes")
        if (self.kind == "attr_x_cov") != (self.covariate is not None):
            raise ConfigError("a covariate is required exactly for attr_x_cov terms")
        if not self.name:
            object.__setattr__(self, "name", self.default_name())

    @classmethod
    def asc(cls, **kw):
        return cls("asc", **kw)

    @classmethod
    def main(cls, attribute, **kw):
        return cls("main", (attribute,), **kw)

    @classmethod
    def interaction(cls, a, b, **kw):
        return cls("attr_x_attr", (a, b), **kw)

    @classmethod
    def with_covariate(cls, attribute, covariate, **kw):
        return cls("attr_x_cov", (attribute,), covariate, **kw)

    def default_name(self) -> str:
        if self.kind == "asc":
            return "asc"
        if self.kind == "main":
            return self.attributes[0]
        if self.kind == "attr_x_attr":
            return ":".join(self.attributes)
        return f"{self.attributes[0]}:{self.covariate}"

    @property
    def key(self):
        """Identity used for duplicate detection; interactions are unordered."""
        if self.kind == "attr_x_attr":
            return (self.kind, frozenset(self.attributes))
        return (self.kind, self.attributes, self.covariate)

    def involves(self, attribute: str) -> bool:
        return attribute in self.attributes


@dataclass(frozen=True)
class ModelSpec:
    terms: tuple[TermSpec, ...]
    mixing: Mapping[str, MixingRule] = field(default_factory=dict)
    asc_on: int = 2
    name: str = ""
    values: Mapping[str, object] = field(default_factory=dict)
    schema: AttributeSchema = STUDY_SCHEMA

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if not self.terms:
            raise ConfigError("terms: at least one term is required")
        if sum(t.kind == "asc" for t in self.terms) > 1:
            raise ConfigError("terms: the ASC may appear at most once")
        names = [t.name for t in self.terms]
        if len(set(names)) != len(names):
            raise ConfigError(f"terms: duplicate coefficient names in {names}")
        keys = [t.key for t in self.terms]
        if len(set(keys)) != len(keys):
            raise ConfigError("terms: duplicate terms")
        for i, t in enumerate(self.terms):
            for a in t.attributes:
                if a not in self.schema.names:
                    raise ConfigError(f"terms[{i}].attribute: unknown attribute {a!r}")
        by_name = {t.name: t for t in self.terms}
        for cname, rule in self.mixing.items():
            if cname not in by_name:
                raise ConfigError(f"mixing.{cname}: no such coefficient")
            if rule.is_random and by_name[cname].kind != "main":
                raise ConfigError(f"mixing.{cname}: only main effects may be random")
        for vname in self.values:
            if vname not in by_name:
                raise ConfigError(f"values.{vname}: no such coefficient")

    # -- layout -------------------------------------------------------------

    @property
    def term_names(self) -> tuple[str, ...]:
        return tuple(t.name for t in self.terms)

    def term(self, name: str) -> TermSpec:
        for t in self.terms:
            if t.name == name:
                return t
        raise ConfigError(f"unknown coefficient {name!r}")

    def rule(self, name: str) -> MixingRule:
        return self.mixing.get(name, MixingRule())

    @property
    def random_names(self) -> tuple[str, ...]:
        return tuple(t.name for t in self.terms if self.rule(t.name).is_random)

    @property
    def fixed_names(self) -> tuple[str, ...]:
        return tuple(t.name for t in self.terms if not self.rule(t.name).is_random)

    @property
    def is_mixed(self) -> bool:
        return bool(self.random_names)

    @property
    def covariates(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(t.covariate for t in self.terms if t.covariate))

    def param_names(self) -> tuple[str, ...]:
        """Flat parameter layout: one slot per fixed term, (mu, sigma) per random term."""
        out = []
        for t in self.terms:
            if self.rule(t.name).is_random:
                out += [f"{t.name}.mu", f"{t.name}.sigma"]
            else:
                out.append(t.name)
        return tuple(out)

    def vector(self, values: Mapping[str, object] | None = None) -> np.ndarray:
        """Flatten coefficient values into the :meth:`param_names` layout."""
        values = self.values if values is None else values
        out = []
        for t in self.terms:
            if t.name not in values:
                raise ConfigError(f"values.{t.name}: missing")
            v = values[t.name]
            if self.rule(t.name).is_random:
                if not isinstance(v, Mapping):
                    raise ConfigError(f"values.{t.name}: random coefficient needs mu and sigma")
                out += [float(v["mu"]), float(v["sigma"])]
            else:
                if isinstance(v, Mapping):
                    raise ConfigError(f"values.{t.name}: fixed coefficient takes a number")
                out.append(float(v))
        return np.array(out)

    def unflatten(self, theta: Sequence[float]) -> dict[str, object]:
        theta = list(map(float, theta))
        out, i = {}, 0
        for t in self.terms:
            if self.rule(t.name).is_random:
                out[t.name] = {"mu": theta[i], "sigma": theta[i + 1]}
                i += 2
            else:
                out[t.name] = theta[i]
                i += 1
        return out

    def fixed_version(self) -> "ModelSpec":
        """Same terms with every coefficient fixed (the nested MNL)."""
        return ModelSpec(self.terms, {}, self.asc_on, self.name, {}, self.schema)

    def with_values(self, values: Mapping[str, object]) -> "ModelSpec":
        return ModelSpec(self.terms, self.mixing, self.asc_on, self.name, dict(values), self.schema)

    def mixing_rules(self, theta=None) -> dict[str, MixingRule]:
        """Per-term mixing rules with (mu, sigma) filled from ``theta`` or the stored values."""
        vals = self.unflatten(theta) if theta is not None else self.values
        out = {}
        for t in self.terms:
            r = self.rule(t.name)
            v = vals[t.name]
            if r.is_random:
                out[t.name] = MixingRule(r.family, r.sign, float(v["mu"]), abs(float(v["sigma"])))
            else:
                out[t.name] = MixingRule("fixed", 1, float(v), 0.0)
        return out

    # -- config round trip --------------------------------------------------

    def to_dict(self) -> dict:
        terms = []
        for t in self.terms:
            d: dict = {"kind": t.kind}
            if t.kind in ("main", "attr_x_cov"):
                d["attribute"] = t.attributes[0]
            if t.kind == "attr_x_attr":
                d["attributes"] = list(t.attributes)
            if t.covariate:
                d["covariate"] = t.covariate
            if t.name != t.default_name():
                d["name"] = t.name
            if t.label:
                d["label"] = t.label
            if t.reported_sign != 1:
                d["reported_sign"] = t.reported_sign
            terms.append(d)
        out = {"schema_version": SCHEMA_VERSION, "name": self.name, "asc_on": self.asc_on,
               "terms": terms,
               "mixing": {k: {"family": r.family, "sign": r.sign}
                          for k, r in self.mixing.items() if r.is_random}}
        if self.values:
            out["values"] = {k: (dict(v) if isinstance(v, Mapping) else v)
                             for k, v in self.values.items()}
        return out


def _check_keys(d: Mapping, allowed: set, path: str):
    if not isinstance(d, Mapping):
        raise ConfigError(f"{path}: expected an object")
    extra = sorted(set(d) - allowed)
    if extra:
        raise ConfigError(f"{path}.{extra[0]}: unknown key")


def model_spec_from_dict(d: Mapping, schema: AttributeSchema = STUDY_SCHEMA) -> ModelSpec:
    _check_keys(d, {"schema_version", "name", "asc_on", "terms", "mixing", "values"}, "config")
    if d.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"config.schema_version: expected {SCHEMA_VERSION}, "
                          f"got {d.get('schema_version')!r}")
    terms = []
    for i, td in enumerate(d.get("terms", [])):
        p = f"terms[{i}]"
        _check_keys(td, {"kind", "attribute", "attributes", "covariate", "name", "label",
                         "reported_sign"}, p)
        kind = td.get("kind")
        if kind in ("main", "attr_x_cov"):
            attrs = (td.get("attribute"),)
        elif kind == "attr_x_attr":
            attrs = tuple(td.get("attributes", ()))
        else:
            attrs = ()
        for a in attrs:
            if a not in schema.names:
                raise ConfigError(f"{p}.attribute: unknown attribute {a!r}")
        try:
            terms.append(TermSpec(kind, attrs, td.get("covariate"), td.get("name", ""),
                                  td.get("label", ""), int(td.get("reported_sign", 1))))
        except ConfigError as e:
            raise ConfigError(f"{p}: {e}") from None
    mixing = {}
    for k, md in d.get("mixing", {}).items():
        _check_keys(md, {"family", "sign"}, f"mixing.{k}")
        try:
            mixing[k] = MixingRule(md.get("family", "fixed"), int(md.get("sign", 1)))
        except ConfigError as e:
            raise ConfigError(f"mixing.{k}: {e}") from None
    values = {}
    for k, v in d.get("values", {}).items():
        if isinstance(v, Mapping):
            _check_keys(v, {"mu", "sigma"}, f"values.{k}")
            values[k] = {"mu": float(v["mu"]), "sigma": float(v["sigma"])}
        else:
            values[k] = float(v)
    return ModelSpec(tuple(terms), mixing, int(d.get("asc_on", 2)), d.get("name", ""),
                     values, schema)


def load_model_spec(path, schema: AttributeSchema = STUDY_SCHEMA) -> ModelSpec:
    """Load a JSON model config from ``path``, or a shipped config by name."""
    p = Path(path)
    if not p.exists() and not p.suffix:
        p = Path(__file__).parent / "data" / "configs" / f"{path}.json"
    with open(p, encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{p}: invalid JSON ({e})") from None
    return model_spec_from_dict(d, schema)


# ---------------------------------------------------------------------------
# Expansion


@dataclass(frozen=True, eq=False)
class DesignTensor:
    """Regressors indexed [respondent, situation, alternative, term]."""

    x: np.ndarray
    names: tuple[str, ...]

    @property
    def dims(self) -> tuple[int, ...]:
        return self.x.shape


def expand_levels(z: np.ndarray, spec: ModelSpec, covariates: np.ndarray | None = None,
                  asc_axis: int = -2) -> np.ndarray:
    """Build term columns from transformed levels ``z`` of shape (..., J, A).

    ``covariates`` has shape (..., C) over ``spec.covariates`` and
    broadcasts against the leading axes of ``z`` with the alternative axis
    removed, e.g. (N, 1, C) for ``z`` of shape (N, S, J, A).
    """
    z = np.asarray(z, dtype=float)
    lead, n_alt = z.shape[:-2], z.shape[-2]
    idx = {a: k for k, a in enumerate(spec.schema.names)}
    cov_idx = {c: k for k, c in enumerate(spec.covariates)}
    cols = []
    for t in spec.terms:
        if t.kind == "asc":
            col = np.zeros(n_alt)
            col[spec.asc_on - 1] = 1.0
            col = np.broadcast_to(col, (*lead, n_alt))
        elif t.kind == "main":
            col = z[..., idx[t.attributes[0]]]
        elif t.kind == "attr_x_attr":
            col = z[..., idx[t.attributes[0]]] * z[..., idx[t.attributes[1]]]
        else:
            if covariates is None:
                raise ConfigError(f"term {t.name}: covariate values required")
            c = np.asarray(covariates, dtype=float)[..., cov_idx[t.covariate]]
            col = z[..., idx[t.attributes[0]]] * c[..., None]
        cols.append(col)
    shape = np.broadcast_shapes((*lead, n_alt), *(c.shape for c in cols))
    return np.stack([np.broadcast_to(c, shape) for c in cols], axis=-1)


def expand(ds, spec: ModelSpec) -> DesignTensor:
    """Regressor tensor of shape (N, 8, 2, K) for ``ds`` under ``spec``."""
    if tuple(ds.schema.names) != tuple(spec.schema.names):
        raise ConfigError("dataset and model spec use different attribute schemas")
    if spec.asc_on > ds.n_alternatives:
        raise ConfigError(f"asc_on: alternative {spec.asc_on} does not exist")
    cov = None
    if spec.covariates:
        missing = [c for c in spec.covariates if c not in ds.covariate_names]
        if missing:
            raise ConfigError(f"terms: unknown covariate {missing[0]!r}")
        cov = ds.covariate_matrix(spec.covariates)[:, None, :]
    x = expand_levels(ds.transformed(), spec, cov)
    if not np.all(np.isfinite(x)):
        raise ConfigError("non-finite regressor values")
    x = np.ascontiguousarray(x)
    x.setflags(write=False)
    return DesignTensor(x, spec.term_names)


def transform_levels(profile: Sequence, pivot=None, schema: AttributeSchema = STUDY_SCHEMA):
    """Transform one raw profile into regressor units (see :class:`AttributeSchema`)."""
    return schema.transform_levels(profile, pivot)
