"""Constrained partial-profile choice designs and their Bayesian D-error.

The shipped reference design (three blocks of eight two-alternative choice
sets, two attributes held constant per set) is available through
:func:`reference_design`. Designs read from and write to a CSV whose
columns mirror the published layout::

    Survey, Choice situation, Crowding density, Standing in Underground?,
    Travel time ratio, New COVID-19 cases, Mask compulsory?, Vaccine adoption

``Choice situation`` is numbered globally (1..24) across blocks.
"""
from __future__ import annotations

import csv
import itertools
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import stats
from scipy.stats import qmc

from .schema import STUDY_SCHEMA, AttributeSchema, SchemaError
from .utility import ConfigError, ModelSpec, TermSpec, expand_levels

__all__ = [
    "DesignError",
    "SingularDesignWarning",
    "DesignPlan",
    "LevelConstraint",
    "Violation",
    "STUDY_CONSTRAINTS",
    "PriorSpec",
    "PartialProfileAudit",
    "load_design",
    "write_design",
    "reference_design",
    "check_constraints",
    "partial_profile_audit",
    "design_spec",
    "design_matrix",
    "information_matrix",
    "d_error",
    "bayesian_d_error",
    "default_prior",
    "random_design",
    "improve_design",
    "REFERENCE_PIVOT",
]

REFERENCE_PIVOT = 30.0
N_CONSTANT = 2
PER_BLOCK_CONSTANT = (2, 3)

COLUMNS = {
    "crowding": ("Crowding density",),
    "standing": ("Standing in Underground?", "Standing"),
    "travel_time": ("Travel time ratio",),
    "cases": ("New COVID-19 cases",),
    "mask": ("Mask compulsory?", "Mask"),
    "vaccine": ("Vaccine adoption",),
}


class DesignError(ValueError):
    """Structurally invalid or infeasible design."""


class SingularDesignWarning(UserWarning):
    """The design's information matrix is singular at some parameter value."""


@dataclass(frozen=True, eq=False)
class DesignPlan:
    """Raw attribute levels indexed [block, situation, alternative, attribute]."""

    levels: np.ndarray
    schema: AttributeSchema = STUDY_SCHEMA

    def __post_init__(self):
        lv = np.array(self.levels, dtype=float)
        if lv.ndim != 4 or lv.shape[3] != len(self.schema):
            raise DesignError(f"levels must have shape (blocks, situations, alternatives, "
                              f"{len(self.schema)}), got {lv.shape}")
        for k, a in enumerate(self.schema.attributes):
            for v in np.unique(lv[..., k]):
                try:
                    a.check_level(float(v))
                except SchemaError as e:
                    raise DesignError(str(e)) from None
        lv.setflags(write=False)
        object.__setattr__(self, "levels", lv)

    @property
    def blocks(self) -> int:
        return self.levels.shape[0]

    @property
    def situations_per_block(self) -> int:
        return self.levels.shape[1]

    @property
    def alternatives(self) -> int:
        return self.levels.shape[2]

    @property
    def n_sets(self) -> int:
        return self.blocks * self.situations_per_block

    def rows(self):
        """(block, global situation, alternative, raw levels) for every profile."""
        for b in range(self.blocks):
            for s in range(self.situations_per_block):
                for j in range(self.alternatives):
                    yield b + 1, b * self.situations_per_block + s + 1, j + 1, self.levels[b, s, j]

    def with_set(self, block: int, situation: int, set_levels: np.ndarray) -> "DesignPlan":
        """Copy with one choice set (0-based block and within-block situation) replaced."""
        lv = self.levels.copy()
        lv[block, situation] = set_levels
        return DesignPlan(lv, self.schema)

    def __eq__(self, other):
        return isinstance(other, DesignPlan) and np.array_equal(self.levels, other.levels)

    __hash__ = None


def load_design(path, schema: AttributeSchema = STUDY_SCHEMA) -> DesignPlan:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip().lstrip("﻿") for h in next(reader)]
        col = {}
        for name in schema.names:
            for cand in COLUMNS.get(name, (name,)):
                if cand in header:
                    col[name] = header.index(cand)
                    break
            else:
                raise DesignError(f"{path}: missing column for attribute {name!r}")
        for req in ("Survey", "Choice situation"):
            if req not in header:
                raise DesignError(f"{path}: missing column {req!r}")
        i_b, i_s = header.index("Survey"), header.index("Choice situation")
        sets: dict[tuple[int, int], list] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DesignError(f"{path}:{lineno}: expected {len(header)} fields")
            try:
                b, s = int(row[i_b]), int(row[i_s])
                lev = [schema[n].parse_level(row[col[n]]) for n in schema.names]
            except (ValueError, SchemaError) as e:
                raise DesignError(f"{path}:{lineno}: {e}") from None
            sets.setdefault((b, s), []).append(lev)
    blocks = sorted({b for b, _ in sets})
    if blocks != list(range(1, len(blocks) + 1)):
        raise DesignError(f"{path}: blocks must be numbered 1..B, got {blocks}")
    per_block = {b: sorted(s for bb, s in sets if bb == b) for b in blocks}
    n_s = len(per_block[1])
    lv = []
    for b in blocks:
        if len(per_block[b]) != n_s:
            raise DesignError(f"{path}: block {b} has {len(per_block[b])} situations, expected {n_s}")
        block_sets = []
        for s in per_block[b]:
            alts = sets[(b, s)]
            if len(alts) != 2:
                raise DesignError(f"{path}: block {b} situation {s} has {len(alts)} alternatives")
            block_sets.append(alts)
        lv.append(block_sets)
    return DesignPlan(np.array(lv, dtype=float), schema)


def write_design(plan: DesignPlan, path) -> None:
    header = ["Survey", "Choice situation", *(COLUMNS[n][0] for n in plan.schema.names)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for b, s, _, lev in plan.rows():
            cells = []
            for a, v in zip(plan.schema.attributes, lev):
                cells.append(f"{v:g}%" if a.name == "vaccine" else a.format_level(v))
            w.writerow([b, s, *cells])


def reference_design() -> DesignPlan:
    """The shipped three-block reference design."""
    return load_design(Path(__file__).parent / "data" / "table_a1.csv")


# ---------------------------------------------------------------------------
# Structural checks


@dataclass(frozen=True)
class LevelConstraint:
    """Profiles may not combine a level in ``levels_a`` of ``attr_a`` with one in ``levels_b`` of ``attr_b``."""

    attr_a: str
    levels_a: frozenset
    attr_b: str
    levels_b: frozenset
    description: str = ""

    def __init__(self, attr_a, levels_a, attr_b, levels_b, description=""):
        object.__setattr__(self, "attr_a", attr_a)
        object.__setattr__(self, "levels_a", frozenset(float(v) for v in levels_a))
        object.__setattr__(self, "attr_b", attr_b)
        object.__setattr__(self, "levels_b", frozenset(float(v) for v in levels_b))
        object.__setattr__(self, "description", description)

    def validate(self, schema: AttributeSchema):
        for attr, levels in ((self.attr_a, self.levels_a), (self.attr_b, self.levels_b)):
            a = schema[attr]
            for v in levels:
                a.check_level(v)

    def mask(self, levels: np.ndarray, schema: AttributeSchema) -> np.ndarray:
        a = levels[..., schema.index(self.attr_a)]
        b = levels[..., schema.index(self.attr_b)]
        return np.isin(a, list(self.levels_a)) & np.isin(b, list(self.levels_b))


STUDY_CONSTRAINTS = (
    LevelConstraint("cases", (70, 90), "vaccine", (50, 65, 80),
                    "high case counts are incompatible with high vaccination"),
    LevelConstraint("crowding", (4, 6), "vaccine", (5, 20, 35),
                    "high crowding is incompatible with low vaccination"),
    LevelConstraint("crowding", (4, 6), "cases", (70, 90),
                    "high crowding is incompatible with high case counts"),
)


@dataclass(frozen=True)
class Violation:
    block: int
    situation: int
    alternative: int
    constraint: LevelConstraint


def check_constraints(plan: DesignPlan,
                      constraints: Sequence[LevelConstraint] = STUDY_CONSTRAINTS) -> list[Violation]:
    """Every profile that combines forbidden levels; empty when the design is feasible."""
    out = []
    for c in constraints:
        c.validate(plan.schema)
        bad = c.mask(plan.levels, plan.schema)
        for b, s, j in zip(*np.nonzero(bad)):
            out.append(Violation(int(b) + 1, int(b) * plan.situations_per_block + int(s) + 1,
                                 int(j) + 1, c))
    out.sort(key=lambda v: (v.block, v.situation, v.alternative))
    return out


@dataclass(frozen=True)
class PartialProfileAudit:
    constant_per_set: np.ndarray  # (blocks, situations) count of attributes equal across alternatives
    constant_attributes: tuple  # per set, names of the constant attributes
    constant_per_block: np.ndarray  # (blocks, attributes) sets in which each attribute is constant
    attribute_names: tuple[str, ...]

    def ok(self, n_constant: int = N_CONSTANT, per_block: tuple[int, int] = PER_BLOCK_CONSTANT) -> bool:
        return bool(np.all(self.constant_per_set == n_constant)
                    and self.constant_per_block.min() >= per_block[0]
                    and self.constant_per_block.max() <= per_block[1])


def _constant_mask(levels: np.ndarray) -> np.ndarray:
    return np.all(levels == levels[..., :1, :], axis=-2)


def partial_profile_audit(plan: DesignPlan) -> PartialProfileAudit:
    if plan.alternatives != 2:
        raise DesignError("partial-profile audit expects two alternatives per set")
    const = _constant_mask(plan.levels)  # (B, S, A)
    names = plan.schema.names
    per_set = tuple(tuple(tuple(n for n, c in zip(names, row) if c) for row in blk) for blk in const)
    return PartialProfileAudit(const.sum(axis=2), per_set, const.sum(axis=1), names)


# ---------------------------------------------------------------------------
# D-error


def design_spec(schema: AttributeSchema = STUDY_SCHEMA, interactions: bool = True) -> ModelSpec:
    """All main effects plus (optionally) all two-way attribute interactions, no ASC."""
    terms = [TermSpec.main(a) for a in schema.names]
    if interactions:
        terms += [TermSpec.interaction(a, b) for a, b in itertools.combinations(schema.names, 2)]
    return ModelSpec(tuple(terms), schema=schema, name="design-main+2fi" if interactions else "design-main")


def design_matrix(plan: DesignPlan, spec: ModelSpec, pivot: float = REFERENCE_PIVOT) -> np.ndarray:
    """Regressors of every choice set, shape (sets, alternatives, terms)."""
    if spec.covariates:
        raise ConfigError("design evaluation cannot use covariate interaction terms")
    z = plan.schema.transform(plan.levels.reshape(-1, plan.alternatives, len(plan.schema)), pivot)
    return expand_levels(z, spec)


def _set_information(X: np.ndarray, thetas: np.ndarray) -> np.ndarray:
    """Per-draw, per-set MNL information, shape (draws, sets, K, K)."""
    v = np.einsum("sjk,dk->dsj", X, thetas)
    v = v - v.max(axis=-1, keepdims=True)
    p = np.exp(v)
    p /= p.sum(axis=-1, keepdims=True)
    xbar = np.einsum("dsj,sjk->dsk", p, X)
    d = X[None] - xbar[:, :, None, :]
    return np.einsum("dsj,dsjk,dsjl->dskl", p, d, d)


def _d_errors(info: np.ndarray) -> np.ndarray:
    """det(I)^(-1/p) per leading index; +inf where I is singular."""
    k = info.shape[-1]
    sign, logdet = np.linalg.slogdet(info)
    w = np.linalg.eigvalsh(info)
    singular = (sign <= 0) | (w[..., 0] <= 1e-10 * np.maximum(w[..., -1], 1e-300))
    out = np.exp(-logdet / k)
    return np.where(singular, np.inf, out)


def information_matrix(plan: DesignPlan, theta, spec: ModelSpec,
                       pivot: float = REFERENCE_PIVOT) -> np.ndarray:
    """MNL Fisher information summed over all sets (equal block weights)."""
    X = design_matrix(plan, spec, pivot)
    return _set_information(X, np.atleast_2d(np.asarray(theta, float)))[0].sum(axis=0)


def d_error(plan: DesignPlan, theta, spec: ModelSpec, pivot: float = REFERENCE_PIVOT) -> float:
    """``det(I(theta))^(-1/p)``; +inf (with a rank warning) for a singular information matrix."""
    info = information_matrix(plan, theta, spec, pivot)
    val = float(_d_errors(info[None])[0])
    if not np.isfinite(val):
        rank = np.linalg.matrix_rank(info)
        warnings.warn(f"singular information matrix: rank {rank} of {info.shape[0]}",
                      SingularDesignWarning, stacklevel=2)
    return val


@dataclass(frozen=True)
class PriorSpec:
    """Independent normal prior over the design model's coefficients."""

    mean: np.ndarray
    variances: np.ndarray
    n_draws: int = 64
    seed: int = 0

    def __post_init__(self):
        m, v = np.asarray(self.mean, float), np.asarray(self.variances, float)
        if m.shape != v.shape:
            raise ValueError("prior mean and variances differ in length")
        if np.any(v < 0):
            raise ValueError("prior variances must be >= 0")
        if self.n_draws < 1:
            raise ValueError("prior draw count must be >= 1")
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "variances", v)

    def draws(self) -> np.ndarray:
        """Scrambled-Sobol quasi-random draws from the prior, shape (n_draws, K)."""
        k = len(self.mean)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)  # non power-of-two sample sizes
            u = qmc.Sobol(d=k, scramble=True, seed=self.seed).random(self.n_draws)
        z = stats.norm.ppf(np.clip(u, 1e-12, 1 - 1e-12))
        return self.mean + z * np.sqrt(self.variances)


# Prior directions: lower crowding, time and cases preferred, higher vaccination
# preferred, no prior direction for standing and mask. Magnitudes follow the
# main-effects MNL estimates in model units.
_PRIOR_MAIN = {"crowding": (-0.17, 0.17), "standing": (0.0, 0.5), "travel_time": (-1.55, 1.55),
               "cases": (-1.08, 1.08), "mask": (0.0, 0.5), "vaccine": (1.51, 1.51)}
_PRIOR_INTERACTION_SD = 0.5


def default_prior(spec: ModelSpec | None = None, n_draws: int = 64, seed: int = 0) -> PriorSpec:
    """Documented default prior: (mean, sd) per main effect above, N(0, 0.5^2) per interaction."""
    spec = design_spec() if spec is None else spec
    mean, var = [], []
    for t in spec.terms:
        if t.kind == "main":
            m, sd = _PRIOR_MAIN.get(t.attributes[0], (0.0, 0.5))
        elif t.kind == "asc":
            m, sd = 0.0, 0.5
        else:
            m, sd = 0.0, _PRIOR_INTERACTION_SD
        mean.append(m)
        var.append(sd * sd)
    return PriorSpec(np.array(mean), np.array(var), n_draws, seed)


def bayesian_d_error(plan: DesignPlan, prior: PriorSpec, spec: ModelSpec,
                     pivot: float = REFERENCE_PIVOT) -> float:
    """Mean D-error over the prior's quasi-random draws."""
    X = design_matrix(plan, spec, pivot)
    thetas = prior.draws()
    if thetas.shape[1] != X.shape[-1]:
        raise ValueError(f"prior has {thetas.shape[1]} coefficients, model has {X.shape[-1]}")
    info = _set_information(X, thetas).sum(axis=1)
    return float(np.mean(_d_errors(info)))


# ---------------------------------------------------------------------------
# Coordinate exchange


def _structure_ok(levels: np.ndarray, per_block=PER_BLOCK_CONSTANT) -> bool:
    const = _constant_mask(levels)
    if not np.all(const.sum(axis=-1) == N_CONSTANT):
        return False
    cpb = const.sum(axis=1)
    return bool(cpb.min() >= per_block[0] and cpb.max() <= per_block[1])


def _feasible(levels, constraints, schema) -> bool:
    return not any(np.any(c.mask(levels, schema)) for c in constraints)


def random_design(seed: int = 0, constraints: Sequence[LevelConstraint] = STUDY_CONSTRAINTS,
                  schema: AttributeSchema = STUDY_SCHEMA, blocks: int = 3, situations: int = 8,
                  max_attempts: int = 10_000) -> DesignPlan:
    """A random feasible design with two constant attributes per set and 2-3 per block."""
    rng = np.random.default_rng(seed)
    n_attr = len(schema)
    level_sets = [np.array(a.levels) for a in schema.attributes]
    lv = np.empty((blocks, situations, 2, n_attr))
    for b in range(blocks):
        for attempt in range(max_attempts):
            # attribute -> number of sets in which it is constant (sums to 2 * situations)
            counts = np.full(n_attr, PER_BLOCK_CONSTANT[0])
            extra = N_CONSTANT * situations - counts.sum()
            if extra < 0 or extra > n_attr * (PER_BLOCK_CONSTANT[1] - PER_BLOCK_CONSTANT[0]):
                raise DesignError("block size incompatible with the constant-attribute balance")
            counts[rng.choice(n_attr, size=extra, replace=False)] += 1
            pairs, left = [], counts.copy()
            for _ in range(situations):
                avail = np.flatnonzero(left > 0)
                if len(avail) < 2:
                    break
                wts = left[avail] / left[avail].sum()
                pick = rng.choice(avail, size=2, replace=False, p=wts)
                left[pick] -= 1
                pairs.append(pick)
            if len(pairs) == situations and not left.any():
                break
        else:
            raise DesignError("no feasible start found after bounded attempts")
        for s, pair in enumerate(pairs):
            for attempt in range(max_attempts):
                prof = np.empty((2, n_attr))
                for k in range(n_attr):
                    if k in pair:
                        prof[:, k] = rng.choice(level_sets[k])
                    else:
                        prof[:, k] = rng.choice(level_sets[k], size=2, replace=False)
                if _feasible(prof, constraints, schema):
                    lv[b, s] = prof
                    break
            else:
                raise DesignError("no feasible start found after bounded attempts")
    return DesignPlan(lv, schema)


def _set_candidates(cur: np.ndarray, level_sets) -> list[np.ndarray]:
    """Single-attribute level changes and constant/varying swaps for one set (2, A)."""
    n_attr = cur.shape[1]
    const = np.all(cur == cur[:1], axis=0)
    out = []
    for k in range(n_attr):
        for lev in level_sets[k]:
            if const[k]:
                if lev != cur[0, k]:
                    c = cur.copy()
                    c[:, k] = lev
                    out.append(c)
            else:
                for j in range(2):
                    if lev != cur[j, k] and lev != cur[1 - j, k]:
                        c = cur.copy()
                        c[j, k] = lev
                        out.append(c)
    for kc in np.flatnonzero(const):
        for kv in np.flatnonzero(~const):
            for j in range(2):  # varying attribute becomes constant at alternative j's level
                for lev in level_sets[kc]:  # constant attribute starts varying in alternative j
                    if lev == cur[0, kc]:
                        continue
                    c = cur.copy()
                    c[:, kv] = cur[j, kv]
                    c[j, kc] = lev
                    out.append(c)
    return out


def improve_design(start: DesignPlan | None = None,
                   constraints: Sequence[LevelConstraint] = STUDY_CONSTRAINTS,
                   prior: PriorSpec | None = None, spec: ModelSpec | None = None,
                   iterations: int = 2, seed: int = 0, pivot: float = REFERENCE_PIVOT,
                   callback: Callable[[DesignPlan], None] | None = None) -> DesignPlan:
    """Constrained coordinate exchange on the Bayesian D-error.

    Each iteration visits every choice set once, in an order shuffled by
    ``seed``, and applies the best strictly improving candidate among
    single-level changes and constant/varying attribute swaps. Candidates
    that break a level constraint, the two-constant-attributes structure or
    the 2-3 constant sets per attribute and block are skipped. ``callback``
    receives the plan after every accepted move.
    """
    spec = design_spec() if spec is None else spec
    prior = default_prior(spec) if prior is None else prior
    plan = random_design(seed, constraints) if start is None else start
    schema = plan.schema
    if check_constraints(plan, constraints):
        raise DesignError("start design violates level constraints")
    if not _structure_ok(plan.levels):
        raise DesignError("start design lacks the partial-profile structure")
    if iterations <= 0:
        return plan
    rng = np.random.default_rng(seed)
    level_sets = [np.array(a.levels) for a in schema.attributes]
    thetas = prior.draws()
    B, S = plan.blocks, plan.situations_per_block
    lv = plan.levels.copy()

    def set_info(set_levels):
        z = schema.transform(set_levels, pivot)
        X = expand_levels(z, spec)
        return _set_information(X, thetas)  # (D, n, K, K)

    per_set = set_info(lv.reshape(B * S, 2, -1))
    total = per_set.sum(axis=1)
    current = float(np.mean(_d_errors(total)))
    for _ in range(iterations):
        order = rng.permutation(B * S)
        for idx in order:
            b, s = divmod(int(idx), S)
            cands = []
            for c in _set_candidates(lv[b, s], level_sets):
                if not _feasible(c, constraints, schema):
                    continue
                trial = lv[b].copy()
                trial[s] = c
                if not _structure_ok(trial[None]):
                    continue
                cands.append(c)
            if not cands:
                continue
            cand_info = set_info(np.array(cands))  # (D, C, K, K)
            trial_total = total[:, None] - per_set[:, idx][:, None] + cand_info
            scores = np.mean(_d_errors(trial_total), axis=0)
            best = int(np.argmin(scores))
            if scores[best] < current * (1 - 1e-12):
                lv[b, s] = cands[best]
                per_set[:, idx] = cand_info[:, best]
                total = per_set.sum(axis=1)
                current = float(scores[best])
                if callback is not None:
                    callback(DesignPlan(lv.copy(), schema))
    return DesignPlan(lv, schema)
