"""Stated-choice response data: loading, validation and quality screening.

Two CSV files describe a survey wave (UTF-8, header row required):

``choices.csv``
    one row per (respondent, situation, alternative) with columns
    ``respondent_id, situation, alternative, <one column per attribute>,
    chosen``. ``situation`` runs 1..8 within the respondent's block and
    ``chosen`` repeats the index (1 or 2) of the alternative picked in that
    situation on both rows.

``respondents.csv``
    one row per respondent with columns ``respondent_id, block,
    pivot_travel_time, response_time, household_size, n_children,
    n_workers`` followed by any number of 0/1 covariate columns. Travel
    time is in minutes, response time in seconds.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .schema import STUDY_SCHEMA, AttributeSchema, SchemaError

__all__ = [
    "DataError",
    "Respondent",
    "Observation",
    "ChoiceDataset",
    "ScreeningReport",
    "load_responses",
    "write_responses",
    "filter_fast_responders",
    "filter_straight_liners",
    "filter_inconsistent",
    "screen",
    "N_SITUATIONS",
    "N_ALTERNATIVES",
    "N_BLOCKS",
    "RESPONDENT_FIELDS",
]

N_SITUATIONS = 8
N_ALTERNATIVES = 2
N_BLOCKS = 3

RESPONDENT_FIELDS = ("respondent_id", "block", "pivot_travel_time", "response_time",
                     "household_size", "n_children", "n_workers")


class DataError(ValueError):
    """Malformed or inconsistent response data."""


@dataclass(frozen=True)
class Respondent:
    id: str
    block: int
    pivot_travel_time: float
    covariates: Mapping[str, int] = field(default_factory=dict)
    response_time: float = 600.0
    household_size: int = 1
    n_children: int = 0
    n_workers: int = 0

    def __post_init__(self):
        if self.block not in range(1, N_BLOCKS + 1):
            raise DataError(f"respondent {self.id}: unknown block {self.block}")
        if not self.pivot_travel_time > 0:
            raise DataError(f"respondent {self.id}: pivot travel time must be > 0")
        if not self.response_time > 0:
            raise DataError(f"respondent {self.id}: response time must be > 0")
        for k, v in self.covariates.items():
            if v not in (0, 1):
                raise DataError(f"respondent {self.id}: covariate {k} must be 0/1, got {v!r}")


@dataclass(frozen=True)
class Observation:
    respondent_id: str
    situation_index: int
    chosen: int


@dataclass(frozen=True, eq=False)
class ChoiceDataset:
    """Respondents with their 8 two-alternative choice observations.

    ``levels`` holds raw attribute levels with shape (N, 8, 2, A) and
    ``chosen`` the picked alternative (1-based) with shape (N, 8).
    ``reference_response_time`` is the median response time of the dataset
    as first loaded; screening keeps it fixed so that the fast-responder
    rule does not drift as respondents are removed.
    """

    schema: AttributeSchema
    respondents: tuple[Respondent, ...]
    levels: np.ndarray
    chosen: np.ndarray
    situations: np.ndarray | None = None
    design: object | None = None
    reference_response_time: float | None = None

    def __post_init__(self):
        n = len(self.respondents)
        levels = np.asarray(self.levels, dtype=float)
        chosen = np.asarray(self.chosen, dtype=np.int64)
        if levels.ndim != 4 or levels.shape[0] != n or levels.shape[3] != len(self.schema):
            raise DataError(f"levels shape {levels.shape} inconsistent with {n} respondents")
        if chosen.shape != levels.shape[:2]:
            raise DataError("chosen shape does not match levels")
        if chosen.size and (chosen.min() < 1 or chosen.max() > levels.shape[2]):
            raise DataError("chosen alternative outside the available alternatives")
        situations = self.situations
        if situations is None:
            situations = np.tile(np.arange(1, levels.shape[1] + 1), (n, 1))
        situations = np.asarray(situations, dtype=np.int64)
        ids = [r.id for r in self.respondents]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate respondent ids")
        levels.setflags(write=False)
        chosen.setflags(write=False)
        situations.setflags(write=False)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "chosen", chosen)
        object.__setattr__(self, "situations", situations)
        if self.reference_response_time is None and n:
            med = float(np.median([r.response_time for r in self.respondents]))
            object.__setattr__(self, "reference_response_time", med)

    def __len__(self):
        return len(self.respondents)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(r.id for r in self.respondents)

    @property
    def n_situations(self) -> int:
        return self.levels.shape[1]

    @property
    def n_alternatives(self) -> int:
        return self.levels.shape[2]

    @property
    def n_observations(self) -> int:
        return self.chosen.size

    @property
    def observations(self) -> list[Observation]:
        return [Observation(r.id, int(s), int(c))
                for r, srow, crow in zip(self.respondents, self.situations, self.chosen)
                for s, c in zip(srow, crow)]

    @property
    def pivots(self) -> np.ndarray:
        return np.array([r.pivot_travel_time for r in self.respondents], dtype=float)

    @property
    def covariate_names(self) -> tuple[str, ...]:
        names: set[str] = set()
        for r in self.respondents:
            names.update(r.covariates)
        return tuple(sorted(names))

    def covariate_matrix(self, names: Sequence[str]) -> np.ndarray:
        out = np.empty((len(self), len(names)))
        for i, r in enumerate(self.respondents):
            for k, c in enumerate(names):
                try:
                    out[i, k] = r.covariates[c]
                except KeyError:
                    raise DataError(f"respondent {r.id} has no covariate {c!r}") from None
        return out

    def transformed(self) -> np.ndarray:
        """Attribute levels in regressor units, shape (N, 8, 2, A)."""
        return self.schema.transform(self.levels, self.pivots[:, None, None])

    def chosen_onehot(self) -> np.ndarray:
        j = np.arange(1, self.n_alternatives + 1)
        return (self.chosen[..., None] == j).astype(float)

    def subset(self, keep: Iterable[str] | np.ndarray) -> "ChoiceDataset":
        """Dataset restricted to the given ids (or boolean mask), order preserved."""
        if isinstance(keep, np.ndarray) and keep.dtype == bool:
            mask = keep
        else:
            keep_set = set(keep)
            mask = np.array([r.id in keep_set for r in self.respondents], dtype=bool)
        return replace(
            self,
            respondents=tuple(r for r, m in zip(self.respondents, mask) if m),
            levels=self.levels[mask],
            chosen=self.chosen[mask],
            situations=self.situations[mask],
        )

    def permuted(self, order: Sequence[int]) -> "ChoiceDataset":
        order = np.asarray(order)
        return replace(
            self,
            respondents=tuple(self.respondents[i] for i in order),
            levels=self.levels[order],
            chosen=self.chosen[order],
            situations=self.situations[order],
        )

    def check_design(self, design=None) -> None:
        """Verify each respondent's levels match their block in the design."""
        design = design if design is not None else self.design
        if design is None:
            return
        for i, r in enumerate(self.respondents):
            for s_pos, s in enumerate(self.situations[i]):
                if not 1 <= s <= design.situations_per_block:
                    raise DataError(f"respondent {r.id}: situation {s} not in block {r.block}")
                expected = design.levels[r.block - 1, s - 1]
                if not np.allclose(expected, self.levels[i, s_pos]):
                    raise DataError(
                        f"respondent {r.id}: levels in situation {s} do not match "
                        f"block {r.block} of the design")


# ---------------------------------------------------------------------------
# CSV I/O


def _read_csv(path: Path):
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError:
        raise
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, header row required") from None
        header = [h.strip().lstrip("﻿") for h in header]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            rows.append((lineno, dict(zip(header, (c.strip() for c in row)))))
    return header, rows


def _num(path, lineno, row, key, cast=float):
    try:
        v = cast(row[key])
    except KeyError:
        raise DataError(f"{path}:{lineno}: missing column {key!r}") from None
    except ValueError:
        raise DataError(f"{path}:{lineno}: malformed value {row[key]!r} in column {key!r}") from None
    if isinstance(v, float) and not math.isfinite(v):
        raise DataError(f"{path}:{lineno}: non-finite value in column {key!r}")
    return v


def _load_respondents(path: Path) -> dict[str, tuple[int, Respondent]]:
    header, rows = _read_csv(path)
    missing = [f for f in RESPONDENT_FIELDS if f not in header]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")
    cov_names = [h for h in header if h not in RESPONDENT_FIELDS]
    out: dict[str, tuple[int, Respondent]] = {}
    for lineno, row in rows:
        rid = row["respondent_id"]
        if not rid:
            raise DataError(f"{path}:{lineno}: empty respondent_id")
        if rid in out:
            raise DataError(f"{path}:{lineno}: duplicate respondent {rid!r}")
        block = _num(path, lineno, row, "block", int)
        if block not in range(1, N_BLOCKS + 1):
            raise DataError(f"{path}:{lineno}: unknown block {block}")
        covs = {}
        for c in cov_names:
            if row[c] == "":
                raise DataError(f"{path}:{lineno}: missing covariate {c!r}")
            v = _num(path, lineno, row, c, int)
            if v not in (0, 1):
                raise DataError(f"{path}:{lineno}: covariate {c!r} must be 0 or 1")
            covs[c] = v
        try:
            resp = Respondent(
                id=rid,
                block=block,
                pivot_travel_time=_num(path, lineno, row, "pivot_travel_time"),
                covariates=covs,
                response_time=_num(path, lineno, row, "response_time"),
                household_size=_num(path, lineno, row, "household_size", int),
                n_children=_num(path, lineno, row, "n_children", int),
                n_workers=_num(path, lineno, row, "n_workers", int),
            )
        except DataError as e:
            raise DataError(f"{path}:{lineno}: {e}") from None
        out[rid] = (lineno, resp)
    return out


def load_responses(choices_path, respondents_path, schema: AttributeSchema = STUDY_SCHEMA,
                   design=None) -> ChoiceDataset:
    """Read and validate a long-format choice file plus its respondent file.

    Raises :class:`DataError` naming the offending file and line for
    malformed rows, unknown blocks or levels, duplicate (respondent,
    situation, alternative) rows, chosen alternatives outside {1, 2} and
    respondents without exactly 8 situations. When ``design`` is given,
    levels are also checked against the respondent's block.
    """
    choices_path, respondents_path = Path(choices_path), Path(respondents_path)
    people = _load_respondents(respondents_path)
    header, rows = _read_csv(choices_path)
    need = ["respondent_id", "situation", "alternative", "chosen", *schema.names]
    missing = [c for c in need if c not in header]
    if missing:
        raise DataError(f"{choices_path}: missing columns {missing}")

    cells: dict[str, dict[int, dict[int, np.ndarray]]] = {}
    picks: dict[tuple[str, int], tuple[int, int]] = {}
    for lineno, row in rows:
        rid = row["respondent_id"]
        if rid not in people:
            raise DataError(f"{choices_path}:{lineno}: respondent {rid!r} not in {respondents_path.name}")
        s = _num(choices_path, lineno, row, "situation", int)
        j = _num(choices_path, lineno, row, "alternative", int)
        c = _num(choices_path, lineno, row, "chosen", int)
        if not 1 <= s <= N_SITUATIONS:
            raise DataError(f"{choices_path}:{lineno}: situation {s} outside 1..{N_SITUATIONS}")
        if j not in range(1, N_ALTERNATIVES + 1):
            raise DataError(f"{choices_path}:{lineno}: alternative {j} outside 1..{N_ALTERNATIVES}")
        if c not in range(1, N_ALTERNATIVES + 1):
            raise DataError(f"{choices_path}:{lineno}: chosen alternative {c} outside 1..{N_ALTERNATIVES}")
        try:
            lev = np.array([a.parse_level(row[a.name]) for a in schema.attributes])
        except SchemaError as e:
            raise DataError(f"{choices_path}:{lineno}: {e}") from None
        per = cells.setdefault(rid, {}).setdefault(s, {})
        if j in per:
            raise DataError(f"{choices_path}:{lineno}: duplicate row for respondent {rid!r}, "
                            f"situation {s}, alternative {j}")
        per[j] = lev
        prev = picks.setdefault((rid, s), (c, lineno))
        if prev[0] != c:
            raise DataError(f"{choices_path}:{lineno}: chosen {c} disagrees with line {prev[1]}")

    order = sorted(people.values(), key=lambda t: t[0])
    respondents, levels, chosen = [], [], []
    for _, r in order:
        per = cells.get(r.id, {})
        if sorted(per) != list(range(1, N_SITUATIONS + 1)):
            raise DataError(f"respondent {r.id!r}: expected situations 1..{N_SITUATIONS}, "
                            f"found {sorted(per)}")
        for s, alts in per.items():
            if sorted(alts) != list(range(1, N_ALTERNATIVES + 1)):
                raise DataError(f"respondent {r.id!r}, situation {s}: expected "
                                f"{N_ALTERNATIVES} alternatives")
        respondents.append(r)
        levels.append([[per[s][j] for j in range(1, N_ALTERNATIVES + 1)]
                       for s in range(1, N_SITUATIONS + 1)])
        chosen.append([picks[(r.id, s)][0] for s in range(1, N_SITUATIONS + 1)])
    n_attr = len(schema)
    ds = ChoiceDataset(
        schema=schema,
        respondents=tuple(respondents),
        levels=np.array(levels, dtype=float).reshape(len(respondents), N_SITUATIONS,
                                                     N_ALTERNATIVES, n_attr),
        chosen=np.array(chosen, dtype=np.int64).reshape(len(respondents), N_SITUATIONS),
        design=design,
    )
    ds.check_design()
    return ds


def write_responses(ds: ChoiceDataset, choices_path, respondents_path) -> None:
    """Write ``ds`` in the two-file long format read by :func:`load_responses`."""
    cov_names = list(ds.covariate_names)
    with open(respondents_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*RESPONDENT_FIELDS, *cov_names])
        for r in ds.respondents:
            w.writerow([r.id, r.block, f"{r.pivot_travel_time:g}", f"{r.response_time:g}",
                        r.household_size, r.n_children, r.n_workers,
                        *(r.covariates[c] for c in cov_names)])
    attrs = ds.schema.attributes
    with open(choices_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["respondent_id", "situation", "alternative", *ds.schema.names, "chosen"])
        for i, r in enumerate(ds.respondents):
            for sp in range(ds.n_situations):
                for j in range(ds.n_alternatives):
                    w.writerow([r.id, int(ds.situations[i, sp]), j + 1,
                                *(a.format_level(v) for a, v in zip(attrs, ds.levels[i, sp, j])),
                                int(ds.chosen[i, sp])])


# ---------------------------------------------------------------------------
# Screening


def _split(ds: ChoiceDataset, drop: np.ndarray):
    excluded = tuple(r.id for r, d in zip(ds.respondents, drop) if d)
    return ds.subset(~drop), excluded


def filter_fast_responders(ds: ChoiceDataset, fraction: float = 0.40):
    """Drop respondents faster than ``fraction`` of the median response time.

    The median is the dataset's ``reference_response_time``, i.e. the median
    of the data as originally loaded, so repeated or reordered screening
    applies the same threshold.
    """
    if ds.reference_response_time is None:
        raise DataError("empty dataset")
    if len(ds) == 0:
        return ds, ()  # emptied by earlier screening
    threshold = fraction * ds.reference_response_time
    drop = np.array([r.response_time < threshold for r in ds.respondents])
    return _split(ds, drop)


def filter_straight_liners(ds: ChoiceDataset):
    """Drop respondents who chose the same alternative number in every situation."""
    drop = np.all(ds.chosen == ds.chosen[:, :1], axis=1) if len(ds) else np.zeros(0, bool)
    return _split(ds, drop)


def filter_inconsistent(ds: ChoiceDataset):
    """Drop respondents whose household is smaller than children plus workers."""
    drop = np.array([r.household_size < r.n_children + r.n_workers for r in ds.respondents],
                    dtype=bool)
    return _split(ds, drop)


@dataclass(frozen=True)
class ScreeningReport:
    retained: ChoiceDataset
    fast: tuple[str, ...]
    straight: tuple[str, ...]
    inconsistent: tuple[str, ...]

    @property
    def excluded(self) -> tuple[str, ...]:
        drop = set(self.fast) | set(self.straight) | set(self.inconsistent)
        return tuple(sorted(drop))

    @property
    def counts(self) -> dict[str, int]:
        return {"fast_responders": len(self.fast), "straight_liners": len(self.straight),
                "inconsistent": len(self.inconsistent), "union": len(self.excluded)}


def screen(ds: ChoiceDataset, fraction: float = 0.40) -> ScreeningReport:
    """Apply all three exclusion rules to the raw data and drop their union."""
    _, fast = filter_fast_responders(ds, fraction)
    _, straight = filter_straight_liners(ds)
    _, inconsistent = filter_inconsistent(ds)
    drop = set(fast) | set(straight) | set(inconsistent)
    retained = ds.subset([i for i in ds.ids if i not in drop])
    return ScreeningReport(retained, fast, straight, inconsistent)
