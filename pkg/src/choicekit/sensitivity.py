"""Incremental-logit predicted-probability sweeps.

Alternative 1 carries the sample-average attribute difference between
alternatives 1 and 2; alternative 2 carries zero attributes (only the ASC,
as estimated). A sweep varies one attribute of alternative 1 over a grid,
recomputing every term the attribute enters, and reports the probability of
choosing alternative 1. For mixed logit the probability is summarized over
draws from the mixing distribution.

Grid values are raw levels, except for the pivoted attribute (travel time)
whose grid is given in minutes.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import stats
from scipy.stats import qmc

from .design import REFERENCE_PIVOT, DesignPlan, reference_design
from .mnl import EstimationResult
from .mxl import MXLResult, coefficient_draws
from .utility import ConfigError, ModelSpec, expand_levels

__all__ = [
    "Baseline",
    "SweepSpec",
    "SensitivityTable",
    "compute_baseline",
    "design_baseline",
    "sweep_mnl",
    "sweep_mxl",
    "group_sweep",
    "complement",
    "dense_grid",
    "COVARIATE_RATES",
    "FIGURE_GROUPS",
    "figure2_sweeps",
    "figure3_sweeps",
    "group_sweeps",
    "write_tables",
    "AuditRow",
    "baseline_audit",
]

# Sample shares of the covariates (agreement scales coded 1 for "agree" or "somewhat agree").
COVARIATE_RATES = {
    "age_below_40": 0.417, "male": 0.483, "unemployed_or_retired": 0.169,
    "satisfied_govt": 0.521, "tested_positive": 0.090, "bachelor_degree": 0.662,
    "married": 0.375, "mask_helps": 0.79, "full_time": 0.542, "always_wear_mask": 0.94,
    "mask_respiratory": 0.38, "income_above_10k": 0.268, "worried_side_effects": 0.51,
    "vaccine_not_long_term": 0.53, "asian": 0.147,
}


@dataclass(frozen=True, eq=False)
class Baseline:
    """Average attribute differences (alternative 1 minus 2) in regressor units.

    ``delta_x`` is per model term (the ASC column included), ``delta_attr``
    per attribute; ``covariate_means`` are used for covariate terms when a
    sweep does not fix the covariate.
    """

    spec: ModelSpec
    delta_x: np.ndarray
    delta_attr: np.ndarray
    covariate_means: Mapping[str, float] = field(default_factory=dict)
    reference_pivot: float = REFERENCE_PIVOT

    def __post_init__(self):
        if len(self.delta_x) != len(self.spec.terms):
            raise ValueError("baseline length does not match the model terms")

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.spec.term_names, map(float, self.delta_x)))


def compute_baseline(ds, spec: ModelSpec, reference_pivot: float = REFERENCE_PIVOT) -> Baseline:
    """Term-wise mean of x1 - x2 over all respondents and situations of ``ds``."""
    if len(ds) == 0:
        raise ValueError("empty dataset")
    from .utility import expand
    x = expand(ds, spec).x
    d = x[:, :, 0, :] - x[:, :, 1, :]
    z = ds.transformed()
    dz = z[:, :, 0, :] - z[:, :, 1, :]
    covm = {}
    if ds.covariate_names:
        m = ds.covariate_matrix(ds.covariate_names).mean(axis=0)
        covm = dict(zip(ds.covariate_names, map(float, m)))
    return Baseline(spec, d.mean(axis=(0, 1)), dz.mean(axis=(0, 1)), covm, reference_pivot)


def design_baseline(spec: ModelSpec, design: DesignPlan | None = None,
                    pivot: float = REFERENCE_PIVOT,
                    covariate_rates: Mapping[str, float] | None = None) -> Baseline:
    """Baseline of a design with equally weighted blocks and one reference pivot time.

    Covariates are independent of the design, so covariate terms average to
    the attribute difference times the covariate rate.
    """
    design = reference_design() if design is None else design
    rates = dict(COVARIATE_RATES if covariate_rates is None else covariate_rates)
    missing = [c for c in spec.covariates if c not in rates]
    if missing:
        raise ConfigError(f"covariate_rates: no rate for {missing[0]!r}")
    z = design.schema.transform(design.levels, pivot)
    cov = np.array([rates[c] for c in spec.covariates]) if spec.covariates else None
    x = expand_levels(z, spec, cov)
    d = x[..., 0, :] - x[..., 1, :]
    dz = z[..., 0, :] - z[..., 1, :]
    return Baseline(spec, d.reshape(-1, d.shape[-1]).mean(axis=0),
                    dz.reshape(-1, dz.shape[-1]).mean(axis=0), rates, pivot)


@dataclass(frozen=True)
class SweepSpec:
    attribute: str
    grid: Sequence[float]
    overrides: Mapping[str, float] = field(default_factory=dict)
    covariates: Mapping[str, float] = field(default_factory=dict)
    n_draws: int = 10000
    seed: int = 0
    label: str = ""


@dataclass
class SensitivityTable:
    scenario: str
    attribute: str
    grid: np.ndarray
    mean: np.ndarray
    p5: np.ndarray
    p50: np.ndarray
    p95: np.ndarray
    extrapolated: np.ndarray

    def increment(self) -> float:
        """Mean probability at the last grid point minus the first."""
        return float(self.mean[-1] - self.mean[0])

    def rows(self):
        for i in range(len(self.grid)):
            yield (self.scenario, self.attribute, float(self.grid[i]), float(self.mean[i]),
                   float(self.p5[i]), float(self.p50[i]), float(self.p95[i]))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["scenario", "attribute", "grid_value", "mean", "p5", "p50", "p95"])
            for r in self.rows():
                w.writerow([r[0], r[1], *(repr(v) for v in r[2:])])


def _regressor(baseline: Baseline, attribute: str, raw) -> np.ndarray:
    a = baseline.spec.schema[attribute]
    raw = np.asarray(raw, dtype=float)
    if a.pivoted:
        return raw / 100.0  # minutes -> minutes/100
    return a.scaling.apply(raw)


def _extrapolated(baseline: Baseline, attribute: str, raw) -> np.ndarray:
    a = baseline.spec.schema[attribute]
    raw = np.asarray(raw, dtype=float)
    lo, hi = min(a.levels), max(a.levels)
    if a.pivoted:
        lo, hi = lo * baseline.reference_pivot, hi * baseline.reference_pivot
    return (raw < lo - 1e-9) | (raw > hi + 1e-9)


def _delta_matrix(baseline: Baseline, sweep: SweepSpec) -> np.ndarray:
    """Alternative-1 term values per grid point, shape (G, K)."""
    spec = baseline.spec
    names = spec.schema.names
    if sweep.attribute not in names:
        raise ConfigError(f"sweep.attribute: unknown attribute {sweep.attribute!r}")
    for a in sweep.overrides:
        if a not in names:
            raise ConfigError(f"sweep.overrides.{a}: unknown attribute")
    model_covs = set(spec.covariates)
    for c in sweep.covariates:
        if c not in model_covs:
            raise ConfigError(f"sweep.covariates.{c}: covariate not in the model")
    grid_vals = _regressor(baseline, sweep.attribute, sweep.grid)
    G = len(grid_vals)
    fixed = {a: float(_regressor(baseline, a, v)) for a, v in sweep.overrides.items()}

    def attr_value(a):
        if a == sweep.attribute:
            return grid_vals
        if a in fixed:
            return np.full(G, fixed[a])
        return None

    def attr_or_mean(a):
        v = attr_value(a)
        return v if v is not None else np.full(G, baseline.delta_attr[names.index(a)])

    cols = []
    for k, t in enumerate(spec.terms):
        base = np.full(G, baseline.delta_x[k])
        if t.kind == "main":
            v = attr_value(t.attributes[0])
            cols.append(base if v is None else v)
        elif t.kind == "attr_x_attr":
            a, b = t.attributes
            if attr_value(a) is None and attr_value(b) is None:
                cols.append(base)
            else:
                cols.append(attr_or_mean(a) * attr_or_mean(b))
        elif t.kind == "attr_x_cov":
            a, c = t.attributes[0], t.covariate
            if attr_value(a) is None and c not in sweep.covariates:
                cols.append(base)
            else:
                cv = sweep.covariates.get(c, baseline.covariate_means.get(c))
                if cv is None:
                    raise ConfigError(f"no mean for covariate {c!r}; fix it in the sweep")
                cols.append(attr_or_mean(a) * cv)
        else:
            cols.append(base)
    return np.stack(cols, axis=1)


def _table(baseline, sweep, scenario, probs):
    q = np.quantile(probs, [0.05, 0.5, 0.95], axis=0)
    return SensitivityTable(scenario or sweep.label, sweep.attribute, np.asarray(sweep.grid, float),
                            probs.mean(axis=0), q[0], q[1], q[2],
                            _extrapolated(baseline, sweep.attribute, sweep.grid))


def _logistic(u):
    return 0.5 * (1.0 + np.tanh(0.5 * u))


def sweep_mnl(baseline: Baseline, sweep: SweepSpec, theta, scenario: str = "") -> SensitivityTable:
    """MNL probability of alternative 1 along the sweep grid."""
    if isinstance(theta, EstimationResult):
        theta = theta.theta_hat
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (len(baseline.spec.terms),):
        raise ValueError("theta does not match the baseline's model terms")
    u = _delta_matrix(baseline, sweep) @ theta
    return _table(baseline, sweep, scenario, _logistic(u)[None, :])


def _mixing_draws(n: int, k: int, seed: int) -> np.ndarray:
    """Scrambled-Halton standard normals, shape (n, k); far less seed noise than plain MC."""
    if k == 0:
        return np.zeros((n, 0))
    u = qmc.Halton(d=k, scramble=True, seed=seed).random(n)
    return stats.norm.ppf(np.clip(u, 1e-12, 1 - 1e-12))


def sweep_mxl(baseline: Baseline, sweep: SweepSpec, result: MXLResult,
              scenario: str = "") -> SensitivityTable:
    """Mean and 5/50/95th percentiles of the alternative-1 probability over mixing draws.

    ``sweep.n_draws`` scrambled-Halton draws keyed by ``sweep.seed`` are
    shared by every grid point, so curves are smooth in the grid value.
    """
    spec = result.spec
    if spec.term_names != baseline.spec.term_names:
        raise ValueError("result and baseline use different model terms")
    n_rand = len(spec.random_names)
    z = _mixing_draws(sweep.n_draws, n_rand, sweep.seed)
    beta = coefficient_draws(spec, result.theta_hat, z)  # (M, K)
    u = beta @ _delta_matrix(baseline, sweep).T  # (M, G)
    return _table(baseline, sweep, scenario, _logistic(u))


def complement(group: Mapping[str, float]) -> dict[str, float]:
    return {c: 1.0 - v for c, v in group.items()}


def group_sweep(baseline: Baseline, sweep: SweepSpec, result, group: Mapping[str, float],
                scenario: str = "") -> tuple[SensitivityTable, SensitivityTable]:
    """The sweep with covariates fixed to ``group`` and to its complement."""
    spec = baseline.spec
    for c in group:
        if c not in spec.covariates:
            raise ConfigError(f"group.{c}: covariate absent from the model")
    out = []
    for g, tag in ((dict(group), "group"), (complement(group), "complement")):
        s = SweepSpec(sweep.attribute, sweep.grid, sweep.overrides, {**sweep.covariates, **g},
                      sweep.n_draws, sweep.seed, sweep.label)
        name = f"{scenario or sweep.label}:{tag}"
        if isinstance(result, MXLResult):
            out.append(sweep_mxl(baseline, s, result, name))
        else:
            out.append(sweep_mnl(baseline, s, result, name))
    return out[0], out[1]


def dense_grid(lo: float, hi: float, n: int = 25) -> np.ndarray:
    return np.linspace(lo, hi, n)


# Figure-style sweeps: attribute, grid endpoints (raw; minutes for travel time).
FIGURE2 = {
    "mask": (0.0, 1.0),
    "vaccine": (0.0, 100.0),
    "crowding": (0.0, 6.0),
    "travel_time": (30.0, 90.0),
    "cases": (0.0, 90.0),
}

# Group definitions and the complementary groups' swept attribute.
FIGURE_GROUPS = {
    "fig4a": ("mask", {"unemployed_or_retired": 1, "age_below_40": 0}),
    "fig4b": ("mask", {"male": 0, "income_above_10k": 0}),
    "fig4c": ("mask", {"mask_helps": 1, "mask_respiratory": 0, "always_wear_mask": 1}),
    "fig5a": ("vaccine", {"asian": 1}),
    "fig5b": ("vaccine", {"mask_helps": 1}),
    "fig5c": ("vaccine", {"vaccine_not_long_term": 0, "worried_side_effects": 1}),
    "fig6a": ("cases", {"full_time": 1, "always_wear_mask": 0}),
    "fig6b": ("crowding", {"age_below_40": 0, "unemployed_or_retired": 0, "bachelor_degree": 1}),
    "fig6c": ("crowding", {"tested_positive": 1, "satisfied_govt": 1}),
}


def _grid(attribute, n):
    lo, hi = FIGURE2[attribute]
    if attribute == "mask":
        return np.array([0.0, 1.0])
    return dense_grid(lo, hi, n)


def figure2_sweeps(baseline: Baseline, model, n: int = 25, seed: int = 0,
                   n_draws: int = 10000) -> dict[str, SensitivityTable]:
    """Main-effect sweeps for every attribute the model contains."""
    out = {}
    for a in FIGURE2:
        if a not in {t.attributes[0] for t in baseline.spec.terms if t.kind == "main"}:
            continue
        sw = SweepSpec(a, _grid(a, n), n_draws=n_draws, seed=seed, label=f"fig2:{a}")
        if isinstance(model, MXLResult):
            out[a] = sweep_mxl(baseline, sw, model)
        else:
            out[a] = sweep_mnl(baseline, sw, model)
    return out


def figure3_sweeps(baseline: Baseline, model: MXLResult, n: int = 25, seed: int = 0,
                   n_draws: int = 10000) -> dict[str, SensitivityTable]:
    """Mask sweeps at 30 and 90 minutes; vaccine sweeps at no crowding and at capacity."""
    out = {}
    for minutes in (30.0, 90.0):
        sw = SweepSpec("mask", [0.0, 1.0], {"travel_time": minutes}, n_draws=n_draws, seed=seed,
                       label=f"fig3a:travel_time={minutes:g}")
        out[f"fig3a_{minutes:g}min"] = sweep_mxl(baseline, sw, model)
    for crowd in (0.0, 6.0):
        sw = SweepSpec("vaccine", _grid("vaccine", n), {"crowding": crowd}, n_draws=n_draws,
                       seed=seed, label=f"fig3b:crowding={crowd:g}")
        out[f"fig3b_crowding{crowd:g}"] = sweep_mxl(baseline, sw, model)
    return out


def group_sweeps(baseline: Baseline, model: MXLResult, figures: Sequence[str] | None = None,
                 n: int = 25, seed: int = 0, n_draws: int = 10000):
    out = {}
    for fig in figures or FIGURE_GROUPS:
        attr, group = FIGURE_GROUPS[fig]
        sw = SweepSpec(attr, _grid(attr, n), n_draws=n_draws, seed=seed, label=fig)
        out[fig] = group_sweep(baseline, sw, model, group)
    return out


def write_tables(tables: Mapping[str, SensitivityTable], outdir, manifest_extra=None) -> list[Path]:
    """One tidy CSV per table plus ``manifest.json`` listing them."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    for key, t in tables.items():
        p = outdir / f"{key.replace(':', '_')}.csv"
        t.to_csv(p)
        paths.append(p)
    manifest = {"tables": {k: f"{k.replace(':', '_')}.csv" for k in tables}}
    if manifest_extra:
        manifest.update(manifest_extra)
    mp = outdir / "sweeps.json"
    mp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return paths + [mp]


@dataclass(frozen=True)
class AuditRow:
    """Observed versus target sweep endpoints and the utility shift that would reconcile them.

    ``start_gap`` and ``end_gap`` are logit(target) minus logit(observed) at
    either end of the grid. Equal gaps point to a baseline-level difference
    (a constant utility offset); unequal gaps point to a slope difference.
    """

    name: str
    observed: tuple[float, float]
    target: tuple[float, float]
    start_gap: float
    end_gap: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return all(abs(o - t) <= self.tolerance + 1e-12 for o, t in zip(self.observed, self.target))

    def line(self) -> str:
        return (f"{self.name}: observed {self.observed[0]:.3f}->{self.observed[1]:.3f}, "
                f"target {self.target[0]:.2f}->{self.target[1]:.2f}, "
                f"utility gap {self.start_gap:+.3f}/{self.end_gap:+.3f} "
                f"[{'ok' if self.ok else 'outside tolerance'}]")


def _logit(p):
    p = min(max(float(p), 1e-12), 1 - 1e-12)
    return float(np.log(p / (1 - p)))


def baseline_audit(tables: Mapping[str, SensitivityTable],
                   targets: Mapping[str, tuple[float, float]],
                   tolerance: float = 0.05) -> list[AuditRow]:
    """Compare sweep endpoints with target endpoints, one row per target."""
    rows = []
    for name, (t0, t1) in targets.items():
        if name not in tables:
            raise KeyError(f"no sweep table named {name!r}")
        t = tables[name]
        o0, o1 = float(t.mean[0]), float(t.mean[-1])
        rows.append(AuditRow(name, (o0, o1), (t0, t1), _logit(t0) - _logit(o0),
                             _logit(t1) - _logit(o1), tolerance))
    return rows
