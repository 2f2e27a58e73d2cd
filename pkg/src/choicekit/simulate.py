"""Synthetic respondents and choices from a hypothesized or fitted model."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .data import ChoiceDataset, Respondent
from .design import DesignPlan
from .mnl import choice_probabilities
from .mxl import realize_betas
from .utility import ModelSpec, expand_levels

__all__ = ["SimConfig", "simulate_dataset", "simulate_choice_probabilities",
           "DEFAULT_PIVOT_TIMES"]

# The sample's travel-time distribution is unpublished; uniform over these minutes by default.
DEFAULT_PIVOT_TIMES = (15.0, 30.0, 45.0, 60.0)


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings.

    ``spec`` must carry values for every coefficient (``spec.values``).
    Covariates referenced by the spec are drawn as independent Bernoullis
    with ``covariate_rates`` (default 0.5). ``method`` is ``"gumbel"``
    (argmax of utility plus standard Gumbel noise) or ``"inversion"``
    (sample from the logit probabilities directly).
    """

    n_respondents: int
    design: DesignPlan
    spec: ModelSpec
    pivot_times: Sequence[float] = DEFAULT_PIVOT_TIMES
    pivot_weights: Sequence[float] | None = None
    covariate_rates: Mapping[str, float] = field(default_factory=dict)
    seed: int = 0
    method: str = "gumbel"

    def __post_init__(self):
        if self.n_respondents < 1:
            raise ValueError("n_respondents must be >= 1")
        w = self.weights
        if len(w) != len(self.pivot_times) or np.any(w < 0) or abs(w.sum() - 1) > 1e-9:
            raise ValueError("pivot weights must be non-negative and sum to 1")
        if self.method not in ("gumbel", "inversion"):
            raise ValueError("method must be 'gumbel' or 'inversion'")
        for c, r in self.covariate_rates.items():
            if not 0 <= r <= 1:
                raise ValueError(f"covariate rate for {c} outside [0, 1]")
        self.spec.vector()  # every coefficient needs a value

    @property
    def weights(self) -> np.ndarray:
        if self.pivot_weights is None:
            return np.full(len(self.pivot_times), 1.0 / len(self.pivot_times))
        return np.asarray(self.pivot_weights, dtype=float)

    @property
    def covariate_names(self) -> tuple[str, ...]:
        names = list(self.spec.covariates)
        names += [c for c in sorted(self.covariate_rates) if c not in names]
        return tuple(names)


def simulate_dataset(cfg: SimConfig) -> ChoiceDataset:
    """Draw respondents, their coefficients and their choices.

    Every respondent gets an independent random substream spawned from
    ``cfg.seed``, so respondent i's data do not depend on how many others are
    generated or in what order they are processed.
    """
    spec, design = cfg.spec, cfg.design
    rules = spec.mixing_rules()
    n_rand = sum(r.is_random for r in rules.values())
    cov_names = cfg.covariate_names
    rates = np.array([cfg.covariate_rates.get(c, 0.5) for c in cov_names])
    times = np.asarray(cfg.pivot_times, dtype=float)
    weights = cfg.weights
    S, J = design.situations_per_block, design.alternatives

    N = cfg.n_respondents
    blocks = np.empty(N, dtype=np.int64)
    pivots = np.empty(N)
    covs = np.empty((N, len(cov_names)), dtype=np.int64)
    z = np.empty((N, n_rand))
    noise = np.empty((N, S, J))
    extra = np.empty((N, 4))
    for i, child in enumerate(np.random.SeedSequence(cfg.seed).spawn(N)):
        rng = np.random.default_rng(child)
        blocks[i] = rng.integers(1, design.blocks + 1)
        pivots[i] = times[rng.choice(len(times), p=weights)]
        covs[i] = rng.random(len(cov_names)) < rates
        z[i] = rng.standard_normal(n_rand)
        noise[i] = rng.gumbel(size=(S, J)) if cfg.method == "gumbel" else rng.random((S, J))
        extra[i] = rng.random(4)

    levels = design.levels[blocks - 1]  # (N, S, J, A)
    zlev = design.schema.transform(levels, pivots[:, None, None])
    cov_idx = [cov_names.index(c) for c in spec.covariates]
    x = expand_levels(zlev, spec, covs[:, cov_idx][:, None, :] if cov_idx else None)
    beta = realize_betas(list(rules.values()), z)  # (N, K)
    v = np.einsum("nsjk,nk->nsj", x, beta)
    if cfg.method == "gumbel":
        chosen = np.argmax(v + noise, axis=-1) + 1
    else:
        cum = np.cumsum(choice_probabilities(v), axis=-1)
        chosen = np.minimum((noise[..., :1] > cum).sum(axis=-1), J - 1) + 1

    respondents = []
    for i in range(N):
        size = 1 + int(extra[i, 0] * 5)
        workers = int(extra[i, 1] * (size + 1))
        children = int(extra[i, 2] * (size - workers + 1))
        respondents.append(Respondent(
            id=f"R{i + 1:06d}", block=int(blocks[i]), pivot_travel_time=float(pivots[i]),
            covariates={c: int(covs[i, k]) for k, c in enumerate(cov_names)},
            response_time=float(round(300.0 + 600.0 * extra[i, 3], 1)),
            household_size=size, n_children=children, n_workers=workers))
    return ChoiceDataset(design.schema, tuple(respondents), levels, chosen,
                         np.tile(np.arange(1, S + 1), (N, 1)), design)


def simulate_choice_probabilities(cfg: SimConfig, R: int = 2000, seed: int | None = None) -> np.ndarray:
    """Population-averaged choice probabilities per set, shape (blocks, situations, alternatives).

    Averages logit probabilities exactly over the pivot-time distribution and
    by simulation over ``R`` mixing (and covariate) draws.
    """
    spec, design = cfg.spec, cfg.design
    rules = spec.mixing_rules()
    n_rand = sum(r.is_random for r in rules.values())
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    if n_rand == 0 and not spec.covariates:
        R = 1
    z = rng.standard_normal((R, n_rand))
    cov_names = spec.covariates
    rates = np.array([cfg.covariate_rates.get(c, 0.5) for c in cov_names])
    covs = (rng.random((R, len(cov_names))) < rates).astype(float)
    beta = realize_betas(list(rules.values()), z)  # (R, K)
    out = np.zeros(design.levels.shape[:3])
    for t, w in zip(cfg.pivot_times, cfg.weights):
        zlev = design.schema.transform(design.levels, t)  # (B, S, J, A)
        if cov_names:
            x = expand_levels(zlev[None], spec, covs[:, None, None, :])  # (R, B, S, J, K)
            v = np.einsum("rbsjk,rk->rbsj", x, beta)
        else:
            x = expand_levels(zlev, spec)
            v = np.einsum("bsjk,rk->rbsj", x, beta)
        out += w * choice_probabilities(v).mean(axis=0)
    return out
