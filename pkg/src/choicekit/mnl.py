"""Multinomial logit: probabilities, likelihood, score, estimation and LR tests."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize, stats
from scipy.special import logsumexp

from .utility import DesignTensor, ModelSpec, TermSpec, expand

__all__ = [
    "EstimationError",
    "ConvergenceError",
    "IdentificationError",
    "EstimationResult",
    "mnl_probability",
    "choice_probabilities",
    "loglikelihood",
    "loglik_gradient",
    "loglik_hessian",
    "estimate_mnl",
    "lr_test",
    "AblationTable",
    "per_attribute_ablation",
]

MAX_ITER = 200
GRAD_TOL = 1e-6
COND_LIMIT = 1e10


class EstimationError(RuntimeError):
    """Base class for numerical failures during estimation."""


class ConvergenceError(EstimationError):
    """The optimizer failed to reach a stationary point (or the MLE does not exist)."""


class IdentificationError(EstimationError):
    """Collinear regressors or a singular information matrix."""

    def __init__(self, msg, direction=None):
        super().__init__(msg)
        self.direction = direction


def mnl_probability(v1: float, v2: float) -> tuple[float, float]:
    """Binary logit choice probabilities for utilities ``v1`` and ``v2``.

    Uses the difference form so that large utilities do not overflow.
    """
    if not (math.isfinite(v1) and math.isfinite(v2)):
        raise ValueError("utilities must be finite")
    d = v1 - v2
    if d >= 0:
        e = math.exp(-d)
        p1 = 1.0 / (1.0 + e)
        p2 = e / (1.0 + e)
    else:
        e = math.exp(d)
        p1 = e / (1.0 + e)
        p2 = 1.0 / (1.0 + e)
    return p1, p2


def choice_probabilities(v: np.ndarray) -> np.ndarray:
    """Softmax over the last (alternative) axis."""
    v = np.asarray(v, dtype=float)
    return np.exp(v - logsumexp(v, axis=-1, keepdims=True))


def _x(tensor) -> np.ndarray:
    return tensor.x if isinstance(tensor, DesignTensor) else np.asarray(tensor, dtype=float)


def _log_probs(x, theta):
    v = x @ np.asarray(theta, dtype=float)
    return v - logsumexp(v, axis=-1, keepdims=True)


def loglikelihood(ds, tensor, theta) -> float:
    """Sum over respondents and situations of the log probability of the chosen alternative.

    Per-respondent contributions are combined with :func:`math.fsum`, so the
    value does not depend on respondent order.
    """
    lp = _log_probs(_x(tensor), theta)
    y = ds.chosen_onehot()
    per_resp = np.sum(lp * y, axis=(1, 2))
    return math.fsum(per_resp)


def loglik_gradient(ds, tensor, theta) -> np.ndarray:
    x = _x(tensor)
    p = np.exp(_log_probs(x, theta))
    r = ds.chosen_onehot() - p
    return np.einsum("nsj,nsjk->k", r, x)


def loglik_hessian(ds, tensor, theta) -> np.ndarray:
    """Analytic Hessian, ``-sum p_j (x_j - xbar)(x_j - xbar)'``; negative semidefinite."""
    x = _x(tensor)
    p = np.exp(_log_probs(x, theta))
    xbar = np.einsum("nsj,nsjk->nsk", p, x)
    d = x - xbar[:, :, None, :]
    return -np.einsum("nsj,nsjk,nsjl->kl", p, d, d)


@dataclass
class EstimationResult:
    names: tuple[str, ...]
    theta_hat: np.ndarray
    vcov: np.ndarray
    loglik: float
    null_loglik: float
    converged: bool
    iterations: int
    gradient_norm: float
    n_respondents: int
    n_observations: int
    model: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.vcov), 0.0, None))

    @property
    def z_values(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.theta_hat / self.std_errors

    @property
    def n_params(self) -> int:
        return len(self.theta_hat)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, map(float, self.theta_hat)))

    def __getitem__(self, name: str) -> float:
        return float(self.theta_hat[self.names.index(name)])

    def se(self, name: str) -> float:
        return float(self.std_errors[self.names.index(name)])


def _check_identified(x: np.ndarray, names: Sequence[str]) -> None:
    d = x - x.mean(axis=-2, keepdims=True)
    d = d.reshape(-1, x.shape[-1])
    xtx = d.T @ d
    w, vecs = np.linalg.eigh(xtx)
    if w[-1] <= 0 or w[0] <= w[-1] / COND_LIMIT:
        v = vecs[:, 0]
        combo = " + ".join(f"{c:.3g}*{n}" for c, n in zip(v, names) if abs(c) > 1e-6)
        raise IdentificationError(
            f"collinear regressors (condition number {w[-1] / max(w[0], 1e-300):.3g}); "
            f"near-null direction: {combo}", v)


def _separated(ds, x: np.ndarray) -> bool:
    """True if some nonzero direction weakly improves every observed choice (no finite MLE)."""
    y = ds.chosen_onehot().astype(bool)
    xc = np.einsum("nsj,nsjk->nsk", y.astype(float), x)
    d = (xc[:, :, None, :] - x)[~y]  # chosen minus each non-chosen alternative
    k = x.shape[-1]
    res = optimize.linprog(-d.sum(axis=0), A_ub=-d, b_ub=np.zeros(len(d)),
                           bounds=[(-1, 1)] * k, method="highs")
    return bool(res.status == 0 and -res.fun > 1e-7 * max(1.0, np.abs(d).sum()))


def _inverse_information(h: np.ndarray, names) -> np.ndarray:
    info = -0.5 * (h + h.T)
    w, vecs = np.linalg.eigh(info)
    if w[0] <= max(w[-1], 1.0) * 1e-12:
        v = vecs[:, 0]
        combo = ", ".join(f"{n}={c:.3g}" for c, n in zip(v, names) if abs(c) > 1e-6)
        raise IdentificationError(f"singular information matrix; eigendirection: {combo}", v)
    return (vecs / w) @ vecs.T


def estimate_mnl(ds, spec: ModelSpec, tensor: DesignTensor | None = None,
                 start=None, maxiter: int = MAX_ITER, gtol: float = GRAD_TOL) -> EstimationResult:
    """Maximum-likelihood MNL fit with BFGS from a zero start, polished by Newton steps.

    Standard errors come from the inverse of the analytic observed
    information. Raises :class:`IdentificationError` for collinear
    regressors or a singular Hessian and :class:`ConvergenceError` when the
    data are separable or the iteration limit is hit.
    """
    spec = spec.fixed_version() if spec.is_mixed else spec
    tensor = expand(ds, spec) if tensor is None else tensor
    x = tensor.x
    names = tensor.names
    _check_identified(x, names)

    def f(th):
        return -loglikelihood(ds, x, th)

    def g(th):
        return -loglik_gradient(ds, x, th)

    theta0 = np.zeros(x.shape[-1]) if start is None else np.asarray(start, dtype=float)
    res = optimize.minimize(f, theta0, jac=g, method="BFGS",
                            options={"maxiter": maxiter, "gtol": 1e-8})
    theta, iters = res.x, int(res.nit)
    ll = -res.fun
    tol = gtol * (1.0 + abs(ll))
    # Newton polishing: the MNL likelihood is concave, so this converges quadratically.
    for _ in range(25):
        grad = loglik_gradient(ds, x, theta)
        if np.linalg.norm(grad) <= tol:
            break
        h = loglik_hessian(ds, x, theta)
        try:
            step = np.linalg.solve(h, -grad)
        except np.linalg.LinAlgError:
            break
        t, ll_old = 1.0, loglikelihood(ds, x, theta)
        while t > 1e-8 and loglikelihood(ds, x, theta + t * step) < ll_old - 1e-12:
            t *= 0.5
        theta = theta + t * step
        iters += 1
    ll = loglikelihood(ds, x, theta)
    grad = loglik_gradient(ds, x, theta)
    gnorm = float(np.linalg.norm(grad))
    converged = gnorm <= gtol * (1.0 + abs(ll))

    if _separated(ds, x):
        raise ConvergenceError("likelihood has no finite maximum: the choices are (quasi-)"
                               "separable by the regressors; estimates diverge")
    if not converged or iters > maxiter + 25:
        raise ConvergenceError(f"no convergence after {iters} iterations "
                               f"(gradient norm {gnorm:.3g})")
    vcov = _inverse_information(loglik_hessian(ds, x, theta), names)
    null = len(ds) * ds.n_situations * math.log(1.0 / ds.n_alternatives)
    return EstimationResult(
        names=tuple(names), theta_hat=theta, vcov=vcov, loglik=ll, null_loglik=null,
        converged=converged, iterations=iters, gradient_norm=gnorm,
        n_respondents=len(ds), n_observations=ds.n_observations, model=spec.name,
        meta={"engine": "mnl"})


def lr_test(loglik_restricted: float, loglik_full: float, df: int,
            tol: float = 1e-6) -> tuple[float, float]:
    """Likelihood-ratio statistic ``2 (ll_full - ll_restricted)`` and its chi-square p-value."""
    stat = 2.0 * (loglik_full - loglik_restricted)
    if stat < -tol:
        raise ValueError(f"negative LR statistic {stat:.6g}: the full model fits worse "
                         "than the restricted one")
    stat = max(stat, 0.0)
    if df < 1:
        raise ValueError("df must be >= 1")
    return stat, float(stats.chi2.sf(stat, df))


@dataclass
class AblationTable:
    reference_loglik: float
    rows: list[dict]

    def loglik(self, attribute: str) -> float:
        for r in self.rows:
            if r["attribute"] == attribute:
                return r["loglik"]
        raise KeyError(attribute)

    def ranking(self) -> list[str]:
        """Attributes ordered by decreasing loglikelihood gain."""
        return [r["attribute"] for r in sorted(self.rows, key=lambda r: -r["gain"])]


def per_attribute_ablation(ds, schema=None) -> AblationTable:
    """Fit ASC-only and ASC-plus-one-attribute models for every attribute."""
    schema = ds.schema if schema is None else schema
    base = estimate_mnl(ds, ModelSpec((TermSpec.asc(),), schema=schema, name="asc-only"))
    rows = []
    for a in schema.names:
        spec = ModelSpec((TermSpec.asc(), TermSpec.main(a)), schema=schema, name=f"asc+{a}")
        fit = estimate_mnl(ds, spec)
        stat, p = lr_test(base.loglik, fit.loglik, 1)
        rows.append({"attribute": a, "loglik": fit.loglik, "gain": fit.loglik - base.loglik,
                     "lr_statistic": stat, "p_value": p, "estimate": fit[a],
                     "z_value": float(fit.z_values[1])})
    return AblationTable(base.loglik, rows)
