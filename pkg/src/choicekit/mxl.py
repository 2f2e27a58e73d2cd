"""Panel mixed logit estimated by maximum simulated likelihood.

Random coefficients are independent normal or sign-flipped lognormal
variates. Each respondent's eight situations share one coefficient draw;
choice probabilities are multiplied over situations within a draw and then
averaged over draws (in log space, to avoid underflow).
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import optimize, stats
from scipy.special import logsumexp

from .mnl import ConvergenceError, EstimationResult, estimate_mnl
from .utility import DesignTensor, MixingRule, ModelSpec, expand

__all__ = [
    "MixingRule",
    "DrawMatrix",
    "MXLResult",
    "DistributionSummary",
    "PRIMES",
    "make_draws",
    "realize_betas",
    "coefficient_draws",
    "mnl_equivalent",
    "simulated_panel_loglik",
    "simulated_panel_gradient",
    "estimate_mxl",
    "lognormal_summary",
    "normal_summary",
    "summary_std_errors",
    "summary_functional",
    "mixing_summary",
    "share_negative",
    "Z95",
]

PRIMES = (2, 3, 5, 7, 11, 13)
BURN_IN = 10
Z95 = float(stats.norm.ppf(0.95))  # 1.6449
CHUNK = 128  # respondents per likelihood work unit; fixed so reductions never depend on threads


@dataclass(frozen=True, eq=False)
class DrawMatrix:
    """Standard-normal quasi-random draws.

    ``draws`` has shape (R, K), shared by all respondents, or (N, R, K) with
    consecutive blocks of the Halton sequence assigned to respondents.
    """

    draws: np.ndarray
    generator: str

    @property
    def R(self) -> int:
        return self.draws.shape[-2]

    @property
    def K(self) -> int:
        return self.draws.shape[-1]

    def for_respondents(self, n: int) -> np.ndarray:
        d = self.draws
        if d.ndim == 2:
            return np.broadcast_to(d, (n, *d.shape))
        if d.shape[0] != n:
            raise ValueError(f"draws prepared for {d.shape[0]} respondents, data has {n}")
        return d


def make_draws(R: int, K: int, seed: int = 0, n_individuals: int | None = None,
               burn_in: int = BURN_IN, bases: Sequence[int] = PRIMES) -> DrawMatrix:
    """Scrambled Halton draws mapped to standard normals.

    Column k uses the k-th prime base with a random digit scrambling seeded by
    ``seed``. The first ``burn_in`` points are dropped before the inverse
    normal CDF is applied.
    """
    if R < 1 or K < 0:
        raise ValueError("R must be >= 1 and K >= 0")
    if K > len(bases):
        raise ValueError(f"K={K} exceeds the {len(bases)} configured Halton bases")
    if tuple(bases[:K]) != PRIMES[:K]:
        raise ValueError("only the leading primes are supported as bases")
    n = R * (n_individuals or 1)
    from scipy.stats import qmc
    if K == 0:
        u = np.zeros((n, 0))
    else:
        u = qmc.Halton(d=K, scramble=True, seed=seed).random(burn_in + n)[burn_in:]
    u = np.clip(u, 1e-12, 1 - 1e-12)
    z = stats.norm.ppf(u)
    if n_individuals:
        z = z.reshape(n_individuals, R, K)
    label = f"scrambled-halton(bases={list(PRIMES[:K])},burn_in={burn_in},seed={seed},R={R}"
    label += f",individuals={n_individuals})" if n_individuals else ")"
    z.setflags(write=False)
    return DrawMatrix(z, label)


def realize_betas(rules: Mapping[str, MixingRule] | Sequence[MixingRule], z) -> np.ndarray:
    """Coefficient vector for one standard-normal draw ``z`` (one entry per random rule).

    Fixed rules take ``mu``; normal rules ``mu + sigma z``; lognormal rules
    ``sign * exp(mu + sigma z)``. Also vectorizes over leading axes of ``z``.
    """
    rules = list(rules.values()) if isinstance(rules, Mapping) else list(rules)
    z = np.asarray(z, dtype=float)
    n_rand = sum(r.is_random for r in rules)
    if z.shape[-1] != n_rand:
        raise ValueError(f"expected {n_rand} standard-normal values, got {z.shape[-1]}")
    out = np.empty((*z.shape[:-1], len(rules)))
    i = 0
    for k, r in enumerate(rules):
        if r.family == "fixed":
            out[..., k] = r.mu
        elif r.family == "normal":
            out[..., k] = r.mu + r.sigma * z[..., i]
            i += 1
        else:
            out[..., k] = r.sign * np.exp(r.mu + r.sigma * z[..., i])
            i += 1
    return out


class _Layout:
    """Index bookkeeping between the flat parameter vector and per-term coefficients."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self.names = spec.param_names()
        self.fixed_terms, self.fixed_pos = [], []
        self.rand_terms, self.mu_pos, self.sigma_pos, self.lognormal, self.signs = [], [], [], [], []
        pos = 0
        for k, t in enumerate(spec.terms):
            r = spec.rule(t.name)
            if r.is_random:
                self.rand_terms.append(k)
                self.mu_pos.append(pos)
                self.sigma_pos.append(pos + 1)
                self.lognormal.append(r.family == "lognormal")
                self.signs.append(r.sign if r.family == "lognormal" else 1)
                pos += 2
            else:
                self.fixed_terms.append(k)
                self.fixed_pos.append(pos)
                pos += 1
        self.n_params = pos
        self.n_terms = len(spec.terms)
        self.lognormal = np.array(self.lognormal, dtype=bool)
        self.signs = np.array(self.signs, dtype=float)

    def betas(self, theta, z):
        """Per-term coefficients (…, K) for draws ``z`` (…, Kr), plus d beta / d mu."""
        theta = np.asarray(theta, dtype=float)
        beta = np.empty((*z.shape[:-1], self.n_terms))
        beta[..., self.fixed_terms] = theta[self.fixed_pos]
        mu = theta[self.mu_pos]
        sig = theta[self.sigma_pos]
        lin = mu + sig * z
        b = np.where(self.lognormal, self.signs * np.exp(np.where(self.lognormal, lin, 0.0)), lin)
        beta[..., self.rand_terms] = b
        dmu = np.where(self.lognormal, b, 1.0)
        return beta, dmu


def coefficient_draws(spec: ModelSpec, theta, z) -> np.ndarray:
    """Per-term coefficient draws for standard-normal draws ``z`` of shape (..., Kr)."""
    return _Layout(spec).betas(theta, np.asarray(z, dtype=float))[0]


def mnl_equivalent(spec: ModelSpec, theta) -> np.ndarray:
    """MNL coefficients obtained by setting every sigma in ``theta`` to zero."""
    lay = _Layout(spec)
    return lay.betas(theta, np.zeros(len(lay.rand_terms)))[0]


def _chunk_eval(lay: _Layout, x, y, z, theta, want_grad: bool):
    beta, dmu = lay.betas(theta, z)  # (n, R, K), (n, R, Kr)
    v = np.einsum("nsjk,nrk->nrsj", x, beta)
    lse = logsumexp(v, axis=-1, keepdims=True)
    logp = v - lse
    log_pr = np.einsum("nrsj,nsj->nr", logp, y)  # panel product in logs
    ll_n = logsumexp(log_pr, axis=1) - math.log(z.shape[1])
    if not want_grad:
        return ll_n, None
    w = np.exp(log_pr - logsumexp(log_pr, axis=1, keepdims=True))  # draw weights per respondent
    resid = y[:, None] - np.exp(logp)  # (n, R, S, J)
    gb = np.einsum("nrsj,nsjk->nrk", resid, x)  # d log P_nr / d beta_nrk
    gb = gb * w[..., None]
    grad = np.zeros(lay.n_params)
    grad[lay.fixed_pos] = gb[..., lay.fixed_terms].sum(axis=(0, 1))
    gr = gb[..., lay.rand_terms] * dmu
    grad[lay.mu_pos] = gr.sum(axis=(0, 1))
    grad[lay.sigma_pos] = (gr * z).sum(axis=(0, 1))
    return ll_n, grad


def _evaluate(ds, tensor, spec, theta, draws, want_grad, threads=1):
    x = tensor.x if isinstance(tensor, DesignTensor) else np.asarray(tensor, dtype=float)
    lay = _Layout(spec)
    if len(theta) != lay.n_params:
        raise ValueError(f"expected {lay.n_params} parameters, got {len(theta)}")
    y = ds.chosen_onehot()
    z_all = draws.for_respondents(len(ds)) if isinstance(draws, DrawMatrix) else draws
    if z_all.shape[-1] != len(lay.rand_terms):
        raise ValueError(f"draws have {z_all.shape[-1]} columns, spec has "
                         f"{len(lay.rand_terms)} random coefficients")
    if z_all.ndim == 2:
        z_all = np.broadcast_to(z_all, (len(ds), *z_all.shape))
    bounds = [(a, min(a + CHUNK, len(ds))) for a in range(0, len(ds), CHUNK)]

    def work(b):
        a, e = b
        return _chunk_eval(lay, x[a:e], y[a:e], z_all[a:e], theta, want_grad)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(work, bounds))
    else:
        parts = [work(b) for b in bounds]
    ll = math.fsum(v for p in parts for v in p[0])
    if not want_grad:
        return ll, None
    grad = np.zeros(lay.n_params)
    for p in parts:
        grad = grad + p[1]
    return ll, grad


def simulated_panel_loglik(ds, tensor, params, draws, spec: ModelSpec | None = None,
                           threads: int = 1) -> float:
    """Simulated panel loglikelihood, ``sum_n log (1/R) sum_r prod_s p_ns(beta_nr)``.

    ``params`` is a flat vector in ``spec.param_names()`` layout (``spec``
    may be omitted when ``params`` is an :class:`MXLResult`).
    """
    if isinstance(params, MXLResult):
        spec, params = params.spec, params.theta_hat
    return _evaluate(ds, tensor, spec, np.asarray(params, dtype=float), draws, False, threads)[0]


def simulated_panel_gradient(ds, tensor, params, draws, spec: ModelSpec,
                             threads: int = 1) -> np.ndarray:
    return _evaluate(ds, tensor, spec, np.asarray(params, dtype=float), draws, True, threads)[1]


@dataclass
class MXLResult(EstimationResult):
    spec: ModelSpec | None = None
    n_draws: int = 0
    seed: int | None = None
    draw_generator: str = ""
    diagnostics: list[str] = field(default_factory=list)

    @classmethod
    def from_spec(cls, spec: ModelSpec, values: Mapping | None = None) -> "MXLResult":
        """A result holding published or hypothesized values (no covariance)."""
        spec = spec if values is None else spec.with_values(values)
        theta = spec.vector()
        k = len(theta)
        return cls(names=spec.param_names(), theta_hat=theta, vcov=np.zeros((k, k)),
                   loglik=float("nan"), null_loglik=float("nan"), converged=True, iterations=0,
                   gradient_norm=float("nan"), n_respondents=0, n_observations=0,
                   model=spec.name, meta={"engine": "values"}, spec=spec)

    def rules(self) -> dict[str, MixingRule]:
        return self.spec.mixing_rules(self.theta_hat)

    @property
    def fixed_estimates(self) -> dict[str, float]:
        return {n: self[n] for n in self.spec.fixed_names
                if self.spec.term(n).kind in ("asc", "main")}

    @property
    def random_estimates(self) -> dict[str, tuple[float, float]]:
        return {n: (self[f"{n}.mu"], self[f"{n}.sigma"]) for n in self.spec.random_names}

    @property
    def interaction_estimates(self) -> dict[str, float]:
        return {t.name: self[t.name] for t in self.spec.terms
                if t.kind in ("attr_x_attr", "attr_x_cov")}


def _start_values(ds, spec: ModelSpec, tensor) -> np.ndarray:
    mnl = estimate_mnl(ds, spec.fixed_version(), tensor)
    out = []
    for t in spec.terms:
        b = mnl[t.name]
        r = spec.rule(t.name)
        if not r.is_random:
            out.append(b)
        elif r.family == "normal":
            out += [b, 0.1]
        else:
            mag = b * r.sign
            out += [math.log(mag) if mag > 1e-3 else math.log(1e-3), 0.1]
    return np.array(out)


def _numeric_hessian(grad_fn, theta, rel_step=1e-4):
    k = len(theta)
    h = np.zeros((k, k))
    for i in range(k):
        step = rel_step * max(1.0, abs(theta[i]))
        e = np.zeros(k)
        e[i] = step
        h[:, i] = (grad_fn(theta + e) - grad_fn(theta - e)) / (2 * step)
    return 0.5 * (h + h.T)


def estimate_mxl(ds, spec: ModelSpec, R: int = 500, seed: int = 0,
                 draws: DrawMatrix | None = None, start=None, maxiter: int = 1000,
                 gtol: float = 1e-6, threads: int = 1) -> MXLResult:
    """Maximum simulated likelihood for a panel mixed logit.

    Starts from the nested MNL fit (lognormal means at ``log|beta|``, all
    sigmas at 0.1), runs BFGS with the analytic simulated score, and takes
    the covariance from a central-difference Hessian of that score. Sigmas
    are reported as non-negative; a sigma at the zero boundary is recorded
    in ``diagnostics`` rather than treated as a failure.
    """
    tensor = expand(ds, spec)
    lay = _Layout(spec)
    if draws is None:
        draws = make_draws(R, len(lay.rand_terms), seed, n_individuals=len(ds))
    theta0 = _start_values(ds, spec, tensor) if start is None else np.asarray(start, dtype=float)

    def fg(th):
        ll, g = _evaluate(ds, tensor, spec, th, draws, True, threads)
        return -ll, -g

    res = optimize.minimize(fg, theta0, jac=True, method="BFGS",
                            options={"maxiter": maxiter, "gtol": 1e-5})
    theta = res.x
    ll, grad = _evaluate(ds, tensor, spec, theta, draws, True, threads)
    gnorm = float(np.linalg.norm(grad))
    tol = gtol * (1.0 + abs(ll))
    if gnorm > tol:
        # BFGS may stop on line-search precision loss; finish with Newton steps on the FD Hessian.
        for _ in range(10):
            h = _numeric_hessian(lambda t: fg(t)[1] * -1, theta)
            try:
                step = np.linalg.solve(h, -grad)
            except np.linalg.LinAlgError:
                break
            t = 1.0
            while t > 1e-6:
                ll_new, g_new = _evaluate(ds, tensor, spec, theta + t * step, draws, True, threads)
                if ll_new >= ll - 1e-10:
                    break
                t *= 0.5
            theta, ll, grad = theta + t * step, ll_new, g_new
            gnorm = float(np.linalg.norm(grad))
            if gnorm <= tol:
                break
    converged = gnorm <= tol
    if not converged:
        raise ConvergenceError(f"simulated likelihood did not converge "
                               f"(gradient norm {gnorm:.3g}, {res.nit} iterations)")

    h = _numeric_hessian(lambda t: fg(t)[1] * -1, theta)
    info = -h
    w, vecs = np.linalg.eigh(info)
    diagnostics = []
    weak = w <= max(w[-1], 1.0) * 1e-10
    if weak.any():
        # Weakly identified directions: report them and use the pseudo-inverse on the rest.
        for v in vecs[:, weak].T:
            combo = ", ".join(f"{n}={c:.3g}" for c, n in zip(v, lay.names) if abs(c) > 0.1)
            diagnostics.append(f"near-singular simulated information along {combo}; "
                               "standard errors of these parameters are unreliable")
    inv_w = np.where(weak, 0.0, 1.0 / np.where(weak, 1.0, w))
    vcov = (vecs * inv_w) @ vecs.T
    if weak.any():
        unreliable = np.any(np.abs(vecs[:, weak]) > 0.1, axis=1)
        vcov[unreliable, :] = np.nan
        vcov[:, unreliable] = np.nan

    # sigma enters through sigma*z with z symmetric: report |sigma| and flip its covariance row.
    flip = np.ones(len(theta))
    for p in lay.sigma_pos:
        if theta[p] < 0:
            flip[p] = -1.0
    theta = theta * flip
    vcov = vcov * np.outer(flip, flip)
    se = np.sqrt(np.clip(np.nan_to_num(np.diag(vcov)), 0, None))
    for name, p in zip(spec.random_names, lay.sigma_pos):
        if theta[p] < 1e-3 or theta[p] < 0.5 * se[p]:
            diagnostics.append(f"sigma of {name} at or near the zero boundary "
                               f"({theta[p]:.3g}, se {se[p]:.3g})")
    null = len(ds) * ds.n_situations * math.log(1.0 / ds.n_alternatives)
    return MXLResult(
        names=lay.names, theta_hat=theta, vcov=vcov, loglik=ll, null_loglik=null,
        converged=converged, iterations=int(res.nit), gradient_norm=gnorm,
        n_respondents=len(ds), n_observations=ds.n_observations, model=spec.name,
        meta={"engine": "mxl"}, spec=spec, n_draws=draws.R, seed=seed,
        draw_generator=draws.generator, diagnostics=diagnostics)


# ---------------------------------------------------------------------------
# Distribution summaries


@dataclass(frozen=True)
class DistributionSummary:
    mean: float
    std_dev: float
    p5: float
    p50: float
    p95: float
    std_errors: Mapping[str, float] | None = None

    STATS = ("mean", "std_dev", "p5", "p50", "p95")

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(getattr(self, s) for s in self.STATS)


def _lognormal_stats(mu, sigma, sign=1):
    mu, sigma = np.asarray(mu, float), np.asarray(sigma, float)
    mean = np.exp(mu + 0.5 * sigma ** 2)
    sd = mean * np.sqrt(np.expm1(sigma ** 2))
    lo, mid, hi = np.exp(mu - Z95 * sigma), np.exp(mu), np.exp(mu + Z95 * sigma)
    if sign < 0:
        return -mean, sd, -hi, -mid, -lo
    return mean, sd, lo, mid, hi


def _normal_stats(mu, sigma):
    mu, sigma = np.asarray(mu, float), np.abs(np.asarray(sigma, float))
    return mu, sigma, mu - Z95 * sigma, mu, mu + Z95 * sigma


def lognormal_summary(mu: float, sigma: float, sign: int = 1) -> DistributionSummary:
    """Mean, sd and 5/50/95th percentiles of ``sign * exp(N(mu, sigma^2))``.

    ``sign=+1`` reports the magnitude (the "(-) attribute" convention);
    ``sign=-1`` reports the utility-side, negative coefficient.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    return DistributionSummary(*map(float, _lognormal_stats(mu, sigma, sign)))


def normal_summary(mu: float, sigma: float) -> DistributionSummary:
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    return DistributionSummary(*map(float, _normal_stats(mu, sigma)))


def summary_functional(spec: ModelSpec, coefficient: str, stat: str,
                       signed: bool = False) -> Callable[[np.ndarray], np.ndarray]:
    """Vectorized map from parameter draws (M, P) to one summary statistic (M,)."""
    names = spec.param_names()
    i_mu, i_sig = names.index(f"{coefficient}.mu"), names.index(f"{coefficient}.sigma")
    rule = spec.rule(coefficient)
    k = DistributionSummary.STATS.index(stat)

    def f(th):
        th = np.atleast_2d(th)
        mu, sig = th[:, i_mu], np.abs(th[:, i_sig])
        if rule.family == "lognormal":
            return _lognormal_stats(mu, sig, rule.sign if signed else 1)[k]
        return _normal_stats(mu, sig)[k]

    return f


def _mvn_draws(mean, vcov, M, seed):
    vcov = 0.5 * (np.asarray(vcov, float) + np.asarray(vcov, float).T)
    w, vecs = np.linalg.eigh(vcov)
    scale = max(1.0, float(np.abs(w).max()))
    if w[0] < -1e-10 * scale:
        raise ValueError(f"covariance is not positive semidefinite "
                         f"(smallest eigenvalue {w[0]:.3g})")
    root = vecs * np.sqrt(np.clip(w, 0.0, None))
    e = np.random.default_rng(seed).standard_normal((M, len(mean)))
    return np.asarray(mean, float) + e @ root.T


def summary_std_errors(result, stat: Callable[[np.ndarray], np.ndarray], M: int = 10000,
                       seed: int = 0) -> float:
    """Simulation standard error of a summary statistic.

    Draws ``M`` parameter vectors from N(theta_hat, vcov), evaluates the
    vectorized ``stat`` on the (M, P) array and returns the sample standard
    deviation of the results.
    """
    draws = _mvn_draws(result.theta_hat, result.vcov, M, seed)
    vals = np.asarray(stat(draws), dtype=float)
    return float(np.std(vals, ddof=1)) if M > 1 else 0.0


def mixing_summary(result: MXLResult, M: int = 10000, seed: int = 0) -> dict[str, DistributionSummary]:
    """Summaries of every random coefficient with simulated standard errors.

    Lognormal coefficients are reported as magnitudes (positive), matching
    the "(-) attribute" convention used for negative coefficients. Without a
    covariance matrix (all zeros) no standard errors are attached.
    """
    out = {}
    vcov = np.asarray(result.vcov, dtype=float)
    unknown = np.isnan(np.diag(vcov))
    have_vcov = bool(np.any(np.nan_to_num(vcov)))
    draws = None
    if have_vcov:
        draws = _mvn_draws(result.theta_hat, np.nan_to_num(vcov), M, seed)
    names = result.spec.param_names()
    for name in result.spec.random_names:
        mu, sig = result[f"{name}.mu"], abs(result[f"{name}.sigma"])
        rule = result.spec.rule(name)
        s = lognormal_summary(mu, sig) if rule.family == "lognormal" else normal_summary(mu, sig)
        ses = None
        if have_vcov:
            ses = {st: float(np.std(summary_functional(result.spec, name, st)(draws), ddof=1))
                   for st in DistributionSummary.STATS}
            if unknown[names.index(f"{name}.mu")] or unknown[names.index(f"{name}.sigma")]:
                ses = {st: float("nan") for st in ses}
        out[name] = DistributionSummary(*s.as_tuple(), std_errors=ses)
    return out


def share_negative(mu: float, sigma: float, shift: float = 0.0) -> float:
    """Share of a normal coefficient ``mu + shift + sigma Z`` that is negative."""
    m = mu + shift
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return 1.0 if m < 0 else 0.0
    return float(stats.norm.cdf(-m / sigma))
