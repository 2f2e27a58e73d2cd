"""Estimate reports, mixing summaries and run manifests.

JSON outputs use sorted keys and fixed indentation so that identical runs
produce identical bytes. Timestamps in manifests come from
``SOURCE_DATE_EPOCH`` when it is set.
"""
from __future__ import annotations

import datetime as _dt
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .mnl import EstimationResult
from .mxl import DistributionSummary, MXLResult
from .utility import ModelSpec, model_spec_from_dict

__all__ = [
    "RunManifest",
    "sha256_file",
    "sha256_bytes",
    "write_json",
    "dumps",
    "estimates_report",
    "result_from_report",
    "format_estimates",
    "format_mixing",
    "mixing_report",
]

TOOL_VERSION = "0.1.0"


def _clean(obj):
    if isinstance(obj, Mapping):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def write_json(obj, path) -> Path:
    path = Path(path)
    path.write_text(dumps(obj), encoding="utf-8")
    return path


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = (_dt.datetime.fromtimestamp(int(epoch), _dt.timezone.utc) if epoch
         else _dt.datetime.now(_dt.timezone.utc))
    return t.strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass
class RunManifest:
    """Provenance of one command run.

    Input files are recorded by name and content hash, outputs by path
    relative to the manifest's directory, so reruns into different
    directories produce the same manifest. Thread counts are deliberately
    not recorded: they never change results.
    """

    command: str
    config: Mapping = field(default_factory=dict)
    inputs: Mapping[str, str] = field(default_factory=dict)
    seeds: Mapping[str, int] = field(default_factory=dict)
    outputs: Mapping[str, str] = field(default_factory=dict)
    tool_version: str = TOOL_VERSION
    timestamp: str = ""

    @property
    def config_hash(self) -> str:
        return sha256_bytes(dumps(self.config).encode())

    def add_input(self, path) -> None:
        p = Path(path)
        self.inputs = {**self.inputs, p.name: sha256_file(p)}

    def write(self, outdir, outputs: Sequence[Path], name: str = "manifest.json") -> Path:
        outdir = Path(outdir)
        self.outputs = {str(Path(p).resolve().relative_to(outdir.resolve())): sha256_file(p)
                        for p in outputs}
        self.timestamp = self.timestamp or _timestamp()
        return write_json({"command": self.command, "config": self.config,
                           "config_hash": self.config_hash, "inputs": self.inputs,
                           "seeds": self.seeds, "outputs": self.outputs,
                           "tool_version": self.tool_version, "timestamp": self.timestamp},
                          outdir / name)


# ---------------------------------------------------------------------------
# Estimates


def estimates_report(result: EstimationResult, spec: ModelSpec) -> dict:
    """JSON-ready record of a fit, including the model config needed to reuse it."""
    rows = []
    for n, v, se, z in zip(result.names, result.theta_hat, result.std_errors, result.z_values):
        rows.append({"name": n, "estimate": float(v), "std_error": float(se), "z_value": float(z)})
    values = spec.unflatten(result.theta_hat)
    out = {
        "engine": result.meta.get("engine", "mnl"),
        "model": spec.with_values(values).to_dict(),
        "parameters": rows,
        "vcov": result.vcov,
        "loglik": result.loglik,
        "null_loglik": result.null_loglik,
        "converged": result.converged,
        "iterations": result.iterations,
        "gradient_norm": result.gradient_norm,
        "n_respondents": result.n_respondents,
        "n_observations": result.n_observations,
    }
    if isinstance(result, MXLResult):
        out.update(n_draws=result.n_draws, seed=result.seed, draw_generator=result.draw_generator,
                   diagnostics=list(result.diagnostics))
    return out


def result_from_report(report: Mapping) -> tuple[ModelSpec, EstimationResult]:
    """Rebuild a model spec (with values) and a result from :func:`estimates_report` output."""
    spec = model_spec_from_dict(report["model"])
    theta = spec.vector()
    k = len(theta)
    vcov = np.asarray(report.get("vcov") or np.zeros((k, k)), dtype=float)
    common = dict(names=spec.param_names(), theta_hat=theta, vcov=vcov,
                  loglik=report.get("loglik") or float("nan"),
                  null_loglik=report.get("null_loglik") or float("nan"),
                  converged=bool(report.get("converged", True)),
                  iterations=int(report.get("iterations", 0)),
                  gradient_norm=report.get("gradient_norm") or float("nan"),
                  n_respondents=int(report.get("n_respondents", 0)),
                  n_observations=int(report.get("n_observations", 0)), model=spec.name,
                  meta={"engine": report.get("engine", "mnl")})
    if spec.is_mixed:
        return spec, MXLResult(**common, spec=spec, n_draws=int(report.get("n_draws", 0)),
                               seed=report.get("seed"))
    return spec, EstimationResult(**common)


def _label(spec: ModelSpec, name: str) -> str:
    base, _, part = name.partition(".")
    t = spec.term(base)
    label = t.label or t.name
    r = spec.rule(base)
    negative = t.reported_sign < 0 or (r.family == "lognormal" and r.sign < 0)
    if negative and not label.startswith("(-)"):
        label = f"(-) {label}"
    if r.is_random:
        label += f" [{r.family}] {'mean' if part == 'mu' else 'std. dev.'}"
    return label


def _reported_sign(spec: ModelSpec, name: str) -> int:
    base = name.partition(".")[0]
    if spec.rule(base).is_random:
        return 1  # underlying-normal parameters are reported as estimated
    return spec.term(base).reported_sign


def format_estimates(result: EstimationResult, spec: ModelSpec) -> str:
    """Plain-text estimates table using the reported sign convention for "(-)" rows."""
    rows = [(_label(spec, n), v * _reported_sign(spec, n), z * _reported_sign(spec, n))
            for n, v, z in zip(result.names, result.theta_hat, result.z_values)]
    width = max(len(r[0]) for r in rows)
    lines = [f"{'Explanatory variable':<{width}}  {'Estimate':>9}  {'z-value':>8}"]
    for lab, v, z in rows:
        lines.append(f"{lab:<{width}}  {v:>9.3f}  {z:>8.2f}")
    lines.append(f"{'Loglikelihood':<{width}}  {result.loglik:>9.1f}")
    lines.append(f"{'Null loglikelihood':<{width}}  {result.null_loglik:>9.1f}")
    return "\n".join(lines) + "\n"


def mixing_report(summaries: Mapping[str, DistributionSummary]) -> dict:
    return {name: {"statistics": dict(zip(DistributionSummary.STATS, s.as_tuple())),
                   "std_errors": dict(s.std_errors or {})}
            for name, s in summaries.items()}


def format_mixing(summaries: Mapping[str, DistributionSummary], spec: ModelSpec) -> str:
    """Mixing-distribution block: mean, sd and percentiles per random coefficient."""
    heads = ("Mean", "Std. dev.", "5th pct", "Median", "95th pct")
    labels = {n: _label(spec, f"{n}.mu").rsplit(" mean", 1)[0] for n in summaries}
    width = max((len(v) for v in labels.values()), default=len("Coefficient"))
    lines = [f"{'Coefficient':<{width}}  " + "  ".join(f"{h:>9}" for h in heads)]
    for n, s in summaries.items():
        lines.append(f"{labels[n]:<{width}}  " + "  ".join(f"{v:>9.3f}" for v in s.as_tuple()))
        if s.std_errors:
            lines.append(f"{'  (s.e.)':<{width}}  " + "  ".join(
                f"{s.std_errors[k]:>9.3f}" for k in DistributionSummary.STATS))
    return "\n".join(lines) + "\n"
