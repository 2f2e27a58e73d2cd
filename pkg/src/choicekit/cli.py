"""Command-line interface.

Subcommands: ``filter``, ``estimate``, ``simulate``, ``design``,
``sensitivity``, ``lrtest`` and ``summarize-mixing``. ``--seed``,
``--draws`` and ``--threads`` are global and go before the subcommand.

Exit codes: 0 success, 1 validation failure, 2 numerical failure, 3 I/O
error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import design as dsn
from . import report as rpt
from . import sensitivity as sv
from .data import load_responses, screen, write_responses
from .mnl import EstimationError, estimate_mnl, lr_test
from .mxl import MXLResult, estimate_mxl, mixing_summary
from .schema import STUDY_SCHEMA
from .simulate import DEFAULT_PIVOT_TIMES, SimConfig, simulate_dataset
from .utility import ConfigError, ModelSpec, load_model_spec, model_spec_from_dict

__all__ = ["main", "build_parser", "EXIT_OK", "EXIT_VALIDATION", "EXIT_NUMERICAL", "EXIT_IO"]

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3
SCHEMA_VERSION = 1


class ValidationFailure(Exception):
    """A command ran but its checks failed (e.g. design constraint violations)."""


def _outdir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _read_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from None


def _check_keys(d, allowed, path):
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected an object")
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise ConfigError(f"{path}.{extra[0]}: unknown key")
    if "schema_version" in allowed and d.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"{path}.schema_version: expected {SCHEMA_VERSION}")


def _load_model(source: str, manifest: rpt.RunManifest | None = None):
    """A model from a shipped config name, a config file or an estimates report.

    Returns ``(spec, result)`` where ``result`` is ``None`` unless the source
    carries coefficient values.
    """
    p = Path(source)
    if p.exists():
        if manifest is not None:
            manifest.add_input(p)
        d = _read_json(p)
        if "parameters" in d and "model" in d:
            return rpt.result_from_report(d)
        spec = model_spec_from_dict(d)
    else:
        spec = load_model_spec(source)
    if not spec.values:
        return spec, None
    if spec.is_mixed:
        return spec, MXLResult.from_spec(spec)
    theta = spec.vector()
    k = len(theta)
    from .mnl import EstimationResult
    return spec, EstimationResult(spec.param_names(), theta, np.zeros((k, k)), float("nan"),
                                  float("nan"), True, 0, float("nan"), 0, 0, spec.name,
                                  {"engine": "values"})


def _load_data(args, manifest):
    design = dsn.load_design(args.design) if getattr(args, "design", None) else None
    for p in (args.choices, args.respondents):
        manifest.add_input(p)
    if design is not None:
        manifest.add_input(args.design)
    return load_responses(args.choices, args.respondents, STUDY_SCHEMA, design)


# ---------------------------------------------------------------------------
# Commands


def cmd_filter(args) -> int:
    out = _outdir(args.out)
    man = rpt.RunManifest("filter", {"fraction": args.fraction})
    ds = _load_data(args, man)
    rep = screen(ds, args.fraction)
    ch, rs = out / "choices.csv", out / "respondents.csv"
    write_responses(rep.retained, ch, rs)
    excl = rpt.write_json({"counts": rep.counts, "fast_responders": list(rep.fast),
                           "straight_liners": list(rep.straight),
                           "inconsistent": list(rep.inconsistent),
                           "excluded": list(rep.excluded),
                           "reference_response_time": ds.reference_response_time},
                          out / "exclusions.json")
    man.write(out, [ch, rs, excl])
    c = rep.counts
    print(f"retained {len(rep.retained)} of {len(ds)}; fast {c['fast_responders']}, "
          f"straight {c['straight_liners']}, inconsistent {c['inconsistent']}, "
          f"union {c['union']}")
    return EXIT_OK


def cmd_estimate(args) -> int:
    out = _outdir(args.out)
    man = rpt.RunManifest("estimate", {"engine": args.engine, "draws": args.draws,
                                       "model": args.model})
    spec, _ = _load_model(args.model, man)
    ds = _load_data(args, man)
    if args.engine == "mnl":
        fit_spec = spec.fixed_version() if spec.is_mixed else spec
        result = estimate_mnl(ds, fit_spec)
    else:
        fit_spec = spec
        result = estimate_mxl(ds, spec, R=args.draws, seed=args.seed, threads=args.threads)
        man.seeds = {"draws": args.seed}
    paths = [rpt.write_json(rpt.estimates_report(result, fit_spec), out / "estimates.json")]
    txt = out / "estimates.txt"
    txt.write_text(rpt.format_estimates(result, fit_spec), encoding="utf-8")
    paths.append(txt)
    if isinstance(result, MXLResult) and fit_spec.random_names:
        summ = mixing_summary(result, M=args.samples, seed=args.seed)
        paths.append(rpt.write_json(rpt.mixing_report(summ), out / "mixing.json"))
        mt = out / "mixing.txt"
        mt.write_text(rpt.format_mixing(summ, fit_spec), encoding="utf-8")
        paths.append(mt)
        man.seeds = {**man.seeds, "summary_se": args.seed}
    man.write(out, paths)
    sys.stdout.write(txt.read_text(encoding="utf-8"))
    return EXIT_OK


SIM_KEYS = {"schema_version", "n_respondents", "model", "design", "pivot_times",
            "pivot_weights", "covariate_rates", "method"}


def cmd_simulate(args) -> int:
    out = _outdir(args.out)
    man = rpt.RunManifest("simulate")
    if args.config:
        man.add_input(args.config)
        cfg_d = _read_json(args.config)
        _check_keys(cfg_d, SIM_KEYS, "simulation")
    else:
        cfg_d = {"model": args.model, "n_respondents": args.n}
    model = cfg_d.get("model")
    if isinstance(model, dict):
        spec = model_spec_from_dict(model)
    elif isinstance(model, str):
        spec, _ = _load_model(model, man)
    else:
        raise ConfigError("simulation.model: a config name, path or inline object is required")
    if not spec.values:
        raise ConfigError("simulation.model.values: true parameter values are required")
    if "n_respondents" not in cfg_d:
        raise ConfigError("simulation.n_respondents: missing")
    design = dsn.load_design(cfg_d["design"]) if cfg_d.get("design") else dsn.reference_design()
    rates = cfg_d.get("covariate_rates")
    if rates is None:
        rates = {c: sv.COVARIATE_RATES[c] for c in spec.covariates if c in sv.COVARIATE_RATES}
    try:
        cfg = SimConfig(int(cfg_d["n_respondents"]), design, spec,
                        tuple(cfg_d.get("pivot_times", DEFAULT_PIVOT_TIMES)),
                        cfg_d.get("pivot_weights"), dict(rates), args.seed,
                        cfg_d.get("method", "gumbel"))
    except ValueError as e:
        raise ConfigError(f"simulation: {e}") from None
    ds = simulate_dataset(cfg)
    ch, rs = out / "choices.csv", out / "respondents.csv"
    write_responses(ds, ch, rs)
    truth = rpt.write_json({"model": spec.to_dict(), "n_respondents": cfg.n_respondents,
                            "pivot_times": list(cfg.pivot_times),
                            "pivot_weights": cfg.weights.tolist(),
                            "covariate_rates": dict(cfg.covariate_rates), "seed": args.seed,
                            "method": cfg.method}, out / "truth.json")
    man.config = {k: v for k, v in cfg_d.items()}
    man.seeds = {"simulation": args.seed}
    man.write(out, [ch, rs, truth])
    print(f"simulated {len(ds)} respondents into {out}")
    return EXIT_OK


def _load_prior(path, spec):
    if path is None:
        return dsn.default_prior(spec)
    d = _read_json(path)
    _check_keys(d, {"schema_version", "mean", "sd", "n_draws", "seed"}, "prior")
    names = spec.term_names
    for key in ("mean", "sd"):
        for n in d.get(key, {}):
            if n not in names:
                raise ConfigError(f"prior.{key}.{n}: unknown coefficient")
    base = dsn.default_prior(spec)
    mean = np.array([d.get("mean", {}).get(n, m) for n, m in zip(names, base.mean)])
    sd = np.array([d.get("sd", {}).get(n, np.sqrt(v)) for n, v in zip(names, base.variances)])
    return dsn.PriorSpec(mean, sd ** 2, int(d.get("n_draws", base.n_draws)),
                         int(d.get("seed", base.seed)))


def cmd_design(args) -> int:
    out = _outdir(args.out)
    man = rpt.RunManifest(f"design {args.action}", {"iterations": args.iterations,
                                                     "pivot": args.pivot})
    if args.design:
        man.add_input(args.design)
        plan = dsn.load_design(args.design)
    else:
        plan = dsn.reference_design()
    if args.prior:
        man.add_input(args.prior)
    spec = dsn.design_spec(plan.schema)
    prior = _load_prior(args.prior, spec)
    paths = []
    if args.action == "improve":
        viol = dsn.check_constraints(plan)
        if viol:
            _print_violations(viol)
            raise ValidationFailure("start design violates level constraints")
        plan = dsn.improve_design(plan, prior=prior, spec=spec, iterations=args.iterations,
                                  seed=args.seed, pivot=args.pivot)
        p = out / "design.csv"
        dsn.write_design(plan, p)
        paths.append(p)
        man.seeds = {"exchange": args.seed}
    viol = dsn.check_constraints(plan)
    audit = dsn.partial_profile_audit(plan)
    d_err = dsn.bayesian_d_error(plan, prior, spec, args.pivot)
    rep = {"violations": [{"block": v.block, "situation": v.situation,
                           "alternative": v.alternative, "constraint": v.constraint.description}
                          for v in viol],
           "partial_profile": {"constant_per_set": audit.constant_per_set,
                               "constant_per_block": audit.constant_per_block,
                               "attributes": list(audit.attribute_names), "ok": audit.ok()},
           "bayesian_d_error": d_err, "prior_draws": prior.n_draws, "pivot": args.pivot}
    paths.append(rpt.write_json(rep, out / "design_report.json"))
    man.write(out, paths)
    print(f"Bayesian D-error {d_err:.6g}; constraint violations {len(viol)}; "
          f"partial-profile structure {'ok' if audit.ok() else 'NOT ok'}")
    if viol:
        _print_violations(viol)
        raise ValidationFailure(f"{len(viol)} constraint violations")
    return EXIT_OK


def _print_violations(viol):
    for v in viol:
        print(f"  block {v.block}, situation {v.situation}, alternative {v.alternative}: "
              f"{v.constraint.description}", file=sys.stderr)


PRESETS = ("fig2", "fig3", *sv.FIGURE_GROUPS, "groups")
SCENARIO_KEYS = {"schema_version", "pivot", "covariate_rates", "grid_points", "sweeps"}
SWEEP_KEYS = {"name", "attribute", "grid", "overrides", "covariates", "group"}


def _scenario_tables(d, baseline, model, n_draws, seed):
    _check_keys(d, SCENARIO_KEYS, "scenario")
    tables = {}
    for i, sw in enumerate(d.get("sweeps", [])):
        path = f"scenario.sweeps[{i}]"
        _check_keys(sw, SWEEP_KEYS, path)
        attr = sw.get("attribute")
        if attr not in baseline.spec.schema.names:
            raise ConfigError(f"{path}.attribute: unknown attribute {attr!r}")
        if "grid" not in sw:
            raise ConfigError(f"{path}.grid: missing")
        spec = sv.SweepSpec(attr, [float(g) for g in sw["grid"]], sw.get("overrides", {}),
                            sw.get("covariates", {}), n_draws, seed, sw.get("name", f"sweep{i}"))
        try:
            if sw.get("group"):
                g, c = sv.group_sweep(baseline, spec, model, sw["group"])
                tables[f"{spec.label}_group"], tables[f"{spec.label}_complement"] = g, c
            elif isinstance(model, MXLResult):
                tables[spec.label] = sv.sweep_mxl(baseline, spec, model)
            else:
                tables[spec.label] = sv.sweep_mnl(baseline, spec, model)
        except ConfigError as e:
            raise ConfigError(f"{path}: {e}") from None
    return tables


def cmd_sensitivity(args) -> int:
    out = _outdir(args.out)
    man = rpt.RunManifest("sensitivity", {"preset": args.preset, "draws": args.draws,
                                          "model": args.model, "grid_points": args.grid_points})
    spec, model = _load_model(args.model, man)
    if model is None:
        raise ConfigError("model: coefficient values are required for sensitivity sweeps")
    scen = {}
    if args.scenario:
        man.add_input(args.scenario)
        scen = _read_json(args.scenario)
        _check_keys(scen, SCENARIO_KEYS, "scenario")
    pivot = float(scen.get("pivot", dsn.REFERENCE_PIVOT))
    baseline = sv.design_baseline(spec, pivot=pivot, covariate_rates=scen.get("covariate_rates"))
    n = int(scen.get("grid_points", args.grid_points))
    draws, seed = args.draws, args.seed
    tables = {}
    if args.scenario:
        tables.update(_scenario_tables(scen, baseline, model, draws, seed))
    preset = args.preset
    if preset == "fig2":
        tables.update({f"fig2_{k}": t for k, t in
                       sv.figure2_sweeps(baseline, model, n, seed, draws).items()})
    elif preset == "fig3":
        _need_mixed(model, preset)
        tables.update(sv.figure3_sweeps(baseline, model, n, seed, draws))
    elif preset is not None:
        _need_mixed(model, preset)
        figs = list(sv.FIGURE_GROUPS) if preset == "groups" else [preset]
        for fig, (g, c) in sv.group_sweeps(baseline, model, figs, n, seed, draws).items():
            tables[f"{fig}_group"], tables[f"{fig}_complement"] = g, c
    if not tables:
        raise ConfigError("nothing to do: give --preset or a scenario with sweeps")
    man.seeds = {"mixing_draws": seed}
    paths = sv.write_tables(tables, out, {"baseline": baseline.as_dict(), "pivot": pivot})
    man.write(out, paths)
    for k, t in tables.items():
        flag = " (extrapolated)" if t.extrapolated.any() else ""
        print(f"{k}: {t.mean[0]:.3f} -> {t.mean[-1]:.3f}{flag}")
    return EXIT_OK


def _need_mixed(model, preset):
    if not isinstance(model, MXLResult):
        raise ConfigError(f"preset {preset}: needs a mixed logit model")


def _loglik_arg(value: str) -> float:
    p = Path(value)
    if p.exists():
        d = _read_json(p)
        if "loglik" not in d:
            raise ConfigError(f"{p}: no loglik field")
        return float(d["loglik"])
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"loglikelihood {value!r} is neither a number nor a report file") from None


def cmd_lrtest(args) -> int:
    ll_r, ll_f = _loglik_arg(args.restricted), _loglik_arg(args.full)
    stat, p = lr_test(ll_r, ll_f, args.df)
    res = {"statistic": stat, "df": args.df, "p_value": p,
           "loglik_restricted": ll_r, "loglik_full": ll_f}
    if args.out:
        rpt.write_json(res, args.out)
    print(f"LR statistic {stat:.4f}, df {args.df}, p-value {p:.4g}")
    return EXIT_OK


def cmd_summarize_mixing(args) -> int:
    spec, model = _load_model(args.model)
    if not isinstance(model, MXLResult):
        raise ConfigError("model: a mixed logit model with values is required")
    summ = mixing_summary(model, M=args.samples, seed=args.seed)
    if args.out:
        out = _outdir(args.out)
        paths = [rpt.write_json(rpt.mixing_report(summ), out / "mixing.json")]
        (out / "mixing.txt").write_text(rpt.format_mixing(summ, spec), encoding="utf-8")
        paths.append(out / "mixing.txt")
        man = rpt.RunManifest("summarize-mixing", {"model": args.model, "samples": args.samples},
                              seeds={"summary_se": args.seed})
        man.write(out, paths)
    sys.stdout.write(rpt.format_mixing(summ, spec))
    return EXIT_OK


# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with the validation code, keeping 2 for numerical failures."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="choicekit", description=__doc__.split("\n\n")[0])
    ap.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    ap.add_argument("--draws", type=int, default=None,
                    help="simulation draws: MXL draws per respondent (default 500) or "
                         "mixing draws for sensitivity bands (default 10000)")
    ap.add_argument("--threads", type=int, default=1,
                    help="worker threads; results do not depend on this")
    sub = ap.add_subparsers(dest="command", required=True)

    def data_args(p):
        p.add_argument("--choices", required=True, help="long-format choices CSV")
        p.add_argument("--respondents", required=True, help="respondent CSV")
        p.add_argument("--design", help="design CSV to validate levels against")
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("filter", help="apply the exclusion rules")
    data_args(p)
    p.add_argument("--fraction", type=float, default=0.40,
                   help="fast-responder threshold as a fraction of the median time")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("estimate", help="fit an MNL or panel MXL model")
    data_args(p)
    p.add_argument("--model", required=True, help="shipped config name or config path")
    p.add_argument("--engine", choices=("mnl", "mxl"), default="mnl")
    p.add_argument("--samples", type=int, default=10000,
                   help="parameter draws for mixing-summary standard errors")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    p.add_argument("--config", help="simulation config JSON")
    p.add_argument("--model", help="model with values (when no --config)")
    p.add_argument("--n", type=int, default=961, help="respondents (when no --config)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("design", help="evaluate or improve a choice design")
    p.add_argument("action", choices=("eval", "improve"))
    p.add_argument("--design", help="design CSV (default: shipped reference design)")
    p.add_argument("--prior", help="prior config JSON (default: documented prior)")
    p.add_argument("--iterations", type=int, default=2)
    p.add_argument("--pivot", type=float, default=dsn.REFERENCE_PIVOT)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("sensitivity", help="predicted-probability sweeps")
    p.add_argument("--model", required=True, help="estimates report, config path or shipped name")
    p.add_argument("--preset", choices=PRESETS)
    p.add_argument("--scenario", help="scenario JSON with custom sweeps")
    p.add_argument("--grid-points", type=int, default=25)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("lrtest", help="likelihood-ratio test")
    p.add_argument("--restricted", required=True, help="loglikelihood value or estimates report")
    p.add_argument("--full", required=True, help="loglikelihood value or estimates report")
    p.add_argument("--df", type=int, required=True)
    p.add_argument("--out", help="write the result as JSON")
    p.set_defaults(func=cmd_lrtest)

    p = sub.add_parser("summarize-mixing", help="mixing-distribution summaries")
    p.add_argument("--model", required=True)
    p.add_argument("--samples", type=int, default=10000)
    p.add_argument("--out")
    p.set_defaults(func=cmd_summarize_mixing)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.draws is None:
        args.draws = 10000 if args.command == "sensitivity" else 500
    if args.draws < 1 or args.threads < 1:
        print("error: --draws and --threads must be >= 1", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        return args.func(args)
    except EstimationError as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValidationFailure as e:
        print(f"validation failed: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError) as e:
        print(f"invalid input: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
