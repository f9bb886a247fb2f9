"""Command-line interface.

Subcommands: fit (one model, one dataset), compare (K-fold elpd of both
models), simulate (fake data at known truths), recover (simulate + fit +
coverage), ppc (posterior predictive checks).  Every run writes its full
effective configuration as config.json next to its outputs; that file is
itself a valid --config input, so any run can be reproduced exactly.

Exit codes: 0 success, 2 input/config error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from pathlib import Path

import numpy as np

from .crossval import compare, comparison_to_dict, report_to_dict, run_kfold
from .data import load_csv, make_folds, save_csv, save_folds
from .errors import (DataFormatError, FoldError, NumericalError, RtmixError)
from .models import MODELS, layout_for_dataset
from .sampler import (SamplerConfig, diagnose, diagnostics_to_dict, sample,
                      save_draws_csv)
from .simulate import (DEFAULT_LINEAR_TRUTH, DEFAULT_MIXTURE_TRUTH, DesignSpec,
                       LinearTruth, MixtureTruth, gen_linear, gen_mixture,
                       posterior_predictive, ppc_to_dict, recovery_check,
                       recovery_to_dict, save_ppc_replicates)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3

_SAMPLER_FIELDS = (
    ("seed", int, 1234, False),
    ("chains", int, 4, False),
    ("warmup", int, 1000, False),
    ("samples", int, 1000, False),
    ("target_accept", float, 0.8, False),
    ("max_leapfrog", int, 1024, False),
)


# ---------------------------------------------------------------------------
# config handling

def _load_config(path: str) -> dict:
    """Read a config file: a JSON object, or key=value lines with # comments."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataFormatError(f"cannot read config file: {exc}") from exc
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: invalid JSON config: {exc}") from exc
        if not isinstance(obj, dict):
            raise DataFormatError(f"{path}: JSON config must be an object")
        obj.pop("command", None)
        return obj
    out: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataFormatError(f"{path}:{lineno}: expected key=value")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    out.pop("command", None)
    return out


def _coerce(raw, typ, name):
    if isinstance(raw, str) and typ is not str:
        try:
            return typ(raw)
        except ValueError:
            raise DataFormatError(f"config value for {name!r} must be {typ.__name__}, "
                                  f"got {raw!r}") from None
    if typ in (int, float) and isinstance(raw, bool):
        raise DataFormatError(f"config value for {name!r} must be {typ.__name__}")
    if typ is int and isinstance(raw, float) and raw != int(raw):
        raise DataFormatError(f"config value for {name!r} must be an integer")
    try:
        return typ(raw)
    except (TypeError, ValueError):
        raise DataFormatError(f"config value for {name!r} must be {typ.__name__}, "
                              f"got {raw!r}") from None


def _resolve(args: argparse.Namespace, fields) -> dict:
    """Effective settings: built-in defaults <- config file <- explicit flags."""
    file_vals = _load_config(args.config) if getattr(args, "config", None) else {}
    known = {name for name, *_ in fields} | {"truth"}
    unknown = sorted(set(file_vals) - known)
    if unknown:
        raise DataFormatError(f"unknown config key(s): {', '.join(unknown)}")
    effective = {}
    for name, typ, default, required in fields:
        value = getattr(args, name, None)
        if value is None and name in file_vals:
            value = _coerce(file_vals[name], typ, name)
        if value is None:
            value = default
        if value is None and required:
            raise DataFormatError(f"missing required setting --{name}")
        effective[name] = value
    return effective


def _truth_for(model: str, args: argparse.Namespace, file_vals_truth) -> LinearTruth | MixtureTruth:
    default = DEFAULT_LINEAR_TRUTH if model == "linear" else DEFAULT_MIXTURE_TRUTH
    overrides: dict[str, float] = {}
    if isinstance(file_vals_truth, dict):
        overrides.update({k: float(v) for k, v in file_vals_truth.items()})
    for spec in getattr(args, "truth", None) or []:
        if "=" not in spec:
            raise DataFormatError(f"--truth expects name=value, got {spec!r}")
        key, _, value = spec.partition("=")
        try:
            overrides[key.strip()] = float(value)
        except ValueError:
            raise DataFormatError(f"--truth value for {key!r} must be numeric") from None
    valid = {f.name for f in dataclasses.fields(default)}
    unknown = sorted(set(overrides) - valid)
    if unknown:
        raise DataFormatError(
            f"unknown truth parameter(s) for the {model} model: {', '.join(unknown)}")
    try:
        return dataclasses.replace(default, **overrides)
    except ValueError as exc:
        raise DataFormatError(f"invalid truth values: {exc}") from exc


def _sampler_config(effective: dict) -> SamplerConfig:
    try:
        return SamplerConfig(
            n_chains=effective["chains"], n_warmup=effective["warmup"],
            n_samples=effective["samples"], seed=effective["seed"],
            target_accept=effective["target_accept"],
            max_leapfrog=effective["max_leapfrog"])
    except ValueError as exc:
        raise DataFormatError(str(exc)) from exc


def _out_dir(effective: dict) -> Path:
    out = Path(effective["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(obj, path: Path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_config(effective: dict, command: str, out: Path) -> None:
    _write_json({"command": command, **effective}, out / "config.json")


# ---------------------------------------------------------------------------
# summaries

def _summary_rows(draws):
    """(name, mean, 2.5%, 97.5%) for population parameters, plus the
    probability contrast for the mixture."""
    rows = []
    n_pop = 5 if draws.model == "linear" else 8
    for name in draws.names[:n_pop]:
        col = draws.column(name)
        lo, hi = np.quantile(col, [0.025, 0.975])
        rows.append((name, float(col.mean()), float(lo), float(hi)))
        if name == "p_or":
            contrast = draws.column("p_sr") - draws.column("p_or")
            lo_c, hi_c = np.quantile(contrast, [0.025, 0.975])
            rows.append(("p_sr-p_or", float(contrast.mean()), float(lo_c), float(hi_c)))
    return rows


def _format_table(rows) -> str:
    width = max(len(r[0]) for r in rows)
    lines = [f"{'parameter':<{width}}  {'mean':>8}  {'2.5%':>8}  {'97.5%':>8}"]
    for name, mean, lo, hi in rows:
        lines.append(f"{name:<{width}}  {mean:8.3f}  {lo:8.3f}  {hi:8.3f}")
    return "\n".join(lines)


def _write_summary_csv(draws, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("parameter,mean,lower,upper\n")
        flat = draws.flat()
        lo, hi = np.quantile(flat, [0.025, 0.975], axis=0)
        mean = flat.mean(axis=0)
        for d, name in enumerate(draws.names):
            fh.write(f"{name},{repr(float(mean[d]))},{repr(float(lo[d]))},"
                     f"{repr(float(hi[d]))}\n")


# ---------------------------------------------------------------------------
# subcommands

def cmd_fit(args: argparse.Namespace) -> int:
    fields = (("data", str, None, True), ("model", str, None, True),
              ("out", str, None, True), *_SAMPLER_FIELDS)
    effective = _resolve(args, fields)
    if effective["model"] not in MODELS:
        raise DataFormatError(f"model must be one of {MODELS}")
    dataset = load_csv(effective["data"])
    config = _sampler_config(effective)
    draws = sample(effective["model"], dataset, config)
    diag = diagnose(draws)

    out = _out_dir(effective)
    save_draws_csv(draws, out / "draws.csv")
    _write_json(diagnostics_to_dict(diag), out / "diagnostics.json")
    layout = layout_for_dataset(effective["model"], dataset)
    _write_json({"model": layout.model, "coordinates": list(layout.names),
                 "transforms": list(layout.transforms)}, out / "layout.json")
    _write_summary_csv(draws, out / "summary.csv")
    table = _format_table(_summary_rows(draws))
    (out / "summary.txt").write_text(table + "\n")
    _write_config(effective, "fit", out)

    print(table)
    worst_rhat = max((r for r in diag.rhat.values() if not math.isnan(r)), default=math.nan)
    print(f"\ndraws: {draws.n_chains} chains x {draws.n_samples}; "
          f"max split R-hat {worst_rhat:.3f}; "
          f"divergences {list(diag.divergences)}")
    for msg in diag.warnings:
        print(f"warning: {msg}", file=sys.stderr)
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    fields = (("data", str, None, True), ("k", int, 10, False),
              ("out", str, None, True), *_SAMPLER_FIELDS)
    effective = _resolve(args, fields)
    dataset = load_csv(effective["data"])
    plan = make_folds(dataset, effective["k"], effective["seed"])
    config = _sampler_config(effective)

    reports = {}
    for model in MODELS:
        reports[model] = run_kfold(model, dataset, plan, config)
    result = compare(reports["mixture"], reports["linear"])

    out = _out_dir(effective)
    save_folds(plan, out / "folds.csv")
    _write_json(report_to_dict(reports["linear"]), out / "elpd_linear.json")
    _write_json(report_to_dict(reports["mixture"]), out / "elpd_mixture.json")
    _write_json(comparison_to_dict(result), out / "comparison.json")
    _write_config(effective, "compare", out)

    lines = [f"{'model':<8}  {'elpd (SE)':>18}"]
    for model in MODELS:
        rep = reports[model]
        lines.append(f"{model:<8}  {rep.total:>10.1f} ({rep.se:.1f})")
    lines.append("")
    lines.append(f"difference (mixture - linear): {result.diff:.1f} "
                 f"(SE {result.se_diff:.1f}), winner: {result.winner}")
    table = "\n".join(lines)
    (out / "comparison.txt").write_text(table + "\n")
    print(table)
    for model in MODELS:
        for msg in reports[model].warnings:
            print(f"warning [{model}]: {msg}", file=sys.stderr)
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    fields = (("model", str, None, True), ("participants", int, 37, False),
              ("items", int, 15, False), ("seed", int, 1234, False),
              ("out", str, None, True))
    effective = _resolve(args, fields)
    if effective["model"] not in MODELS:
        raise DataFormatError(f"model must be one of {MODELS}")
    file_vals = _load_config(args.config) if getattr(args, "config", None) else {}
    truth = _truth_for(effective["model"], args, file_vals.get("truth"))
    design = DesignSpec(n_participants=effective["participants"],
                        n_items=effective["items"], seed=effective["seed"])
    dataset = (gen_linear(truth, design) if effective["model"] == "linear"
               else gen_mixture(truth, design))

    out = _out_dir(effective)
    save_csv(dataset, out / "simulated.csv")
    effective["truth"] = truth.as_dict()
    _write_config(effective, "simulate", out)
    print(f"wrote {len(dataset)} trials "
          f"({dataset.n_participants} participants x {dataset.n_items} items) "
          f"to {out / 'simulated.csv'}")
    return EXIT_OK


def cmd_recover(args: argparse.Namespace) -> int:
    fields = (("model", str, None, True), ("participants", int, 37, False),
              ("items", int, 15, False), ("replicates", int, 5, False),
              ("out", str, None, True), *_SAMPLER_FIELDS)
    effective = _resolve(args, fields)
    if effective["model"] not in MODELS:
        raise DataFormatError(f"model must be one of {MODELS}")
    file_vals = _load_config(args.config) if getattr(args, "config", None) else {}
    truth = _truth_for(effective["model"], args, file_vals.get("truth"))
    model = effective["model"]
    out = _out_dir(effective)

    reports = []
    for r in range(effective["replicates"]):
        state = np.random.SeedSequence(
            entropy=effective["seed"], spawn_key=(3, r)).generate_state(2, dtype=np.uint64)
        design = DesignSpec(n_participants=effective["participants"],
                            n_items=effective["items"], seed=int(state[0]))
        dataset = gen_linear(truth, design) if model == "linear" else gen_mixture(truth, design)
        config = _sampler_config({**effective, "seed": int(state[1])})
        draws = sample(model, dataset, config)
        report = recovery_check(truth, draws)
        reports.append(report)
        _write_json(recovery_to_dict(report), out / f"recovery_{r + 1}.json")
        print(f"replicate {r + 1}: coverage {report.coverage_rate:.2f}")

    names = list(reports[0].parameters)
    per_param = {
        name: float(np.mean([rep.parameters[name].covered for rep in reports]))
        for name in names
    }
    summary = {
        "model": model,
        "replicates": len(reports),
        "level": reports[0].level,
        "coverage_by_parameter": per_param,
        "mean_coverage": float(np.mean([rep.coverage_rate for rep in reports])),
    }
    _write_json(summary, out / "recovery_summary.json")
    effective["truth"] = truth.as_dict()
    _write_config(effective, "recover", out)
    print(f"mean coverage over {len(reports)} replicates: {summary['mean_coverage']:.2f}")
    return EXIT_OK


def cmd_ppc(args: argparse.Namespace) -> int:
    fields = (("data", str, None, True), ("model", str, None, True),
              ("ppc_draws", int, 200, False), ("out", str, None, True),
              *_SAMPLER_FIELDS)
    effective = _resolve(args, fields)
    if effective["model"] not in MODELS:
        raise DataFormatError(f"model must be one of {MODELS}")
    dataset = load_csv(effective["data"])
    config = _sampler_config(effective)
    draws = sample(effective["model"], dataset, config)
    summary = posterior_predictive(draws, dataset, n_rep=effective["ppc_draws"],
                                   seed=effective["seed"])

    out = _out_dir(effective)
    _write_json(ppc_to_dict(summary), out / "ppc.json")
    save_ppc_replicates(summary, out / "ppc_replicates.csv")
    _write_config(effective, "ppc", out)

    print(f"{'condition':<10} {'stat':<7} {'observed':>9} {'p_lower':>8}  flag")
    for cond, per_cond in summary.stats.items():
        for stat, s in per_cond.items():
            flag = "EXTREME" if s.extreme else ""
            print(f"{cond:<10} {stat:<7} {s.observed:>9.3f} {s.p_lower:>8.3f}  {flag}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def _add_sampler_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--seed", type=int, help="master RNG seed (default 1234)")
    sub.add_argument("--chains", type=int, help="number of chains (default 4)")
    sub.add_argument("--warmup", type=int, help="warmup iterations per chain (default 1000)")
    sub.add_argument("--samples", type=int, help="retained draws per chain (default 1000)")
    sub.add_argument("--target-accept", dest="target_accept", type=float,
                     help="dual-averaging acceptance target (default 0.8)")
    sub.add_argument("--max-leapfrog", dest="max_leapfrog", type=int,
                     help="cap on leapfrog steps per transition (default 1024)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rtmix",
        description="Fit and compare hierarchical lognormal models of reading times.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit one model to a dataset")
    p_fit.add_argument("--data", help="trial CSV (participant,item,condition,rt)")
    p_fit.add_argument("--model", choices=MODELS)
    p_fit.add_argument("--out", help="output directory")
    p_fit.add_argument("--config", help="config file (JSON or key=value lines)")
    _add_sampler_flags(p_fit)
    p_fit.set_defaults(func=cmd_fit)

    p_cmp = sub.add_parser("compare", help="K-fold predictive comparison of both models")
    p_cmp.add_argument("--data")
    p_cmp.add_argument("--k", type=int, help="number of folds (default 10)")
    p_cmp.add_argument("--out")
    p_cmp.add_argument("--config")
    _add_sampler_flags(p_cmp)
    p_cmp.set_defaults(func=cmd_compare)

    p_sim = sub.add_parser("simulate", help="simulate a dataset at known truths")
    p_sim.add_argument("--model", choices=MODELS)
    p_sim.add_argument("--participants", type=int)
    p_sim.add_argument("--items", type=int)
    p_sim.add_argument("--seed", type=int)
    p_sim.add_argument("--truth", action="append", metavar="NAME=VALUE",
                       help="override a population value (repeatable)")
    p_sim.add_argument("--out")
    p_sim.add_argument("--config")
    p_sim.set_defaults(func=cmd_simulate)

    p_rec = sub.add_parser("recover", help="simulate, fit, and check CI coverage")
    p_rec.add_argument("--model", choices=MODELS)
    p_rec.add_argument("--participants", type=int)
    p_rec.add_argument("--items", type=int)
    p_rec.add_argument("--replicates", type=int, help="simulated datasets (default 5)")
    p_rec.add_argument("--truth", action="append", metavar="NAME=VALUE")
    p_rec.add_argument("--out")
    p_rec.add_argument("--config")
    _add_sampler_flags(p_rec)
    p_rec.set_defaults(func=cmd_recover)

    p_ppc = sub.add_parser("ppc", help="posterior predictive checks of one fit")
    p_ppc.add_argument("--data")
    p_ppc.add_argument("--model", choices=MODELS)
    p_ppc.add_argument("--ppc-draws", dest="ppc_draws", type=int,
                       help="replicate datasets (default 200)")
    p_ppc.add_argument("--out")
    p_ppc.add_argument("--config")
    _add_sampler_flags(p_ppc)
    p_ppc.set_defaults(func=cmd_ppc)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (NumericalError, FoldError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (RtmixError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
