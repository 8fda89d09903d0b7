"""Command line entry point: ``underreport {simulate,fit,reconstruct,diagnose,report}``.

Exit codes: 0 success, 1 model/runtime failure, 2 input or validation error.
Every run writes ``run_config.json`` with its fully resolved options next to
its outputs; passing that file back through ``--config`` repeats the run.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from pathlib import Path
from typing import Dict, Optional

from . import diagnostics, estimation, ingest, reconstruction
from .model import (
    LINKS, TABLE2_PARAMS, VARIANCE_MODES, ModelParams, StratumKey,
    InvalidParameterError, SeriesValidationError,
)
from .simulate import SimScenario, simulate

log = logging.getLogger("underreport")

EXIT_OK, EXIT_RUNTIME, EXIT_INPUT = 0, 1, 2

# option name -> default; None means "no default"
DEFAULTS: Dict[str, Dict[str, object]] = {
    "simulate": {"params": None, "sigma": None, "months": 96, "replicate": 0, "link": "logit"},
    "fit": {"data": None, "variants": "full", "link": "logit", "variance": "scaled",
            "restarts": 3, "max_iterations": 500},
    "reconstruct": {"data": None, "fit": None, "rule": "map", "coverage": None, "counts": None,
                    "unit_cost": None},
    "diagnose": {"data": None, "fit": None, "max_lag": None, "standardize": False, "dof_adjust": 0},
    "report": {"counts": None, "coverage": None, "unit_cost": None},
}
GLOBAL_DEFAULTS = {"seed": 0, "out_dir": "."}


class InputError(Exception):
    pass


def _add_globals(p):
    p.add_argument("--config", help="JSON file of options (a previous run_config.json works)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", dest="out_dir", default=None)
    p.add_argument("--quiet", action="store_true", default=None)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    _add_globals(common)
    parser = argparse.ArgumentParser(prog="underreport", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="simulate a registered series with known truth")
    p.add_argument("--params", help="JSON parameter file (default: reported point estimates)")
    p.add_argument("--sigma", type=float)
    p.add_argument("--months", type=int)
    p.add_argument("--replicate", type=int)
    p.add_argument("--link", choices=LINKS)

    p = sub.add_parser("fit", parents=[common], help="maximum-likelihood fit of one or more variants")
    p.add_argument("--data", help="series CSV")
    p.add_argument("--variants", help=f"comma list from {sorted(estimation.VARIANTS)}")
    p.add_argument("--link", choices=LINKS)
    p.add_argument("--variance", choices=VARIANCE_MODES)
    p.add_argument("--restarts", type=int)
    p.add_argument("--max-iterations", dest="max_iterations", type=int)

    p = sub.add_parser("reconstruct", parents=[common], help="latent series, incidence summary, projection, cost")
    p.add_argument("--data")
    p.add_argument("--fit", help="fit JSON written by `fit`")
    p.add_argument("--rule", choices=("map", "expected"))
    p.add_argument("--coverage", help="coverage CSV (sex,age_band,coverage) or a single fraction")
    p.add_argument("--counts", help="counts CSV (sex,age_band,registered,estimated) overriding derived counts")
    p.add_argument("--unit-cost", dest="unit_cost", type=float)

    p = sub.add_parser("diagnose", parents=[common], help="residual ACF/PACF and Ljung-Box test")
    p.add_argument("--data")
    p.add_argument("--fit")
    p.add_argument("--max-lag", dest="max_lag", type=int)
    p.add_argument("--standardize", action="store_true", default=None)
    p.add_argument("--dof-adjust", dest="dof_adjust", type=int)

    p = sub.add_parser("report", parents=[common], help="projection and cost from case counts")
    p.add_argument("--counts")
    p.add_argument("--coverage")
    p.add_argument("--unit-cost", dest="unit_cost", type=float)
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit command-line flags."""
    cfg = dict(GLOBAL_DEFAULTS)
    cfg.update(DEFAULTS[args.command])
    cfg["quiet"] = False
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise InputError(f"config file not found: {path}")
        try:
            loaded = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InputError(f"config file {path} is not valid JSON: {exc}") from None
        loaded.pop("command", None)
        unknown = set(loaded) - set(cfg)
        if unknown:
            raise InputError(f"config file {path} has unknown options: {sorted(unknown)}")
        cfg.update(loaded)
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    cfg["command"] = args.command
    return cfg


def _require(cfg, *keys):
    for k in keys:
        if cfg.get(k) in (None, ""):
            raise InputError(f"--{k.replace('_', '-')} is required for {cfg['command']}")


def _existing(path_str, what):
    path = Path(path_str)
    if not path.is_file():
        raise InputError(f"{what} not found: {path}")
    return path


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def load_params(path_str: Optional[str]) -> ModelParams:
    if path_str is None:
        return TABLE2_PARAMS
    path = _existing(path_str, "params file")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"params file {path} is not valid JSON: {exc}") from None
    if "params" in raw and isinstance(raw["params"], dict):
        raw = raw["params"]
    base = TABLE2_PARAMS.to_dict()
    base.update(raw)
    return ModelParams.from_dict(base)


def load_fit(path_str: str):
    path = _existing(path_str, "fit file")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
        params = ModelParams.from_dict(raw["params"])
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise InputError(f"fit file {path} is malformed: {exc}") from None
    return params, raw.get("link", "logit"), raw.get("variance_mode", "scaled")


def _stratum_from_row(row, lineno):
    return ingest._parse_stratum(row, lineno)


def load_counts(path_str) -> Dict[StratumKey, tuple]:
    path = _existing(path_str, "counts file")
    cols = ("sex", "age_band", "registered", "estimated")
    out = {}
    for lineno, row in ingest._read_rows(path, cols, cols):
        key = _stratum_from_row(row, lineno)
        out[key] = (ingest._parse_float(row, "registered", lineno), ingest._parse_float(row, "estimated", lineno))
    return out


def load_coverage(value):
    if value is None:
        return reconstruction.DEFAULT_COVERAGE
    if isinstance(value, (int, float)):
        return float(value)
    try:
        return float(value)
    except ValueError:
        pass
    path = _existing(value, "coverage file")
    cols = ("sex", "age_band", "coverage")
    out = {}
    for lineno, row in ingest._read_rows(path, cols, cols):
        out[_stratum_from_row(row, lineno)] = ingest._parse_float(row, "coverage", lineno)
    return out


# -- subcommands ---------------------------------------------------------------

def cmd_simulate(cfg, out: Path) -> None:
    params = load_params(cfg["params"])
    if cfg["sigma"] is not None:
        params = params.with_values(sigma=float(cfg["sigma"]))
    scenario = SimScenario(params=params, t_max=int(cfg["months"]), seed=int(cfg["seed"]), link=cfg["link"])
    res = simulate(scenario, int(cfg["replicate"]))
    ingest.write_series_csv(out / "series.csv", res.series)
    ingest.write_truth_csv(out / "truth.csv", res.series, res.latent, res.flags)
    log.info("simulated %d records, %d truncated at zero", len(res.series), res.truncated)


def cmd_fit(cfg, out: Path) -> None:
    _require(cfg, "data")
    data = ingest.parse_series_csv(_existing(cfg["data"], "data file"))
    variants = [v.strip() for v in str(cfg["variants"]).split(",") if v.strip()]
    bad = [v for v in variants if v not in estimation.VARIANTS]
    if not variants or bad:
        raise InputError(f"unknown variant(s) {bad}; choose from {sorted(estimation.VARIANTS)}")
    fits = []
    for v in variants:
        opts = estimation.FitOptions(
            seed=int(cfg["seed"]), link=cfg["link"], variance_mode=cfg["variance"],
            restarts=int(cfg["restarts"]), max_iterations=int(cfg["max_iterations"]), variant=v,
        )
        res = estimation.fit(data, opts)
        fits.append(res)
        log.info("%s: loglik %.4f, q %.4f, converged=%s", v, res.loglik, res.params.q, res.converged)
        if len(variants) > 1:
            _write_json(out / f"fit_{v}.json", res.to_dict())
    _write_json(out / "fit.json", fits[0].to_dict())
    if len(fits) > 1:
        table = estimation.compare_models(fits)
        _write_csv(out / "comparison.csv", ("rank", "variant", "loglik", "n_params", "aic"),
                   [(r.rank, r.variant, repr(r.loglik), r.n_params, repr(r.aic)) for r in table])


def _projection_rows(report):
    return [(r.group, f"{r.registered_count:.1f}", f"{r.estimated_count:.1f}",
             "" if r.coverage is None else repr(r.coverage), r.projected_registered, r.projected_estimated)
            for r in report.rows]


PROJECTION_HEADER = ("group", "registered", "estimated", "coverage", "projected_registered", "projected_estimated")


def _write_projection_and_cost(cfg, out, counts):
    report = reconstruction.project_population(counts, load_coverage(cfg["coverage"]))
    _write_csv(out / "projection.csv", PROJECTION_HEADER, _projection_rows(report))
    tot = report.total
    gap = tot.projected_estimated - tot.projected_registered
    cost = {"projected_registered": tot.projected_registered, "projected_estimated": tot.projected_estimated,
            "gap_cases": gap, "gap_pct_of_registered": 100.0 * gap / tot.projected_registered}
    if cfg["unit_cost"] is not None:
        cost["unit_cost"] = float(cfg["unit_cost"])
        cost["cost_gap"] = reconstruction.cost_impact(tot.projected_estimated, tot.projected_registered,
                                                      float(cfg["unit_cost"]))
    _write_json(out / "cost.json", cost)
    return report


def cmd_reconstruct(cfg, out: Path) -> None:
    _require(cfg, "data", "fit")
    data = ingest.parse_series_csv(_existing(cfg["data"], "data file"))
    params, link, variance = load_fit(cfg["fit"])
    rec = reconstruction.reconstruct(data, params, link, variance, cfg["rule"])
    _write_csv(out / "reconstruction.csv",
               ("month", "sex", "age_band", "rate", "posterior_p", "latent_x", "flagged"),
               [(int(data.month[i]), ingest.SEX_LABELS[int(data.sex[i])],
                 StratumKey(int(data.sex[i]), int(data.age_band[i])).age_label,
                 repr(float(data.y[i])), repr(float(rec.posterior_p[i])), repr(float(rec.latent_x[i])),
                 int(rec.flagged[i])) for i in range(len(data))])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        summary = reconstruction.summarize_incidence(data, rec)
    for w in caught:
        log.warning("%s", w.message)
    _write_csv(out / "summary.csv", ("group", "registered_mean", "estimated_mean", "pct_diff"),
               [(r.group, f"{r.registered_mean:.1f}", f"{r.estimated_mean:.1f}", f"{r.pct_diff:.1f}")
                for r in summary.rows])
    counts = None
    if cfg["counts"] is not None:
        counts = load_counts(cfg["counts"])
    elif data.population is not None:
        counts = reconstruction.stratum_counts(data, rec)
    if counts is not None:
        _write_projection_and_cost(cfg, out, counts)
    else:
        log.warning("no population column or counts file; skipping projection and cost")


def cmd_diagnose(cfg, out: Path) -> None:
    _require(cfg, "data", "fit")
    data = ingest.parse_series_csv(_existing(cfg["data"], "data file"))
    params, link, variance = load_fit(cfg["fit"])
    try:
        report = diagnostics.diagnose(data, params, cfg["max_lag"], link, variance,
                                      bool(cfg["standardize"]), int(cfg["dof_adjust"]))
    except diagnostics.UndefinedACFError:
        raise
    except ValueError as exc:
        raise InputError(str(exc)) from None
    res = diagnostics.residuals(data, params, link, variance, bool(cfg["standardize"]))
    _write_csv(out / "residuals.csv", ("month", "residual"),
               [(int(m), repr(float(r))) for m, r in zip(res.month, res.total)])
    _write_csv(out / "residuals_by_record.csv", ("month", "sex", "age_band", "residual"),
               [(int(data.month[i]), ingest.SEX_LABELS[int(data.sex[i])],
                 StratumKey(int(data.sex[i]), int(data.age_band[i])).age_label,
                 repr(float(res.per_record[i]))) for i in range(len(data))])
    b = report.band
    _write_csv(out / "acf.csv", ("lag", "acf", "pacf", "band_low", "band_high", "outside_band"),
               [(k + 1, repr(float(a)), repr(float(p)), repr(-b), repr(b), int(abs(a) > b))
                for k, (a, p) in enumerate(zip(report.acf, report.pacf))])
    q, dof, pval = report.portmanteau
    _write_json(out / "portmanteau.json", {
        "test": "ljung-box", "statistic": q, "dof": dof, "p_value": pval,
        "lags_outside_band": report.lags_outside_band, "max_lag": int(report.acf.size),
        **report.metadata,
    })


def cmd_report(cfg, out: Path) -> None:
    _require(cfg, "counts")
    _write_projection_and_cost(cfg, out, load_counts(cfg["counts"]))


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "reconstruct": cmd_reconstruct,
    "diagnose": cmd_diagnose,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    logging.basicConfig(level=logging.WARNING if cfg["quiet"] else logging.INFO,
                        format="%(levelname)s: %(message)s", force=True)
    out = Path(cfg["out_dir"])
    try:
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg, out)
    except (InputError, ingest.CSVSchemaError, SeriesValidationError, InvalidParameterError,
            reconstruction.InvalidCoverageError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (estimation.DegenerateFitError, estimation.DegenerateDataError,
            diagnostics.UndefinedACFError, ArithmeticError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    _write_json(out / "run_config.json", {k: v for k, v in sorted(cfg.items())})
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
