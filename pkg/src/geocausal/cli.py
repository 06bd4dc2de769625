"""Command-line interface: fit-propensity, design-intervention, ate, cate,
mediate, simulate, validate, report."""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

import numpy as np

from . import io, pipeline
from .figures import effect_vs_l_panel, mediation_bars, write_svg
from .propensity import fit_poisson_intensity
from .validation import EstimatorConfig, coverage_experiment, default_dgp


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="run configuration JSON")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: GEOCAUSAL_THREADS or 1)")
    p.add_argument("--out", type=Path, default=None, help="override the output dir")


def _load(args) -> pipeline.RunConfig:
    if args.config is None:
        print("error: --config is required", file=sys.stderr)
        raise SystemExit(2)
    if not args.config.exists():
        print("error: config file not found: %s" % args.config, file=sys.stderr)
        raise SystemExit(2)
    config = pipeline.load_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
        config.raw["seed"] = args.seed
    if args.out is not None:
        config.out_dir = args.out
    if not config.events_path.exists():
        print("error: events file not found: %s" % config.events_path, file=sys.stderr)
        raise SystemExit(2)
    return config


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("GEOCAUSAL_THREADS")
    return int(env) if env else 1


def _run_estimands(args, estimands: list[str]) -> int:
    config = _load(args)
    config.estimands = estimands
    if getattr(args, "L", None):
        config.L_values = pipeline._parse_L(args.L)
        config.raw["L"] = args.L
    report = pipeline.run(config, threads=_threads(args))
    failures = [k for k, v in report["status"].items() if v != "ok"]
    for k in failures:
        print("estimand %s failed: %s" % (k, report["status"][k]), file=sys.stderr)
    print("results written to %s" % (config.out_dir / "results.json"))
    return 1 if failures else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="geocausal",
        description="Causal inference for spatiotemporal point patterns",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit-propensity", help="fit the treatment intensity model")
    p.add_argument("--events", type=Path, help="events CSV (overrides config)")
    p.add_argument("--covariates", type=Path, help="covariate raster directory")
    p.add_argument("--model-out", type=Path, default=Path("model.json"))
    _add_common(p)

    p = sub.add_parser("design-intervention", help="build an intervention raster")
    p.add_argument("--name", default="A", help="intervention key in the config")
    p.add_argument("--raster-out", type=Path, default=Path("intervention.asc"))
    _add_common(p)

    for name, est in (("ate", ["ate"]), ("cate", ["cate"]), ("mediate", ["mediate"])):
        p = sub.add_parser(name, help="estimate %s" % name)
        p.add_argument("--L", help="intervention length(s), e.g. 3 or 1..14")
        _add_common(p)

    p = sub.add_parser("simulate", help="write a synthetic data set")
    p.add_argument("--dgp", type=Path, help="DGP preset JSON")
    p.add_argument("--T", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("synthetic"))
    p.add_argument("--threads", type=int, default=None)

    p = sub.add_parser("validate", help="coverage experiment against the oracle")
    p.add_argument("--dgp", type=Path, help="DGP preset JSON")
    p.add_argument("--estimand", default="ate", choices=["ate", "mediation", "cate"])
    p.add_argument("--replicates", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("validation"))
    p.add_argument("--threads", type=int, default=None)

    p = sub.add_parser("report", help="render SVG figures from results.json")
    p.add_argument("--results", type=Path, required=True)
    p.add_argument("--out", type=Path, default=None)

    args = parser.parse_args(argv)

    if args.command == "fit-propensity":
        config = _load(args)
        if args.events is not None:
            config.events_path = args.events
        if args.covariates is not None:
            config.covariate_paths = {
                asc.stem: asc for asc in sorted(Path(args.covariates).glob("*.asc"))
            }
        if not config.events_path.exists():
            print("error: events file not found: %s" % config.events_path,
                  file=sys.stderr)
            return 2
        series = pipeline._load_series(config)
        from .propensity import PropensityOptions

        options = PropensityOptions(
            time_spline_df=int(config.propensity.get("time_spline_df", 0)),
            ridge=float(config.propensity.get("ridge", 0.0)),
        )
        names = config.propensity.get("covariates") or sorted(series.covariates)
        fit = fit_poisson_intensity(series, names, options)
        io.dump_json(io.propensity_model_to_dict(fit), args.model_out)
        print("model written to %s (converged=%s, deviance=%.6g)"
              % (args.model_out, fit.report.converged, fit.report.deviance))
        return 0

    if args.command == "design-intervention":
        config = _load(args)
        series = pipeline._load_series(config)
        spec = config.interventions.get(args.name)
        if spec is None:
            print("error: intervention %r not in config" % args.name, file=sys.stderr)
            return 2
        pair = pipeline.build_intervention(spec, config, series,
                                           max(config.L_values))
        io.write_ascii_grid(pair.treatment.rasters[0], args.raster_out)
        print("intervention intensity written to %s (expected count %g)"
              % (args.raster_out, pair.treatment.expected_count))
        return 0

    if args.command in ("ate", "cate", "mediate"):
        return _run_estimands(args, {"ate": ["ate"], "cate": ["cate"],
                                     "mediate": ["mediate"]}[args.command])

    if args.command == "simulate":
        dgp = _dgp_from(args.dgp)
        from .simulate import simulate_series

        series = simulate_series(dgp, args.T, args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        io.write_events_csv(series, out / "events.csv")
        for name, raster in dgp.covariates.items():
            io.write_ascii_grid(raster, out / ("%s.asc" % name))
        io.write_ascii_grid(dgp.mu0, out / "mu0.asc")
        print("synthetic series (T=%d) written to %s" % (args.T, out))
        return 0

    if args.command == "validate":
        dgp = _dgp_from(args.dgp)
        config = _estimator_config_from(args.dgp)
        config.estimand = args.estimand
        rows = coverage_experiment(dgp, config, args.replicates, args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        io.write_coverage_table(rows, out / "coverage.csv", out / "coverage.json")
        for row in rows:
            print({k: row[k] for k in ("estimand", "T", "truth") if k in row})
        print("coverage table written to %s" % (out / "coverage.csv"))
        return 0

    if args.command == "report":
        if not args.results.exists():
            print("error: results file not found: %s" % args.results, file=sys.stderr)
            return 2
        report = io.load_json(args.results)
        out = args.out or args.results.parent
        out.mkdir(parents=True, exist_ok=True)
        ate = report.get("estimands", {}).get("ate")
        if ate:
            rows = [dict(v, L=int(k.split("=")[1])) for k, v in ate.items()
                    if k.startswith("L=")]
            rows.sort(key=lambda r: r["L"])
            write_svg(effect_vs_l_panel(rows), out / "effect_vs_L.svg")
        mediate = report.get("estimands", {}).get("mediate")
        if mediate:
            write_svg(mediation_bars(mediate), out / "mediation.svg")
        print("figures written to %s" % out)
        return 0

    return 2


def _dgp_from(path: Path | None):
    if path is None:
        return default_dgp()
    spec = io.load_json(path)
    kwargs = {k: spec[k] for k in (
        "treatment_rate", "mu0_rate", "spillover_range", "mediator",
        "mediator_bonus") if k in spec}
    if "carryover" in spec:
        kwargs["carryover"] = tuple(float(v) for v in spec["carryover"])
    return default_dgp(**kwargs)


def _estimator_config_from(path: Path | None) -> EstimatorConfig:
    if path is None:
        return EstimatorConfig()
    spec = io.load_json(path)
    cfg = EstimatorConfig()
    est = spec.get("estimator", {})
    for key in ("L", "bandwidth", "count_A", "count_B", "delta_A", "delta_B",
                "pixel_factor", "oracle_draws", "region_margin"):
        if key in est:
            setattr(cfg, key, est[key])
    if "T_grid" in est:
        cfg.T_grid = tuple(int(v) for v in est["T_grid"])
    if "bandwidth_schedule" in est:
        cfg.bandwidth_schedule = {int(k): float(v)
                                  for k, v in est["bandwidth_schedule"].items()}
    return cfg


if __name__ == "__main__":
    sys.exit(main())
