"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data/config error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from resilient_forecast import __version__
from resilient_forecast.anomaly import FilterConfig, filter_history
from resilient_forecast.backtest import evaluate, filtered_weeks, rolling_retrain
from resilient_forecast.config import ConfigError, RunConfig, load_run_config
from resilient_forecast.experiments import spread_reduction, stability_runs
from resilient_forecast.model import ForecastResult, forecast_dataset
from resilient_forecast.network import DivergenceError, load_parameters, save_parameters
from resilient_forecast.series import DatasetError, load_dataset, save_dataset
from resilient_forecast.synthetic import generate
from resilient_forecast.training import TrainingDiverged, select_and_average, train

log = logging.getLogger("resilient_forecast")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit with status 2
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _resolve(args) -> RunConfig:
    cfg = load_run_config(getattr(args, "config", None))
    seed = cfg.seed if args.seed is None else args.seed
    return replace(
        cfg,
        seed=seed,
        train=replace(cfg.train, seed=seed),
        generator=replace(cfg.generator, seed=seed),
    )


def _write_sidecar(artifact: Path, cfg: RunConfig, command: str, **extra) -> None:
    payload = {"artifact": artifact.name, "command": command, "seed": cfg.seed, "config": cfg.to_json(), **extra}
    with open(str(artifact) + ".json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_model(path: str) -> tuple:
    params = load_parameters(path)
    sidecar = Path(str(path) + ".json")
    if not sidecar.exists():
        raise ConfigError(f"model sidecar {sidecar} not found")
    with open(sidecar, encoding="utf-8") as fh:
        meta = json.load(fh)
    cfg = RunConfig.from_json(meta["config"])
    return params, cfg


def write_forecasts_csv(forecasts: dict[str, ForecastResult], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["series_id", "origin_week", "step", "q10", "q50", "q90"])
        for sid, fc in forecasts.items():
            for k in range(fc.horizon):
                q = fc.quantiles[:, k]
                writer.writerow([sid, fc.origin, k + 1, repr(float(q[0])), repr(float(q[1])), repr(float(q[2]))])


def cmd_synth(args) -> int:
    cfg = _resolve(args)
    out = Path(args.out)
    save_dataset(generate(cfg.generator), out)
    _write_sidecar(out, cfg, "synth")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _resolve(args)
    data = load_dataset(args.data)
    ledger, _ = train(data, cfg.model, cfg.train, cfg.sampler)
    params = select_and_average(ledger, cfg.train.n_average)
    out = Path(args.out_model)
    save_parameters(params, out)
    _write_sidecar(out, cfg, "train", data=str(args.data),
                   selected_epochs=[c.epoch for c in sorted(ledger.entries, key=lambda c: (c.validation_loss, c.epoch))[: cfg.train.n_average]])
    if args.ledger:
        ledger.save(args.ledger)
        _write_sidecar(Path(args.ledger) / "ledger.csv", cfg, "train")
    return EXIT_OK


def cmd_forecast(args) -> int:
    params, cfg = _read_model(args.model)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    data = load_dataset(args.data)
    forecasts = forecast_dataset(params, data, cfg.model, cfg.seed)
    out = Path(args.out)
    write_forecasts_csv(forecasts, out)
    _write_sidecar(out, cfg, "forecast", model=str(args.model), data=str(args.data))
    if args.svg:
        from resilient_forecast.plots import forecast_chart

        svg_dir = Path(args.svg)
        svg_dir.mkdir(parents=True, exist_ok=True)
        for r in data:
            forecast_chart(r, forecasts[r.series_id], svg_dir / f"{r.series_id}.svg")
    return EXIT_OK


def cmd_filter(args) -> int:
    params, cfg = _read_model(args.model)
    fcfg = FilterConfig(
        delta=cfg.filter.delta if args.delta is None else args.delta,
        max_anomaly_run=cfg.filter.max_anomaly_run if args.max_run is None else args.max_run,
    )
    cfg = replace(cfg, filter=fcfg)
    data = load_dataset(args.data)
    cleaned, report = filter_history(data, params, cfg.model, fcfg)
    out = Path(args.out)
    report.write_csv(out)
    _write_sidecar(out, cfg, "filter", model=str(args.model), data=str(args.data))
    if args.cleaned:
        save_dataset(cleaned, args.cleaned)
        _write_sidecar(Path(args.cleaned), cfg, "filter", model=str(args.model), data=str(args.data))
    return EXIT_OK


def _parse_origins(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"--origins expects comma-separated integers, got {text!r}") from None


def cmd_backtest(args) -> int:
    cfg = _resolve(args)
    data = load_dataset(args.data)
    origins = _parse_origins(args.origins)
    fcfg = None if args.no_filter else cfg.filter
    results = rolling_retrain(data, origins, cfg.model, cfg.train, cfg.sampler, fcfg)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for res in results:
        path = out_dir / f"forecast_{res.origin}.csv"
        write_forecasts_csv(res.forecasts, path)
        _write_sidecar(path, cfg, "backtest", origin=res.origin, origin_seed=res.seed, data=str(args.data))
        if res.report is not None:
            path = out_dir / f"filter_{res.origin}.csv"
            res.report.write_csv(path)
            _write_sidecar(path, cfg, "backtest", origin=res.origin, data=str(args.data))
    metrics = evaluate(results, data)
    path = out_dir / "metrics.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["origin", "mae", "wmae", "count"])
        for res, m in zip(results, metrics):
            writer.writerow([res.origin, repr(m.mae), repr(m.wmae), m.count])
    _write_sidecar(path, cfg, "backtest", origins=origins, data=str(args.data))
    if args.svg:
        from resilient_forecast.plots import forecast_chart

        svg_dir = out_dir / "svg"
        svg_dir.mkdir(exist_ok=True)
        dropped = filtered_weeks(results)
        for res in results:
            for r in data:
                weeks = [w for sid, w in dropped if sid == r.series_id]
                forecast_chart(r, res.forecasts[r.series_id], svg_dir / f"{r.series_id}_{res.origin}.svg", weeks)
    return EXIT_OK


def cmd_stability(args) -> int:
    cfg = _resolve(args)
    data = load_dataset(args.data) if args.data else generate(cfg.generator)
    last = max(r.end for r in data) - 1
    origin = args.origin if args.origin is not None else last - cfg.model.horizon
    best, avg = stability_runs(data, origin, cfg.model, cfg.train, cfg.sampler, args.runs,
                               forecast_seed=cfg.seed, jobs=args.jobs)
    report = avg if args.averaging == "on" else best
    out = Path(args.out)
    report.write_csv(out)
    _write_sidecar(
        out, cfg, "stability", data=args.data, runs=args.runs, averaging=args.averaging, origin=origin,
        mean_spread_best=best.mean_spread, mean_spread_averaged=avg.mean_spread,
        median_spread_reduction=spread_reduction(best, avg), run_wmae=report.run_wmae,
    )
    if args.svg:
        from resilient_forecast.plots import stability_chart

        svg_dir = Path(args.svg)
        svg_dir.mkdir(parents=True, exist_ok=True)
        for r in data:
            stability_chart(report, r, svg_dir / f"{r.series_id}.svg")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="resilient-forecast", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="run config JSON (sections: model, train, sampler, filter, generator, seed)")
        p.add_argument("--seed", type=int, default=None, help="single source of randomness")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train, average the top-N checkpoints, save the model")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out-model", required=True)
    p.add_argument("--ledger", help="directory for per-epoch checkpoints")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("forecast", help="sample forecasts from a trained model")
    common(p, config=False)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--svg", help="directory for per-series SVG charts")
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("filter", help="run the anomaly filter over full histories")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--delta", type=float)
    p.add_argument("--max-run", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--cleaned", help="also write the cleaned dataset here")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("backtest", help="rolling retrain over a schedule of origins")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--origins", required=True, help="comma-separated last-observed weeks, e.g. 104,108,112")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-filter", action="store_true", help="disable the anomaly filter")
    p.add_argument("--svg", action="store_true")
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("stability", help="forecast spread across seeded re-runs")
    common(p)
    p.add_argument("--data", help="dataset file; defaults to the configured synthetic set")
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--averaging", choices=["on", "off"], default="on")
    p.add_argument("--origin", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--svg", help="directory for per-series SVG charts")
    p.set_defaults(func=cmd_stability)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
        if getattr(args, "runs", 2) < 2:
            raise UsageError("--runs must be >= 2")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, DivergenceError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DatasetError, ConfigError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
