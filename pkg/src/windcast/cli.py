"""``windcast`` command line: decompose, run, sweep, synth and eval.

Exit codes: 0 success, 1 runtime or data error, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .archive import ArchiveError, save_model
from .config import ConfigError, RunConfig, dump_config, load_config, with_overrides
from .iceemdan import iceemdan, write_decomposition_csv
from .pipeline import PipelineError, imf_sweep, run_pipeline, write_report, write_sweep_csv
from .series import METRIC_NAMES, SeriesError, TimeSeries, compute_metrics, generate_synthetic, load_csv, write_csv, write_metrics_csv

__all__ = ["main", "build_parser", "bundled_config"]

logger = logging.getLogger("windcast")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def bundled_config() -> Path:
    """Path of the config shipped with the package (noisy two-tone benchmark)."""
    return Path(str(resources.files("windcast") / "data" / "benchmark.cfg"))


def _resolve(args) -> RunConfig:
    rc = load_config(args.config) if args.config else RunConfig()
    return with_overrides(rc, seed=args.seed, strict_causal=args.strict_causal)


def _load_data(args, rc: RunConfig) -> TimeSeries:
    if getattr(args, "input", None):
        return load_csv(args.input, column=rc.column)
    if rc.input is not None:
        return load_csv(rc.input, column=rc.column)
    if rc.synth is not None:
        return generate_synthetic(rc.synth)
    raise UsageError("no input data: pass an input CSV, set data.input, or configure synth.*")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, command: str, rc: RunConfig, data: TimeSeries | None) -> Path:
    p = rc.pipeline
    head = [f"# windcast {__version__} {command}"]
    head.append(f"# derived seeds: iceemdan={p.seed} transformer=seed+k (k = subseries index) mlp={p.seed}")
    if data is not None:
        digest = hashlib.sha256(np.ascontiguousarray(data.values).tobytes()).hexdigest()
        head.append(f"# input: {len(data)} samples, sha256 of float64 values {digest}")
    path = out / "manifest.txt"
    path.write_text("\n".join(head) + "\n" + dump_config(rc), encoding="utf-8")
    return path


def cmd_decompose(args) -> int:
    rc = _resolve(args)
    data = _load_data(args, rc)
    out = _out_dir(args)
    dec = iceemdan(data.values, rc.pipeline.decomposition_params())
    write_decomposition_csv(dec, out / "decomposition.csv")
    _write_manifest(out, "decompose", rc, data)
    err = float(np.max(np.abs(data.values - dec.reconstruct())))
    bound = 1e-8 * (float(np.max(np.abs(data.values))) + 1.0)
    print(f"reconstruction max_abs_error={err:.3e} bound={bound:.3e} imfs={dec.n_imfs}")
    return EXIT_OK


def cmd_run(args) -> int:
    rc = _resolve(args)
    data = _load_data(args, rc)
    out = _out_dir(args)
    report = run_pipeline(rc.pipeline, data)
    paths = write_report(report, out)
    models = out / "models"
    models.mkdir(exist_ok=True)
    for k, f in enumerate(report.hybrid.forecasters):
        if f.model is not None:
            save_model(models / f"subseries_{k}.npz", f.model)
    if report.hybrid.mlp is not None:
        save_model(models / "residual_mlp.npz", report.hybrid.mlp)
    _write_manifest(out, "run", rc, data)
    for scope, m in (("primary", report.metrics_primary), ("corrected", report.metrics_corrected), ("baseline", report.baseline_metrics)):
        print(f"{scope:<10} mae={m.mae:.6g} rmse={m.rmse:.6g} mape={m.mape:.6g}")
    print(f"metrics written to {paths['metrics']}")
    return EXIT_OK


def _parse_counts(text: str) -> list[int]:
    counts = []
    try:
        for part in text.split(","):
            part = part.strip()
            if "-" in part:
                a, b = part.split("-", 1)
                counts.extend(range(int(a), int(b) + 1))
            elif part:
                counts.append(int(part))
    except ValueError:
        raise UsageError(f"bad IMF count list {text!r}; use e.g. 5-12 or 5,8,10") from None
    if not counts:
        raise UsageError("empty IMF count list")
    return counts


def cmd_sweep(args) -> int:
    counts = _parse_counts(args.imfs)
    rc = _resolve(args)
    data = _load_data(args, rc)
    out = _out_dir(args)
    rows = imf_sweep(rc.pipeline, data, counts)
    write_sweep_csv(rows, out / "sweep.csv")
    _write_manifest(out, "sweep", rc, data)
    mses = [m.mse for _, m in rows]
    best = int(np.argmin(mses))
    unique = mses.count(mses[best]) == 1
    print(f"lowest mse at {rows[best][0]} imfs ({mses[best]:.6g}){'' if unique else ', tied'}")
    return EXIT_OK


def cmd_synth(args) -> int:
    rc = load_config(args.config) if args.config else RunConfig()
    if rc.synth is None:
        raise UsageError("synth needs synth.* settings in the config")
    spec = rc.synth
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    out = _out_dir(args)
    path = out / args.name
    write_csv(generate_synthetic(spec), path, column=rc.column)
    print(f"wrote {spec.length} samples to {path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    rc = load_config(args.config) if args.config else RunConfig()
    ground = load_csv(args.ground, column=rc.column)
    forecast = load_csv(args.forecast, column=args.forecast_column or rc.column)
    m = compute_metrics(ground, forecast)
    out = _out_dir(args)
    write_metrics_csv([(k, v) for k, v in m.as_dict().items()], out / "eval_metrics.csv", ("metric", "value"))
    for k in METRIC_NAMES:
        print(f"{k}={getattr(m, k):.16g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value config file")
    common.add_argument("--seed", type=int, help="master seed, overrides the config")
    common.add_argument("--out", default="windcast_out", help="output directory (default: %(default)s)")
    common.add_argument("--strict-causal", action="store_true", help="decompose the training span only")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="windcast", description="Hybrid decomposition and transformer wind speed forecasting.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", parents=[common], help="decompose a series into IMFs and residue")
    p.add_argument("input", nargs="?", help="CSV with timestamp,wind_speed columns")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("run", parents=[common], help="train, forecast, correct and evaluate")
    p.add_argument("input", nargs="?")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", parents=[common], help="compare IMF counts")
    p.add_argument("input", nargs="?")
    p.add_argument("--imfs", default="5-12", help="counts, e.g. 5-12 or 5,8,10 (default: %(default)s)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic series")
    p.add_argument("--name", default="synthetic.csv", help="file name inside --out (default: %(default)s)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", parents=[common], help="metrics of a forecast CSV against a ground CSV")
    p.add_argument("ground")
    p.add_argument("forecast")
    p.add_argument("--forecast-column", help="value column of the forecast CSV (default: data.column)")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"windcast: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SeriesError, PipelineError, ArchiveError, OSError, ValueError, FloatingPointError) as exc:
        print(f"windcast: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

