"""Decompose, forecast each subseries, fuse, and correct with forecast residual errors.

The flow:

1. split the series into train and test at ``split_boundary``;
2. decompose it into ``max_imfs`` modes plus residue (the whole series by
   default, only the train span in strict-causal mode);
3. train one transformer per subseries on the fit span (train minus the
   trailing calibration slice), each subseries min-max scaled on that span;
4. sum the subseries forecasts into the primary forecast;
5. compute one-step residual errors on the calibration slice and fit the
   residual MLP on them;
6. for every horizon class, forecast the test span from rolling origins spaced
   one horizon apart and add the MLP's forecast errors to the primary
   forecast.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import _parallel
from .iceemdan import Decomposition, IceemdanParams, iceemdan, make_noise_bank
from .mlp import LmParams, ResidualMlp, forecast_errors, init_mlp, make_lag_samples, train_lm
from .series import ErrorMetrics, ScaleParams, TimeSeries, compute_metrics, write_metrics_csv
from .transformer import TransformerConfig, TransformerModel, rollout, train

__all__ = [
    "HORIZON_CLASSES",
    "PipelineConfig",
    "PipelineError",
    "ForecastReport",
    "HorizonResult",
    "HybridForecaster",
    "fuse",
    "residual_errors",
    "correct",
    "persistence_baseline",
    "fit_hybrid",
    "horizon_eval",
    "run_pipeline",
    "imf_sweep",
    "write_report",
    "write_sweep_csv",
]

logger = logging.getLogger(__name__)

HORIZON_CLASSES = ("very_short", "short", "medium", "long")
DEFAULT_HORIZONS = {"very_short": 1, "short": 6, "medium": 144, "long": 1008}


class PipelineError(RuntimeError):
    """A pipeline stage failed; the message names the stage and subseries."""


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a run needs besides the data.

    ``seed`` is the only seed: the decomposition uses it directly, the
    transformer for subseries ``k`` uses ``seed + k`` and the residual MLP
    uses ``seed``.
    """

    seed: int = 0
    max_imfs: int = 10
    iceemdan: IceemdanParams = field(default_factory=IceemdanParams)
    transformer: TransformerConfig = field(default_factory=TransformerConfig)
    mlp_lags: int = 6
    lm: LmParams = field(default_factory=LmParams)
    horizons: dict = field(default_factory=lambda: dict(DEFAULT_HORIZONS))
    split_fraction: float = 0.5
    split_boundary: int | None = None
    calibration_fraction: float = 0.2
    report_horizon: str = "very_short"
    strict_causal: bool = False

    def __post_init__(self):
        if set(self.horizons) != set(HORIZON_CLASSES):
            raise ValueError(f"horizons must define exactly {HORIZON_CLASSES}, got {sorted(self.horizons)}")
        steps = [int(self.horizons[h]) for h in HORIZON_CLASSES]
        if steps[0] < 1 or any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValueError(f"horizon step counts must be >= 1 and strictly increasing, got {steps}")
        object.__setattr__(self, "horizons", {h: int(self.horizons[h]) for h in HORIZON_CLASSES})
        if self.report_horizon not in HORIZON_CLASSES:
            raise ValueError(f"report_horizon must be one of {HORIZON_CLASSES}")
        if not 1 <= self.max_imfs <= 16:
            raise ValueError(f"max_imfs must be within [1, 16], got {self.max_imfs}")
        if self.mlp_lags < 1:
            raise ValueError(f"mlp_lags must be >= 1, got {self.mlp_lags}")
        if not 0.0 < self.split_fraction < 1.0:
            raise ValueError(f"split_fraction must be in (0, 1), got {self.split_fraction}")
        if not 0.0 < self.calibration_fraction < 1.0:
            raise ValueError(f"calibration_fraction must be in (0, 1), got {self.calibration_fraction}")

    def decomposition_params(self) -> IceemdanParams:
        return replace(self.iceemdan, max_imfs=self.max_imfs, seed=self.seed)

    def transformer_config(self, k: int) -> TransformerConfig:
        return replace(self.transformer, seed=self.seed + k)

    def lm_params(self) -> LmParams:
        return replace(self.lm, seed=self.seed)

    def boundary(self, n: int) -> int:
        return self.split_boundary if self.split_boundary is not None else int(round(n * self.split_fraction))


# --- elementary operations ----------------------------------------------


def _vec(x) -> np.ndarray:
    return x.values if isinstance(x, TimeSeries) else np.asarray(x, dtype=np.float64)


def _same_length(a, b, what):
    if a.shape != b.shape:
        raise ValueError(f"{what}: length mismatch ({a.shape[-1]} vs {b.shape[-1]})")


def fuse(subseries_forecasts) -> np.ndarray:
    """Pointwise sum of the subseries forecasts, in list order."""
    parts = [_vec(s) for s in subseries_forecasts]
    if not parts:
        raise ValueError("fuse: no subseries given")
    out = parts[0].astype(np.float64, copy=True)
    for p in parts[1:]:
        _same_length(out, p, "fuse")
        out += p
    return out


def residual_errors(ground, primary) -> np.ndarray:
    """Ground truth minus primary forecast."""
    g, p = _vec(ground), _vec(primary)
    _same_length(g, p, "residual_errors")
    return g - p


def correct(primary, forecast_errs) -> np.ndarray:
    """Primary forecast plus forecast residual error."""
    p, e = _vec(primary), _vec(forecast_errs)
    _same_length(p, e, "correct")
    return p + e


def persistence_baseline(history, steps: int) -> np.ndarray:
    """Repeat the last observed value ``steps`` times."""
    h = _vec(history)
    if h.size == 0:
        raise ValueError("persistence baseline needs a non-empty history")
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    return np.full(steps, h[-1], dtype=np.float64)


# --- fitted hybrid -------------------------------------------------------


@dataclass(eq=False)
class SubseriesForecaster:
    """A trained transformer plus its scaling, or a constant for a flat subseries."""

    scale: ScaleParams | None
    model: TransformerModel | None
    constant: float = 0.0
    loss_trace: np.ndarray = field(default_factory=lambda: np.empty(0))

    def forecast(self, contexts, steps: int) -> np.ndarray:
        contexts = np.asarray(contexts, dtype=np.float64)
        if self.model is None:
            return np.full((contexts.shape[0], steps), self.constant)
        return self.scale.inverse(rollout(self.model, self.scale.forward(contexts), steps))


@dataclass
class HorizonResult:
    """Rolling-origin forecasts for one horizon, aligned with ``positions``."""

    steps: int
    positions: np.ndarray
    ground: np.ndarray
    primary: np.ndarray
    forecast_errors: np.ndarray
    corrected: np.ndarray
    baseline: np.ndarray

    @property
    def residual_errors(self) -> np.ndarray:
        return residual_errors(self.ground, self.primary)


@dataclass(eq=False)
class HybridForecaster:
    """Trained state of a run: decomposition, subseries models and residual MLP."""

    config: PipelineConfig
    values: np.ndarray
    boundary: int
    fit_end: int
    decomposition: Decomposition
    forecasters: list[SubseriesForecaster]
    mlp: ResidualMlp | None
    error_scale: ScaleParams
    calibration_errors: np.ndarray
    mlp_trace: np.ndarray
    _extension: np.ndarray | None = None

    @property
    def n_subseries(self) -> int:
        return len(self.forecasters)

    def subseries(self) -> list[np.ndarray]:
        return self.decomposition.subseries()

    def primary(self, origins, steps: int) -> np.ndarray:
        """Fused forecasts of ``x[o:o+steps]`` for every origin ``o``; shape ``(len(origins), steps)``."""
        origins = np.asarray(origins, dtype=np.intp)
        known = self.decomposition.input_length
        if self.config.strict_causal and np.any(origins > known):
            return self._strict_primary(origins, steps)
        ctx = self.config.transformer.encoder_len + self.config.transformer.decoder_len - 1
        if np.any(origins < self.config.transformer.encoder_len) or np.any(origins > known):
            raise ValueError("forecast origin outside the decomposed span")

        def one(k):
            sub = self.subseries()[k]
            starts = np.maximum(origins - ctx, 0)
            if np.all(origins - starts == ctx):
                contexts = sub[starts[:, None] + np.arange(ctx)]
                return self.forecasters[k].forecast(contexts, steps)
            return np.stack([self.forecasters[k].forecast(sub[None, s:o], steps)[0] for s, o in zip(starts, origins)])

        try:
            parts = _parallel.pmap(one, range(self.n_subseries))
        except Exception as exc:  # noqa: BLE001
            raise PipelineError(f"stage forecast: {exc}") from exc
        return fuse(parts)

    def _strict_primary(self, origins, steps):
        # past the decomposed span the subseries only exist as their own rollout
        b = self.boundary
        if np.any(origins < b):
            raise ValueError("strict-causal forecasts must start inside the test span")
        ext = self.extension()
        if np.any(origins - b + steps > ext.size):
            raise ValueError("forecast runs past the end of the series")
        idx = (origins - b)[:, None] + np.arange(steps)
        return ext[idx]

    def extension(self) -> np.ndarray:
        """Strict-causal mode: fused rollout of every subseries from the train end over the test span."""
        if self._extension is None:
            steps = self.values.size - self.boundary

            def one(k):
                sub = self.subseries()[k]
                try:
                    return self.forecasters[k].forecast(sub[None, :], steps)[0]
                except Exception as exc:  # noqa: BLE001
                    raise PipelineError(f"stage extend (subseries {k}): {exc}") from exc

            self._extension = fuse(_parallel.pmap(one, range(self.n_subseries)))
        return self._extension

    def error_forecasts(self, error_histories, steps: int) -> np.ndarray:
        if self.mlp is None:
            return np.zeros((len(error_histories), steps)) + self.error_scale.inverse(0.0)
        return forecast_errors(self.mlp, error_histories, steps, self.error_scale)

    def rolling(self, steps: int) -> HorizonResult:
        """Rolling-origin evaluation over the test span, origins ``steps`` apart."""
        x = self.values
        n, b = x.size, self.boundary
        if steps > n - b:
            raise ValueError(f"horizon of {steps} steps exceeds the test span of {n - b} samples")
        origins = np.arange(b, n - steps + 1, steps)
        primary = self.primary(origins, steps)
        positions = (origins[:, None] + np.arange(steps)).ravel()
        ground = x[positions]
        prim = primary.ravel()
        # errors known at each origin: calibration slice, then test errors before the origin
        known = np.concatenate([self.calibration_errors, ground - prim])
        offset = self.calibration_errors.size
        lags = self.config.mlp_lags
        histories = np.stack([known[offset + (o - b) - lags : offset + (o - b)] for o in origins])
        fe = self.error_forecasts(histories, steps).ravel()
        baseline = np.repeat(x[origins - 1], steps)
        return HorizonResult(steps, positions, ground, prim, fe, correct(prim, fe), baseline)


def _fit_subseries(k, sub, fit_end, cfg):
    train_part = sub[:fit_end]
    lo, hi = float(np.min(train_part)), float(np.max(train_part))
    if not hi > lo:
        return SubseriesForecaster(None, None, constant=lo)
    scale = ScaleParams(lo, hi)
    try:
        model, trace = train(None, scale.forward(train_part), cfg)
    except Exception as exc:  # noqa: BLE001
        raise PipelineError(f"stage train (subseries {k}): {exc}") from exc
    return SubseriesForecaster(scale, model, loss_trace=trace)


def fit_hybrid(config: PipelineConfig, data, decomposition: Decomposition | None = None, bank=None) -> HybridForecaster:
    """Run the decomposition and training stages; no test data is touched."""
    x = _vec(data)
    n = x.size
    b = config.boundary(n)
    if not 0 < b < n:
        raise PipelineError(f"stage split: boundary {b} outside (0, {n})")
    cal = max(int(round(b * config.calibration_fraction)), config.mlp_lags + 1)
    fit_end = b - cal
    tcfg = config.transformer
    need = tcfg.encoder_len + tcfg.decoder_len
    if fit_end < need:
        raise PipelineError(
            f"stage split: fit span of {fit_end} samples is shorter than one training window ({need})"
        )
    if fit_end < tcfg.encoder_len + tcfg.decoder_len - 1:
        raise PipelineError("stage split: calibration slice starts before a full forecast context")

    if decomposition is None:
        span = x[:b] if config.strict_causal else x
        try:
            decomposition = iceemdan(span, config.decomposition_params(), bank=bank)
        except Exception as exc:  # noqa: BLE001
            raise PipelineError(f"stage decompose: {exc}") from exc
    subs = decomposition.subseries()
    logger.info("decomposed into %d subseries", len(subs))

    forecasters = _parallel.pmap(
        lambda k: _fit_subseries(k, subs[k], fit_end, config.transformer_config(k)), range(len(subs))
    )
    hybrid = HybridForecaster(
        config, x, b, fit_end, decomposition, forecasters, None, ScaleParams(-1.0, 1.0, -0.9, 0.9), np.empty(0), np.empty(0)
    )

    cal_origins = np.arange(fit_end, b)
    cal_primary = hybrid.primary(cal_origins, 1)[:, 0]
    cal_errors = residual_errors(x[fit_end:b], cal_primary)
    hybrid.calibration_errors = cal_errors
    lo, hi = float(cal_errors.min()), float(cal_errors.max())
    if not hi > lo:
        hybrid.error_scale = ScaleParams(lo - 1.0, lo + 1.0, -0.9, 0.9)
        return hybrid
    hybrid.error_scale = ScaleParams(lo, hi, -0.9, 0.9)
    X, y = make_lag_samples(hybrid.error_scale.forward(cal_errors), config.mlp_lags)
    try:
        net, trace = train_lm(init_mlp(config.mlp_lags, config.seed), (X, y), config.lm_params())
    except Exception as exc:  # noqa: BLE001
        raise PipelineError(f"stage residual_mlp: {exc}") from exc
    hybrid.mlp = net
    hybrid.mlp_trace = trace
    return hybrid


def horizon_eval(hybrid: HybridForecaster, horizons: dict | None = None) -> dict[str, ErrorMetrics]:
    """Corrected-forecast metrics for each horizon class under rolling-origin evaluation."""
    horizons = hybrid.config.horizons if horizons is None else horizons
    out = {}
    for name, steps in horizons.items():
        res = hybrid.rolling(int(steps))
        out[name] = compute_metrics(res.ground, res.corrected)
    return out


# --- report ------------------------------------------------------------------


@dataclass(eq=False)
class ForecastReport:
    positions: np.ndarray
    ground: np.ndarray
    primary: np.ndarray
    corrected: np.ndarray
    residual_errors: np.ndarray
    forecast_errors: np.ndarray
    baseline: np.ndarray
    metrics_primary: ErrorMetrics
    metrics_corrected: ErrorMetrics
    baseline_metrics: ErrorMetrics
    per_horizon: dict[str, ErrorMetrics]
    per_horizon_primary: dict[str, ErrorMetrics]
    per_horizon_baseline: dict[str, ErrorMetrics]
    hybrid: HybridForecaster | None = None

    def metric_rows(self) -> list[tuple[str, str, float]]:
        rows = []
        scopes = [
            ("primary", self.metrics_primary),
            ("corrected", self.metrics_corrected),
            ("baseline", self.baseline_metrics),
        ]
        scopes += [(f"horizon:{h}", m) for h, m in self.per_horizon.items()]
        for scope, m in scopes:
            for name, value in m.as_dict().items():
                rows.append((scope, name, value))
        return rows


def run_pipeline(config: PipelineConfig, data, bank=None) -> ForecastReport:
    """Fit everything and evaluate the test span for every configured horizon."""
    hybrid = fit_hybrid(config, data, bank=bank)
    results = {}
    for name, steps in config.horizons.items():
        try:
            results[name] = hybrid.rolling(steps)
        except PipelineError:
            raise
        except Exception as exc:  # noqa: BLE001
            raise PipelineError(f"stage evaluate (horizon {name}): {exc}") from exc
    main = results[config.report_horizon]

    def metrics(res, which):
        return compute_metrics(res.ground, getattr(res, which))

    return ForecastReport(
        positions=main.positions,
        ground=main.ground,
        primary=main.primary,
        corrected=main.corrected,
        residual_errors=main.residual_errors,
        forecast_errors=main.forecast_errors,
        baseline=main.baseline,
        metrics_primary=metrics(main, "primary"),
        metrics_corrected=metrics(main, "corrected"),
        baseline_metrics=metrics(main, "baseline"),
        per_horizon={h: metrics(r, "corrected") for h, r in results.items()},
        per_horizon_primary={h: metrics(r, "primary") for h, r in results.items()},
        per_horizon_baseline={h: metrics(r, "baseline") for h, r in results.items()},
        hybrid=hybrid,
    )


def imf_sweep(config: PipelineConfig, data, imf_counts) -> list[tuple[int, ErrorMetrics]]:
    """Corrected-forecast metrics of a full run per IMF count.

    One noise bank deep enough for the largest count serves every run.
    """
    counts = [int(c) for c in imf_counts]
    if not counts:
        raise ValueError("imf_sweep needs at least one IMF count")
    bad = [c for c in counts if not 1 <= c <= 16]
    if bad:
        raise ValueError(f"IMF counts must lie within [1, 16], got {bad}")
    x = _vec(data)
    deepest = replace(config, max_imfs=max(counts))
    n_decomposed = config.boundary(x.size) if config.strict_causal else x.size
    bank = make_noise_bank(n_decomposed, deepest.decomposition_params())
    rows = []
    for c in counts:
        report = run_pipeline(replace(config, max_imfs=c), x, bank=bank)
        rows.append((c, report.metrics_corrected))
    return rows


def write_report(report: ForecastReport, out_dir, stem: str = "report") -> dict[str, Path]:
    """Series CSV, metrics CSV and plot-data CSVs; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "series": out / f"{stem}_series.csv",
        "metrics": out / f"{stem}_metrics.csv",
        "plot": out / f"{stem}_plot_ground_vs_corrected.csv",
        "plot_horizons": out / f"{stem}_plot_horizons.csv",
    }
    with paths["series"].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "ground", "primary", "corrected", "residual_error", "forecast_error"])
        for row in zip(
            report.positions, report.ground, report.primary, report.corrected, report.residual_errors, report.forecast_errors
        ):
            w.writerow([int(row[0]), *(f"{float(v):.16g}" for v in row[1:])])
    write_metrics_csv(report.metric_rows(), paths["metrics"], ("scope", "metric", "value"))
    with paths["plot"].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "ground", "corrected", "log10_ground", "log10_corrected"])
        for i, g, c in zip(report.positions, report.ground, report.corrected):
            w.writerow([int(i), f"{g:.16g}", f"{c:.16g}", _log10_cell(g), _log10_cell(c)])
    rows = []
    for scope, table in (
        ("corrected", report.per_horizon),
        ("primary", report.per_horizon_primary),
        ("baseline", report.per_horizon_baseline),
    ):
        for h, m in table.items():
            rows.append((h, scope, *m.as_dict().values()))
    write_metrics_csv(rows, paths["plot_horizons"], ("horizon", "forecast", "mae", "mape", "mre", "mse", "rmse"))
    return paths


def _log10_cell(v: float) -> str:
    return f"{np.log10(v):.16g}" if v > 0 else ""


def write_sweep_csv(rows, path) -> None:
    write_metrics_csv(
        [(c, *m.as_dict().values()) for c, m in rows], path, ("imfs", "mae", "mape", "mre", "mse", "rmse")
    )
