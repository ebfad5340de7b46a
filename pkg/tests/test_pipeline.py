import csv
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import windcast.pipeline as pipeline_mod
from windcast.iceemdan import IceemdanParams, _cached_bank, iceemdan
from windcast.mlp import LmParams
from windcast.pipeline import (
    HORIZON_CLASSES,
    PipelineConfig,
    PipelineError,
    correct,
    fit_hybrid,
    fuse,
    horizon_eval,
    imf_sweep,
    persistence_baseline,
    residual_errors,
    run_pipeline,
    write_report,
    write_sweep_csv,
)
from windcast.series import SyntheticSpec, compute_metrics, generate_synthetic
from windcast.transformer import TransformerConfig

HORIZONS = {"very_short": 1, "short": 2, "medium": 4, "long": 8}


def small_config(**overrides):
    base = PipelineConfig(
        seed=0,
        max_imfs=2,
        iceemdan=IceemdanParams(realizations=4),
        transformer=TransformerConfig(
            embed_dim=8, heads=2, stacks=1, ff_dim=16, dropout=0.0, iterations=40, batch_size=32, encoder_len=12, decoder_len=4, learning_rate=3e-3
        ),
        lm=LmParams(max_iters=50),
        horizons=HORIZONS,
    )
    return replace(base, **overrides)


def noisy_two_tone(n=600, seed=1):
    spec = SyntheticSpec(components=((2.0, 1 / 24, 0.0), (1.0, 1 / 6, 0.5)), noise_std=0.2, offset=8.0, length=n, seed=seed)
    return generate_synthetic(spec)


@pytest.fixture(scope="module")
def series():
    return noisy_two_tone()


@pytest.fixture(scope="module")
def report(series):
    return run_pipeline(small_config(), series)


# --- elementary operations ------------------------------------------------------------


def test_fuse_examples():
    assert fuse([[1.0, 2.0], [3.0, 4.0], [0.0, 0.0]]).tolist() == [4.0, 6.0]
    x = np.array([0.1, -3.0, 7.5])
    assert np.array_equal(fuse([x]), x)
    with pytest.raises(ValueError):
        fuse([])
    with pytest.raises(ValueError):
        fuse([[1.0, 2.0], [1.0]])


def test_fusing_true_subseries_gives_the_signal(series):
    dec = iceemdan(series.values, IceemdanParams(realizations=4, max_imfs=4))
    x = series.values
    assert np.max(np.abs(fuse(dec.subseries()) - x)) <= 1e-8 * np.max(np.abs(x))


def test_residual_and_correct_examples():
    assert residual_errors([5.0, 5.0], [4.0, 6.0]).tolist() == [1.0, -1.0]
    assert not np.any(residual_errors([3.0, 1.0], [3.0, 1.0]))
    assert correct([4.0, 6.0], [1.0, -1.0]).tolist() == [5.0, 5.0]
    assert correct([4.0, 6.0], [0.0, 0.0]).tolist() == [4.0, 6.0]
    with pytest.raises(ValueError):
        residual_errors([1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        correct([1.0], [1.0, 2.0])


finite = st.floats(-1e6, 1e6)


# values on a 2**-20 grid below 2**20 keep the subtraction exact in binary64
grid = st.integers(-(2**40), 2**40).map(lambda k: k * 2.0**-20)


@given(arrays(np.float64, st.integers(1, 40), elements=grid), st.data())
def test_correction_closure_is_exact(ground, data):
    primary = data.draw(arrays(np.float64, ground.size, elements=grid))
    assert np.array_equal(correct(primary, residual_errors(ground, primary)), ground)


@given(arrays(np.float64, st.integers(1, 40), elements=finite), st.data())
def test_correction_closure_within_one_ulp(ground, data):
    # for arbitrary floats ground - primary is itself rounded
    primary = data.draw(arrays(np.float64, ground.size, elements=finite))
    back = correct(primary, residual_errors(ground, primary))
    assert np.all(np.abs(back - ground) <= np.spacing(np.maximum(np.abs(ground), np.abs(primary))))


@given(arrays(np.float64, 8, elements=st.integers(-1000, 1000).map(float)), st.data())
def test_correct_is_associative_on_exact_values(p, data):
    e1 = data.draw(arrays(np.float64, 8, elements=st.integers(-1000, 1000).map(float)))
    e2 = data.draw(arrays(np.float64, 8, elements=st.integers(-1000, 1000).map(float)))
    assert np.array_equal(correct(p, e1 + e2), correct(correct(p, e1), e2))


def test_persistence():
    assert persistence_baseline([1.0, 3.3, 7.2], 3).tolist() == [7.2, 7.2, 7.2]
    hist = np.full(5, 4.0)
    assert compute_metrics([4.0], persistence_baseline(hist, 1)).mae == 0.0
    with pytest.raises(ValueError):
        persistence_baseline([], 2)
    with pytest.raises(ValueError):
        persistence_baseline([1.0], 0)


# --- config -----------------------------------------------------------------------------------


@pytest.mark.parametrize(
    "horizons",
    [
        {"very_short": 1, "short": 1, "medium": 4, "long": 8},
        {"very_short": 0, "short": 2, "medium": 4, "long": 8},
        {"very_short": 1, "short": 6, "medium": 4, "long": 8},
        {"very_short": 1, "short": 2, "medium": 4},
    ],
)
def test_horizons_must_increase(horizons):
    with pytest.raises(ValueError):
        PipelineConfig(horizons=horizons)


@pytest.mark.parametrize(
    "kwargs",
    [{"report_horizon": "hourly"}, {"max_imfs": 0}, {"max_imfs": 17}, {"split_fraction": 1.0}, {"calibration_fraction": 0.0}, {"mlp_lags": 0}],
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        PipelineConfig(**kwargs)


def test_default_horizons():
    assert PipelineConfig().horizons == {"very_short": 1, "short": 6, "medium": 144, "long": 1008}


def test_derived_seeds():
    cfg = PipelineConfig(seed=11)
    assert cfg.decomposition_params().seed == 11
    assert [cfg.transformer_config(k).seed for k in range(3)] == [11, 12, 13]
    assert cfg.lm_params().seed == 11


# --- end to end --------------------------------------------------------------------------------


def test_report_is_consistent(report, series):
    n = len(series)
    b = n // 2
    assert report.positions.tolist() == list(range(b, n))
    for name in ("ground", "primary", "corrected", "residual_errors", "forecast_errors", "baseline"):
        assert getattr(report, name).shape == (n - b,)
    assert np.array_equal(report.ground, series.values[b:])
    assert np.array_equal(report.corrected, report.primary + report.forecast_errors)
    assert np.array_equal(report.residual_errors, report.ground - report.primary)
    assert report.metrics_corrected == compute_metrics(report.ground, report.corrected)
    assert report.metrics_primary == compute_metrics(report.ground, report.primary)
    assert report.baseline_metrics == compute_metrics(report.ground, report.baseline)
    assert np.array_equal(report.baseline, series.values[b - 1 : n - 1])


def test_report_has_every_horizon(report):
    assert list(report.per_horizon) == list(HORIZON_CLASSES)
    assert report.per_horizon["very_short"] == report.metrics_corrected
    for m in report.per_horizon.values():
        assert m.rmse**2 == pytest.approx(m.mse, rel=1e-12)


def test_hybrid_beats_persistence(report):
    assert report.metrics_primary.mae < report.baseline_metrics.mae
    assert report.metrics_corrected.mae < report.baseline_metrics.mae


def test_horizon_eval_matches_report(report):
    hybrid = report.hybrid
    assert horizon_eval(hybrid) == report.per_horizon
    assert list(horizon_eval(hybrid, {"only": 3})) == ["only"]
    with pytest.raises(ValueError, match="exceeds"):
        horizon_eval(hybrid, {"long": 10_000})


def test_rolling_origins_are_a_horizon_apart(report):
    res = report.hybrid.rolling(8)
    b = report.hybrid.boundary
    n = report.hybrid.values.size
    assert res.positions.size == ((n - b) // 8) * 8
    assert res.positions[0] == b
    # persistence restarts from the last observation before every origin
    assert np.array_equal(res.baseline[:8], np.full(8, report.hybrid.values[b - 1]))
    assert np.array_equal(res.baseline[8:16], np.full(8, report.hybrid.values[b + 7]))


def test_one_step_primary_equals_rolling_of_one(report):
    res = report.hybrid.rolling(1)
    assert np.array_equal(res.primary, report.primary)


def test_mlp_never_sees_test_errors_of_the_future(report):
    # the error forecast at an origin must not change if later test errors change
    hybrid = report.hybrid
    b = hybrid.boundary
    lags = hybrid.config.mlp_lags
    known = np.concatenate([hybrid.calibration_errors, report.residual_errors])
    off = hybrid.calibration_errors.size
    hist = known[off + 10 - lags : off + 10][None]
    direct = hybrid.error_forecasts(hist, 1)[0, 0]
    assert direct == pytest.approx(report.forecast_errors[10], rel=1e-12)
    assert report.positions[10] == b + 10


def test_run_is_deterministic_and_thread_independent(series, monkeypatch):
    cfg = small_config()
    monkeypatch.setenv("WINDCAST_THREADS", "0")
    _cached_bank.cache_clear()
    a = run_pipeline(cfg, series)
    b = run_pipeline(cfg, series)
    monkeypatch.setenv("WINDCAST_THREADS", "3")
    _cached_bank.cache_clear()
    c = run_pipeline(cfg, series)
    for r in (b, c):
        assert np.array_equal(a.corrected, r.corrected)
        assert a.metric_rows() == r.metric_rows()


def test_noise_free_sine_is_forecast_closely():
    amplitude = 2.0
    ts = generate_synthetic(SyntheticSpec(components=((amplitude, 1 / 24, 0.0),), offset=5.0, length=600))
    cfg = small_config(
        transformer=TransformerConfig(
            embed_dim=16, heads=2, stacks=1, ff_dim=32, dropout=0.0, iterations=100, batch_size=32, encoder_len=24, decoder_len=6, learning_rate=3e-3
        ),
        iceemdan=IceemdanParams(realizations=8),
        lm=LmParams(max_iters=100),
    )
    r = run_pipeline(cfg, ts)
    assert r.metrics_corrected.mae < 0.05 * amplitude


def test_flat_subseries_get_a_constant_forecaster():
    ts = generate_synthetic(SyntheticSpec(components=((2.0, 1 / 24, 0.0),), offset=5.0, length=600))
    hybrid = fit_hybrid(small_config(max_imfs=10), ts)
    flat = [f for f in hybrid.forecasters if f.model is None]
    assert flat, "a pure sine should leave some modes empty"
    for f in flat:
        assert np.all(f.forecast(np.ones((2, 30)), 3) == f.constant)


def test_strict_causal_decomposes_train_only(series):
    cfg = small_config(strict_causal=True)
    r = run_pipeline(cfg, series)
    hybrid = r.hybrid
    b = hybrid.boundary
    assert hybrid.decomposition.input_length == b
    ext = hybrid.extension()
    assert ext.size == len(series) - b
    assert np.array_equal(r.primary, ext)
    # horizon-8 forecasts are slices of the same extension
    res = hybrid.rolling(8)
    assert np.array_equal(res.primary, ext[: res.positions.size])


def test_stage_errors_name_the_stage(series, monkeypatch):
    with pytest.raises(PipelineError, match="stage split"):
        run_pipeline(small_config(), series.values[:30])

    real_train = pipeline_mod.train
    calls = []

    def failing_train(model, s, cfg):
        calls.append(cfg.seed)
        if cfg.seed == 1:
            raise FloatingPointError("non-finite training loss at iteration 0")
        return real_train(model, s, cfg)

    monkeypatch.setattr(pipeline_mod, "train", failing_train)
    with pytest.raises(PipelineError, match=r"stage train \(subseries 1\)"):
        run_pipeline(small_config(), series)


# --- sweep and export ---------------------------------------------------------------------------


def test_imf_sweep(series):
    rows = imf_sweep(small_config(), series, [1, 2])
    assert [c for c, _ in rows] == [1, 2]
    for _, m in rows:
        assert m.rmse**2 == pytest.approx(m.mse, rel=1e-12)
        assert all(np.isfinite(v) for v in m.as_dict().values())
    with pytest.raises(ValueError):
        imf_sweep(small_config(), series, [0, 3])
    with pytest.raises(ValueError):
        imf_sweep(small_config(), series, [])


def test_write_report(report, tmp_path):
    paths = write_report(report, tmp_path)
    with paths["series"].open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["index", "ground", "primary", "corrected", "residual_error", "forecast_error"]
    assert len(rows) == report.positions.size + 1
    assert float(rows[1][3]) == report.corrected[0]
    with paths["metrics"].open() as fh:
        metrics = list(csv.reader(fh))
    assert metrics[0] == ["scope", "metric", "value"]
    scopes = {r[0] for r in metrics[1:]}
    assert scopes == {"primary", "corrected", "baseline", *(f"horizon:{h}" for h in HORIZON_CLASSES)}
    for scope in scopes:
        assert sorted(r[1] for r in metrics[1:] if r[0] == scope) == ["mae", "mape", "mre", "mse", "rmse"]
    plot = paths["plot"].read_text().splitlines()
    assert plot[0] == "index,ground,corrected,log10_ground,log10_corrected"
    g = float(plot[1].split(",")[1])
    assert float(plot[1].split(",")[3]) == pytest.approx(np.log10(g), rel=1e-15)
    assert paths["plot_horizons"].read_text().count("\n") == 1 + 3 * 4


def test_write_sweep_csv(tmp_path, report):
    write_sweep_csv([(5, report.metrics_primary), (6, report.metrics_corrected)], tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "imfs,mae,mape,mre,mse,rmse"
    assert len(lines) == 3 and lines[1].startswith("5,")
