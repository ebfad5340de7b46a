import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import mlp_jacobian_check
from windcast.archive import load_model, save_model
from windcast.mlp import (
    HIDDEN,
    LmFailure,
    LmParams,
    ResidualMlp,
    forecast_errors,
    init_mlp,
    jacobian,
    make_lag_samples,
    mlp_forward,
    train_lm,
)
from windcast.series import ScaleParams


def zero_net(lags):
    return ResidualMlp(np.zeros((lags, HIDDEN)), np.zeros(HIDDEN), np.zeros(HIDDEN), 0.0)


def nested_tanh(net, x):
    # scalar loops, no matrix algebra
    hidden = []
    for h in range(HIDDEN):
        s = net.b_hidden[h]
        for i, xi in enumerate(x):
            s += xi * net.w_in[i, h]
        hidden.append(math.tanh(s))
    return math.tanh(sum(y * w for y, w in zip(hidden, net.w_out)) + net.b_out)


def tanh2x_samples(n=50):
    x = np.linspace(-1.0, 1.0, n)[:, None]
    return x, np.tanh(2 * x[:, 0])


def test_zero_net_outputs_zero():
    assert mlp_forward(zero_net(3), np.array([0.3, -2.0, 9.0])) == 0.0


def test_forward_matches_nested_tanh():
    net = init_mlp(1, seed=4, scale=2.0)
    assert mlp_forward(net, np.array([0.5])) == pytest.approx(nested_tanh(net, [0.5]), rel=1e-12, abs=1e-15)
    net = init_mlp(6, seed=5, scale=1.0)
    x = np.random.default_rng(0).normal(size=6)
    assert mlp_forward(net, x) == pytest.approx(nested_tanh(net, x), rel=1e-12, abs=1e-15)


@given(st.integers(0, 2**32 - 1), st.floats(-1e6, 1e6))
def test_output_is_bounded(seed, magnitude):
    net = init_mlp(4, seed=seed, scale=3.0)
    x = np.random.default_rng(seed).normal(size=4) * magnitude
    assert abs(mlp_forward(net, x)) <= 1.0


def test_forward_checks_lag_count():
    with pytest.raises(ValueError):
        mlp_forward(init_mlp(3), np.zeros(4))


def test_vector_round_trip():
    net = init_mlp(5, seed=1)
    theta = net.to_vector()
    assert theta.size == net.n_parameters == 5 * 2 + 2 + 2 + 1
    assert ResidualMlp.from_vector(theta, 5) == net


def test_weights_must_be_finite():
    with pytest.raises(ValueError):
        ResidualMlp(np.full((2, 2), np.nan), np.zeros(2), np.zeros(2), 0.0)
    with pytest.raises(ValueError):
        ResidualMlp(np.zeros((2, 3)), np.zeros(3), np.zeros(3), 0.0)


def test_jacobian_at_zero_net():
    X = np.random.default_rng(0).normal(size=(7, 3))
    J = jacobian(zero_net(3), X)
    assert J.shape == (7, zero_net(3).n_parameters)
    assert not np.any(J[:, -3:-1])
    assert np.array_equal(J[:, -1], np.ones(7))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8))
def test_jacobian_matches_finite_differences(seed, lags):
    rng = np.random.default_rng(seed)
    net = init_mlp(lags, seed=seed, scale=1.5)
    X = rng.uniform(-1.0, 1.0, (12, lags))
    assert mlp_jacobian_check(net, X) < 1e-6


def test_jacobian_empty_batch():
    with pytest.raises(ValueError):
        jacobian(init_mlp(2), np.zeros((0, 2)))


def test_realizable_targets_stop_immediately():
    net = init_mlp(3, seed=2)
    X = np.random.default_rng(1).normal(size=(20, 3))
    trained, trace = train_lm(net, (X, mlp_forward(net, X)))
    assert trace.tolist() == [0.0]
    assert trained == net


@pytest.mark.parametrize("seed", range(5))
def test_lm_fits_tanh_2x(seed):
    _, trace = train_lm(init_mlp(1, seed=seed), tanh2x_samples(), LmParams(max_iters=200))
    assert trace[-1] < 1e-6
    assert len(trace) <= 201


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_accepted_losses_never_increase(seed):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, (30, 3))
    y = np.clip(rng.normal(0, 0.5, 30), -0.9, 0.9)
    _, trace = train_lm(init_mlp(3, seed=seed), (X, y), LmParams(max_iters=50))
    assert np.all(np.diff(trace) <= 0)


def test_lm_is_deterministic():
    X, y = tanh2x_samples()
    a, ta = train_lm(init_mlp(1, seed=3), (X, y), LmParams(max_iters=30))
    b, tb = train_lm(init_mlp(1, seed=3), (X, y), LmParams(max_iters=30))
    assert a == b and np.array_equal(ta, tb)


def test_lm_input_errors():
    with pytest.raises(ValueError):
        train_lm(init_mlp(2), (np.zeros((0, 2)), np.zeros(0)))
    with pytest.raises(ValueError):
        train_lm(init_mlp(2), (np.zeros((3, 2)), np.zeros(4)))


def test_lm_rejects_non_finite_targets():
    with pytest.raises(LmFailure):
        train_lm(init_mlp(1), (np.zeros((2, 1)), np.array([0.1, np.inf])))


@pytest.mark.parametrize("kwargs", [{"max_iters": 0}, {"initial_damping": 0.0}, {"damping_up": 1.0}, {"tolerance": 0.0}])
def test_lm_params_validation(kwargs):
    with pytest.raises(ValueError):
        LmParams(**kwargs)


def test_lag_samples():
    X, y = make_lag_samples(np.arange(6.0), 3)
    assert X.tolist() == [[0, 1, 2], [1, 2, 3], [2, 3, 4]]
    assert y.tolist() == [3, 4, 5]
    with pytest.raises(ValueError):
        make_lag_samples(np.arange(3.0), 3)


def test_zero_net_forecasts_inverse_of_zero():
    scale = ScaleParams(-2.0, 4.0, -0.9, 0.9)
    out = forecast_errors(zero_net(2), np.array([0.5, 1.0, -1.0]), 4, scale)
    assert np.allclose(out, np.full(4, scale.inverse(0.0)), atol=1e-15)


def test_one_step_forecast_is_one_forward_pass():
    net = init_mlp(3, seed=8)
    scale = ScaleParams(-1.5, 2.5, -0.9, 0.9)
    hist = np.array([0.3, -0.2, 1.1, 0.7, 2.0])
    out = forecast_errors(net, hist, 1, scale)
    assert out[0] == scale.inverse(mlp_forward(net, scale.forward(hist[-3:])))


def test_error_rollout_feeds_back_and_batches():
    net = init_mlp(2, seed=9, scale=1.0)
    scale = ScaleParams(-1.0, 1.0, -0.9, 0.9)
    hist = np.array([[0.2, -0.4], [0.9, 0.1]])
    batch = forecast_errors(net, hist, 3, scale)
    for row, h in zip(batch, hist):
        w = list(scale.forward(h))
        ref = []
        for _ in range(3):
            y = mlp_forward(net, np.array(w[-2:]))
            ref.append(y)
            w.append(y)
        assert np.allclose(row, scale.inverse(np.array(ref)), rtol=1e-14, atol=1e-15)
    assert np.array_equal(batch, forecast_errors(net, hist, 3, scale))


def test_error_forecast_needs_history():
    with pytest.raises(ValueError):
        forecast_errors(init_mlp(4), np.zeros(3), 1, ScaleParams(-1.0, 1.0))


def test_mlp_archive_round_trip(tmp_path):
    net = init_mlp(6, seed=11)
    save_model(tmp_path / "mlp.npz", net)
    assert load_model(tmp_path / "mlp.npz") == net
