"""Two-unit tanh perceptron for residual-error forecasting, trained by Levenberg-Marquardt."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .series import ScaleParams

__all__ = [
    "HIDDEN",
    "ResidualMlp",
    "LmParams",
    "LmFailure",
    "init_mlp",
    "mlp_forward",
    "jacobian",
    "train_lm",
    "make_lag_samples",
    "forecast_errors",
]

logger = logging.getLogger(__name__)

HIDDEN = 2


class LmFailure(RuntimeError):
    """Levenberg-Marquardt could not produce a usable step."""


@dataclass(frozen=True, eq=False)
class ResidualMlp:
    """``y = tanh(w_out . tanh(x @ w_in + b_hidden) + b_out)``.

    The biases are the weights on the constant unit input.
    """

    w_in: np.ndarray
    b_hidden: np.ndarray
    w_out: np.ndarray
    b_out: float

    def __post_init__(self):
        w_in = np.asarray(self.w_in, dtype=np.float64)
        if w_in.ndim != 2 or w_in.shape[1] != HIDDEN:
            raise ValueError(f"w_in must have shape (lags, {HIDDEN}), got {w_in.shape}")
        object.__setattr__(self, "w_in", w_in)
        object.__setattr__(self, "b_hidden", np.asarray(self.b_hidden, dtype=np.float64).reshape(HIDDEN))
        object.__setattr__(self, "w_out", np.asarray(self.w_out, dtype=np.float64).reshape(HIDDEN))
        object.__setattr__(self, "b_out", float(self.b_out))
        if not np.all(np.isfinite(self.to_vector())):
            raise ValueError("MLP weights must be finite")

    @property
    def lags(self) -> int:
        return self.w_in.shape[0]

    @property
    def n_parameters(self) -> int:
        return self.lags * HIDDEN + 2 * HIDDEN + 1

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.w_in.ravel(), self.b_hidden, self.w_out, [self.b_out]])

    @classmethod
    def from_vector(cls, theta, lags: int) -> "ResidualMlp":
        theta = np.asarray(theta, dtype=np.float64)
        k = lags * HIDDEN
        return cls(theta[:k].reshape(lags, HIDDEN), theta[k : k + HIDDEN], theta[k + HIDDEN : k + 2 * HIDDEN], theta[-1])

    def __eq__(self, other):
        if not isinstance(other, ResidualMlp):
            return NotImplemented
        return self.lags == other.lags and np.array_equal(self.to_vector(), other.to_vector())


@dataclass(frozen=True)
class LmParams:
    max_iters: int = 1000
    initial_damping: float = 1e-2
    damping_up: float = 10.0
    damping_down: float = 10.0
    tolerance: float = 1e-12
    max_damping: float = 1e10
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.initial_damping > 0:
            raise ValueError(f"initial_damping must be > 0, got {self.initial_damping}")
        if not (self.damping_up > 1 and self.damping_down > 1):
            raise ValueError("damping factors must exceed 1")
        if not self.tolerance > 0:
            raise ValueError(f"tolerance must be > 0, got {self.tolerance}")

    def to_dict(self) -> dict:
        return asdict(self)


def init_mlp(lags: int, seed: int = 0, scale: float = 0.5) -> ResidualMlp:
    rng = np.random.default_rng(seed)
    n = lags * HIDDEN + 2 * HIDDEN + 1
    return ResidualMlp.from_vector(rng.uniform(-scale, scale, n), lags)


def _inputs(net, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None] if single else x
    if X.ndim != 2 or X.shape[1] != net.lags:
        raise ValueError(f"input has {X.shape[-1]} lags, network expects {net.lags}")
    return X, single


def mlp_forward(net: ResidualMlp, x):
    """Network output for one lag vector (scalar) or a batch of them (1-D array)."""
    X, single = _inputs(net, x)
    hidden = np.tanh(X @ net.w_in + net.b_hidden)
    y = np.tanh(hidden @ net.w_out + net.b_out)
    return float(y[0]) if single else y


def jacobian(net: ResidualMlp, x) -> np.ndarray:
    """``J[i, p] = d output_i / d theta_p`` in :meth:`ResidualMlp.to_vector` order."""
    X, _ = _inputs(net, x)
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    hidden = np.tanh(X @ net.w_in + net.b_hidden)
    y = np.tanh(hidden @ net.w_out + net.b_out)
    dy = 1.0 - y * y
    dh = (1.0 - hidden * hidden) * net.w_out
    d_win = X[:, :, None] * (dy[:, None] * dh)[:, None, :]
    return np.concatenate(
        [
            d_win.reshape(X.shape[0], -1),
            dy[:, None] * dh,
            dy[:, None] * hidden,
            dy[:, None],
        ],
        axis=1,
    )


def train_lm(net: ResidualMlp, samples, params: LmParams | None = None):
    """Levenberg-Marquardt least squares on ``(inputs, targets)``.

    Solves ``(J^T J + lambda I) delta = J^T r`` each iteration. A step that
    lowers the mean squared error is accepted and ``lambda`` shrinks,
    otherwise it is rejected and ``lambda`` grows. Training stops after
    ``max_iters`` iterations, when an accepted step improves the loss by less
    than ``tolerance``, or when ``lambda`` passes ``max_damping`` without
    finding a better point. Returns the net and the loss after every accepted
    step (the initial loss first).
    """
    params = params or LmParams()
    X, y = samples
    X, _ = _inputs(net, X)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.shape[0] == 0:
        raise ValueError("need at least one training sample")
    if y.size != X.shape[0]:
        raise ValueError(f"{X.shape[0]} inputs but {y.size} targets")

    lags = net.lags
    theta = net.to_vector()
    r = y - mlp_forward(net, X)
    loss = float(np.mean(r * r))
    if not np.isfinite(loss):
        raise LmFailure("initial loss is not finite")
    trace = [loss]
    lam = params.initial_damping
    eye = np.eye(theta.size)
    for it in range(params.max_iters):
        if loss == 0.0:
            break
        J = jacobian(ResidualMlp.from_vector(theta, lags), X)
        JtJ = J.T @ J
        g = J.T @ r
        while True:
            try:
                delta = np.linalg.solve(JtJ + lam * eye, g)
            except np.linalg.LinAlgError:
                delta = None
            if delta is not None and np.all(np.isfinite(delta)):
                cand = theta + delta
                r_new = y - mlp_forward(ResidualMlp.from_vector(cand, lags), X)
                new_loss = float(np.mean(r_new * r_new))
                if np.isfinite(new_loss) and new_loss < loss:
                    break
            elif lam >= params.max_damping:
                raise LmFailure(f"normal equations singular at damping {lam:g} (iteration {it})")
            lam *= params.damping_up
            if lam > params.max_damping:
                logger.debug("LM stalled at iteration %d, loss %.3g", it, loss)
                return ResidualMlp.from_vector(theta, lags), np.asarray(trace)
        improvement = loss - new_loss
        theta, r, loss = cand, r_new, new_loss
        trace.append(loss)
        lam = max(lam / params.damping_down, 1e-300)
        if improvement < params.tolerance:
            break
    return ResidualMlp.from_vector(theta, lags), np.asarray(trace)


def make_lag_samples(errors, lags: int):
    """``(lag windows, next value)`` pairs from a 1-D sequence."""
    e = np.asarray(errors, dtype=np.float64)
    n = e.size - lags
    if n < 1:
        raise ValueError(f"need more than {lags} values to form lag samples, got {e.size}")
    idx = np.arange(n)[:, None] + np.arange(lags)
    return e[idx], e[lags:]


def forecast_errors(net: ResidualMlp, error_history, steps: int, scale: ScaleParams) -> np.ndarray:
    """Roll the net forward ``steps`` times on scaled errors; returns errors in original units.

    ``error_history`` may be 2-D to roll several independent histories at once.
    """
    h = np.asarray(error_history, dtype=np.float64)
    single = h.ndim == 1
    H = h[None] if single else h
    if H.shape[1] < net.lags:
        raise ValueError(f"error history of length {H.shape[1]} is shorter than lags={net.lags}")
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    window = scale.forward(H[:, H.shape[1] - net.lags :])
    out = np.empty((H.shape[0], steps))
    for s in range(steps):
        y = mlp_forward(net, window)
        out[:, s] = y
        window = np.concatenate([window[:, 1:], y[:, None]], axis=1)
    out = scale.inverse(out)
    return out[0] if single else out
