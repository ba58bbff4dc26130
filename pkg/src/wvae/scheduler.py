"""Dynamic weighting of the Wasserstein term.

After each training step the observed gap T_t is appended to a history, an
autoregressive model forecasts T_{t+1}, and the weight moves by
``beta * c`` where

    beta = sigmoid(-(T_hat - T_t)) - (1 + sign(T_hat)) / 2

so a positive forecast lowers the weight and a negative one raises it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

LAMBDA_MAX = 20.0


@dataclass(frozen=True)
class Forecast:
    value: float
    fallback: bool


class ARForecaster(RegressorMixin, BaseEstimator):
    """AR(p) with intercept fit by ordinary least squares on a trailing window.

    ``fit`` takes a 1-D history; ``predict`` returns the one-step-ahead
    forecast. Histories shorter than ``max(order + 1, min_history)`` are
    handled by a persistence forecast (last value) and ``fallback_ = True``.
    """

    def __init__(self, order: int = 2, window: int = 200, min_history: int = 8):
        self.order = order
        self.window = window
        self.min_history = min_history

    def fit(self, history, y=None):
        x = np.asarray(history, dtype=np.float64).ravel()
        if x.size == 0:
            raise ValueError("empty history")
        if not np.all(np.isfinite(x)):
            raise ValueError("history must be finite")
        p = self.order
        x = x[-self.window :]
        self.last_lags_ = x[::-1][:p] if x.size >= p else None
        self.last_value_ = float(x[-1])
        if x.size < max(p + 1, self.min_history):
            self.fallback_ = True
            self.coef_ = None
            self.intercept_ = None
            return self
        rows = x.size - p
        design = np.ones((rows, p + 1))
        for lag in range(1, p + 1):
            design[:, lag] = x[p - lag : p - lag + rows]
        beta, *_ = np.linalg.lstsq(design, x[p:], rcond=None)
        self.intercept_ = float(beta[0])
        self.coef_ = beta[1:]
        self.fallback_ = False
        return self

    def predict(self, X=None) -> float:
        check_is_fitted(self, "fallback_")
        if self.fallback_:
            return self.last_value_
        return float(self.intercept_ + self.coef_ @ self.last_lags_)


def forecast_next(history, order: int = 2, window: int = 200, min_history: int = 8) -> Forecast:
    model = ARForecaster(order, window, min_history).fit(history)
    return Forecast(model.predict(), model.fallback_)


def _sign(x: float) -> float:
    return 0.0 if x == 0 else math.copysign(1.0, x)


def beta(t_hat: float, t_now: float) -> float:
    """Step direction in [-1, 1]; sign(0) is taken as 0."""
    if not (math.isfinite(t_hat) and math.isfinite(t_now)):
        raise ValueError("beta needs finite inputs")
    d = t_hat - t_now
    # sigmoid(-d) computed without overflow
    s = 1.0 / (1.0 + math.exp(d)) if d < 0 else math.exp(-d) / (1.0 + math.exp(-d))
    return s - (1.0 + _sign(t_hat)) / 2.0


@dataclass
class SchedulerState:
    lam: float = 1.0
    c: float = 0.05
    history: list[float] = field(default_factory=list)
    order: int = 2
    window: int = 200
    min_history: int = 8
    lam_max: float = LAMBDA_MAX
    last_forecast: float | None = None
    last_beta: float | None = None
    last_fallback: bool = True

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError("c must be positive")
        if self.order < 1:
            raise ValueError("forecaster order must be >= 1")
        self.lam = min(max(float(self.lam), 0.0), self.lam_max)


def update(state: SchedulerState, t_observed: float) -> SchedulerState:
    """Record T_t, forecast T_{t+1} and step the weight; mutates and returns ``state``."""
    t_observed = float(t_observed)
    if not math.isfinite(t_observed):
        raise ValueError(f"non-finite T value {t_observed}")
    state.history.append(t_observed)
    fc = forecast_next(state.history, state.order, state.window, state.min_history)
    b = beta(fc.value, t_observed)
    state.lam = min(max(state.lam + b * state.c, 0.0), state.lam_max)
    state.last_forecast = fc.value
    state.last_beta = b
    state.last_fallback = fc.fallback
    return state
