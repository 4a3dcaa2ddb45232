"""Per-room behavior-count forecasting.

A room's panel is N counting channels bucketed at 30 s. Each channel's recent
window is normalized by its own mean/scale (reversible instance
normalization), embedded as ONE token, and the transformer attends across
channels rather than across time. A linear head emits the next `horizon_train`
normalized steps per channel; predictions are denormalized before the loss, so
training optimizes error in the original count scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import layers
from . import tensor as T
from .config import StatConfig, config_hash, to_dict
from .errors import DimensionError, WindowError
from .optim import ParamStore, adam_step
from .tensor import Tensor

GROUPS = ("out-room", "convert", "interaction", "in-room")

SCALE_FLOOR = 1e-6


@dataclass
class StatPanel:
    """One live room's full statistic history."""

    room_id: str
    t0_bucket: int
    channels: list
    values: np.ndarray  # (N, T) non-negative counts
    groups: list = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != len(self.channels):
            raise DimensionError(
                f"values shape {self.values.shape} does not match "
                f"{len(self.channels)} channels"
            )
        if (self.values < 0).any():
            raise ValueError(f"panel {self.room_id} has negative counts")
        if self.groups and len(self.groups) != len(self.channels):
            raise DimensionError("groups must align with channels")
        for g in self.groups:
            if g not in GROUPS:
                raise ValueError(f"unknown channel group {g!r}")


@dataclass
class StatForecast:
    predicted: np.ndarray  # (N, h) original count scale
    encoding: np.ndarray  # (N, D) final channel encodings
    horizon: int


def revin_normalize(window):
    """Return (normalized, mu, delta) with per-channel mean/scale.

    delta is the population std floored at 1e-6 so constant channels stay
    invertible.
    """
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2:
        raise DimensionError(f"window must be (N, W), got {window.shape}")
    if window.shape[1] < 2:
        raise WindowError(f"need at least 2 observations per channel, got {window.shape[1]}")
    mu = window.mean(axis=1, keepdims=True)
    delta = np.maximum(window.std(axis=1, keepdims=True), SCALE_FLOOR)
    return (window - mu) / delta, mu, delta


def revin_denormalize(values, mu, delta):
    values = np.asarray(values, dtype=np.float64)
    return values * delta + mu


def _batch_normalize(windows):
    # (B, N, W) counterpart of revin_normalize
    mu = windows.mean(axis=2, keepdims=True)
    delta = np.maximum(windows.std(axis=2, keepdims=True), SCALE_FLOOR)
    return (windows - mu) / delta, mu, delta


class StatisticModel:
    """Channel-as-token forecaster over count windows."""

    def __init__(self, config: StatConfig):
        self.config = config
        self.store = ParamStore()
        rng = np.random.default_rng([config.seed, 0xC0])
        c = config
        layers.init_dense(self.store, "proj", c.context, c.d_model, rng)
        layers.init_encoder(self.store, "enc", c.n_blocks, c.d_model, c.d_ff, rng)
        layers.init_dense(self.store, "head", c.d_model, c.horizon_train, rng)

    def config_hash(self):
        return config_hash(to_dict(self.config))

    def forward(self, windows):
        """Normalized windows (B, N, W) -> (normalized predictions (B, N, h), encodings (B, N, D))."""
        windows = T.as_tensor(windows)
        if windows.shape[-1] != self.config.context:
            raise DimensionError(
                f"window length {windows.shape[-1]} != context {self.config.context}"
            )
        tokens = layers.dense_forward(windows, self.store["proj.w"], self.store["proj.b"])
        enc = layers.encoder(
            tokens, self.store, "enc", self.config.n_blocks, self.config.heads, causal=False
        )
        pred = layers.dense_forward(enc, self.store["head.w"], self.store["head.b"])
        return pred, enc


def statistic_forward(model, normalized_windows):
    return model.forward(normalized_windows)


def collect_windows(panels, context, horizon, stride=1):
    """Sliding (window, future) pairs from every panel, stacked for batching."""
    xs, ys = [], []
    for panel in panels:
        t_total = panel.values.shape[1]
        if t_total < context + horizon:
            raise WindowError(
                f"panel {panel.room_id} has {t_total} buckets; needs at least "
                f"{context + horizon}"
            )
        for start in range(0, t_total - context - horizon + 1, stride):
            xs.append(panel.values[:, start : start + context])
            ys.append(panel.values[:, start + context : start + context + horizon])
    return np.stack(xs), np.stack(ys)


def train_statistic(model, panels, epochs=None):
    """Minimize original-scale MSE over sliding windows; returns per-epoch loss."""
    c = model.config
    epochs = c.epochs if epochs is None else epochs
    x, y = collect_windows(panels, c.context, c.horizon_train)
    rng = np.random.default_rng([c.seed, 0xDA])
    history = []
    for _ in range(epochs):
        order = rng.permutation(len(x))
        losses = []
        for lo in range(0, len(order), c.batch):
            idx = order[lo : lo + c.batch]
            normed, mu, delta = _batch_normalize(x[idx])
            pred_norm, _ = model.forward(Tensor(normed))
            pred = pred_norm * Tensor(delta) + Tensor(mu)
            diff = pred + T.mul(Tensor(y[idx]), -1.0)
            loss = T.tmean(T.mul(diff, diff))
            model.store.zero_grad()
            loss.backward()
            adam_step(model.store, lr=c.lr)
            losses.append(float(loss.data))
        history.append(float(np.mean(losses)))
    return history


def forecast_statistic(model, window):
    """Forecast the next `horizon_infer` steps of one (N, W) window, original scale."""
    normed, mu, delta = revin_normalize(window)
    pred_norm, enc = model.forward(Tensor(normed[None]))
    h = model.config.horizon_infer
    predicted = revin_denormalize(pred_norm.data[0, :, :h], mu, delta)
    return StatForecast(predicted=predicted, encoding=enc.data[0].copy(), horizon=h)


def build_stat_foresight(forecast):
    """Flattened forecasts and encodings, as a constant vector (length N*h + N*D)."""
    return np.concatenate([forecast.predicted.ravel(), forecast.encoding.ravel()])


def baseline_forecast(window, horizon, method):
    """Repeat either the window mean or the latest value, per channel."""
    window = np.asarray(window, dtype=np.float64)
    if method == "mean":
        col = window.mean(axis=1, keepdims=True)
    elif method == "latest":
        col = window[:, -1:]
    else:
        raise ValueError(f"unknown baseline {method!r}")
    return np.repeat(col, horizon, axis=1)


def forecast_batch(model, windows, horizon):
    """Denormalized forecasts for stacked windows (B, N, W), first `horizon` steps."""
    normed, mu, delta = _batch_normalize(windows)
    pred_norm, enc = model.forward(Tensor(normed))
    pred = pred_norm.data[:, :, :horizon] * delta + mu
    return pred, enc.data


def evaluate_statistic(model, panels, horizon=None):
    """Original-scale MSE of the model and both baselines on held-out panels."""
    c = model.config
    h = c.horizon_infer if horizon is None else horizon
    x, y = collect_windows(panels, c.context, h)
    pred, _ = forecast_batch(model, x, h)
    out = {"model": float(np.mean((pred - y) ** 2))}
    for method in ("mean", "latest"):
        base = np.stack([baseline_forecast(w, h, method) for w in x])
        out[method] = float(np.mean((base - y) ** 2))
    return out


def mse_per_step(model, panels):
    """Model MSE at each horizon step 1..horizon_train, for the steps ablation."""
    c = model.config
    x, y = collect_windows(panels, c.context, c.horizon_train)
    pred, _ = forecast_batch(model, x, c.horizon_train)
    return np.mean((pred - y) ** 2, axis=(0, 1))
