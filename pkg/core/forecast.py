"""LSTM one-step-ahead forecasters for price and household load.

Each hour is described by five calendar fields followed by nine lagged values
of the target (see ``FEATURE_LAGS``). A forecaster reads a window of 24 such
vectors ending at hour h and predicts the target at h. ``forecast_day`` rolls
the model over a day, feeding each forecast into the lags of later hours.
"""

import logging
from dataclasses import dataclass, field
from typing import Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field
from sklearn.metrics import mean_absolute_error, mean_absolute_percentage_error
from sklearn.preprocessing import MinMaxScaler

from core.errors import DataError, NumericError, ShapeError
from core.neural import (
    AdamState,
    DenseLayer,
    DenseNet,
    GradCheckReport,
    LstmCell,
    adam_update,
    clip_by_global_norm,
    dense_backward,
    dense_forward,
    dropout_mask,
    glorot_uniform,
    grad_check,
    load_checkpoint,
    lstm_step,
    lstm_step_backward,
    mse_loss,
    save_checkpoint,
)
from ingest.calendar import calendar_matrix
from ingest.series import HOUR, HourlySeries

logger = logging.getLogger(__name__)

FEATURE_LAGS = (1, 2, 3, 24, 25, 26, 48, 49, 50)
MAX_LAG = max(FEATURE_LAGS)
N_CALENDAR = 5
N_FEATURES = N_CALENDAR + len(FEATURE_LAGS)
_LAGS = np.array(FEATURE_LAGS)


class ForecastConfig(BaseModel):
    window: int = Field(24, ge=1, description="Feature vectors per input window")
    hidden: int = Field(64, ge=1, description="Hidden units per LSTM layer")
    layers: int = Field(2, ge=1, description="Stacked LSTM layers")
    dropout: float = Field(
        0.2, ge=0.0, lt=1.0, description="Dropout between LSTM layers and before the output head"
    )
    lr: float = Field(1e-3, gt=0.0, description="Adam learning rate")
    batch_size: int = Field(64, ge=1, description="Mini-batch size")
    epochs: int = Field(100, ge=1, description="Maximum training epochs")
    patience: int = Field(10, ge=1, description="Early stop after this many epochs without validation gain")
    validation_fraction: float = Field(
        0.1, ge=0.0, lt=1.0, description="Trailing share of training windows held out for early stopping"
    )
    clip_norm: float = Field(10.0, gt=0.0, description="Global gradient-norm clip")


@dataclass(frozen=True)
class AccuracyReport:
    mae: float
    mape: float  # percent
    excluded: int = 0  # zero-actual terms left out of the MAPE


@dataclass
class FitReport:
    final_loss: float
    losses: List[float] = field(default_factory=list)
    val_losses: List[float] = field(default_factory=list)
    best_epoch: int = 0


# --- Features ---


def feature_matrix(values, timestamps, holidays=None) -> np.ndarray:
    """One row per hour; rows before index MAX_LAG carry NaN lags."""
    values = np.asarray(values, dtype=np.float64)
    n = len(values)
    if len(timestamps) != n:
        raise ShapeError(f"{len(timestamps)} timestamps for {n} values")
    feats = np.full((n, N_FEATURES), np.nan)
    feats[:, :N_CALENDAR] = calendar_matrix(timestamps, holidays)
    for j, lag in enumerate(FEATURE_LAGS):
        feats[lag:, N_CALENDAR + j] = values[: n - lag]
    return feats


def build_features(series: HourlySeries, target: str, h: int, holidays=None) -> np.ndarray:
    """Feature vector of hour index ``h`` (0-based): calendar fields then lags."""
    if h < MAX_LAG:
        raise DataError(
            f"Hour index {h} has no lag h-{MAX_LAG}; the first usable index is {MAX_LAG}"
        )
    if h >= len(series):
        raise DataError(f"Hour index {h} is past the end of a {len(series)}-hour series")
    values = series.target_values(target)
    calendar = calendar_matrix(series.timestamps[h:h + 1], holidays)[0]
    return np.concatenate([calendar, values[h - _LAGS]])


def _window_rows(calendar: np.ndarray, values: np.ndarray, rows: np.ndarray) -> np.ndarray:
    feats = np.empty((len(rows), N_FEATURES))
    feats[:, :N_CALENDAR] = calendar[rows]
    feats[:, N_CALENDAR:] = values[rows[:, None] - _LAGS[None, :]]
    return feats


def training_windows(values, timestamps, window: int, holidays=None) -> Tuple[np.ndarray, np.ndarray]:
    """All (window, target) pairs of a series: X (B, window, 14), y (B,)."""
    feats = feature_matrix(values, timestamps, holidays)[MAX_LAG:]
    if len(feats) < window:
        raise DataError(
            f"Need at least {window + MAX_LAG} hours to build one training window, got {len(values)}"
        )
    windows = np.lib.stride_tricks.sliding_window_view(feats, window, axis=0)
    X = np.ascontiguousarray(windows.transpose(0, 2, 1))
    y = np.asarray(values, dtype=np.float64)[MAX_LAG + window - 1:]
    return X, y


# --- Normalisation ---


class WindowScaler:
    """Two MinMaxScalers: one over the feature columns of every window, one over the target."""

    def __init__(self, features: Optional[MinMaxScaler] = None, target: Optional[MinMaxScaler] = None):
        self.features = features or MinMaxScaler()
        self.target = target or MinMaxScaler()

    @classmethod
    def fit(cls, features: np.ndarray, targets) -> "WindowScaler":
        features = np.asarray(features, dtype=np.float64)
        scaler = cls()
        scaler.features.fit(features.reshape(-1, features.shape[-1]))
        scaler.target.fit(np.asarray(targets, dtype=np.float64).reshape(-1, 1))
        return scaler

    @classmethod
    def from_bounds(cls, feature_min, feature_max, target_min: float, target_max: float) -> "WindowScaler":
        """Rebuild fitted scalers from the per-column minima and maxima."""
        scaler = cls()
        scaler.features.fit(np.vstack([feature_min, feature_max]).astype(np.float64))
        scaler.target.fit(np.array([[target_min], [target_max]], dtype=np.float64))
        return scaler

    def _columns(self, transform, values) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        return transform(values.reshape(-1, values.shape[-1])).reshape(values.shape)

    def normalize(self, features) -> np.ndarray:
        return self._columns(self.features.transform, features)

    def denormalize(self, features) -> np.ndarray:
        return self._columns(self.features.inverse_transform, features)

    def normalize_target(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        return self.target.transform(y.reshape(-1, 1)).reshape(y.shape)

    def denormalize_target(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        return self.target.inverse_transform(y.reshape(-1, 1)).reshape(y.shape)


# --- Model ---


@dataclass
class _ForwardCache:
    steps: List[list]  # per layer, per time step LstmCache
    masks: List[np.ndarray]  # per layer dropout mask on its outputs
    head_cache: object


class Forecaster:
    """Stacked LSTM with a linear head over min-max normalised inputs."""

    def __init__(
        self,
        cells: Sequence[LstmCell],
        head: DenseNet,
        scaler: WindowScaler,
        target: str = "price",
        window: int = 24,
        dropout: float = 0.0,
    ):
        if not cells:
            raise ShapeError("Forecaster needs at least one LSTM layer")
        if cells[0].input_dim != N_FEATURES:
            raise ShapeError(f"First LSTM layer expects {cells[0].input_dim} features, not {N_FEATURES}")
        for lower, upper in zip(cells, cells[1:]):
            if upper.input_dim != lower.hidden_dim:
                raise ShapeError("LSTM layer widths do not compose")
        if head.input_dim != cells[-1].hidden_dim or head.output_dim != 1:
            raise ShapeError("Head must map the last hidden state to one value")
        self.cells = list(cells)
        self.head = head
        self.scaler = scaler
        self.target = target
        self.window = window
        self.dropout = dropout

    @classmethod
    def initialize(
        cls, config: ForecastConfig, scaler: WindowScaler, target: str, rng: np.random.Generator
    ) -> "Forecaster":
        cells = []
        width = N_FEATURES
        for _ in range(config.layers):
            cells.append(LstmCell.initialize(width, config.hidden, rng))
            width = config.hidden
        head = DenseNet([DenseLayer(glorot_uniform(rng, width, 1), np.zeros(1))])
        return cls(cells, head, scaler, target, config.window, config.dropout)

    def parameters(self) -> List[np.ndarray]:
        params = []
        for cell in self.cells:
            params.extend(cell.parameters())
        return params + self.head.parameters()

    def _forward(
        self,
        x: np.ndarray,
        rng: Optional[np.random.Generator] = None,
        masks: Optional[Sequence[np.ndarray]] = None,
    ):
        """x is normalised (B, T, F).

        Dropout is active only when ``rng`` is given, or when explicit per-layer
        ``masks`` are passed (shape (T, B, H) below the top layer, (B, H) on it).
        """
        batch, steps, _ = x.shape
        inputs = [x[:, t] for t in range(steps)]
        all_steps, applied = [], []
        for li, cell in enumerate(self.cells):
            h = np.zeros((batch, cell.hidden_dim))
            c = np.zeros((batch, cell.hidden_dim))
            outputs, caches = [], []
            for t in range(steps):
                h, c, cache = lstm_step(cell, inputs[t], h, c)
                outputs.append(h)
                caches.append(cache)
            all_steps.append(caches)
            last = li == len(self.cells) - 1
            shape = (batch, cell.hidden_dim) if last else (steps, batch, cell.hidden_dim)
            if masks is not None:
                mask = np.asarray(masks[li], dtype=np.float64)
                if mask.shape != shape:
                    raise ShapeError(f"Dropout mask {li} has shape {mask.shape}, expected {shape}")
            elif rng is not None:
                mask = dropout_mask(rng, shape, self.dropout)
            else:
                mask = np.ones(shape)
            applied.append(mask)
            if not last:
                inputs = [outputs[t] * mask[t] for t in range(steps)]
        out, head_cache = dense_forward(self.head, outputs[-1] * applied[-1])
        return out[:, 0], _ForwardCache(all_steps, applied, head_cache)

    def _backward(self, cache: _ForwardCache, dout: np.ndarray) -> List[np.ndarray]:
        head_grads = dense_backward(self.head, cache.head_cache, dout.reshape(-1, 1))
        steps = len(cache.steps[0])
        d_seq = [None] * steps
        d_seq[-1] = head_grads.inputs * cache.masks[-1]
        layer_grads: List[List[np.ndarray]] = [None] * len(self.cells)
        for li in reversed(range(len(self.cells))):
            cell = self.cells[li]
            batch = cache.steps[li][0].h.shape[0]
            dh = np.zeros((batch, cell.hidden_dim))
            dc = np.zeros((batch, cell.hidden_dim))
            acc = [np.zeros_like(p) for p in cell.parameters()]
            d_inputs = [None] * steps
            for t in reversed(range(steps)):
                upstream = dh if d_seq[t] is None else dh + d_seq[t]
                grads, dx, dh, dc = lstm_step_backward(cell, cache.steps[li][t], upstream, dc)
                for a, g in zip(acc, grads):
                    a += g
                d_inputs[t] = dx
            layer_grads[li] = acc
            if li > 0:
                mask = cache.masks[li - 1]
                d_seq = [d_inputs[t] * mask[t] for t in range(steps)]
        flat = [g for grads in layer_grads for g in grads]
        return flat + head_grads.params

    def predict_normalized(self, x: np.ndarray) -> np.ndarray:
        return self._forward(x)[0]

    def predict_windows(self, raw: np.ndarray) -> np.ndarray:
        raw = np.asarray(raw, dtype=np.float64)
        if raw.ndim != 3 or raw.shape[1:] != (self.window, N_FEATURES):
            raise ShapeError(f"Expected windows of shape (B, {self.window}, {N_FEATURES}), got {raw.shape}")
        return self.scaler.denormalize_target(self.predict_normalized(self.scaler.normalize(raw)))

    def predict_window(self, raw: np.ndarray) -> float:
        return float(self.predict_windows(np.asarray(raw)[None])[0])

    def save(self, path):
        arrays = {}
        for i, cell in enumerate(self.cells):
            arrays.update(cell.named_parameters(f"lstm{i}"))
        head_arrays, head_meta = self.head.to_arrays()
        arrays.update(head_arrays)
        arrays["scaler.feature_min"] = self.scaler.features.data_min_
        arrays["scaler.feature_max"] = self.scaler.features.data_max_
        meta = {
            "target": self.target,
            "window": self.window,
            "dropout": self.dropout,
            "layers": len(self.cells),
            "lags": list(FEATURE_LAGS),
            "target_min": float(self.scaler.target.data_min_[0]),
            "target_max": float(self.scaler.target.data_max_[0]),
            **head_meta,
        }
        return save_checkpoint(path, "forecaster", arrays, meta)

    @classmethod
    def load(cls, path) -> "Forecaster":
        kind, arrays, meta = load_checkpoint(path)
        if kind != "forecaster":
            raise DataError(f"{path} holds a {kind!r} checkpoint, not a forecaster")
        if tuple(meta["lags"]) != FEATURE_LAGS:
            raise DataError(f"{path} was trained with lags {meta['lags']}")
        cells = [
            LstmCell(arrays[f"lstm{i}.w_x"], arrays[f"lstm{i}.w_h"], arrays[f"lstm{i}.bias"])
            for i in range(meta["layers"])
        ]
        scaler = WindowScaler.from_bounds(
            arrays["scaler.feature_min"],
            arrays["scaler.feature_max"],
            meta["target_min"],
            meta["target_max"],
        )
        return cls(cells, DenseNet.from_arrays(arrays, meta), scaler, meta["target"], meta["window"], meta["dropout"])


def check_forecaster_gradients(
    model: Forecaster, x, y, masks: Optional[Sequence[np.ndarray]] = None, step: float = 1e-5
) -> GradCheckReport:
    """Grad-check the full-window backward pass under MSE on normalised windows.

    With ``masks`` the same dropout pattern is applied to every evaluation.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)

    def loss_fn() -> float:
        return mse_loss(model._forward(x, masks=masks)[0], y)[0]

    pred, cache = model._forward(x, masks=masks)
    _, dpred = mse_loss(pred, y)
    return grad_check(loss_fn, model.parameters(), model._backward(cache, dpred), step)


# --- Training ---


def _full_pass_loss(model: Forecaster, X: np.ndarray, y: np.ndarray, batch: int) -> float:
    if len(X) == 0:
        return float("nan")
    total = 0.0
    for i in range(0, len(X), batch):
        pred = model.predict_normalized(X[i:i + batch])
        total += float(np.sum((pred - y[i:i + batch]) ** 2))
    return total / len(X)


def train_forecaster(
    train: HourlySeries,
    target: str,
    config: Optional[ForecastConfig] = None,
    seed: int = 0,
    holidays=None,
) -> Tuple[Forecaster, FitReport]:
    """Fit a forecaster on the training split with Adam on the MSE loss."""
    config = config or ForecastConfig()
    values = train.target_values(target)
    X_raw, y_raw = training_windows(values, train.timestamps, config.window, holidays)
    if not (np.isfinite(X_raw).all() and np.isfinite(y_raw).all()):
        raise NumericError(f"Forecaster for {target}: training data holds non-finite values")
    scaler = WindowScaler.fit(X_raw, y_raw)
    X = scaler.normalize(X_raw)
    y = scaler.normalize_target(y_raw)

    n_val = int(round(len(X) * config.validation_fraction)) if len(X) >= 10 else 0
    X_fit, y_fit = X[: len(X) - n_val], y[: len(X) - n_val]
    X_val, y_val = X[len(X) - n_val:], y[len(X) - n_val:]

    rng = np.random.default_rng(seed)
    model = Forecaster.initialize(config, scaler, target, rng)
    params = model.parameters()
    adam = AdamState.for_params(params)
    report = FitReport(final_loss=float("nan"))
    best_val, best_params, stale = np.inf, None, 0

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(X_fit))
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            pred, cache = model._forward(X_fit[idx], rng)
            loss, dpred = mse_loss(pred, y_fit[idx])
            if not np.isfinite(loss):
                raise NumericError(
                    f"Forecaster for {target!r} diverged at epoch {epoch}, batch {start // config.batch_size}: loss={loss}"
                )
            grads, _ = clip_by_global_norm(model._backward(cache, dpred), config.clip_norm)
            adam_update(params, grads, adam, config.lr)

        epoch_loss = _full_pass_loss(model, X_fit, y_fit, config.batch_size)
        if not np.isfinite(epoch_loss):
            raise NumericError(f"Forecaster for {target!r} diverged at epoch {epoch}: loss={epoch_loss}")
        report.losses.append(epoch_loss)
        if n_val:
            val_loss = _full_pass_loss(model, X_val, y_val, config.batch_size)
            report.val_losses.append(val_loss)
            if val_loss < best_val:
                best_val, stale, report.best_epoch = val_loss, 0, epoch
                best_params = [p.copy() for p in params]
            else:
                stale += 1
        if epoch % 10 == 0 or epoch == 1:
            logger.info("forecaster %s epoch %d loss %.6f", target, epoch, epoch_loss)
        if n_val and stale >= config.patience:
            logger.info("forecaster %s stopped early at epoch %d", target, epoch)
            break

    if best_params is not None:
        for p, best in zip(params, best_params):
            p[...] = best
        report.final_loss = report.losses[report.best_epoch - 1]
    else:
        report.best_epoch = len(report.losses)
        report.final_loss = report.losses[-1]
    return model, report


# --- Day forecasts ---


def _day_start(day) -> pd.Timestamp:
    return pd.Timestamp(day).normalize()


def _prepare_day(history: HourlySeries, day, target: str, window: int):
    start = _day_start(day)
    past = history.before(start)
    need = MAX_LAG + window - 1
    if len(past) < need or past.timestamps[-1] != start - HOUR:
        raise DataError(
            f"Forecasting {start.date()} needs {need} contiguous hours of history ending at "
            f"{start - HOUR}; got {len(past)}"
        )
    values = np.concatenate([past.target_values(target)[-need:], np.zeros(24)])
    stamps = past.timestamps[-need:].append(pd.date_range(start, periods=24, freq=HOUR))
    return need, values, stamps


def _roll(model, need: int, values: np.ndarray, stamps, holidays, actual: Optional[np.ndarray], window: int):
    calendar = calendar_matrix(stamps, holidays)
    out = np.empty(24)
    for k in range(24):
        idx = need + k
        rows = np.arange(idx - window + 1, idx + 1)
        pred = max(float(model.predict_window(_window_rows(calendar, values, rows))), 0.0)
        out[k] = pred
        values[idx] = pred if actual is None else actual[k]
    return out


def forecast_day(model, history: HourlySeries, day, target: Optional[str] = None, holidays=None) -> np.ndarray:
    """Roll one-step forecasts over the 24 hours of ``day``.

    Only records strictly before the day are read. ``model`` needs a
    ``predict_window(raw (window, 14)) -> float`` method.
    """
    target = target or model.target
    window = getattr(model, "window", 24)
    need, values, stamps = _prepare_day(history, day, target, window)
    return _roll(model, need, values, stamps, holidays, None, window)


def forecast_day_from_actuals(
    model, series: HourlySeries, day, target: Optional[str] = None, holidays=None
) -> np.ndarray:
    """Like ``forecast_day`` but lags inside the day use the actual values."""
    target = target or model.target
    window = getattr(model, "window", 24)
    need, values, stamps = _prepare_day(series, day, target, window)
    actual = series.day_slice(day).target_values(target)
    return _roll(model, need, values, stamps, holidays, actual, window)


def forecast_aggregate_day(models: Mapping[str, object], history: HourlySeries, day, holidays=None) -> np.ndarray:
    """Aggregate load forecast as the sum of per-household forecasts."""
    loads = [forecast_day(m, history, day, target, holidays) for target, m in models.items() if target != "price"]
    if not loads:
        raise DataError("No household load forecasters given")
    return np.sum(loads, axis=0)


def evaluate_forecast(pred, actual) -> AccuracyReport:
    pred = np.asarray(pred, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if pred.shape != actual.shape:
        raise ShapeError(f"Prediction shape {pred.shape} != actual shape {actual.shape}")
    nonzero = actual != 0
    if not nonzero.any():
        raise DataError("MAPE is undefined: every actual value is zero")
    return AccuracyReport(
        mae=float(mean_absolute_error(actual, pred)),
        mape=float(mean_absolute_percentage_error(actual[nonzero], pred[nonzero]) * 100.0),
        excluded=int((~nonzero).sum()),
    )


def accuracy_table(
    models: Mapping[str, object], series: HourlySeries, days: Iterable, holidays=None
) -> pd.DataFrame:
    """MAE/MAPE of rolled day forecasts per target over ``days``."""
    days = list(days)
    rows = []
    for target, model in models.items():
        pred = np.concatenate([forecast_day(model, series, d, target, holidays) for d in days])
        actual = np.concatenate([series.day_slice(d).target_values(target) for d in days])
        report = evaluate_forecast(pred, actual)
        rows.append(
            {"target": target, "mae": report.mae, "mape": report.mape, "excluded": report.excluded, "days": len(days)}
        )
    return pd.DataFrame(rows, columns=["target", "mae", "mape", "excluded", "days"])


def forecast_frame(forecasts: Mapping[str, np.ndarray]) -> pd.DataFrame:
    """``hour,<target>...`` table with 1-based hours."""
    data = {"hour": np.arange(1, 25)}
    data.update({target: np.asarray(v) for target, v in forecasts.items()})
    return pd.DataFrame(data)
