"""Small numpy neural-network toolkit: dense nets, an LSTM cell, Adam, losses.

Everything runs in float64. Forward functions accept a single vector or a
(batch, features) matrix and return a cache that the matching backward
function consumes. Parameters are plain arrays updated in place, so the
optimiser and the soft target update can work on ``parameters()`` lists.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.errors import DataError, ShapeError

CHECKPOINT_FORMAT = "capdr-checkpoint"
CHECKPOINT_VERSION = 1

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# absolute floor for the relative-error denominator in grad_check
GRAD_CHECK_FLOOR = 1e-4


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def _as_batch(x, width: int, what: str) -> Tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.ndim != 2 or arr.shape[1] != width:
        raise ShapeError(f"{what}: expected width {width}, got shape {np.shape(x)}")
    return arr, single


@dataclass
class Gradients:
    params: List[np.ndarray]  # aligned with model.parameters()
    inputs: Optional[np.ndarray] = None


# --- Dense networks ---


@dataclass
class DenseLayer:
    weight: np.ndarray  # (in, out)
    bias: np.ndarray  # (out,)
    relu: bool = False

    def __post_init__(self):
        self.weight = np.array(self.weight, dtype=np.float64)
        self.bias = np.array(self.bias, dtype=np.float64).reshape(-1)
        if self.weight.ndim != 2 or self.weight.shape[1] != self.bias.shape[0]:
            raise ShapeError(
                f"Layer weight {self.weight.shape} does not match bias {self.bias.shape}"
            )


class DenseNet:
    def __init__(self, layers: Sequence[DenseLayer]):
        if not layers:
            raise ShapeError("DenseNet needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.weight.shape[1] != nxt.weight.shape[0]:
                raise ShapeError(
                    f"Layer widths do not compose: {prev.weight.shape} -> {nxt.weight.shape}"
                )
        self.layers = list(layers)

    @classmethod
    def initialize(cls, sizes: Sequence[int], rng: np.random.Generator) -> "DenseNet":
        """ReLU hidden layers, linear output layer."""
        layers = []
        for i, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
            layers.append(
                DenseLayer(
                    weight=glorot_uniform(rng, fan_in, fan_out),
                    bias=np.zeros(fan_out),
                    relu=i < len(sizes) - 2,
                )
            )
        return cls(layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weight.shape[1]

    @property
    def sizes(self) -> List[int]:
        return [self.input_dim] + [layer.weight.shape[1] for layer in self.layers]

    def shapes(self) -> List[Tuple[int, int]]:
        return [layer.weight.shape for layer in self.layers]

    def parameters(self) -> List[np.ndarray]:
        params = []
        for layer in self.layers:
            params.extend([layer.weight, layer.bias])
        return params

    def named_parameters(self) -> Dict[str, np.ndarray]:
        named = {}
        for i, layer in enumerate(self.layers):
            named[f"dense{i}.weight"] = layer.weight
            named[f"dense{i}.bias"] = layer.bias
        return named

    def copy(self) -> "DenseNet":
        return DenseNet(
            [DenseLayer(l.weight.copy(), l.bias.copy(), l.relu) for l in self.layers]
        )

    def predict(self, x) -> np.ndarray:
        return dense_forward(self, x)[0]

    def to_arrays(self) -> Tuple[Dict[str, np.ndarray], dict]:
        return dict(self.named_parameters()), {"relu": [l.relu for l in self.layers]}

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray], meta: dict) -> "DenseNet":
        return cls(
            [
                DenseLayer(arrays[f"dense{i}.weight"], arrays[f"dense{i}.bias"], flag)
                for i, flag in enumerate(meta["relu"])
            ]
        )


@dataclass
class DenseCache:
    inputs: List[np.ndarray]
    pre_activations: List[np.ndarray]
    shapes: List[Tuple[int, int]]
    single: bool


def dense_forward(net: DenseNet, x) -> Tuple[np.ndarray, DenseCache]:
    a, single = _as_batch(x, net.input_dim, "dense_forward")
    inputs, pre = [], []
    for layer in net.layers:
        inputs.append(a)
        z = a @ layer.weight + layer.bias
        pre.append(z)
        a = relu(z) if layer.relu else z
    out = a[0] if single else a
    return out, DenseCache(inputs, pre, net.shapes(), single)


def dense_backward(net: DenseNet, cache: DenseCache, loss_grad) -> Gradients:
    if cache.shapes != net.shapes():
        raise ShapeError("Stale cache: network shape changed since the forward pass")
    batch = cache.inputs[0].shape[0]
    g = np.atleast_2d(np.asarray(loss_grad, dtype=np.float64))
    if g.shape != (batch, net.output_dim):
        raise ShapeError(f"Loss gradient {g.shape} does not match output {(batch, net.output_dim)}")
    grads: List[np.ndarray] = []
    for layer, a_in, z in zip(reversed(net.layers), reversed(cache.inputs), reversed(cache.pre_activations)):
        if layer.relu:
            g = g * (z > 0.0)
        grads.extend([g.sum(axis=0), a_in.T @ g])
        g = g @ layer.weight.T
    grads.reverse()  # [dW0, db0, dW1, db1, ...]
    return Gradients(params=grads, inputs=g[0] if cache.single else g)


# --- LSTM ---


class LstmCell:
    """One LSTM layer; gates packed as [input, forget, candidate, output]."""

    def __init__(self, w_x: np.ndarray, w_h: np.ndarray, bias: np.ndarray):
        self.w_x = np.array(w_x, dtype=np.float64)
        self.w_h = np.array(w_h, dtype=np.float64)
        self.bias = np.array(bias, dtype=np.float64).reshape(-1)
        hidden = self.w_h.shape[0]
        if (
            self.w_x.ndim != 2
            or self.w_x.shape[1] != 4 * hidden
            or self.w_h.shape != (hidden, 4 * hidden)
            or self.bias.shape != (4 * hidden,)
        ):
            raise ShapeError(
                f"Inconsistent LSTM shapes: w_x {self.w_x.shape}, w_h {self.w_h.shape}, bias {self.bias.shape}"
            )

    @classmethod
    def initialize(cls, input_dim: int, hidden_dim: int, rng: np.random.Generator) -> "LstmCell":
        return cls(
            w_x=glorot_uniform(rng, input_dim, 4 * hidden_dim),
            w_h=glorot_uniform(rng, hidden_dim, 4 * hidden_dim),
            bias=np.zeros(4 * hidden_dim),
        )

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int) -> "LstmCell":
        return cls(
            np.zeros((input_dim, 4 * hidden_dim)),
            np.zeros((hidden_dim, 4 * hidden_dim)),
            np.zeros(4 * hidden_dim),
        )

    @property
    def input_dim(self) -> int:
        return self.w_x.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.w_h.shape[0]

    def parameters(self) -> List[np.ndarray]:
        return [self.w_x, self.w_h, self.bias]

    def named_parameters(self, prefix: str = "lstm") -> Dict[str, np.ndarray]:
        return {f"{prefix}.w_x": self.w_x, f"{prefix}.w_h": self.w_h, f"{prefix}.bias": self.bias}


@dataclass
class LstmCache:
    x: np.ndarray
    h: np.ndarray
    c: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    tanh_c: np.ndarray
    single: bool


def lstm_step(cell: LstmCell, x, h, c) -> Tuple[np.ndarray, np.ndarray, LstmCache]:
    x2, single = _as_batch(x, cell.input_dim, "lstm_step input")
    h2, _ = _as_batch(h, cell.hidden_dim, "lstm_step hidden state")
    c2, _ = _as_batch(c, cell.hidden_dim, "lstm_step cell state")
    if not (x2.shape[0] == h2.shape[0] == c2.shape[0]):
        raise ShapeError("lstm_step: batch sizes of x, h and c differ")
    n = cell.hidden_dim
    z = x2 @ cell.w_x + h2 @ cell.w_h + cell.bias
    i = sigmoid(z[:, :n])
    f = sigmoid(z[:, n:2 * n])
    g = np.tanh(z[:, 2 * n:3 * n])
    o = sigmoid(z[:, 3 * n:])
    c_new = f * c2 + i * g
    tanh_c = np.tanh(c_new)
    h_new = o * tanh_c
    cache = LstmCache(x2, h2, c2, i, f, g, o, tanh_c, single)
    if single:
        return h_new[0], c_new[0], cache
    return h_new, c_new, cache


def lstm_step_backward(cell: LstmCell, cache: LstmCache, dh, dc):
    """Returns (param grads [w_x, w_h, bias], dx, dh_prev, dc_prev)."""
    dh = np.atleast_2d(np.asarray(dh, dtype=np.float64))
    dc = np.atleast_2d(np.asarray(dc, dtype=np.float64))
    if dh.shape != cache.h.shape or dc.shape != cache.c.shape:
        raise ShapeError("lstm_step_backward: gradient shapes do not match the cache")
    do = dh * cache.tanh_c
    dc_total = dc + dh * cache.o * (1.0 - cache.tanh_c ** 2)
    dz = np.concatenate(
        [
            dc_total * cache.g * cache.i * (1.0 - cache.i),
            dc_total * cache.c * cache.f * (1.0 - cache.f),
            dc_total * cache.i * (1.0 - cache.g ** 2),
            do * cache.o * (1.0 - cache.o),
        ],
        axis=1,
    )
    grads = [cache.x.T @ dz, cache.h.T @ dz, dz.sum(axis=0)]
    dx = dz @ cell.w_x.T
    dh_prev = dz @ cell.w_h.T
    dc_prev = dc_total * cache.f
    if cache.single:
        return grads, dx[0], dh_prev[0], dc_prev[0]
    return grads, dx, dh_prev, dc_prev


def dropout_mask(rng: np.random.Generator, shape, rate: float) -> np.ndarray:
    """Inverted-dropout mask; all ones when rate is 0."""
    if rate <= 0.0:
        return np.ones(shape)
    keep = 1.0 - rate
    return (rng.random(shape) < keep) / keep


# --- Optimisation ---


@dataclass
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_update(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = ADAM_BETA1,
    beta2: float = ADAM_BETA2,
    eps: float = ADAM_EPS,
) -> Sequence[np.ndarray]:
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("adam_update: params, grads and state lengths differ")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != np.shape(g) or p.shape != m.shape:
            raise ShapeError(f"adam_update: shape mismatch {p.shape} vs {np.shape(g)}")
    state.t += 1
    bias1 = 1.0 - beta1 ** state.t
    bias2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * np.square(g)
        p -= lr * (m / bias1) / (np.sqrt(v / bias2) + eps)
    return params


def clip_by_global_norm(grads: Sequence[np.ndarray], max_norm: float) -> Tuple[List[np.ndarray], float]:
    norm = float(np.sqrt(sum(float(np.sum(np.square(g))) for g in grads)))
    if max_norm is None or norm <= max_norm or norm == 0.0:
        return list(grads), norm
    scale = max_norm / norm
    return [g * scale for g in grads], norm


# --- Losses ---


def huber_loss(pred, target, delta: float = 1.0) -> Tuple[float, np.ndarray]:
    """Mean Huber loss and its gradient with respect to ``pred``."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"huber_loss: {pred.shape} vs {target.shape}")
    err = pred - target
    abs_err = np.abs(err)
    quadratic = abs_err <= delta
    losses = np.where(quadratic, 0.5 * err ** 2, delta * (abs_err - 0.5 * delta))
    grad = np.where(quadratic, err, delta * np.sign(err)) / max(err.size, 1)
    return float(losses.mean()) if err.size else 0.0, grad


def mse_loss(pred, target) -> Tuple[float, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: {pred.shape} vs {target.shape}")
    err = pred - target
    return float(np.mean(err ** 2)), 2.0 * err / max(err.size, 1)


# --- Gradient checking ---


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_index: Tuple[int, int]  # (parameter number, flat position)
    checked: int = 0

    def passed(self, tolerance: float = 1e-4) -> bool:
        return self.max_rel_error < tolerance


def grad_check(
    loss_fn: Callable[[], float],
    params: Sequence[np.ndarray],
    analytic: Sequence[np.ndarray],
    step: float = 1e-5,
) -> GradCheckReport:
    """Compare analytic gradients with central differences of ``loss_fn``.

    ``loss_fn`` must read the current values of ``params``, which are perturbed
    in place and restored afterwards.
    """
    worst, worst_at, checked = 0.0, (0, 0), 0
    for pi, (p, g) in enumerate(zip(params, analytic)):
        flat = p.reshape(-1)
        gflat = np.asarray(g, dtype=np.float64).reshape(-1)
        for k in range(flat.size):
            original = flat[k]
            flat[k] = original + step
            plus = loss_fn()
            flat[k] = original - step
            minus = loss_fn()
            flat[k] = original
            numeric = (plus - minus) / (2.0 * step)
            denom = max(abs(numeric), abs(gflat[k]), GRAD_CHECK_FLOOR)
            err = abs(numeric - gflat[k]) / denom
            checked += 1
            if not np.isfinite(err):
                err = np.inf
            if err > worst:
                worst, worst_at = err, (pi, k)
    return GradCheckReport(float(worst), worst_at, checked)


def check_dense_gradients(net: DenseNet, x, target, step: float = 1e-5) -> GradCheckReport:
    """Grad-check a dense net under an MSE loss on one sample or batch."""

    def loss_fn() -> float:
        return mse_loss(dense_forward(net, x)[0], target)[0]

    out, cache = dense_forward(net, x)
    _, dout = mse_loss(out, target)
    grads = dense_backward(net, cache, dout)
    return grad_check(loss_fn, net.parameters(), grads.params, step)


def check_lstm_gradients(cell: LstmCell, x, h, c, rng: np.random.Generator, step: float = 1e-5) -> GradCheckReport:
    """Grad-check one LSTM step under a random linear read-out of (h', c')."""
    proj_h = rng.normal(size=cell.hidden_dim)
    proj_c = rng.normal(size=cell.hidden_dim)

    def loss_fn() -> float:
        h_new, c_new, _ = lstm_step(cell, x, h, c)
        return float(np.sum(h_new * proj_h) + np.sum(c_new * proj_c))

    h_new, c_new, cache = lstm_step(cell, x, h, c)
    dh = np.broadcast_to(proj_h, np.shape(h_new)).copy()
    dc = np.broadcast_to(proj_c, np.shape(c_new)).copy()
    grads, _, _, _ = lstm_step_backward(cell, cache, dh, dc)
    return grad_check(loss_fn, cell.parameters(), grads, step)


# --- Checkpoints ---


def save_checkpoint(path, kind: str, arrays: Dict[str, np.ndarray], meta: Optional[dict] = None) -> Path:
    """Write a versioned JSON checkpoint; float repr makes the round trip exact."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": kind,
        "meta": meta or {},
        "arrays": [
            {"name": name, "shape": list(arr.shape), "data": np.asarray(arr, dtype=np.float64).ravel().tolist()}
            for name, arr in arrays.items()
        ],
    }
    with path.open("w", encoding="utf-8") as f:
        json.dump(payload, f)
    return path


def load_checkpoint(path) -> Tuple[str, Dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"Checkpoint not found: {path}")
    with path.open("r", encoding="utf-8") as f:
        payload = json.load(f)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{path} is not a checkpoint file")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {payload.get('version')}")
    arrays = {
        item["name"]: np.array(item["data"], dtype=np.float64).reshape(item["shape"])
        for item in payload["arrays"]
    }
    return payload["kind"], arrays, payload["meta"]


def save_dense_net(path, net: DenseNet, meta: Optional[dict] = None) -> Path:
    arrays, net_meta = net.to_arrays()
    return save_checkpoint(path, "dense", arrays, {**(meta or {}), **net_meta})


def load_dense_net(path) -> Tuple[DenseNet, dict]:
    kind, arrays, meta = load_checkpoint(path)
    if kind != "dense":
        raise DataError(f"{path} holds a {kind!r} checkpoint, not a dense network")
    return DenseNet.from_arrays(arrays, meta), meta
