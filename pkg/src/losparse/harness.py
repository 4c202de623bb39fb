"""Desk-scale training driver for factorized compression and its baselines.

A planted regression task ``y = x @ (L + S) + noise`` (``L`` low-rank, ``S``
with a few nonzero columns) is fit first by a dense model, whose weights
then serve as the pretrained starting point for compression. Training
modes:

``losparse``
    every weight becomes ``U @ V + S``; columns of ``S`` are pruned globally
    by smoothed sensitivity on a cubic schedule.
``itp``
    the dense weights themselves are pruned with the same scores and schedule.
``lowrank_only_finetune``
    ``S`` is dropped after initialization and only ``U``, ``V`` are trained.
``lowrank_only_pruneaway``
    ``S`` is initialized as the SVD residual and pruned to nothing.

The two low-rank-only modes spend the whole budget on the factors.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import decomposition as dec
from .decomposition import CompressionBudget, DenseLayer, FactorizedLayer
from .errors import ConfigError, ShapeError, TrainingError
from .importance import ImportanceState, ema_update, instant_sensitivity, neuron_scores
from .linalg import as_matrix
from .pruner import apply_prune, neuron_refs, select_retained
from .schedule import PruneSchedule, remaining_fraction

log = logging.getLogger(__name__)

MODES = ("losparse", "itp", "lowrank_only_finetune", "lowrank_only_pruneaway")
PRETRAIN_STEPS = 300

# independent RNG streams derived from one seed
_PRETRAIN_STREAM, _COMPRESS_STREAM, _INIT_STREAM = 0, 1, 2


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray

    def __len__(self):
        return self.x.shape[0]


@dataclass
class SyntheticTask:
    d_in: int
    d_out: int
    planted_lowrank: np.ndarray
    planted_sparse: np.ndarray
    noise_std: float
    seed: int
    sparse_columns: np.ndarray

    @property
    def weight(self) -> np.ndarray:
        return self.planted_lowrank + self.planted_sparse


def generate_task(seed, d_in, d_out, rank, sparse_cols, noise_std, n_train, n_val, sparse_scale=None):
    """Draw a planted low-rank plus column-sparse linear task and its datasets.

    The low-rank part is a product of Gaussian factors scaled to entry
    variance ``1/d_in``; the ``sparse_cols`` planted columns carry Gaussian
    entries with standard deviation ``sparse_scale / sqrt(d_in)``. Inputs
    are standard normal. The default ``sparse_scale = sqrt(d_out / sparse_cols)``
    gives both parts the same expected Frobenius norm.

    Returns ``(task, train, val)``.
    """
    if min(d_in, d_out) < 1:
        raise ConfigError(f"dimensions must be positive, got {d_in}x{d_out}")
    if not 1 <= rank <= min(d_in, d_out):
        raise ConfigError(f"planted rank {rank} outside [1, {min(d_in, d_out)}]")
    if not 0 <= sparse_cols <= d_out:
        raise ConfigError(f"planted sparse column count {sparse_cols} outside [0, {d_out}]")
    if noise_std < 0 or n_train < 1 or n_val < 1:
        raise ConfigError("noise_std must be non-negative and dataset sizes positive")

    if sparse_scale is None:
        sparse_scale = np.sqrt(d_out / sparse_cols) if sparse_cols else 0.0
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((d_in, rank))
    b = rng.standard_normal((rank, d_out))
    lowrank = a @ b / np.sqrt(rank * d_in)
    cols = np.sort(rng.choice(d_out, size=sparse_cols, replace=False))
    sparse = np.zeros((d_in, d_out))
    sparse[:, cols] = rng.standard_normal((d_in, sparse_cols)) * (sparse_scale / np.sqrt(d_in))
    task = SyntheticTask(d_in, d_out, lowrank, sparse, float(noise_std), seed, cols)

    def draw(n):
        x = rng.standard_normal((n, d_in))
        y = x @ task.weight + noise_std * rng.standard_normal((n, d_out))
        return Dataset(x, y)

    train = draw(n_train)
    val = draw(n_val)
    return task, train, val


@dataclass
class ToyModel:
    """Stack of linear layers with tanh between them; the last layer is linear."""

    layers: list
    biases: list

    def __post_init__(self):
        if len(self.layers) != len(self.biases):
            raise ShapeError("need one bias vector per layer")
        for i, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            if a.shape[1] != b.shape[0]:
                raise ShapeError(f"layer {i} outputs {a.shape[1]} features but layer {i + 1} takes {b.shape[0]}")

    @property
    def dims(self) -> list[int]:
        return [self.layers[0].shape[0]] + [layer.shape[1] for layer in self.layers]

    @property
    def original_param_count(self) -> int:
        return sum(layer.shape[0] * layer.shape[1] for layer in self.layers)

    def copy(self) -> "ToyModel":
        return ToyModel([layer.copy() for layer in self.layers], [b.copy() for b in self.biases])

    def weights(self) -> list[np.ndarray]:
        return [_effective_weight(layer) for layer in self.layers]


def _effective_weight(layer):
    return dec.reconstruct(layer) if isinstance(layer, FactorizedLayer) else layer.W


def init_dense_model(dims, seed) -> ToyModel:
    rng = np.random.default_rng([seed, _INIT_STREAM])
    layers, biases = [], []
    for fan_in, fan_out in zip(dims, dims[1:]):
        layers.append(DenseLayer(rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)))
        biases.append(np.zeros(fan_out))
    return ToyModel(layers, biases)


def planted_model(task: SyntheticTask) -> ToyModel:
    """Single dense layer holding the task's true weight."""
    return ToyModel([DenseLayer(task.weight.copy())], [np.zeros(task.d_out)])


def _layer_forward(layer, x):
    if isinstance(layer, FactorizedLayer):
        return dec.forward(layer, x)
    if x.shape[1] != layer.W.shape[0]:
        raise ShapeError(f"input has {x.shape[1]} features, layer expects {layer.W.shape[0]}")
    return x @ layer.W


def _layer_backward(layer, x, dy):
    if isinstance(layer, FactorizedLayer):
        return dec.backward(layer, x, dy)
    return {"W": x.T @ dy, "X": dy @ layer.W.T}


def model_forward(model: ToyModel, x):
    """Return the output and the per-layer inputs and pre-activations needed by backprop."""
    x = as_matrix(x, "X")
    inputs, pre = [], []
    h = x
    last = len(model.layers) - 1
    for i, (layer, bias) in enumerate(zip(model.layers, model.biases)):
        inputs.append(h)
        z = _layer_forward(layer, h) + bias
        pre.append(z)
        h = z if i == last else np.tanh(z)
    return h, (inputs, pre)


def model_backward(model: ToyModel, cache, dout):
    """Gradients for every layer (dict per layer) and bias, given dLoss/dOutput."""
    inputs, pre = cache
    grads = [None] * len(model.layers)
    bias_grads = [None] * len(model.layers)
    dz = dout
    for i in reversed(range(len(model.layers))):
        g = _layer_backward(model.layers[i], inputs[i], dz)
        bias_grads[i] = dz.sum(axis=0)
        grads[i] = g
        if i > 0:
            dz = g["X"] * (1.0 - np.tanh(pre[i - 1]) ** 2)
    return grads, bias_grads


def mse_loss(pred, y):
    """Halved mean squared error over all entries, and its gradient w.r.t. ``pred``."""
    if pred.shape != y.shape:
        raise ShapeError(f"prediction shape {pred.shape} differs from target shape {y.shape}")
    diff = pred - y
    return 0.5 * float(np.mean(diff * diff)), diff / diff.size


def evaluate(model: ToyModel, dataset: Dataset) -> float:
    pred, _ = model_forward(model, dataset.x)
    return mse_loss(pred, dataset.y)[0]


def sgd_step(params: dict, grads: dict, lr: float) -> dict:
    """Return ``{name: p - lr * g}``; inputs are left untouched."""
    out = {}
    for name, p in params.items():
        g = grads[name]
        if np.shape(p) != np.shape(g):
            raise ShapeError(f"parameter {name!r} has shape {np.shape(p)} but its gradient {np.shape(g)}")
        out[name] = p - lr * g
    return out


class BatchStream:
    """Seeded minibatch indices: a fresh permutation per epoch, partial tail dropped."""

    def __init__(self, n, batch_size, seed, stream):
        if batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {batch_size}")
        self.n = n
        self.batch_size = min(batch_size, n)
        self.rng = np.random.default_rng([seed, stream])
        self._order = np.empty(0, dtype=np.intp)
        self._pos = 0

    def next(self) -> np.ndarray:
        if self._pos + self.batch_size > len(self._order):
            self._order = self.rng.permutation(self.n)
            self._pos = 0
        idx = self._order[self._pos:self._pos + self.batch_size]
        self._pos += self.batch_size
        return idx


def _check_loss(loss, step):
    if not np.isfinite(loss):
        raise TrainingError(f"loss became non-finite at step {step}", step)


def train_dense(model: ToyModel, data: Dataset, lr, batch_size, steps, seed, stream=_PRETRAIN_STREAM):
    """Plain SGD on a dense model. Returns ``(model, per-step batch losses)``."""
    model = model.copy()
    batches = BatchStream(len(data), batch_size, seed, stream)
    losses = []
    for step in range(1, steps + 1):
        idx = batches.next()
        pred, cache = model_forward(model, data.x[idx])
        loss, dout = mse_loss(pred, data.y[idx])
        _check_loss(loss, step)
        losses.append(loss)
        grads, bias_grads = model_backward(model, cache, dout)
        for i, layer in enumerate(model.layers):
            layer.W = layer.W - lr * grads[i]["W"]
            model.biases[i] = model.biases[i] - lr * bias_grads[i]
    return model, losses


def pretrain(data: Dataset, dims, lr, batch_size, seed, steps=PRETRAIN_STEPS) -> ToyModel:
    """Dense warm training that produces the weights compression starts from."""
    model, _ = train_dense(init_dense_model(dims, seed), data, lr, batch_size, steps, seed)
    return model


@dataclass(frozen=True)
class TrainConfig:
    """Compression run settings.

    The schedule's final fraction is derived from the budget and model
    dimensions (see ``resolve_schedule``) unless ``final_fraction`` is set.
    """

    learning_rate: float
    total_steps: int
    warmup_steps: int
    final_steps: int
    beta: float
    budget: CompressionBudget
    batch_size: int
    seed: int
    mode: str = "losparse"
    literal_schedule: bool = False
    final_fraction: float | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {', '.join(MODES)}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.beta < 1.0:
            raise ConfigError(f"beta must lie in [0, 1), got {self.beta}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.mode == "itp" and self.budget.lowrank_ratio != 0:
            log.debug("itp mode ignores lowrank_ratio=%s", self.budget.lowrank_ratio)


def layer_ranks(dims, config: TrainConfig) -> list[int]:
    """Rank per layer: low-rank share for ``losparse``, the whole budget for low-rank-only modes."""
    if config.mode == "itp":
        return [0] * (len(dims) - 1)
    fraction = config.budget.lowrank_ratio if config.mode == "losparse" else config.budget.total_ratio
    return [dec.rank_from_budget(d1, d2, fraction) for d1, d2 in zip(dims, dims[1:])]


def resolve_schedule(dims, config: TrainConfig) -> PruneSchedule:
    if config.final_fraction is not None:
        p_final = config.final_fraction
    elif config.mode in ("lowrank_only_finetune", "lowrank_only_pruneaway"):
        p_final = 0.0
    else:
        shapes = list(zip(dims, dims[1:]))
        original = sum(d1 * d2 for d1, d2 in shapes)
        lowrank = sum(r * (d1 + d2) for r, (d1, d2) in zip(layer_ranks(dims, config), shapes))
        p_final = (config.budget.total_ratio * original - lowrank) / original
        if p_final <= 0:
            raise ConfigError(
                f"low-rank factors use {lowrank / original:.4f} of the weights, "
                f"leaving nothing of total_ratio={config.budget.total_ratio} for sparse columns"
            )
    return PruneSchedule(config.total_steps, config.warmup_steps, config.final_steps,
                         min(p_final, 1.0), literal=config.literal_schedule)


def compress_init(model: ToyModel, config: TrainConfig) -> ToyModel:
    """Swap each dense weight for the representation ``config.mode`` trains."""
    ranks = layer_ranks(model.dims, config)
    layers = []
    for layer, r in zip(model.layers, ranks):
        w = _effective_weight(layer)
        if config.mode == "itp":
            layers.append(DenseLayer(w.copy()))
            continue
        fl = dec.init_from_pretrained(w, r)
        if config.mode == "lowrank_only_finetune":
            fl.S[:] = 0.0
            fl.live_columns[:] = False
        layers.append(fl)
    return ToyModel(layers, [b.copy() for b in model.biases])


class TraceRow(NamedTuple):
    step: int
    loss: float
    p_t: float
    remaining_ratio: float
    live_columns: tuple


@dataclass
class MetricsTrace:
    rows: list = field(default_factory=list)
    schedule: PruneSchedule | None = None
    final_scores: list = field(default_factory=list)

    def column(self, name):
        return [getattr(r, name) for r in self.rows]


def train_compress(model: ToyModel, data: Dataset, config: TrainConfig):
    """Compress a pretrained dense model while fine-tuning on ``data``.

    Each step: forward and backward on one minibatch; score the current
    prunable matrices with smoothed ``|w * grad|``; take an SGD step on
    every parameter; then keep only the globally top-``p_t`` columns of the
    updated prunable matrices. In ``lowrank_only_finetune`` mode ``S`` is
    frozen at zero and nothing is pruned.

    Returns ``(compressed model, MetricsTrace)``.

    Raises:
        TrainingError: if the minibatch loss stops being finite.
    """
    schedule = resolve_schedule(model.dims, config)
    model = compress_init(model, config)
    original = model.original_param_count
    states = [ImportanceState.zeros(layer.shape, config.beta) for layer in model.layers]
    batches = BatchStream(len(data), config.batch_size, config.seed, _COMPRESS_STREAM)
    trace = MetricsTrace(schedule=schedule)
    frozen_sparse = config.mode == "lowrank_only_finetune"
    lr = config.learning_rate
    scores = [np.zeros(layer.shape[1]) for layer in model.layers]

    for step in range(1, config.total_steps + 1):
        idx = batches.next()
        pred, cache = model_forward(model, data.x[idx])
        loss, dout = mse_loss(pred, data.y[idx])
        _check_loss(loss, step)
        grads, bias_grads = model_backward(model, cache, dout)

        prunable_key = "W" if config.mode == "itp" else "S"
        for i, layer in enumerate(model.layers):
            g = grads[i][prunable_key]
            states[i] = ema_update(states[i], instant_sensitivity(layer.prunable, g))
            scores[i] = neuron_scores(states[i].smoothed)

        for i, layer in enumerate(model.layers):
            g = grads[i]
            if isinstance(layer, FactorizedLayer):
                params = {"U": layer.U, "V": layer.V}
                if not frozen_sparse:
                    params["S"] = layer.S
                new = sgd_step(params, g, lr)
                layer.U, layer.V = new["U"], new["V"]
                layer.S = new.get("S", layer.S)
            else:
                layer.W = layer.W - lr * g["W"]
            model.biases[i] = model.biases[i] - lr * bias_grads[i]

        p_t = remaining_fraction(schedule, step)
        if not frozen_sparse:
            apply_prune(model.layers, select_retained(neuron_refs(scores), p_t))

        trace.rows.append(TraceRow(
            step, loss, p_t, dec.remaining_ratio(model.layers, original),
            tuple(int(np.count_nonzero(layer.live_columns)) for layer in model.layers),
        ))

    trace.final_scores = [s.copy() for s in scores]
    return model, trace
