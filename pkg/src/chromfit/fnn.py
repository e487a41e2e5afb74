"""Feed-forward network mapping chromatograms to isotherm parameters.

Plain numpy implementation: layered affine maps with sigmoid or tanh hidden
activations and a sigmoid output layer scaled to the parameter range
(0, 100).  Training is mini-batch gradient descent on an L1 or L2 objective
with optional weight and bias penalties, backpropagated analytically.  The
module also carries the R^2 metric, the hyperparameter grid search, and
k-fold cross-validation.
"""

from __future__ import annotations

import dataclasses
import hashlib
import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import seeds
from .datagen import Dataset, NormStats, Sample, fit_norm, normalize_matrix, weave_real
from .errors import ConfigError, DivergenceError
from .isotherm import IsothermParams

OUTPUT_SCALE = 100.0
# keeps outputs strictly inside (0, 100) when the output node saturates
SIGMOID_CLIP = 1e-12
ACTIVATIONS = ("sigmoid", "tanh")
LOSS_NORMS = ("L1", "L2")
MODEL_FORMAT = "chromfit-fnn"
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class FnnModel:
    """Layer sizes plus per-layer weight matrices and bias vectors.

    ``weights[l]`` has shape (layer_sizes[l+1], layer_sizes[l]) and maps
    activations of layer l to pre-activations of layer l+1.  The final layer
    always applies a sigmoid scaled by ``output_scale``; hidden layers use
    ``activation``.
    """

    layer_sizes: tuple
    activation: str
    weights: list
    biases: list
    output_scale: float = OUTPUT_SCALE
    norm_fingerprint: str | None = None

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if len(self.layer_sizes) < 2:
            raise ConfigError("need at least an input and an output layer")
        if any(s < 1 for s in self.layer_sizes):
            raise ConfigError(f"layer sizes must be positive, got {self.layer_sizes}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(
                f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if len(self.weights) != self.n_layers or len(self.biases) != self.n_layers:
            raise ConfigError("one weight matrix and one bias vector per layer")
        for layer, (w, b) in enumerate(zip(self.weights, self.biases)):
            expected = (self.layer_sizes[layer + 1], self.layer_sizes[layer])
            if w.shape != expected:
                raise ConfigError(
                    f"layer {layer}: weight shape {w.shape}, expected {expected}")
            if b.shape != (self.layer_sizes[layer + 1],):
                raise ConfigError(
                    f"layer {layer}: bias length {b.shape}, expected "
                    f"({self.layer_sizes[layer + 1]},)")
        if not self.output_scale > 0:
            raise ConfigError("output scale must be positive")

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def input_size(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_size(self) -> int:
        return self.layer_sizes[-1]

    @classmethod
    def init(cls, layer_sizes, activation="sigmoid", rng=None) -> "FnnModel":
        """Symmetric uniform init in +-sqrt(6/(fan_in+fan_out)); zero biases."""
        rng = np.random.default_rng(rng)
        sizes = tuple(int(s) for s in layer_sizes)
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, (fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(sizes, activation, weights, biases)

    def copy(self) -> "FnnModel":
        return FnnModel(self.layer_sizes, self.activation,
                        [w.copy() for w in self.weights],
                        [b.copy() for b in self.biases],
                        self.output_scale, self.norm_fingerprint)

    def parameter_count(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)


@dataclass(frozen=True)
class TrainConfig:
    loss_norm: str = "L2"
    alpha_w: float = 0.0
    alpha_b: float = 0.0
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 0.05
    seed: int = 0
    # early stop after this many epochs without validation improvement; None = off
    patience: int | None = None
    optimizer: str = "sgd"

    def __post_init__(self):
        if self.loss_norm not in LOSS_NORMS:
            raise ConfigError(f"loss norm must be one of {LOSS_NORMS}")
        if self.alpha_w < 0 or self.alpha_b < 0:
            raise ConfigError("regularization coefficients must be nonnegative")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning rate must be positive")
        if self.patience is not None and self.patience < 1:
            raise ConfigError("patience must be >= 1 when set")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be sgd or adam, got {self.optimizer!r}")


@dataclass(frozen=True)
class HistoryRow:
    epoch: int
    loss: float
    data_term: float
    train_r2: float
    val_r2: float


@dataclass(frozen=True)
class TrainResult:
    model: FnnModel
    history: list
    best_epoch: int
    stopped_early: bool


@dataclass(frozen=True)
class CvReport:
    train_r2: tuple
    val_r2: tuple

    def __post_init__(self):
        if len(self.train_r2) != len(self.val_r2) or not self.val_r2:
            raise ConfigError("report needs one train and one validation score per fold")

    @property
    def k(self) -> int:
        return len(self.val_r2)

    @property
    def average_r2(self) -> float:
        return float(np.mean(self.val_r2))


def _activate(z, name):
    if name == "sigmoid":
        return expit(z)
    return np.tanh(z)


def _activation_grad(a, name):
    # slope expressed through the activation value itself
    if name == "sigmoid":
        return a * (1.0 - a)
    return 1.0 - a * a


def _forward_pass(model: FnnModel, x):
    """All layer activations for a (n, input_size) batch, input included."""
    activations = [x]
    a = x
    last = model.n_layers - 1
    for layer, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w.T + b
        if layer == last:
            s = np.clip(expit(z), SIGMOID_CLIP, 1.0 - SIGMOID_CLIP)
            a = model.output_scale * s
        else:
            a = _activate(z, model.activation)
        activations.append(a)
    return activations


def forward(model: FnnModel, x):
    """Evaluate the network on one feature vector or a stacked batch."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    if batch.ndim != 2 or batch.shape[1] != model.input_size:
        raise ConfigError(
            f"expected feature length {model.input_size}, got shape {x.shape}")
    out = _forward_pass(model, batch)[-1]
    return out[0] if single else out


def _as_batch(model: FnnModel, x, y):
    batch_x = np.asarray(x, dtype=float)
    batch_y = np.asarray(y, dtype=float)
    if batch_x.ndim == 1:
        batch_x = batch_x[None, :]
    if batch_y.ndim == 1:
        batch_y = batch_y[None, :]
    if batch_x.ndim != 2 or batch_y.ndim != 2:
        raise ConfigError("features and targets must be vectors or matrices")
    if batch_x.shape[0] != batch_y.shape[0]:
        raise ConfigError(
            f"feature rows {batch_x.shape[0]} do not match target rows "
            f"{batch_y.shape[0]}")
    if batch_x.shape[0] == 0:
        raise ConfigError("batch is empty")
    if batch_x.shape[1] != model.input_size:
        raise ConfigError(
            f"expected feature length {model.input_size}, got {batch_x.shape[1]}")
    if batch_y.shape[1] != model.output_size:
        raise ConfigError(
            f"expected target length {model.output_size}, got {batch_y.shape[1]}")
    return batch_x, batch_y


def _data_term(pred, y, norm):
    err = pred - y
    if norm == "L2":
        return float(np.mean(err * err))
    return float(np.mean(np.abs(err)))


def _penalty(model: FnnModel, cfg: TrainConfig) -> float:
    if cfg.alpha_w == 0.0 and cfg.alpha_b == 0.0:
        return 0.0
    power = 2 if cfg.loss_norm == "L2" else 1
    w_sum = sum(float(np.sum(np.abs(w) ** power)) for w in model.weights)
    b_sum = sum(float(np.sum(np.abs(b) ** power)) for b in model.biases)
    return cfg.alpha_w * w_sum + cfg.alpha_b * b_sum


def loss(model: FnnModel, x, y, cfg: TrainConfig) -> float:
    """Penalized objective: mean-p-norm data term plus parameter penalties.

    The data term averages |prediction - target|^p over the output entries
    and over the batch; the penalties are plain sums alpha_w * sum|w|^p and
    alpha_b * sum|b|^p in the matching norm.
    """
    batch_x, batch_y = _as_batch(model, x, y)
    pred = _forward_pass(model, batch_x)[-1]
    return _data_term(pred, batch_y, cfg.loss_norm) + _penalty(model, cfg)


def gradients(model: FnnModel, x, y, cfg: TrainConfig):
    """Analytic partials of `loss` for every weight matrix and bias vector.

    The L1 subgradient at zero is taken as 0, keeping dead parameters dead.
    Returns (weight gradients, bias gradients) in layer order.
    """
    batch_x, batch_y = _as_batch(model, x, y)
    activations = _forward_pass(model, batch_x)
    pred = activations[-1]
    n, m = pred.shape
    err = pred - batch_y
    if cfg.loss_norm == "L2":
        dl_dpred = 2.0 * err / (n * m)
    else:
        dl_dpred = np.sign(err) / (n * m)
    # output node is scale * sigmoid(z); express the slope through s = pred/scale
    s = pred / model.output_scale
    delta = dl_dpred * model.output_scale * s * (1.0 - s)
    power = 2 if cfg.loss_norm == "L2" else 1
    grad_w = [None] * model.n_layers
    grad_b = [None] * model.n_layers
    for layer in range(model.n_layers - 1, -1, -1):
        grad_w[layer] = delta.T @ activations[layer]
        grad_b[layer] = delta.sum(axis=0)
        if power == 2:
            grad_w[layer] += 2.0 * cfg.alpha_w * model.weights[layer]
            grad_b[layer] += 2.0 * cfg.alpha_b * model.biases[layer]
        else:
            grad_w[layer] += cfg.alpha_w * np.sign(model.weights[layer])
            grad_b[layer] += cfg.alpha_b * np.sign(model.biases[layer])
        if layer > 0:
            delta = (delta @ model.weights[layer]) * _activation_grad(
                activations[layer], model.activation)
    return grad_w, grad_b


def r_squared(predictions, targets) -> float:
    """1 minus residual energy over target-variance energy.

    Both energies use the mean square across the entries of each target
    vector, summed over samples; the reference predictor is the target mean
    vector, which scores exactly 0.
    """
    pred = np.asarray(predictions, dtype=float)
    y = np.asarray(targets, dtype=float)
    if pred.ndim == 1:
        pred = pred[:, None]
    if y.ndim == 1:
        y = y[:, None]
    if pred.shape != y.shape:
        raise ConfigError(f"shape mismatch: {pred.shape} vs {y.shape}")
    if y.shape[0] < 2:
        raise ConfigError("need at least 2 samples")
    numerator = float(np.mean((pred - y) ** 2, axis=1).sum())
    denominator = float(np.mean((y.mean(axis=0) - y) ** 2, axis=1).sum())
    if denominator == 0.0:
        raise ConfigError("targets are all identical")
    return 1.0 - numerator / denominator


def r_squared_per_entry(predictions, targets) -> np.ndarray:
    """Column-wise R^2, one score per target entry."""
    pred = np.asarray(predictions, dtype=float)
    y = np.asarray(targets, dtype=float)
    if pred.shape != y.shape or pred.ndim != 2:
        raise ConfigError(f"need matching matrices, got {pred.shape} vs {y.shape}")
    if y.shape[0] < 2:
        raise ConfigError("need at least 2 samples")
    numerator = ((pred - y) ** 2).sum(axis=0)
    denominator = ((y - y.mean(axis=0)) ** 2).sum(axis=0)
    if np.any(denominator == 0.0):
        raise ConfigError("a target entry is constant across samples")
    return 1.0 - numerator / denominator


def _canonical_order(x, y):
    # content-addressed sort: the seeded shuffle then ignores input ordering
    digests = [hashlib.sha256(x[i].tobytes() + y[i].tobytes()).digest()
               for i in range(x.shape[0])]
    return np.array(sorted(range(len(digests)), key=digests.__getitem__), dtype=int)


class _Adam:
    """Adaptive moment estimation state, opt-in for desk-scale runs."""

    def __init__(self, model: FnnModel):
        self.mw = [np.zeros_like(w) for w in model.weights]
        self.vw = [np.zeros_like(w) for w in model.weights]
        self.mb = [np.zeros_like(b) for b in model.biases]
        self.vb = [np.zeros_like(b) for b in model.biases]
        self.t = 0

    def step(self, model, grad_w, grad_b, lr):
        self.t += 1
        c1 = 1.0 - ADAM_BETA1 ** self.t
        c2 = 1.0 - ADAM_BETA2 ** self.t
        params = itertools.chain(zip(self.mw, self.vw, model.weights, grad_w),
                                 zip(self.mb, self.vb, model.biases, grad_b))
        for m, v, p, g in params:
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)


def train(model: FnnModel, train_data, val_data, cfg: TrainConfig) -> TrainResult:
    """Mini-batch training; returns the best-validation snapshot and history.

    `train_data` and `val_data` are (features, targets) pairs, already
    normalized.  Sample order is canonicalized by content digest before the
    seeded shuffle, so permuting the input rows changes nothing.  The
    snapshot with the lowest validation data term is returned; with
    `patience` set, training stops after that many epochs without
    improvement.
    """
    x, y = _as_batch(model, *train_data)
    x_val, y_val = _as_batch(model, *val_data)
    order = _canonical_order(x, y)
    x, y = x[order], y[order]
    model = model.copy()
    shuffle_rng = seeds.stream(cfg.seed, "shuffle")
    optimizer = _Adam(model) if cfg.optimizer == "adam" else None
    best = model.copy()
    best_val = math.inf
    best_epoch = 0
    stale = 0
    history = []
    n = x.shape[0]
    for epoch in range(1, cfg.epochs + 1):
        perm = shuffle_rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            grad_w, grad_b = gradients(model, x[idx], y[idx], cfg)
            if optimizer is not None:
                optimizer.step(model, grad_w, grad_b, cfg.learning_rate)
            else:
                for w, g in zip(model.weights, grad_w):
                    w -= cfg.learning_rate * g
                for b, g in zip(model.biases, grad_b):
                    b -= cfg.learning_rate * g
        pred = forward(model, x)
        pred_val = forward(model, x_val)
        data = _data_term(pred, y, cfg.loss_norm)
        total = data + _penalty(model, cfg)
        if not math.isfinite(total):
            raise DivergenceError(f"non-finite loss at epoch {epoch}", epoch=epoch)
        val_data_term = _data_term(pred_val, y_val, cfg.loss_norm)
        history.append(HistoryRow(epoch, total, data,
                                  r_squared(pred, y), r_squared(pred_val, y_val)))
        if val_data_term < best_val:
            best_val = val_data_term
            best = model.copy()
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if cfg.patience is not None and stale >= cfg.patience:
                break
    return TrainResult(model=best, history=history, best_epoch=best_epoch,
                       stopped_early=len(history) < cfg.epochs)


@dataclass(frozen=True)
class GridSpace:
    """Candidate lists; the defaults span the 4x2x2x2x2 = 64 combinations."""

    hidden_structures: tuple = ((112,), (256,), (140, 112), (140, 112, 84))
    loss_norms: tuple = ("L1", "L2")
    activations: tuple = ("sigmoid", "tanh")
    alpha_bs: tuple = (0.01, 0.001)
    alpha_ws: tuple = (0.01, 0.001)

    def __post_init__(self):
        for name in ("hidden_structures", "loss_norms", "activations",
                     "alpha_bs", "alpha_ws"):
            if not getattr(self, name):
                raise ConfigError(f"candidate list {name} is empty")

    def combinations(self) -> list:
        return list(itertools.product(self.hidden_structures, self.loss_norms,
                                      self.activations, self.alpha_bs,
                                      self.alpha_ws))


@dataclass(frozen=True)
class GridRow:
    hidden_structure: tuple
    loss_norm: str
    activation: str
    alpha_b: float
    alpha_w: float
    train_r2: float
    val_r2: float


def _rank_key(indexed_row):
    index, row = indexed_row
    return (-row.val_r2, -row.train_r2, index)


def grid_search(space: GridSpace, train_data, val_data,
                base_cfg: TrainConfig) -> list:
    """Train every candidate combination; report the top 2 per structure.

    Rows are ranked by validation R^2 descending, ties broken by train R^2
    then by declaration order of the combination.
    """
    x, y = train_data
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    rows = []
    for index, (hidden, norm, act, a_b, a_w) in enumerate(space.combinations()):
        cfg = dataclasses.replace(base_cfg, loss_norm=norm,
                                  alpha_b=a_b, alpha_w=a_w)
        model = FnnModel.init((x.shape[1], *hidden, y.shape[1]), act,
                              seeds.stream(base_cfg.seed, "init", index))
        result = train(model, train_data, val_data, cfg)
        pred = forward(result.model, x)
        pred_val = forward(result.model, np.asarray(val_data[0], dtype=float))
        rows.append((index, GridRow(tuple(hidden), norm, act, a_b, a_w,
                                    r_squared(pred, y),
                                    r_squared(pred_val, val_data[1]))))
    selected = []
    for hidden in space.hidden_structures:
        group = [item for item in rows if item[1].hidden_structure == tuple(hidden)]
        group.sort(key=_rank_key)
        selected.extend(group[:2])
    selected.sort(key=_rank_key)
    return [row for _, row in selected]


def cross_validate(dataset: Dataset, cfg: TrainConfig, hidden_layers,
                   activation: str = "sigmoid", k: int = 5,
                   real_samples=None, real_duplication_ratio: int = 10) -> CvReport:
    """k-fold assessment with fold-local normalization.

    The samples are randomly divided into k near-equal folds; each fold
    serves once as validation while the rest train a fresh model.  Real
    samples, when given, are woven into both sides of every fold the same
    way as in the single split: three to training, two to validation,
    duplicated to the 1:ratio proportion.
    """
    if k < 2:
        raise ConfigError("fold count must be >= 2")
    samples = list(dataset.samples)
    if len(samples) < k:
        raise ConfigError(f"dataset of {len(samples)} cannot form {k} folds")
    if any(s.target is None for s in samples):
        raise ConfigError("all samples need targets for cross-validation")
    rng = seeds.stream(cfg.seed, "folds")
    folds = np.array_split(rng.permutation(len(samples)), k)
    train_scores, val_scores = [], []
    for fold_index, fold in enumerate(folds):
        held_out = np.zeros(len(samples), dtype=bool)
        held_out[fold] = True
        fold_train = [samples[i] for i in np.flatnonzero(~held_out)]
        fold_val = [samples[i] for i in np.flatnonzero(held_out)]
        if real_samples:
            weave_real(fold_train, fold_val, list(real_samples),
                       real_duplication_ratio)
        stats = fit_norm(fold_train)
        x = normalize_matrix(np.stack([s.features() for s in fold_train]), stats)
        y = np.stack([s.target.as_array() for s in fold_train])
        x_val = normalize_matrix(np.stack([s.features() for s in fold_val]), stats)
        y_val = np.stack([s.target.as_array() for s in fold_val])
        model = FnnModel.init((x.shape[1], *hidden_layers, y.shape[1]), activation,
                              seeds.stream(cfg.seed, "init", fold_index))
        result = train(model, (x, y), (x_val, y_val), cfg)
        train_scores.append(r_squared(forward(result.model, x), y))
        val_scores.append(r_squared(forward(result.model, x_val), y_val))
    return CvReport(tuple(train_scores), tuple(val_scores))


def predict(model: FnnModel, stats: NormStats, sample: Sample) -> IsothermParams:
    """Normalize a raw sample and map it to an isotherm-parameter estimate."""
    if stats is None:
        raise ConfigError("prediction needs the model's normalization statistics")
    if (model.norm_fingerprint is not None
            and model.norm_fingerprint != stats.fingerprint()):
        raise ConfigError("normalization statistics do not match the model")
    features = sample.features()
    if features.shape[0] != model.input_size:
        raise ConfigError(
            f"sample has {features.shape[0]} features, model expects "
            f"{model.input_size}")
    estimate = forward(model, normalize_matrix(features, stats))
    return IsothermParams.from_array(estimate)


def weight_percentiles(model: FnnModel,
                       quantiles=(0, 5, 25, 50, 75, 95, 100)) -> list:
    """Per-layer weight-distribution summary rows (layer, quantile, value)."""
    rows = []
    for layer, w in enumerate(model.weights):
        for q, value in zip(quantiles, np.percentile(w, quantiles)):
            rows.append((layer, float(q), float(value)))
    return rows


def write_model(path, model: FnnModel) -> None:
    payload = {
        "format": MODEL_FORMAT,
        "version": 1,
        "layer_sizes": list(model.layer_sizes),
        "activation": model.activation,
        "output_scale": model.output_scale,
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "norm_fingerprint": model.norm_fingerprint,
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def read_model(path) -> FnnModel:
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != MODEL_FORMAT:
        raise ConfigError(f"{path} is not a model file")
    return FnnModel(tuple(payload["layer_sizes"]), payload["activation"],
                    [np.asarray(w, dtype=float) for w in payload["weights"]],
                    [np.asarray(b, dtype=float) for b in payload["biases"]],
                    float(payload["output_scale"]),
                    payload.get("norm_fingerprint"))


def write_history(path, history) -> None:
    lines = ["epoch,loss,data_term,train_r2,val_r2"]
    for row in history:
        lines.append(f"{row.epoch},{row.loss:.12g},{row.data_term:.12g},"
                     f"{row.train_r2:.12g},{row.val_r2:.12g}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_grid_report(path, rows) -> None:
    lines = ["hidden_structure,loss_norm,activation,alpha_b,alpha_w,train_r2,val_r2"]
    for row in rows:
        structure = "x".join(str(s) for s in row.hidden_structure)
        lines.append(f"{structure},{row.loss_norm},{row.activation},"
                     f"{row.alpha_b:.12g},{row.alpha_w:.12g},"
                     f"{row.train_r2:.12g},{row.val_r2:.12g}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_cv_report(path, report: CvReport) -> None:
    lines = ["fold,train_r2,val_r2"]
    for fold, (tr, vr) in enumerate(zip(report.train_r2, report.val_r2), start=1):
        lines.append(f"{fold},{tr:.12g},{vr:.12g}")
    lines.append(f"average,,{report.average_r2:.12g}")
    Path(path).write_text("\n".join(lines) + "\n")
