"""Multiclass logistic regression over disjoint prediction windows.

The classifier has one output per disjoint window plus an explicit no-event
class. Training minimizes mean softmax cross-entropy with an L1 penalty on
the weights (bias unpenalized) by mini-batch gradient descent; the penalty is
applied as a proximal soft-threshold after each step so irrelevant weights
reach exactly zero. The learning rate decays continuously:

    lr(step) = initial_learning_rate * decay_rate ** (step / decay_steps)

At inference the disjoint softmax scores are cumulatively summed to recover
overlapping-horizon probabilities, which are therefore monotone by
construction.

Model files are binary: 8-byte magic ``RNRKLM01``, a little-endian uint32
header length, a UTF-8 JSON header (task, n_classes, n_features, vocab_hash,
hyperparameters, lineage), then the weight matrix and bias as little-endian
float64, C order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError, NumericError
from .features import FeatureMatrix, FeatureVector

N_CLASSES = 6  # five disjoint windows + explicit negative class

MODEL_MAGIC = b"RNRKLM01"


@dataclass(frozen=True)
class HyperParams:
    l1_coefficient: float = 0.0
    initial_learning_rate: float = 0.5
    decay_rate: float = 0.9
    decay_steps: int = 1000
    batch_size: int = 512
    max_epochs: int = 20
    patience: int = 5
    seed: int = 0

    def validate(self) -> None:
        if self.l1_coefficient < 0:
            raise ConfigError("l1_coefficient must be non-negative")
        if self.initial_learning_rate <= 0:
            raise ConfigError("initial_learning_rate must be positive")
        if not (0 < self.decay_rate <= 1):
            raise ConfigError("decay_rate must be in (0, 1]")
        if self.decay_steps <= 0 or self.batch_size <= 0 or self.max_epochs <= 0:
            raise ConfigError("decay_steps, batch_size, max_epochs must be positive")
        if self.patience < 0:
            raise ConfigError("patience must be non-negative")


@dataclass
class ModelParams:
    weights: np.ndarray  # (n_classes, n_features)
    bias: np.ndarray  # (n_classes,)
    vocab_hash: str | None = None

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class PredictionVector:
    """Disjoint-window scores and their cumulative overlapping-horizon sums."""

    window_probs: tuple[float, ...]  # softmax over the n_classes outputs
    horizon_probs: tuple[float, ...]  # cumulative sums, one per horizon


def _check_vector(x: FeatureVector, params: ModelParams) -> None:
    if x.n_features != params.n_features:
        raise DataError(
            f"feature dimension {x.n_features} does not match model {params.n_features}"
        )


def forward(x: FeatureVector, params: ModelParams, vocab_hash: str | None = None) -> PredictionVector:
    """Score a single sparse binary input."""
    _check_vector(x, params)
    if vocab_hash is not None and params.vocab_hash is not None and vocab_hash != params.vocab_hash:
        raise DataError("vocabulary hash does not match the model's vocabulary")
    idx = np.asarray(x.indices, dtype=np.int64)
    logits = params.bias + (params.weights[:, idx].sum(axis=1) if idx.size else 0.0)
    z = np.exp(logits - logits.max())
    s = z / z.sum()
    p = np.minimum(np.cumsum(s[:-1]), 1.0)
    assert abs(float(s.sum()) - 1.0) <= 1e-9
    assert np.all(np.diff(p) >= 0.0) and p[-1] <= 1.0
    return PredictionVector(tuple(float(v) for v in s), tuple(float(v) for v in p))


def _batch_logits(
    weights: np.ndarray,
    bias: np.ndarray,
    indices: np.ndarray,
    indptr: np.ndarray,
    rows: np.ndarray,
) -> np.ndarray:
    """Logits for a batch of sparse binary rows, shape (n_classes, len(rows)).

    Row nonzeros are gathered into one flat slab; per-row sums come from a
    cumulative-sum difference so empty rows are handled exactly.
    """
    starts = indptr[rows]
    ends = indptr[rows + 1]
    sizes = ends - starts
    total = int(sizes.sum())
    if total == 0:
        return np.broadcast_to(bias[:, None], (bias.size, rows.size)).copy()
    flat = np.empty(total, dtype=np.int64)
    pos = 0
    bounds = np.empty(rows.size + 1, dtype=np.int64)
    bounds[0] = 0
    for k in range(rows.size):
        n = sizes[k]
        if n:
            flat[pos : pos + n] = indices[starts[k] : ends[k]]
        pos += n
        bounds[k + 1] = pos
    gathered = weights[:, flat]
    csum = np.concatenate(
        [np.zeros((weights.shape[0], 1)), np.cumsum(gathered, axis=1)], axis=1
    )
    return csum[:, bounds[1:]] - csum[:, bounds[:-1]] + bias[:, None]


def _softmax_columns(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max(axis=0, keepdims=True))
    return z / z.sum(axis=0, keepdims=True)


def _log_softmax_true(logits: np.ndarray, y: np.ndarray) -> np.ndarray:
    m = logits.max(axis=0)
    lse = m + np.log(np.exp(logits - m).sum(axis=0))
    return logits[y, np.arange(y.size)] - lse


def loss(
    params: ModelParams,
    matrix: FeatureMatrix,
    y: np.ndarray,
    l1_coefficient: float = 0.0,
    rows: np.ndarray | None = None,
) -> float:
    """Mean cross-entropy over the batch plus the L1 weight penalty."""
    if rows is None:
        rows = np.arange(len(matrix), dtype=np.int64)
    logits = _batch_logits(params.weights, params.bias, matrix.indices, matrix.indptr, rows)
    ce = -float(np.mean(_log_softmax_true(logits, y[rows])))
    return ce + l1_coefficient * float(np.abs(params.weights).sum())


def loss_and_grad(
    weights: np.ndarray,
    bias: np.ndarray,
    matrix: FeatureMatrix,
    y: np.ndarray,
    rows: np.ndarray,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Unpenalized batch cross-entropy and its analytic gradient."""
    logits = _batch_logits(weights, bias, matrix.indices, matrix.indptr, rows)
    yb = y[rows]
    ce = -float(np.mean(_log_softmax_true(logits, yb)))
    g = _softmax_columns(logits)
    g[yb, np.arange(rows.size)] -= 1.0
    g /= rows.size
    grad_b = g.sum(axis=1)
    grad_w = np.zeros_like(weights)
    starts = matrix.indptr[rows]
    ends = matrix.indptr[rows + 1]
    sizes = (ends - starts).astype(np.int64)
    total = int(sizes.sum())
    if total:
        flat = np.empty(total, dtype=np.int64)
        pos = 0
        for k in range(rows.size):
            n = sizes[k]
            if n:
                flat[pos : pos + n] = matrix.indices[starts[k] : ends[k]]
            pos += n
        expand = np.repeat(np.arange(rows.size), sizes)
        for c in range(weights.shape[0]):
            grad_w[c] = np.bincount(
                flat, weights=g[c, expand], minlength=weights.shape[1]
            )
    return ce, grad_w, grad_b


def _apply_prox(weights: np.ndarray, amount: float) -> np.ndarray:
    return np.sign(weights) * np.maximum(np.abs(weights) - amount, 0.0)


@dataclass
class EpochStats:
    epoch: int
    steps: int
    learning_rate: float
    train_loss: float
    valid_loss: float


@dataclass
class TrainResult:
    params: ModelParams
    log: list[EpochStats]
    best_epoch: int
    best_valid_loss: float


def validation_loss(params: ModelParams, matrix: FeatureMatrix, y: np.ndarray) -> float:
    """Unpenalized cross-entropy used for model selection and early stopping."""
    rows = np.arange(len(matrix), dtype=np.int64)
    if rows.size == 0:
        raise DataError("validation set is empty")
    logits = _batch_logits(params.weights, params.bias, matrix.indices, matrix.indptr, rows)
    return -float(np.mean(_log_softmax_true(logits, y)))


def train(
    train_matrix: FeatureMatrix,
    y_train: np.ndarray,
    valid_matrix: FeatureMatrix,
    y_valid: np.ndarray,
    hp: HyperParams,
    n_classes: int = N_CLASSES,
    vocab_hash: str | None = None,
) -> TrainResult:
    """Mini-batch gradient descent with proximal L1 and early stopping.

    Returns the parameters from the epoch with the best validation
    cross-entropy. Deterministic for a fixed seed: shuffling uses a dedicated
    PCG64 stream and all reductions run in a fixed order.
    """
    hp.validate()
    if len(train_matrix) == 0:
        raise DataError("training set is empty")
    n_features = train_matrix.n_features
    weights = np.zeros((n_classes, n_features))
    bias = np.zeros(n_classes)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(hp.seed)))
    n = len(train_matrix)
    step = 0
    best_valid = np.inf
    best_weights, best_bias, best_epoch = weights.copy(), bias.copy(), -1
    stale = 0
    log: list[EpochStats] = []
    for epoch in range(hp.max_epochs):
        order = rng.permutation(n).astype(np.int64)
        epoch_ce = 0.0
        last_lr = hp.initial_learning_rate
        for lo in range(0, n, hp.batch_size):
            rows = order[lo : lo + hp.batch_size]
            lr = hp.initial_learning_rate * hp.decay_rate ** (step / hp.decay_steps)
            last_lr = lr
            ce, grad_w, grad_b = loss_and_grad(weights, bias, train_matrix, y_train, rows)
            if not np.isfinite(ce):
                raise NumericError(
                    f"non-finite training loss at epoch {epoch} step {step} (lr={lr:g})"
                )
            epoch_ce += ce * rows.size
            weights -= lr * grad_w
            bias -= lr * grad_b
            if hp.l1_coefficient > 0.0:
                weights = _apply_prox(weights, lr * hp.l1_coefficient)
            step += 1
        params = ModelParams(weights, bias, vocab_hash)
        valid_ce = validation_loss(params, valid_matrix, y_valid)
        if not np.isfinite(valid_ce):
            raise NumericError(f"non-finite validation loss at epoch {epoch}")
        log.append(EpochStats(epoch, step, last_lr, epoch_ce / n, valid_ce))
        if valid_ce < best_valid:
            best_valid = valid_ce
            best_weights, best_bias, best_epoch = weights.copy(), bias.copy(), epoch
            stale = 0
        else:
            stale += 1
            if stale >= hp.patience:
                break
    return TrainResult(
        ModelParams(best_weights, best_bias, vocab_hash), log, best_epoch, float(best_valid)
    )


def _hp_sort_key(hp: HyperParams):
    rest = (
        hp.initial_learning_rate,
        hp.decay_rate,
        hp.decay_steps,
        hp.batch_size,
        hp.max_epochs,
        hp.patience,
        hp.seed,
    )
    return (hp.l1_coefficient,) + rest


def tune(
    grid: Sequence[HyperParams],
    train_matrix: FeatureMatrix,
    y_train: np.ndarray,
    valid_matrix: FeatureMatrix,
    y_valid: np.ndarray,
    n_classes: int = N_CLASSES,
    vocab_hash: str | None = None,
) -> tuple[HyperParams, TrainResult, list[tuple[HyperParams, float]]]:
    """Exhaustive grid search minimizing validation cross-entropy.

    Duplicate grid points are evaluated once; ties go to the smaller
    l1_coefficient, then lexicographic order of the remaining fields.
    """
    if not grid:
        raise ConfigError("hyperparameter grid is empty")
    unique = sorted(set(grid), key=_hp_sort_key)
    best: tuple[HyperParams, TrainResult] | None = None
    evaluated = []
    for hp in unique:
        result = train(
            train_matrix, y_train, valid_matrix, y_valid, hp, n_classes, vocab_hash
        )
        evaluated.append((hp, result.best_valid_loss))
        if best is None or result.best_valid_loss < best[1].best_valid_loss:
            best = (hp, result)
    assert best is not None
    return best[0], best[1], evaluated


def predict_matrix(params: ModelParams, matrix: FeatureMatrix, batch: int = 4096):
    """Window and horizon probabilities for every row; shapes (n, C) and (n, C-1)."""
    if matrix.vocab_hash and params.vocab_hash and matrix.vocab_hash != params.vocab_hash:
        raise DataError("feature matrix was built with a different vocabulary than the model")
    if matrix.n_features != params.n_features:
        raise DataError("feature matrix width does not match the model")
    n = len(matrix)
    s_out = np.empty((n, params.n_classes))
    for lo in range(0, n, batch):
        rows = np.arange(lo, min(lo + batch, n), dtype=np.int64)
        logits = _batch_logits(params.weights, params.bias, matrix.indices, matrix.indptr, rows)
        s_out[lo : lo + rows.size] = _softmax_columns(logits).T
    p_out = np.minimum(np.cumsum(s_out[:, :-1], axis=1), 1.0)
    return s_out, p_out


def save_model(
    path: str | Path,
    params: ModelParams,
    hp: HyperParams,
    task: str,
    lineage: dict | None = None,
) -> None:
    header = {
        "format_version": 1,
        "task": task,
        "n_classes": params.n_classes,
        "n_features": params.n_features,
        "vocab_hash": params.vocab_hash,
        "hyperparams": asdict(hp),
        "lineage": lineage or {},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as handle:
        handle.write(MODEL_MAGIC)
        handle.write(struct.pack("<I", len(blob)))
        handle.write(blob)
        handle.write(params.weights.astype("<f8").tobytes(order="C"))
        handle.write(params.bias.astype("<f8").tobytes(order="C"))


def read_model_header(path: str | Path) -> dict:
    with open(path, "rb") as handle:
        magic = handle.read(8)
        if magic != MODEL_MAGIC:
            raise DataError(f"{path}: not a model file (bad magic)")
        (length,) = struct.unpack("<I", handle.read(4))
        return json.loads(handle.read(length).decode("utf-8"))


def load_model(
    path: str | Path, expected_vocab_hash: str | None = None
) -> tuple[ModelParams, HyperParams, dict]:
    with open(path, "rb") as handle:
        magic = handle.read(8)
        if magic != MODEL_MAGIC:
            raise DataError(f"{path}: not a model file (bad magic)")
        (length,) = struct.unpack("<I", handle.read(4))
        header = json.loads(handle.read(length).decode("utf-8"))
        n_classes = header["n_classes"]
        n_features = header["n_features"]
        w = np.frombuffer(handle.read(8 * n_classes * n_features), dtype="<f8")
        b = np.frombuffer(handle.read(8 * n_classes), dtype="<f8")
    if w.size != n_classes * n_features or b.size != n_classes:
        raise DataError(f"{path}: truncated model payload")
    if expected_vocab_hash is not None and header["vocab_hash"] != expected_vocab_hash:
        raise DataError(
            f"{path}: model was trained against a different vocabulary "
            f"(expected {expected_vocab_hash[:12]}..., found "
            f"{str(header['vocab_hash'])[:12]}...)"
        )
    params = ModelParams(
        w.reshape(n_classes, n_features).copy(), b.copy(), header["vocab_hash"]
    )
    hp = HyperParams(**header["hyperparams"])
    return params, hp, header
