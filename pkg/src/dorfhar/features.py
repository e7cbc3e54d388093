"""Random-kernel encodings and the gesture classifier.

Each directional velocity series is encoded by a fixed bank of random
dilated convolution kernels (two pooled statistics per kernel: max and
proportion of positive outputs).  A trial's encodings are reduced with
an element-wise max across all projections of all antennas, which makes
the trial feature invariant to projection order and to the rotation
ambiguity of the per-antenna fits.  The classifier is a small
fully-connected network trained with label-smoothed cross-entropy and
decoupled weight decay.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import DivergenceError, ValidationError, load_arrays, save_arrays
from .dorf import DorfField

KERNEL_LENGTHS = (7, 9, 11)
_ADAM_BETA1 = 0.9
_ADAM_BETA2 = 0.999
_ADAM_EPS = 1e-8


@dataclass(frozen=True, eq=False)
class KernelBank:
    """A fixed bank of random dilated convolution kernels.

    Weights are stored flat; kernel k occupies
    weights[offsets[k]:offsets[k + 1]].  Dilations are powers of two
    bounded so no kernel's effective length exceeds reference_length.
    """

    lengths: np.ndarray
    weights: np.ndarray
    offsets: np.ndarray
    biases: np.ndarray
    dilations: np.ndarray
    paddings: np.ndarray
    seed: int
    reference_length: int

    @property
    def num_kernels(self) -> int:
        return int(self.lengths.shape[0])

    @property
    def feature_dim(self) -> int:
        return 2 * self.num_kernels

    @property
    def max_effective_length(self) -> int:
        return int(np.max((self.lengths - 1) * self.dilations + 1))


def make_kernels(num_kernels: int, seed: int,
                 reference_length: int = 32) -> KernelBank:
    """Draw a deterministic kernel bank.

    Per kernel: length uniform over {7, 9, 11}, mean-centered standard
    normal weights, bias uniform in [-1, 1), dilation 2**e with e
    uniform over the exponents that keep the effective length within
    reference_length, and a fair-coin padding flag (half the effective
    span or none).
    """
    if num_kernels < 1:
        raise ValidationError("num_kernels must be >= 1")
    if reference_length < max(KERNEL_LENGTHS):
        raise ValidationError(
            f"reference_length must be >= {max(KERNEL_LENGTHS)}")
    rng = np.random.default_rng(seed)
    lengths = np.zeros(num_kernels, dtype=np.int64)
    weights = []
    biases = np.zeros(num_kernels)
    dilations = np.zeros(num_kernels, dtype=np.int64)
    paddings = np.zeros(num_kernels, dtype=np.int64)
    for k in range(num_kernels):
        length = int(rng.choice(KERNEL_LENGTHS))
        w = rng.standard_normal(length)
        w -= w.mean()
        bias = rng.uniform(-1.0, 1.0)
        max_exp = int(np.floor(np.log2((reference_length - 1) / (length - 1))))
        exponent = int(rng.integers(0, max_exp + 1))
        dilation = 2 ** exponent
        pad_on = bool(rng.integers(0, 2))
        lengths[k] = length
        weights.append(w)
        biases[k] = bias
        dilations[k] = dilation
        paddings[k] = ((length - 1) * dilation) // 2 if pad_on else 0
    offsets = np.zeros(num_kernels + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    return KernelBank(lengths=lengths, weights=np.concatenate(weights),
                      offsets=offsets, biases=biases, dilations=dilations,
                      paddings=paddings, seed=seed,
                      reference_length=reference_length)


def _encode_batch(series: np.ndarray, bank: KernelBank) -> np.ndarray:
    """Encode (B, T) series rows to (B, 2 * num_kernels) features.

    Each row is standardized first (zero mean, unit deviation) so the
    features respond to shape rather than scale; rows with zero
    deviation are left as zeros and encode to the bias-only response.
    """
    b, t = series.shape
    if t < bank.max_effective_length:
        raise ValidationError(
            f"series length {t} shorter than the longest effective kernel "
            f"({bank.max_effective_length})")
    mean = series.mean(axis=1, keepdims=True)
    std = series.std(axis=1, keepdims=True)
    series = np.where(std > 0.0, (series - mean) / np.where(std > 0, std, 1.0),
                      0.0)
    out = np.empty((b, bank.feature_dim))
    for k in range(bank.num_kernels):
        w = bank.weights[bank.offsets[k]:bank.offsets[k + 1]]
        dil = int(bank.dilations[k])
        pad = int(bank.paddings[k])
        x = np.pad(series, ((0, 0), (pad, pad))) if pad else series
        out_len = t + 2 * pad - (int(bank.lengths[k]) - 1) * dil
        acc = np.full((b, out_len), bank.biases[k])
        for j, wj in enumerate(w):
            acc += wj * x[:, j * dil:j * dil + out_len]
        out[:, 2 * k] = acc.max(axis=1)
        out[:, 2 * k + 1] = (acc > 0).mean(axis=1)
    return out


def encode_projection(series: np.ndarray, bank: KernelBank) -> np.ndarray:
    """Feature vector (max, positive fraction per kernel) of one series."""
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 1:
        raise ValidationError("series must be 1-D")
    if not np.all(np.isfinite(series)):
        raise ValidationError("series values must be finite")
    return _encode_batch(series[np.newaxis, :], bank)[0]


def pool_projections(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Element-wise max over per-projection feature vectors."""
    if len(vectors) == 0:
        raise ValidationError("cannot pool an empty projection list")
    stacked = np.asarray(vectors, dtype=np.float64)
    if stacked.ndim != 2:
        raise ValidationError("all vectors must share one length")
    return stacked.max(axis=0)


@dataclass(frozen=True, eq=False)
class FeatureSet:
    """Pooled trial feature, optionally with per-projection encodings."""

    pooled: np.ndarray
    per_projection: np.ndarray | None = None


def encode_fields(fields: Sequence[DorfField | np.ndarray], bank: KernelBank,
                  keep_per_projection: bool = False) -> FeatureSet:
    """Encode and pool all directional series of a trial.

    fields are (windows x directions) arrays, one per antenna; their
    projection axes are concatenated before pooling, so every antenna's
    directions compete in the same element-wise max.
    """
    arrays = [f.values if isinstance(f, DorfField) else np.asarray(f)
              for f in fields]
    if not arrays:
        raise ValidationError("need at least one field")
    series = np.concatenate([a.T for a in arrays], axis=0)
    encoded = _encode_batch(np.ascontiguousarray(series, dtype=np.float64),
                            bank)
    return FeatureSet(pooled=encoded.max(axis=0),
                      per_projection=encoded if keep_per_projection else None)


@dataclass(frozen=True)
class TrainConfig:
    """Classifier training settings (decoupled weight decay optimizer)."""

    hidden: tuple[int, int] = (256, 128)
    learning_rate: float = 1e-4
    weight_decay: float = 0.01
    batch_size: int = 64
    label_smoothing: float = 0.1
    max_epochs: int = 2500
    patience: int = 200
    val_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.label_smoothing < 1.0):
            raise ValidationError("label_smoothing must be in [0, 1)")
        if not (0.0 < self.val_fraction < 1.0):
            raise ValidationError("val_fraction must be in (0, 1)")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValidationError("batch_size, max_epochs, patience must be >= 1")
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ValidationError("learning_rate must be > 0, weight_decay >= 0")


@dataclass(frozen=True, eq=False)
class ClassifierModel:
    """Trained network: parameters, class vocabulary, training history."""

    params: tuple[np.ndarray, ...]   # W1, b1, W2, b2, W3, b3
    classes: tuple[int, ...]
    training_log: tuple[tuple[int, float, float], ...]
    best_epoch: int


def _init_params(rng: np.random.Generator, dims: Sequence[int]
                 ) -> list[np.ndarray]:
    params = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        params.append(rng.standard_normal((fan_in, fan_out))
                      * np.sqrt(2.0 / fan_in))
        params.append(np.zeros(fan_out))
    return params


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def _forward(params: Sequence[np.ndarray], x: np.ndarray):
    w1, b1, w2, b2, w3, b3 = params
    z1 = x @ w1 + b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ w2 + b2
    a2 = np.maximum(z2, 0.0)
    logits = a2 @ w3 + b3
    return z1, a1, z2, a2, logits


def _smooth_targets(label_idx: np.ndarray, num_classes: int,
                    smoothing: float) -> np.ndarray:
    targets = np.full((label_idx.shape[0], num_classes),
                      smoothing / num_classes)
    targets[np.arange(label_idx.shape[0]), label_idx] += 1.0 - smoothing
    return targets


def _loss_and_grads(params: Sequence[np.ndarray], x: np.ndarray,
                    targets: np.ndarray):
    """Mean cross-entropy against soft targets, plus parameter gradients."""
    w1, b1, w2, b2, w3, b3 = params
    z1, a1, z2, a2, logits = _forward(params, x)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    batch = x.shape[0]
    value = float(-np.sum(targets * log_probs) / batch)
    dlogits = (np.exp(log_probs) - targets) / batch
    dw3 = a2.T @ dlogits
    db3 = dlogits.sum(axis=0)
    da2 = dlogits @ w3.T
    dz2 = da2 * (z2 > 0)
    dw2 = a1.T @ dz2
    db2 = dz2.sum(axis=0)
    da1 = dz2 @ w2.T
    dz1 = da1 * (z1 > 0)
    dw1 = x.T @ dz1
    db1 = dz1.sum(axis=0)
    return value, [dw1, db1, dw2, db2, dw3, db3]


def _stratified_split(labels_idx: np.ndarray, val_fraction: float,
                      rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    train_idx, val_idx = [], []
    for c in np.unique(labels_idx):
        members = rng.permutation(np.flatnonzero(labels_idx == c))
        n_val = int(np.floor(val_fraction * members.size))
        if members.size >= 2:
            n_val = min(max(n_val, 1), members.size - 1)
        else:
            n_val = 0
        val_idx.extend(members[:n_val])
        train_idx.extend(members[n_val:])
    return (np.array(sorted(train_idx), dtype=np.intp),
            np.array(sorted(val_idx), dtype=np.intp))


def train_classifier(features: np.ndarray, labels: np.ndarray,
                     cfg: TrainConfig = TrainConfig()) -> ClassifierModel:
    """Train the network and return the lowest-validation-loss weights.

    A stratified validation split (val_fraction, seeded) drives early
    stopping: training ends after cfg.patience epochs without a new
    best validation loss, or at cfg.max_epochs.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise ValidationError("features must be (n, d) with one label per row")
    if not np.all(np.isfinite(x)):
        raise ValidationError("features must be finite")
    classes = np.unique(y)
    if classes.shape[0] < 2:
        raise ValidationError("need at least two classes")
    label_idx = np.searchsorted(classes, y)
    num_classes = classes.shape[0]

    rng = np.random.default_rng(cfg.seed)
    train_idx, val_idx = _stratified_split(label_idx, cfg.val_fraction, rng)
    x_train, y_train = x[train_idx], label_idx[train_idx]
    x_val = x[val_idx]
    val_targets = _smooth_targets(label_idx[val_idx], num_classes,
                                  cfg.label_smoothing)

    dims = [x.shape[1], cfg.hidden[0], cfg.hidden[1], num_classes]
    params = _init_params(rng, dims)
    first_moment = [np.zeros_like(p) for p in params]
    second_moment = [np.zeros_like(p) for p in params]
    step = 0

    best_val = np.inf
    best_params = [p.copy() for p in params]
    best_epoch = 0
    since_best = 0
    log_rows: list[tuple[int, float, float]] = []
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(x_train.shape[0])
        epoch_loss = 0.0
        for start in range(0, order.size, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            targets = _smooth_targets(y_train[batch], num_classes,
                                      cfg.label_smoothing)
            value, grads = _loss_and_grads(params, x_train[batch], targets)
            if not np.isfinite(value):
                raise DivergenceError("training loss became non-finite")
            epoch_loss += value * batch.size
            step += 1
            for i, (p, g) in enumerate(zip(params, grads)):
                first_moment[i] = (_ADAM_BETA1 * first_moment[i]
                                   + (1 - _ADAM_BETA1) * g)
                second_moment[i] = (_ADAM_BETA2 * second_moment[i]
                                    + (1 - _ADAM_BETA2) * g * g)
                m_hat = first_moment[i] / (1 - _ADAM_BETA1 ** step)
                v_hat = second_moment[i] / (1 - _ADAM_BETA2 ** step)
                p -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + _ADAM_EPS)
                if p.ndim == 2:  # decay weights, not biases (decoupled)
                    p -= cfg.learning_rate * cfg.weight_decay * p
        train_loss = epoch_loss / x_train.shape[0]
        if x_val.shape[0]:
            val_loss, _ = _loss_and_grads(params, x_val, val_targets)
        else:
            val_loss = train_loss
        log_rows.append((epoch, train_loss, float(val_loss)))
        if val_loss < best_val:
            best_val = val_loss
            best_params = [p.copy() for p in params]
            best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    return ClassifierModel(params=tuple(best_params),
                           classes=tuple(int(c) for c in classes),
                           training_log=tuple(log_rows),
                           best_epoch=best_epoch)


def predict(model: ClassifierModel, feature: np.ndarray) -> np.ndarray:
    """Class probabilities for one feature vector (or a batch)."""
    x = np.asarray(feature, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[np.newaxis, :]
    if x.ndim != 2 or x.shape[1] != model.params[0].shape[0]:
        raise ValidationError(
            f"feature width {x.shape[-1]} does not match model input "
            f"({model.params[0].shape[0]})")
    probs = _softmax(_forward(model.params, x)[-1])
    return probs[0] if squeeze else probs


def save_classifier(model: ClassifierModel, path: str | Path) -> None:
    arrays = {f"param{i}": p for i, p in enumerate(model.params)}
    arrays["classes"] = np.asarray(model.classes, dtype=np.int64)
    arrays["training_log"] = np.asarray(model.training_log, dtype=np.float64)
    save_arrays(path, "classifier-model", {"best_epoch": model.best_epoch},
                arrays)


def load_classifier(path: str | Path) -> ClassifierModel:
    meta, arrays = load_arrays(path, "classifier-model")
    params = tuple(arrays[f"param{i}"] for i in range(6))
    log_arr = arrays["training_log"]
    return ClassifierModel(
        params=params,
        classes=tuple(int(c) for c in arrays["classes"]),
        training_log=tuple((int(r[0]), float(r[1]), float(r[2]))
                           for r in log_arr),
        best_epoch=int(meta.get("best_epoch", 0)))


def write_training_log_csv(model: ClassifierModel, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for epoch, train_loss, val_loss in model.training_log:
            writer.writerow([epoch, repr(train_loss), repr(val_loss)])
