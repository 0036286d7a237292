"""Shallow genre tagger: 768 -> 128 ReLU dense -> 5-way softmax.

Trained with class-weighted categorical cross-entropy, Adam (lr 1e-4),
a stratified 90/10 train/validation split, and early stopping on the
validation loss with best-weights restoration. All math is plain numpy;
arithmetic runs in the dtype the parameters carry (float32 by default,
float64 for gradient verification).
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .embedding_store import EMBEDDING_DIM, EmbeddingSet
from .prompt_corpus import N_GENRES, GenreTag

__all__ = [
    "HIDDEN_UNITS",
    "N_CLASSES",
    "TaggerParams",
    "AdamState",
    "TrainConfig",
    "TrainReport",
    "EpochStats",
    "EarlyStopper",
    "LossGrads",
    "TaggerError",
    "TaggerFormatError",
    "TaggerIntegrityError",
    "init_params",
    "init_adam_state",
    "forward",
    "forward_batch",
    "loss_and_grads",
    "adam_step",
    "stratified_split",
    "training_split",
    "compute_class_weights",
    "train",
    "predict",
    "predict_batch",
    "save_params",
    "load_params",
]

HIDDEN_UNITS = 128
N_CLASSES = N_GENRES

PROB_FLOOR = 1e-12
MIN_IMPROVEMENT = 1e-6


class TaggerError(RuntimeError):
    pass


class TaggerFormatError(TaggerError):
    """Checkpoint file does not carry the expected magic or version."""


class TaggerIntegrityError(TaggerError):
    """Checkpoint checksum mismatch."""


@dataclass
class TaggerParams:
    """Dense-layer weights and biases: w1 (H,D), b1 (H,), w2 (C,H), b2 (C,)."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def copy(self) -> "TaggerParams":
        return TaggerParams(
            self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy()
        )

    def tensors(self) -> tuple[np.ndarray, ...]:
        return (self.w1, self.b1, self.w2, self.b2)

    @property
    def dtype(self) -> np.dtype:
        return self.w1.dtype

    def zeros_like(self) -> "TaggerParams":
        return TaggerParams(*(np.zeros_like(t) for t in self.tensors()))


def init_params(
    seed,
    in_dim: int = EMBEDDING_DIM,
    hidden: int = HIDDEN_UNITS,
    classes: int = N_CLASSES,
    dtype=np.float32,
) -> TaggerParams:
    """He-uniform first layer, Glorot-uniform head, zero biases."""
    rng = np.random.default_rng(seed)
    bound1 = np.sqrt(6.0 / in_dim)
    bound2 = np.sqrt(6.0 / (hidden + classes))
    return TaggerParams(
        w1=rng.uniform(-bound1, bound1, size=(hidden, in_dim)).astype(dtype),
        b1=np.zeros(hidden, dtype=dtype),
        w2=rng.uniform(-bound2, bound2, size=(classes, hidden)).astype(dtype),
        b2=np.zeros(classes, dtype=dtype),
    )


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=-1, keepdims=True)
    # Floor keeps every probability strictly positive even where exp
    # underflows, so downstream logs stay finite.
    np.clip(p, PROB_FLOOR, None, out=p)
    return p


def _check_finite(x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input")


def forward_batch(params: TaggerParams, x: np.ndarray) -> np.ndarray:
    """Class probabilities for a batch of row vectors, shape (N, classes)."""
    x = np.asarray(x, dtype=params.dtype)
    _check_finite(x)
    h = np.maximum(x @ params.w1.T + params.b1, 0)
    logits = h @ params.w2.T + params.b2
    return _softmax(logits)


def forward(params: TaggerParams, x: np.ndarray) -> np.ndarray:
    """Class probabilities for a single input vector."""
    return forward_batch(params, np.asarray(x)[None, :])[0]


class LossGrads(NamedTuple):
    loss: float
    grads: TaggerParams
    clamp_count: int  # samples whose true-class probability hit the floor


def loss_and_grads(
    params: TaggerParams,
    x: np.ndarray,
    labels: np.ndarray,
    class_weights: Sequence[float],
) -> LossGrads:
    """Weighted-mean cross-entropy loss and its exact analytic gradients.

    loss = sum_i w[y_i] * (-log p_i[y_i]) / sum_i w[y_i], so scaling all
    class weights by a positive constant changes nothing.
    """
    x = np.atleast_2d(np.asarray(x, dtype=params.dtype))
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    if x.shape[0] != labels.shape[0]:
        raise ValueError("batch size mismatch between inputs and labels")
    weights = np.asarray(class_weights, dtype=params.dtype)
    if np.any(weights <= 0):
        raise ValueError("class weights must be positive")
    _check_finite(x)

    pre1 = x @ params.w1.T + params.b1
    h = np.maximum(pre1, 0)
    logits = h @ params.w2.T + params.b2
    p = _softmax(logits)

    n = x.shape[0]
    sample_w = weights[labels]
    total_w = sample_w.sum()
    p_true = p[np.arange(n), labels]
    clamp_count = int(np.count_nonzero(p_true <= PROB_FLOOR))
    loss = float((sample_w * -np.log(p_true)).sum() / total_w)

    dlogits = p.copy()
    dlogits[np.arange(n), labels] -= 1
    dlogits *= (sample_w / total_w)[:, None]
    dh = dlogits @ params.w2
    dpre1 = dh * (pre1 > 0)
    grads = TaggerParams(
        w1=dpre1.T @ x,
        b1=dpre1.sum(axis=0),
        w2=dlogits.T @ h,
        b2=dlogits.sum(axis=0),
    )
    return LossGrads(loss=loss, grads=grads, clamp_count=clamp_count)


@dataclass
class AdamState:
    """First/second moment estimates plus step count and hyperparameters."""

    m: TaggerParams
    v: TaggerParams
    t: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def init_adam_state(params: TaggerParams, lr: float = 1e-4) -> AdamState:
    return AdamState(m=params.zeros_like(), v=params.zeros_like(), lr=lr)


def adam_step(
    params: TaggerParams, grads: TaggerParams, state: AdamState
) -> tuple[TaggerParams, AdamState]:
    """One bias-corrected Adam update; inputs are left untouched."""
    t = state.t + 1
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(
        params.tensors(), grads.tensors(), state.m.tensors(), state.v.tensors()
    ):
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        step = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
        new_p.append(p - step)
        new_m.append(m)
        new_v.append(v)
    return (
        TaggerParams(*new_p),
        AdamState(
            m=TaggerParams(*new_m),
            v=TaggerParams(*new_v),
            t=t,
            lr=state.lr,
            beta1=state.beta1,
            beta2=state.beta2,
            epsilon=state.epsilon,
        ),
    )


def stratified_split(
    embedding_set: EmbeddingSet, fraction: float, seed
) -> tuple[EmbeddingSet, EmbeddingSet]:
    """Seeded per-class split; round(fraction * n_c) half-up to validation."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must be in (0, 1)")
    counts = embedding_set.class_counts()
    for genre in GenreTag:
        if counts[genre] < 2:
            raise TaggerError(
                f"class {genre.label} has {counts[genre]} records; need >= 2"
            )
    rng = np.random.default_rng(seed)
    val_idx: list[int] = []
    train_idx: list[int] = []
    for genre in GenreTag:
        idx = [
            i for i, rec in enumerate(embedding_set.records) if rec.genre == genre
        ]
        n_val = int(fraction * len(idx) + 0.5)
        idx = np.array(idx)
        rng.shuffle(idx)
        val_idx.extend(idx[:n_val])
        train_idx.extend(idx[n_val:])

    def subset(indices: list[int]) -> EmbeddingSet:
        return EmbeddingSet(
            records=[embedding_set.records[i] for i in sorted(indices)],
            dim=embedding_set.dim,
            source_manifest_checksum=embedding_set.source_manifest_checksum,
        )

    return subset(train_idx), subset(val_idx)


def compute_class_weights(train_set: EmbeddingSet) -> np.ndarray:
    """Balanced scheme: w_c = N_total / (n_classes * N_c)."""
    counts = np.array(train_set.class_counts(), dtype=np.float64)
    if np.any(counts == 0):
        missing = [GenreTag(i).label for i in np.flatnonzero(counts == 0)]
        raise TaggerError(f"classes absent from training data: {', '.join(missing)}")
    return counts.sum() / (N_CLASSES * counts)


def _seed_sequences(rng_seed: int):
    """The three independent streams one training seed fans out into."""
    return np.random.SeedSequence(rng_seed).spawn(3)  # split, init, shuffle


def training_split(
    embedding_set: EmbeddingSet, config: "TrainConfig"
) -> tuple[EmbeddingSet, EmbeddingSet]:
    """The exact train/validation split :func:`train` uses for this config."""
    split_ss, _, _ = _seed_sequences(config.rng_seed)
    return stratified_split(embedding_set, config.validation_fraction, split_ss)


@dataclass
class TrainConfig:
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 5
    validation_fraction: float = 0.10
    class_weights: Sequence[float] | None = None  # None: computed from train split
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation_fraction must be in (0, 1)")
        if self.class_weights is not None:
            weights = np.asarray(self.class_weights, dtype=np.float64)
            if weights.shape != (N_CLASSES,) or np.any(weights <= 0):
                raise ValueError(f"class_weights must be {N_CLASSES} positive reals")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float


@dataclass
class TrainReport:
    epochs: list[EpochStats] = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0
    clamp_events: int = 0

    def to_dict(self) -> dict:
        return {
            "epochs": [
                {
                    "epoch": e.epoch,
                    "train_loss": e.train_loss,
                    "val_loss": e.val_loss,
                    "val_accuracy": e.val_accuracy,
                }
                for e in self.epochs
            ],
            "best_epoch": self.best_epoch,
            "stopped_epoch": self.stopped_epoch,
            "clamp_events": self.clamp_events,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


class EarlyStopper:
    """Stops after `patience` consecutive epochs without real improvement.

    The snapshot always belongs to the minimal validation loss seen, while
    the patience counter only resets on improvements larger than
    ``min_improvement`` so a drifting plateau cannot stall training.
    """

    def __init__(self, patience: int, min_improvement: float = MIN_IMPROVEMENT):
        self.patience = patience
        self.min_improvement = min_improvement
        self.best_loss = float("inf")
        self.best_epoch = 0
        self.best_snapshot: TaggerParams | None = None
        self.reference_loss = float("inf")
        self.wait = 0

    def update(self, epoch: int, val_loss: float, params: TaggerParams) -> bool:
        """Record one epoch; returns True when training should stop."""
        if val_loss < self.best_loss:
            self.best_loss = val_loss
            self.best_epoch = epoch
            self.best_snapshot = params.copy()
        if val_loss < self.reference_loss - self.min_improvement:
            self.reference_loss = val_loss
            self.wait = 0
        else:
            self.wait += 1
        return self.wait >= self.patience


def _validation_metrics(
    params: TaggerParams, x: np.ndarray, labels: np.ndarray
) -> tuple[float, float]:
    """Unweighted mean cross-entropy and accuracy on the validation split."""
    p = forward_batch(params, x)
    p_true = np.maximum(p[np.arange(x.shape[0]), labels], PROB_FLOOR)
    loss = float(np.mean(-np.log(p_true)))
    accuracy = float(np.mean(np.argmax(p, axis=1) == labels))
    return loss, accuracy


def train(
    embedding_set: EmbeddingSet, config: TrainConfig
) -> tuple[TaggerParams, TrainReport]:
    """Full training loop with early stopping and best-weights restoration.

    Deterministic for a given (data, config): one seed drives the split,
    the initialization, and the per-epoch shuffles.
    """
    if len(embedding_set) == 0:
        raise TaggerError("empty training set")
    _, init_ss, shuffle_ss = _seed_sequences(config.rng_seed)
    train_set, val_set = training_split(embedding_set, config)
    if len(val_set) == 0:
        raise TaggerError(
            "validation split is empty; increase validation_fraction or data size"
        )
    if config.class_weights is not None:
        class_weights = np.asarray(config.class_weights, dtype=np.float64)
    else:
        class_weights = compute_class_weights(train_set)

    x_tr, y_tr = train_set.to_arrays()
    x_val, y_val = val_set.to_arrays()
    params = init_params(init_ss, in_dim=embedding_set.dim)
    report = TrainReport()
    if config.max_epochs == 0:
        return params, report

    state = init_adam_state(params)
    stopper = EarlyStopper(config.patience)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    n = x_tr.shape[0]
    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        loss_num = 0.0
        loss_den = 0.0
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            result = loss_and_grads(params, x_tr[batch], y_tr[batch], class_weights)
            params, state = adam_step(params, result.grads, state)
            batch_w = float(class_weights[y_tr[batch]].sum())
            loss_num += result.loss * batch_w
            loss_den += batch_w
            report.clamp_events += result.clamp_count

        val_loss, val_acc = _validation_metrics(params, x_val, y_val)
        report.epochs.append(
            EpochStats(epoch, loss_num / loss_den, val_loss, val_acc)
        )
        report.stopped_epoch = epoch
        if stopper.update(epoch, val_loss, params):
            break

    report.best_epoch = stopper.best_epoch
    best = stopper.best_snapshot if stopper.best_snapshot is not None else params
    return best, report


def predict(params: TaggerParams, x: np.ndarray) -> GenreTag:
    """Most probable genre; ties resolve to the lowest class index."""
    return GenreTag(int(np.argmax(forward(params, x))))


def predict_batch(params: TaggerParams, x: np.ndarray) -> np.ndarray:
    return np.argmax(forward_batch(params, x), axis=1)


_CKPT_MAGIC = b"TAG1"
_CKPT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sHIII")  # magic, version, in_dim, hidden, classes


def save_params(params: TaggerParams, path: str | Path) -> None:
    """Checkpoint as 32-bit little-endian tensors with a CRC32 footer."""
    hidden, in_dim = params.w1.shape
    classes = params.w2.shape[0]
    chunks = [_CKPT_HEADER.pack(_CKPT_MAGIC, _CKPT_VERSION, in_dim, hidden, classes)]
    for tensor in params.tensors():
        chunks.append(tensor.astype("<f4", copy=False).tobytes())
    body = b"".join(chunks)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def load_params(path: str | Path) -> TaggerParams:
    data = Path(path).read_bytes()
    if len(data) < _CKPT_HEADER.size + 4:
        raise TaggerFormatError(f"{path}: file too short")
    body, footer = data[:-4], data[-4:]
    if struct.unpack("<I", footer)[0] != zlib.crc32(body):
        raise TaggerIntegrityError(f"{path}: checksum mismatch")
    magic, version, in_dim, hidden, classes = _CKPT_HEADER.unpack_from(body, 0)
    if magic != _CKPT_MAGIC:
        raise TaggerFormatError(f"{path}: bad magic {magic!r}")
    if version != _CKPT_VERSION:
        raise TaggerFormatError(f"{path}: unsupported version {version}")
    shapes = [(hidden, in_dim), (hidden,), (classes, hidden), (classes,)]
    expected = _CKPT_HEADER.size + 4 * sum(int(np.prod(s)) for s in shapes)
    if len(body) != expected:
        raise TaggerFormatError(f"{path}: body length {len(body)} != {expected}")
    offset = _CKPT_HEADER.size
    tensors = []
    for shape in shapes:
        count = int(np.prod(shape))
        tensors.append(
            np.frombuffer(body, dtype="<f4", count=count, offset=offset)
            .copy()
            .reshape(shape)
        )
        offset += 4 * count
    return TaggerParams(*tensors)
