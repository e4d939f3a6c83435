"""Local objectives, their stochastic gradients, and the label-shard partitioner."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import ParamVector, RngLike, as_generator
from .noise import NoiseSpec, sample_noise_vector


# -- synthetic quadratic ------------------------------------------------------


@dataclass(frozen=True)
class QuadraticObjective:
    """f_i(x, xi) = 0.5 ||x||^2 + <xi, x>, identical on every client.

    The deterministic part is 1-strongly convex and 1-smooth with minimum 0 at
    the origin.
    """

    dim: int
    noise: NoiseSpec = field(default_factory=NoiseSpec)

    mu = 1.0
    smoothness = 1.0

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ValueError("dim must be >= 1")

    def client_grad(self, client: int, x: ParamVector, gen: np.random.Generator) -> ParamVector:
        return quad_stoch_grad(self, x, gen)

    def loss(self, x: ParamVector) -> float:
        return quad_loss(x)

    def full_grad(self, x: ParamVector) -> ParamVector:
        return np.asarray(x, dtype=np.float64).copy()

    def accuracy(self, x: ParamVector) -> float:
        return math.nan


def quad_stoch_grad(obj: QuadraticObjective, x: ParamVector, rng: RngLike) -> ParamVector:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (obj.dim,):
        raise ValueError(f"dimension mismatch: x has {x.size} entries, objective has dim {obj.dim}")
    if obj.noise.family == "none":
        return x.copy()
    return x + sample_noise_vector(obj.noise, obj.dim, rng)


def quad_loss(x: ParamVector) -> float:
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * float(np.dot(x, x))


# -- multinomial logistic regression -----------------------------------------


@dataclass(frozen=True, eq=False)
class LogisticObjective:
    """Mean multinomial cross-entropy over a labelled sample set, plus ``l2_reg/2 ||x||^2``.

    The parameter vector is the row-major flattening of a ``(C, F)`` weight
    matrix; there is no separate bias term.
    """

    features: np.ndarray
    labels: np.ndarray
    class_count: int
    l2_reg: float = 0.0

    def __post_init__(self) -> None:
        feats = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if feats.ndim != 2 or labels.shape != (feats.shape[0],):
            raise ValueError("features must be (N, F) with one label per row")
        if labels.size and (labels.min() < 0 or labels.max() >= self.class_count):
            raise ValueError("labels must lie in [0, class_count)")
        if self.l2_reg < 0:
            raise ValueError("l2_reg must be >= 0")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def dim(self) -> int:
        return self.class_count * self.feature_dim

    def predict(self, x: ParamVector, batch: np.ndarray | None = None) -> np.ndarray:
        w = np.asarray(x, dtype=np.float64).reshape(self.class_count, self.feature_dim)
        feats = self.features if batch is None else self.features[batch]
        return np.argmax(feats @ w.T, axis=1)

    def accuracy(self, x: ParamVector, batch: np.ndarray | None = None) -> float:
        labels = self.labels if batch is None else self.labels[batch]
        with np.errstate(all="ignore"):
            return float(np.mean(self.predict(x, batch) == labels))


def logistic_loss_grad(
    obj: LogisticObjective, x: ParamVector, batch: Sequence[int] | np.ndarray | None = None
) -> tuple[float, ParamVector]:
    """Loss and exact gradient over ``batch`` (all samples when ``None``)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (obj.dim,):
        raise ValueError(f"parameter dimension {x.size} != C*F = {obj.dim}")
    if batch is None:
        feats, labels = obj.features, obj.labels
    else:
        idx = np.asarray(batch, dtype=np.int64)
        if idx.size == 0:
            raise ValueError("batch must be non-empty")
        if idx.min() < 0 or idx.max() >= obj.labels.size:
            raise IndexError("batch index out of range")
        feats, labels = obj.features[idx], obj.labels[idx]
    b = labels.size
    if b == 0:
        raise ValueError("batch must be non-empty")
    w = x.reshape(obj.class_count, obj.feature_dim)
    logits = feats @ w.T
    shift = logits.max(axis=1, keepdims=True)
    z = logits - shift
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_probs = z - log_norm
    rows = np.arange(b)
    loss = -float(np.mean(log_probs[rows, labels]))
    probs = np.exp(log_probs)
    probs[rows, labels] -= 1.0
    grad = (probs.T @ feats) / b
    grad = grad.ravel()
    if obj.l2_reg:
        loss += 0.5 * obj.l2_reg * float(np.dot(x, x))
        grad = grad + obj.l2_reg * x
    return loss, grad


@dataclass(frozen=True, eq=False)
class FederatedLogistic:
    """Logistic problem split across clients.

    A client gradient is a minibatch gradient over that client's shard plus an
    optional injected noise vector (to emulate fat-tailed gradient noise).
    ``loss``/``full_grad`` refer to the global objective over all training
    samples; ``accuracy`` uses the held-out set when one is given.
    """

    objective: LogisticObjective
    client_indices: tuple[np.ndarray, ...]
    batch_size: int
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    test: LogisticObjective | None = None

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if any(len(ix) == 0 for ix in self.client_indices):
            raise ValueError("every client needs at least one sample")

    @property
    def dim(self) -> int:
        return self.objective.dim

    def client_grad(self, client: int, x: ParamVector, gen: np.random.Generator) -> ParamVector:
        idx = self.client_indices[client]
        if self.batch_size >= idx.size:
            batch = idx
        else:
            batch = idx[gen.choice(idx.size, size=self.batch_size, replace=False)]
        _, grad = logistic_loss_grad(self.objective, x, batch)
        if self.noise.family != "none":
            grad = grad + sample_noise_vector(self.noise, grad.size, gen)
        return grad

    def loss(self, x: ParamVector) -> float:
        return logistic_loss_grad(self.objective, x)[0]

    def full_grad(self, x: ParamVector) -> ParamVector:
        return logistic_loss_grad(self.objective, x)[1]

    def accuracy(self, x: ParamVector) -> float:
        return (self.test or self.objective).accuracy(x)


def make_blobs(
    class_count: int,
    feature_dim: int,
    samples_per_class: int,
    separation: float,
    rng: RngLike,
) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian blobs: class centres ~ N(0, separation^2 I), unit-variance spread.

    Rows are ordered by class.
    """
    if min(class_count, feature_dim, samples_per_class) < 1:
        raise ValueError("class_count, feature_dim and samples_per_class must be >= 1")
    gen = as_generator(rng)
    centres = gen.normal(0.0, separation, size=(class_count, feature_dim))
    feats = np.repeat(centres, samples_per_class, axis=0)
    feats += gen.normal(size=feats.shape)
    labels = np.repeat(np.arange(class_count), samples_per_class)
    return feats, labels


def load_dataset_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Read ``label,f0,f1,...`` rows (header required)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0].strip() != "label":
            raise ValueError(f"{path}: header must start with 'label'")
        n_feat = len(header) - 1
        labels, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != n_feat + 1:
                raise ValueError(f"{path}:{lineno}: expected {n_feat + 1} columns, got {len(row)}")
            lab = int(row[0])
            if lab < 0:
                raise ValueError(f"{path}:{lineno}: labels must be non-negative")
            labels.append(lab)
            rows.append([float(v) for v in row[1:]])
    if not rows:
        raise ValueError(f"{path}: no samples")
    return np.array(rows, dtype=np.float64), np.array(labels, dtype=np.int64)


# -- label partition ----------------------------------------------------------


@dataclass(frozen=True)
class PartitionSpec:
    m: int
    p: int


def partition_labels(labels: Sequence[int] | np.ndarray, spec: PartitionSpec, rng: RngLike) -> list[np.ndarray]:
    """Split sample indices so that each of ``m`` clients sees exactly ``p`` classes.

    Every class is cut into shards (the last shard absorbs any remainder) and
    the ``m * p`` shard slots are laid out as a randomly permuted class cycle;
    client ``j`` takes slots ``j*p .. j*p + p - 1``.  Because the cycle length
    is ``C >= p``, those ``p`` slots always hold distinct classes, and every
    class appears whenever ``m * p >= C``.
    """
    labels = np.asarray(labels, dtype=np.int64)
    classes = np.unique(labels)
    n_classes = classes.size
    m, p = spec.m, spec.p
    if m < 1 or p < 1:
        raise ValueError("m and p must be >= 1")
    if p > n_classes:
        raise ValueError(f"p={p} exceeds the number of classes {n_classes}")
    n_slots = m * p
    if n_slots < n_classes:
        raise ValueError(f"m*p={n_slots} shards cannot cover {n_classes} classes")
    gen = as_generator(rng)

    order = classes[gen.permutation(n_classes)]
    slot_class = np.resize(order, n_slots)
    shards_of: dict[int, list[np.ndarray]] = {}
    for c in classes:
        members = np.flatnonzero(labels == c)
        members = members[gen.permutation(members.size)]
        count = int(np.sum(slot_class == c))
        if members.size < count:
            raise ValueError(f"class {c} has {members.size} samples, fewer than its {count} shards")
        size = members.size // count
        cuts = [members[k * size:(k + 1) * size] for k in range(count - 1)]
        cuts.append(members[(count - 1) * size:])
        shards_of[int(c)] = [cuts[k] for k in gen.permutation(count)]

    clients = []
    for j in range(m):
        parts = [shards_of[int(c)].pop() for c in slot_class[j * p:(j + 1) * p]]
        clients.append(np.sort(np.concatenate(parts)))
    return clients
