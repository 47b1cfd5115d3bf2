"""Pair descriptors and a logistic pair classifier.

Two descriptors are supported: the Siamese squared difference of the
L2-normalized embeddings, and the five-way combination

    x1 + x2 | x1 - x2 | x1 * x2 | ssqrt(x1) + ssqrt(x2) | x1**2 + x2**2

optionally computed for two embedding sources and concatenated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .embedding import as_vector, l2_normalize, squared_difference
from .errors import DimensionMismatch, EmptyInput, SingleClass

DESCRIPTORS = ("siamese", "fused")


def signed_sqrt(v) -> np.ndarray:
    x = np.asarray(v, dtype=np.float64)
    return np.sign(x) * np.sqrt(np.abs(x))


def fuse_pair(x1, x2) -> np.ndarray:
    a, b = as_vector(x1), as_vector(x2)
    if a.shape != b.shape:
        raise DimensionMismatch(f"dimension {a.shape[0]} vs {b.shape[0]}")
    return np.concatenate([
        a + b,
        a - b,
        a * b,
        signed_sqrt(a) + signed_sqrt(b),
        a * a + b * b,
    ])


def fuse_pair_joint(x1_a, x2_a, x1_b, x2_b) -> np.ndarray:
    """Fused features of source A followed by those of source B."""
    return np.concatenate([fuse_pair(x1_a, x2_a), fuse_pair(x1_b, x2_b)])


def siamese_descriptor(x1, x2) -> np.ndarray:
    return squared_difference(l2_normalize(as_vector(x1)), l2_normalize(as_vector(x2)))


def pair_descriptor(kind: str, x1, x2, x1_b=None, x2_b=None) -> np.ndarray:
    """Descriptor of one pair; ``x1_b``/``x2_b`` add a second source.

    With a second source the Siamese descriptors of both are concatenated,
    like the fused ones.
    """
    if kind not in DESCRIPTORS:
        raise ValueError(f"descriptor must be one of {DESCRIPTORS}, got {kind!r}")
    joint = x1_b is not None
    if kind == "fused":
        return fuse_pair_joint(x1, x2, x1_b, x2_b) if joint else fuse_pair(x1, x2)
    out = siamese_descriptor(x1, x2)
    if joint:
        out = np.concatenate([out, siamese_descriptor(x1_b, x2_b)])
    return out


@dataclass(frozen=True, eq=False)
class PairClassifier:
    weights: np.ndarray
    bias: float = 0.0

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64).reshape(-1)
        if not (np.all(np.isfinite(w)) and math.isfinite(self.bias)):
            raise ValueError("classifier parameters must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", float(self.bias))


def sigmoid(t):
    t = np.asarray(t, dtype=np.float64)
    # split by sign so exp never overflows
    pos = t >= 0
    out = np.empty_like(t)
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def classify_pair(clf: PairClassifier, feature) -> float:
    f = as_vector(feature)
    if f.shape != clf.weights.shape:
        raise DimensionMismatch(f"feature length {f.shape[0]}, classifier expects {clf.weights.shape[0]}")
    return float(sigmoid(float(clf.weights @ f) + clf.bias))


def train_pair_classifier(features, labels, cfg) -> PairClassifier:
    """Logistic regression by mini-batch gradient descent on mean binary cross-entropy.

    Uses ``learning_rate``, ``epochs``, ``batch_size``, ``seed`` and
    ``use_momentum`` from ``cfg`` (a :class:`~kinship.metric_head.TrainConfig`).
    Weights start uniform in +-1/sqrt(F); the bias starts at zero.
    """
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if x.shape[0] == 0:
        raise EmptyInput("no training pairs")
    if x.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"{x.shape[0]} features but {y.shape[0]} labels")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    if y.min() == y.max():
        raise SingleClass(f"all {len(y)} labels are {int(y[0])}")

    n, f = x.shape
    rng = np.random.default_rng(cfg.seed)
    bound = 1.0 / math.sqrt(f)
    w = rng.uniform(-bound, bound, size=f)
    b = 0.0
    vw, vb = np.zeros_like(w), 0.0
    mu = 0.9 if cfg.use_momentum else 0.0
    batch = min(cfg.batch_size, n)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            p = sigmoid(x[idx] @ w + b)
            err = (p - y[idx]) / len(idx)
            vw = mu * vw - cfg.learning_rate * (x[idx].T @ err)
            vb = mu * vb - cfg.learning_rate * float(np.sum(err))
            w = w + vw
            b = b + vb
    return PairClassifier(w, b)
