"""Embedding vectors and the similarity primitives every pipeline builds on.

All functions accept either an :class:`Embedding` or any 1-D array-like and
compute in float64. Functions that return a vector hand back the same kind
they were given (``l2_normalize`` on an ``Embedding`` returns an ``Embedding``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping

import numpy as np

from .errors import (
    DimensionMismatch,
    DuplicateId,
    EmptyInput,
    NonFiniteValue,
    UnknownImageId,
    ZeroVector,
)

ZERO_NORM = 1e-12


@dataclass(frozen=True, eq=False)
class Embedding:
    """A face descriptor: an image identifier plus a finite float64 vector."""

    image_id: str
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not self.image_id:
            raise ValueError("image_id must be non-empty")
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        if values.size < 1:
            raise DimensionMismatch(f"embedding {self.image_id!r} has no components")
        if not np.all(np.isfinite(values)):
            raise NonFiniteValue(f"embedding {self.image_id!r} has non-finite components")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __len__(self):
        return self.dim


def as_vector(v) -> np.ndarray:
    if isinstance(v, Embedding):
        return v.values
    return np.asarray(v, dtype=np.float64).reshape(-1)


def _check_same_dim(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise DimensionMismatch(f"dimension {a.shape[0]} vs {b.shape[0]}")


def _rewrap(template, values: np.ndarray):
    if isinstance(template, Embedding):
        return Embedding(template.image_id, values)
    return values


def l2_normalize(v):
    """Scale ``v`` to unit Euclidean norm; raises ZeroVector for norms <= 1e-12."""
    x = as_vector(v)
    norm = np.linalg.norm(x)
    if not norm > ZERO_NORM:
        raise ZeroVector(f"norm {norm:.3g} is at or below {ZERO_NORM}")
    return _rewrap(v, x / norm)


def cosine_similarity(a, b) -> float:
    x, y = as_vector(a), as_vector(b)
    _check_same_dim(x, y)
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if not (nx > ZERO_NORM and ny > ZERO_NORM):
        raise ZeroVector("cosine similarity of a zero vector")
    # dot is commutative elementwise and summed in index order, so the
    # result is exactly symmetric; the product of norms is too.
    c = float(np.dot(x, y)) / (nx * ny)
    return min(1.0, max(-1.0, c))


def squared_euclidean(a, b) -> float:
    x, y = as_vector(a), as_vector(b)
    _check_same_dim(x, y)
    diff = x - y
    return float(np.dot(diff, diff))


def squared_difference(a, b):
    """Elementwise ``(a - b)**2``, the Siamese pair descriptor."""
    x, y = as_vector(a), as_vector(b)
    _check_same_dim(x, y)
    return (x - y) ** 2


def normalize_rows(matrix: np.ndarray) -> np.ndarray:
    """Row-wise ``l2_normalize`` of a 2-D array."""
    m = np.asarray(matrix, dtype=np.float64)
    norms = np.linalg.norm(m, axis=1)
    bad = np.flatnonzero(~(norms > ZERO_NORM))
    if bad.size:
        raise ZeroVector(f"row {int(bad[0])} has norm at or below {ZERO_NORM}")
    return m / norms[:, None]


def cosine_matrix(queries: np.ndarray, items: np.ndarray) -> np.ndarray:
    """Cosine similarity of every query row against every item row, clamped."""
    q = normalize_rows(np.atleast_2d(queries))
    g = normalize_rows(np.atleast_2d(items))
    if q.shape[1] != g.shape[1]:
        raise DimensionMismatch(f"dimension {q.shape[1]} vs {g.shape[1]}")
    return np.clip(q @ g.T, -1.0, 1.0)


class EmbeddingStore(Mapping):
    """Read-only map of image id to :class:`Embedding`, all of one dimension."""

    def __init__(self, embeddings: Iterable[Embedding]):
        entries: dict[str, Embedding] = {}
        dim = None
        for emb in embeddings:
            if emb.image_id in entries:
                raise DuplicateId(f"image id {emb.image_id!r} appears twice")
            if dim is None:
                dim = emb.dim
            elif emb.dim != dim:
                raise DimensionMismatch(
                    f"embedding {emb.image_id!r} has dimension {emb.dim}, store has {dim}"
                )
            entries[emb.image_id] = emb
        if dim is None:
            raise EmptyInput("embedding store is empty")
        self._entries = entries
        self.dimension = dim

    @classmethod
    def from_arrays(cls, image_ids, matrix) -> "EmbeddingStore":
        matrix = np.asarray(matrix, dtype=np.float64)
        return cls(Embedding(i, row) for i, row in zip(image_ids, matrix))

    def __getitem__(self, image_id: str) -> Embedding:
        try:
            return self._entries[image_id]
        except KeyError:
            raise UnknownImageId(image_id) from None

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def matrix(self, image_ids) -> np.ndarray:
        """Stack the vectors for ``image_ids`` into an (n, D) array."""
        ids = list(image_ids)
        if not ids:
            return np.empty((0, self.dimension))
        return np.stack([self[i].values for i in ids])

    def map_values(self, fn) -> "EmbeddingStore":
        """A new store with ``fn`` applied to every vector."""
        return EmbeddingStore(Embedding(i, fn(e.values)) for i, e in self._entries.items())
