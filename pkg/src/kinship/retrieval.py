"""Probe-vs-gallery ranking by cosine similarity and MAP evaluation.

A probe subject may carry several images. ``mean`` aggregation scores the
gallery against the renormalized mean of the member unit vectors;
``max_sim`` scores each gallery item by its best cosine against any member.
Rankings sort by descending similarity with ties going to the lower gallery
index, so rank matrices are reproducible bit for bit.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .embedding import EmbeddingStore, normalize_rows
from .errors import DimensionMismatch, EmptyInput, NoRelevant, UnknownImageId, ZeroVector

AGGREGATIONS = ("mean", "max_sim")


@dataclass(frozen=True, eq=False)
class ProbeSubject:
    probe_id: str
    embeddings: np.ndarray  # (k, D), one row per image
    image_ids: tuple = ()

    def __post_init__(self):
        e = np.array(self.embeddings, dtype=np.float64, ndmin=2)
        if e.shape[0] < 1 or e.size == 0:
            raise EmptyInput(f"probe {self.probe_id!r} has no images")
        object.__setattr__(self, "embeddings", e)
        object.__setattr__(self, "image_ids", tuple(self.image_ids))

    @classmethod
    def from_store(cls, probe_id: str, image_ids, store: EmbeddingStore) -> "ProbeSubject":
        ids = tuple(image_ids)
        return cls(probe_id, store.matrix(ids), ids)


@dataclass(frozen=True, eq=False)
class Gallery:
    image_ids: tuple
    embeddings: np.ndarray  # (N, D), row i is gallery index i

    def __post_init__(self):
        e = np.array(self.embeddings, dtype=np.float64, ndmin=2)
        if e.shape[0] < 1 or e.size == 0:
            raise EmptyInput("gallery is empty")
        ids = tuple(self.image_ids)
        if len(ids) != e.shape[0]:
            raise DimensionMismatch(f"{len(ids)} gallery ids but {e.shape[0]} embeddings")
        object.__setattr__(self, "image_ids", ids)
        object.__setattr__(self, "embeddings", e)

    @classmethod
    def from_store(cls, image_ids, store: EmbeddingStore) -> "Gallery":
        ids = tuple(image_ids)
        return cls(ids, store.matrix(ids))

    def __len__(self):
        return len(self.image_ids)


@dataclass(frozen=True, eq=False)
class RankMatrix:
    probe_ids: tuple
    rows: np.ndarray  # (K, N) gallery indices, best first
    similarities: Optional[np.ndarray] = None  # aligned with rows


@dataclass(frozen=True, eq=False)
class ProbeQuery:
    """Aggregated probe: unit query vectors plus how to combine their scores."""

    vectors: np.ndarray
    strategy: str


def aggregate_probe(subject: ProbeSubject, strategy: str = "mean") -> ProbeQuery:
    if strategy not in AGGREGATIONS:
        raise ValueError(f"aggregation must be one of {AGGREGATIONS}, got {strategy!r}")
    members = normalize_rows(subject.embeddings)
    if strategy == "max_sim" or members.shape[0] == 1:
        # a single member is its own mean; skipping the second normalization
        # keeps mean and max_sim bit-identical for one-image probes
        return ProbeQuery(members, strategy)
    mean = members.mean(axis=0, keepdims=True)
    return ProbeQuery(normalize_rows(mean), strategy)


def _gallery_unit(gallery: Gallery) -> np.ndarray:
    return normalize_rows(gallery.embeddings)


def _similarities(query: ProbeQuery, gallery_unit: np.ndarray) -> np.ndarray:
    if query.vectors.shape[1] != gallery_unit.shape[1]:
        raise DimensionMismatch(
            f"probe dimension {query.vectors.shape[1]}, gallery dimension {gallery_unit.shape[1]}"
        )
    sims = np.clip(gallery_unit @ query.vectors.T, -1.0, 1.0)
    return sims.max(axis=1)


def _order(sims: np.ndarray) -> np.ndarray:
    # lexsort: last key is primary
    return np.lexsort((np.arange(sims.size), -sims))


def rank_gallery(subject: ProbeSubject, gallery: Gallery, strategy: str = "mean", _unit=None):
    """Gallery indices best-first, with the similarities in that order."""
    unit = _gallery_unit(gallery) if _unit is None else _unit
    sims = _similarities(aggregate_probe(subject, strategy), unit)
    order = _order(sims)
    return order, sims[order]


def build_rank_matrix(probes: Sequence[ProbeSubject], gallery: Gallery, strategy: str = "mean") -> RankMatrix:
    """One ranked row per probe; K x N."""
    if len(probes) == 0:
        raise EmptyInput("no probes")
    unit = _gallery_unit(gallery)
    rows, sims = [], []
    for probe in probes:
        try:
            order, s = rank_gallery(probe, gallery, strategy, _unit=unit)
        except (DimensionMismatch, ZeroVector) as exc:
            raise type(exc)(f"probe {probe.probe_id!r}: {exc}") from exc
        rows.append(order)
        sims.append(s)
    return RankMatrix(tuple(p.probe_id for p in probes), np.stack(rows), np.stack(sims))


def average_precision(relevance, n_relevant: Optional[int] = None, cutoff: Optional[int] = None) -> float:
    """AP of one ranked list of 0/1 relevance flags.

    ``n_relevant`` defaults to the number of ones. With ``cutoff`` only the
    top ``cutoff`` ranks count and the normalizer is ``min(R, cutoff)``.
    """
    rel = np.asarray(relevance, dtype=np.int64).reshape(-1)
    total = int(rel.sum())
    r = total if n_relevant is None else int(n_relevant)
    if r < 1:
        raise NoRelevant("no relevant items in the ranking")
    if r != total:
        raise ValueError(f"n_relevant={r} but the flags contain {total} relevant items")
    if cutoff is not None:
        if cutoff < 1:
            raise ValueError("cutoff must be positive")
        rel = rel[:cutoff]
        r = min(r, cutoff)
    hits = np.cumsum(rel)
    ranks = np.arange(1, rel.size + 1)
    return math.fsum((hits / ranks)[rel == 1]) / r


def probe_family(probe: ProbeSubject, labels: Mapping[str, str]) -> str:
    families = set()
    for image_id in probe.image_ids:
        if image_id not in labels:
            raise UnknownImageId(image_id)
        families.add(labels[image_id])
    if not families:
        raise ValueError(f"probe {probe.probe_id!r} has no image ids to look up a family")
    if len(families) > 1:
        raise ValueError(f"probe {probe.probe_id!r} spans families {sorted(families)}")
    return families.pop()


def per_probe_average_precision(
    matrix: RankMatrix,
    probes: Sequence[ProbeSubject],
    gallery: Gallery,
    labels: Mapping[str, str],
    cutoff: Optional[int] = None,
    skip_no_relevant: bool = False,
) -> dict:
    """AP per probe id; probes without a relevant gallery item raise NoRelevant
    or, with ``skip_no_relevant``, are left out with a warning."""
    by_id = {p.probe_id: p for p in probes}
    gallery_family = []
    for image_id in gallery.image_ids:
        if image_id not in labels:
            raise UnknownImageId(image_id)
        gallery_family.append(labels[image_id])
    gallery_family = np.array(gallery_family, dtype=object)

    out = {}
    for probe_id, row in zip(matrix.probe_ids, matrix.rows):
        family = probe_family(by_id[probe_id], labels)
        relevance = (gallery_family[row] == family).astype(np.int64)
        if relevance.sum() == 0:
            if skip_no_relevant:
                warnings.warn(f"probe {probe_id!r} has no relevant gallery item; skipped")
                continue
            raise NoRelevant(f"probe {probe_id!r} has no relevant gallery item")
        out[probe_id] = average_precision(relevance, cutoff=cutoff)
    return out


def mean_average_precision(
    matrix: RankMatrix,
    probes: Sequence[ProbeSubject],
    gallery: Gallery,
    labels: Mapping[str, str],
    cutoff: Optional[int] = None,
    skip_no_relevant: bool = False,
) -> float:
    """Mean of per-probe AP where relevance means sharing the probe's family."""
    aps = per_probe_average_precision(matrix, probes, gallery, labels, cutoff, skip_no_relevant)
    if not aps:
        raise NoRelevant("no probe has a relevant gallery item")
    # exactly rounded sum: MAP does not depend on probe order
    return math.fsum(aps.values()) / len(aps)
