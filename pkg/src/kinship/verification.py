"""Pair scoring, binary kin decisions, and accuracy reports."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .embedding import EmbeddingStore, cosine_similarity, l2_normalize, squared_euclidean
from .errors import EmptyInput, MissingCalibration, MissingClassifier, MissingLabel
from .fusion import PairClassifier, classify_pair, pair_descriptor
from .scoring import CalibrationSet, ScorerConfig, binarize, cd_score, idw_score


@dataclass(frozen=True)
class PairQuery:
    pair_id: str
    image_id_1: str
    image_id_2: str
    ptype: str = ""
    label: Optional[int] = None


@dataclass(frozen=True)
class Prediction:
    pair_id: str
    score: float
    label: int


@dataclass(frozen=True)
class VerificationReport:
    overall_accuracy: float
    per_category_accuracy: dict
    macro_average: float
    counts: dict

    def as_dict(self) -> dict:
        return {
            "overall_accuracy": self.overall_accuracy,
            "macro_average": self.macro_average,
            "per_category_accuracy": dict(self.per_category_accuracy),
            "counts": dict(self.counts),
        }


def pair_distance(store: EmbeddingStore, id1: str, id2: str) -> float:
    """Squared Euclidean distance between the L2-normalized embeddings."""
    return squared_euclidean(l2_normalize(store[id1].values), l2_normalize(store[id2].values))


def build_calibration(store: EmbeddingStore, queries: Sequence[PairQuery]) -> CalibrationSet:
    """Calibration observations from labeled pairs, in query order."""
    distances, labels = [], []
    for q in queries:
        if q.label is None:
            raise MissingLabel(f"pair {q.pair_id!r} has no label")
        distances.append(pair_distance(store, q.image_id_1, q.image_id_2))
        labels.append(q.label)
    if not distances:
        raise EmptyInput("no labeled pairs to calibrate on")
    return CalibrationSet(distances, labels)


def pair_features(kind, store, q, store_b=None, swap=False):
    id1, id2 = (q.image_id_2, q.image_id_1) if swap else (q.image_id_1, q.image_id_2)
    if store_b is None:
        return pair_descriptor(kind, store[id1], store[id2])
    return pair_descriptor(kind, store[id1], store[id2], store_b[id1], store_b[id2])


def score_pair(store, q: PairQuery, scorer: ScorerConfig, cal=None, clf=None, store_b=None) -> float:
    if scorer.kind == "raw_cosine":
        return cosine_similarity(store[q.image_id_1], store[q.image_id_2])
    if scorer.kind in ("cd", "idw"):
        d = pair_distance(store, q.image_id_1, q.image_id_2)
        if scorer.kind == "cd":
            return cd_score(cal.kin_only() if scorer.cd_kin_only else cal, d)
        return idw_score(cal, d, scorer.idw_power, scorer.idw_k)
    score = classify_pair(clf, pair_features(scorer.descriptor, store, q, store_b))
    if scorer.symmetrize:
        swapped = classify_pair(clf, pair_features(scorer.descriptor, store, q, store_b, swap=True))
        score = 0.5 * (score + swapped)
    return score


def verify_pairs(
    store: EmbeddingStore,
    queries: Sequence[PairQuery],
    scorer: ScorerConfig = ScorerConfig(),
    cal: Optional[CalibrationSet] = None,
    clf: Optional[PairClassifier] = None,
    store_b: Optional[EmbeddingStore] = None,
) -> list:
    """Score every pair and threshold it; output order follows ``queries``."""
    if scorer.kind in ("cd", "idw") and cal is None:
        raise MissingCalibration(f"scorer {scorer.kind!r} needs a calibration set")
    if scorer.kind == "pair_classifier" and clf is None:
        raise MissingClassifier("scorer 'pair_classifier' needs a trained classifier")
    threshold = scorer.effective_threshold
    out = []
    for q in queries:
        score = score_pair(store, q, scorer, cal, clf, store_b)
        out.append(Prediction(q.pair_id, score, binarize(score, threshold)))
    return out


def evaluate_verification(predictions: Sequence[Prediction], queries: Sequence[PairQuery]) -> VerificationReport:
    """Micro (overall) and macro (mean over relationship categories) accuracy.

    Ground truth and categories come from ``queries``, matched by pair id.
    """
    if not predictions:
        raise EmptyInput("no predictions to evaluate")
    truth = {q.pair_id: q for q in queries}
    correct: dict = {}
    counts: dict = {}
    for p in predictions:
        q = truth.get(p.pair_id)
        if q is None or q.label is None:
            raise MissingLabel(f"no ground-truth label for pair {p.pair_id!r}")
        counts[q.ptype] = counts.get(q.ptype, 0) + 1
        correct[q.ptype] = correct.get(q.ptype, 0) + int(p.label == q.label)
    per_category = {c: correct[c] / counts[c] for c in sorted(counts)}
    overall = sum(correct.values()) / len(predictions)
    macro = float(np.mean(list(per_category.values())))
    return VerificationReport(overall, per_category, macro, {c: counts[c] for c in sorted(counts)})
