"""Distance-to-probability maps (cumulative distance, inverse distance weighting)
and threshold binarization.

Both maps are fit on a calibration set of labeled pair distances. ``cd``
is one minus the empirical CDF of the calibration distances, so a pair that
is closer than most calibration pairs scores near 1. ``idw`` is Shepard's
inverse-distance-weighted average of the calibration labels, with distance
measured along the distance axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import EmptyCalibration

SCORER_KINDS = ("raw_cosine", "cd", "idw", "pair_classifier")
COSINE_THRESHOLD = 0.6
PROBABILITY_THRESHOLD = 0.5


@dataclass(frozen=True, eq=False)
class CalibrationSet:
    distances: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        d = np.array(self.distances, dtype=np.float64).reshape(-1)
        y = np.array(self.labels, dtype=np.int64).reshape(-1)
        if d.shape != y.shape:
            raise ValueError(f"{d.size} distances but {y.size} labels")
        if not np.all(np.isfinite(d)) or np.any(d < 0):
            raise ValueError("calibration distances must be finite and non-negative")
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("calibration labels must be 0 or 1")
        d.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "distances", d)
        object.__setattr__(self, "labels", y)
        sorted_d = np.sort(d)
        sorted_d.setflags(write=False)
        object.__setattr__(self, "_sorted", sorted_d)

    def __len__(self):
        return self.distances.size

    def kin_only(self) -> "CalibrationSet":
        keep = self.labels == 1
        return CalibrationSet(self.distances[keep], self.labels[keep])


@dataclass(frozen=True)
class ScorerConfig:
    kind: str = "raw_cosine"
    idw_power: float = 2.0
    idw_k: Optional[int] = None  # None = all calibration points
    threshold: Optional[float] = None
    descriptor: str = "siamese"
    symmetrize: bool = False
    cd_kin_only: bool = False

    def __post_init__(self):
        if self.kind not in SCORER_KINDS:
            raise ValueError(f"scorer must be one of {SCORER_KINDS}, got {self.kind!r}")
        if not (math.isfinite(self.idw_power) and self.idw_power > 0):
            raise ValueError(f"IDW power must be positive, got {self.idw_power}")
        if self.idw_k is not None and self.idw_k < 1:
            raise ValueError(f"IDW neighbor count must be positive, got {self.idw_k}")
        if self.threshold is not None and not math.isfinite(self.threshold):
            raise ValueError("threshold must be finite")

    @property
    def effective_threshold(self) -> float:
        if self.threshold is not None:
            return self.threshold
        return COSINE_THRESHOLD if self.kind == "raw_cosine" else PROBABILITY_THRESHOLD


def cd_score(cal: CalibrationSet, d: float) -> float:
    """``1 - ECDF(d)`` over the calibration distances (ECDF right-continuous)."""
    if len(cal) == 0:
        raise EmptyCalibration("calibration set is empty")
    at_or_below = int(np.searchsorted(cal._sorted, d, side="right"))
    return 1.0 - at_or_below / len(cal)


def idw_score(cal: CalibrationSet, d: float, p: float = 2.0, k: Optional[int] = None) -> float:
    """Shepard interpolation of the kin labels at distance ``d``.

    Uses the ``k`` calibration points nearest to ``d`` (all when ``k`` is
    None; ties go to the lower index). Exact matches short-circuit to the
    mean label of the exactly matching points.
    """
    if len(cal) == 0:
        raise EmptyCalibration("calibration set is empty")
    gaps = np.abs(cal.distances - d)
    exact = gaps == 0.0
    if exact.any():
        return float(np.mean(cal.labels[exact]))
    if k is not None and k < len(cal):
        nearest = np.argsort(gaps, kind="stable")[:k]
        gaps, labels = gaps[nearest], cal.labels[nearest]
    else:
        labels = cal.labels
    with np.errstate(over="ignore"):
        weights = gaps ** (-float(p))
    infinite = np.isinf(weights)
    if infinite.any():
        # gaps so small the weight overflows behave as exact matches
        return float(np.mean(labels[infinite]))
    # fsum is exactly rounded, so the result ignores calibration order
    num = math.fsum(weights[labels == 1])
    den = math.fsum(weights)
    return min(1.0, max(0.0, num / den))


def binarize(score: float, threshold: float) -> int:
    """1 (kin) when ``score >= threshold``."""
    return 1 if score >= threshold else 0


def fit_threshold(scores, labels) -> float:
    """Threshold maximizing accuracy of ``binarize`` on labeled scores.

    Candidates are midpoints between consecutive distinct scores plus the
    two extremes; the lowest best candidate wins.
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if s.size == 0:
        raise ValueError("no scores to fit a threshold on")
    u = np.unique(s)
    candidates = np.concatenate([[u[0]], (u[:-1] + u[1:]) / 2.0, [np.nextafter(u[-1], np.inf)]])
    acc = [np.mean((s >= c).astype(np.int64) == y) for c in candidates]
    return float(candidates[int(np.argmax(acc))])
