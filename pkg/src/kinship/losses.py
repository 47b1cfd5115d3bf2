"""Triplet and additive-angular-margin (ArcFace) losses with analytic gradients.

The ArcFace target logit is ``s * cos(theta_y + m)``, evaluated through the
angle-sum identity ``cos(theta)cos(m) - sin(theta)sin(m)`` so that ``m = 0``
reduces exactly to the plain scaled-cosine logit. When ``theta_y + m`` would
pass pi the target cosine is pinned to -1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .embedding import as_vector, normalize_rows
from .errors import (
    DimensionMismatch,
    EmptyBatch,
    LabelOutOfRange,
    NearSingular,
    NonFiniteValue,
    ZeroVector,
)

COS_CLAMP = 1e-7
DEFAULT_SCALE = 64.0
DEFAULT_MARGIN = 0.5


@dataclass(frozen=True)
class Triplet:
    anchor: np.ndarray
    positive: np.ndarray
    negative: np.ndarray

    def __post_init__(self):
        a, p, n = (as_vector(x) for x in (self.anchor, self.positive, self.negative))
        if not (a.shape == p.shape == n.shape):
            raise DimensionMismatch(
                f"triplet dimensions {a.shape[0]}, {p.shape[0]}, {n.shape[0]}"
            )
        object.__setattr__(self, "anchor", a)
        object.__setattr__(self, "positive", p)
        object.__setattr__(self, "negative", n)


@dataclass(frozen=True)
class TripletConfig:
    margin_alpha: float = 0.2

    def __post_init__(self):
        if not (math.isfinite(self.margin_alpha) and self.margin_alpha > 0):
            raise ValueError(f"triplet margin must be finite and positive, got {self.margin_alpha}")


@dataclass(frozen=True, eq=False)
class ArcFaceParams:
    """Class-center matrix (d x n, one center per column) plus scale and margin.

    Columns are L2-normalized on construction.
    """

    weight_matrix: np.ndarray
    scale_s: float = DEFAULT_SCALE
    margin_m: float = DEFAULT_MARGIN

    def __post_init__(self):
        w = np.array(self.weight_matrix, dtype=np.float64, ndmin=2)
        if w.ndim != 2 or w.shape[0] < 1 or w.shape[1] < 1:
            raise DimensionMismatch(f"weight matrix must be d x n with d, n >= 1, got {w.shape}")
        w = normalize_rows(w.T).T
        if not (math.isfinite(self.scale_s) and self.scale_s > 0):
            raise ValueError(f"scale must be positive, got {self.scale_s}")
        if not (0.0 <= self.margin_m < math.pi / 2):
            raise ValueError(f"margin must lie in [0, pi/2), got {self.margin_m}")
        object.__setattr__(self, "weight_matrix", w)

    @property
    def dim(self) -> int:
        return self.weight_matrix.shape[0]

    @property
    def n_classes(self) -> int:
        return self.weight_matrix.shape[1]


@dataclass(frozen=True, eq=False)
class LabeledBatch:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        x = np.array(self.features, dtype=np.float64, ndmin=2)
        y = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if x.shape[0] == 0 or x.size == 0:
            raise EmptyBatch("labeled batch has no samples")
        if x.shape[0] != y.shape[0]:
            raise DimensionMismatch(f"{x.shape[0]} features but {y.shape[0]} labels")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)


# --------------------------------------------------------------------------
# Triplet loss
# --------------------------------------------------------------------------


def _triplet_terms(t: Triplet):
    d_ap = t.anchor - t.positive
    d_an = t.anchor - t.negative
    return d_ap, d_an, float(d_ap @ d_ap) - float(d_an @ d_an)


def triplet_loss(t: Triplet, cfg: TripletConfig = TripletConfig()) -> float:
    """Hinge ``[|a-p|^2 - |a-n|^2 + alpha]_+`` for one triplet."""
    _, _, gap = _triplet_terms(t)
    return max(0.0, gap + cfg.margin_alpha)


def triplet_loss_batch(triplets: Sequence[Triplet], cfg: TripletConfig = TripletConfig()):
    """Summed triplet loss over a batch plus a per-triplet active-hinge flag."""
    if len(triplets) == 0:
        raise EmptyBatch("no triplets")
    dim = triplets[0].anchor.shape[0]
    losses = []
    for t in triplets:
        if t.anchor.shape[0] != dim:
            raise DimensionMismatch(f"triplet of dimension {t.anchor.shape[0]} in batch of {dim}")
        losses.append(triplet_loss(t, cfg))
    total = 0.0
    for value in losses:
        total += value
    return total, [value > 0.0 for value in losses]


def triplet_loss_with_grad(t: Triplet, cfg: TripletConfig = TripletConfig()):
    """Loss and gradients with respect to anchor, positive and negative."""
    d_ap, d_an, gap = _triplet_terms(t)
    loss = max(0.0, gap + cfg.margin_alpha)
    if loss <= 0.0:
        zero = np.zeros_like(t.anchor)
        return loss, zero, zero.copy(), zero.copy()
    grad_a = 2.0 * (t.negative - t.positive)
    grad_p = -2.0 * d_ap
    grad_n = 2.0 * d_an
    return loss, grad_a, grad_p, grad_n


def indexed_triplet_loss(z: np.ndarray, triplets: np.ndarray, margin: float):
    """Vectorized triplet losses over rows of ``z`` picked by an (M, 3) index array.

    Returns the per-triplet losses and the gradient of their SUM with
    respect to ``z``.
    """
    a, p, n = z[triplets[:, 0]], z[triplets[:, 1]], z[triplets[:, 2]]
    d_ap = a - p
    d_an = a - n
    losses = np.einsum("ij,ij->i", d_ap, d_ap) - np.einsum("ij,ij->i", d_an, d_an) + margin
    active = losses > 0.0
    losses = np.where(active, losses, 0.0)
    grad = np.zeros_like(z)
    w = active[:, None].astype(np.float64)
    np.add.at(grad, triplets[:, 0], 2.0 * (n - p) * w)
    np.add.at(grad, triplets[:, 1], -2.0 * d_ap * w)
    np.add.at(grad, triplets[:, 2], 2.0 * d_an * w)
    return losses, grad


# --------------------------------------------------------------------------
# ArcFace loss
# --------------------------------------------------------------------------


def _normalize_with_norms(m: np.ndarray):
    norms = np.linalg.norm(m, axis=1)
    if np.any(~(norms > 1e-12)):
        raise ZeroVector("zero-norm feature in batch")
    return m / norms[:, None], norms


def _arcface_forward(batch: LabeledBatch, params: ArcFaceParams, weight_matrix=None):
    w = params.weight_matrix if weight_matrix is None else np.asarray(weight_matrix, dtype=np.float64)
    x = batch.features
    y = batch.labels
    n_classes = w.shape[1]
    if x.shape[1] != w.shape[0]:
        raise DimensionMismatch(f"features of dimension {x.shape[1]}, weights of {w.shape[0]}")
    if np.any((y < 0) | (y >= n_classes)):
        bad = int(y[(y < 0) | (y >= n_classes)][0])
        raise LabelOutOfRange(f"label {bad} outside [0, {n_classes})")

    x_hat, x_norms = _normalize_with_norms(x)
    w_hat_t, w_norms = _normalize_with_norms(w.T)
    cos = np.clip(x_hat @ w_hat_t.T, -1.0, 1.0)

    rows = np.arange(x.shape[0])
    c_target = cos[rows, y]
    c_clamped = np.clip(c_target, -1.0 + COS_CLAMP, 1.0 - COS_CLAMP)
    sin_target = np.sqrt(1.0 - c_clamped * c_clamped)
    cos_m, sin_m = math.cos(params.margin_m), math.sin(params.margin_m)
    # theta + m > pi  <=>  cos(theta) < cos(pi - m) = -cos(m)
    past_pi = c_target < -cos_m
    target = np.where(past_pi, -1.0, c_target * cos_m - sin_target * sin_m)

    logits = params.scale_s * cos
    logits[rows, y] = params.scale_s * target
    shift = logits.max(axis=1, keepdims=True)
    exp = np.exp(logits - shift)
    denom = exp.sum(axis=1)
    log_norm = shift[:, 0] + np.log(denom)
    loss = float(np.mean(log_norm - logits[rows, y]))
    cache = dict(
        x_hat=x_hat, x_norms=x_norms, w_hat_t=w_hat_t, w_norms=w_norms, cos=cos,
        c_target=c_target, sin_target=sin_target, past_pi=past_pi,
        probs=exp / denom[:, None], rows=rows, cos_m=cos_m, sin_m=sin_m,
    )
    return loss, cache


def arcface_loss(batch: LabeledBatch, params: ArcFaceParams) -> float:
    """Mean additive-angular-margin softmax cross-entropy over the batch.

    Features and class centers are L2-normalized internally.
    """
    return _arcface_forward(batch, params)[0]


def arcface_loss_with_grad(batch: LabeledBatch, params: ArcFaceParams, weight_matrix=None):
    """Loss plus gradients with respect to the raw features and the raw weights.

    ``weight_matrix`` overrides ``params.weight_matrix`` (unnormalized is
    fine) so callers can differentiate at arbitrary class-center matrices.
    Raises NearSingular when a target cosine lies within 1e-7 of +-1, where
    the derivative of the angle blows up.
    """
    loss, c = _arcface_forward(batch, params, weight_matrix)
    y, rows = batch.labels, c["rows"]
    if np.any(np.abs(c["c_target"]) > 1.0 - COS_CLAMP):
        i = int(np.flatnonzero(np.abs(c["c_target"]) > 1.0 - COS_CLAMP)[0])
        raise NearSingular(f"sample {i} target cosine {c['c_target'][i]!r} is within {COS_CLAMP} of +-1")
    n = batch.features.shape[0]
    s = params.scale_s

    # dL/dlogit, then dlogit/dcos
    g = c["probs"].copy()
    g[rows, y] -= 1.0
    g /= n
    g_cos = s * g
    dtarget = np.where(
        c["past_pi"], 0.0, c["cos_m"] + c["c_target"] * c["sin_m"] / c["sin_target"]
    )
    g_cos[rows, y] = s * g[rows, y] * dtarget

    x_hat, w_hat_t = c["x_hat"], c["w_hat_t"]
    g_xhat = g_cos @ w_hat_t
    g_what_t = g_cos.T @ x_hat
    grad_x = (g_xhat - np.sum(g_xhat * x_hat, axis=1, keepdims=True) * x_hat) / c["x_norms"][:, None]
    grad_w_t = (g_what_t - np.sum(g_what_t * w_hat_t, axis=1, keepdims=True) * w_hat_t) / c["w_norms"][:, None]
    return loss, grad_x, grad_w_t.T


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean softmax cross-entropy; the reference ArcFace reduces to at ``m = 0``."""
    shift = logits.max(axis=1, keepdims=True)
    lse = shift[:, 0] + np.log(np.exp(logits - shift).sum(axis=1))
    return float(np.mean(lse - logits[np.arange(len(labels)), labels]))


# --------------------------------------------------------------------------
# Finite differences
# --------------------------------------------------------------------------


def finite_difference_gradient(f: Callable[[np.ndarray], float], point, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient estimate of scalar ``f`` at ``point``.

    ``point`` may have any shape; the estimate has the same shape.
    """
    if not h > 0:
        raise ValueError(f"step must be positive, got {h}")
    # C order so the flat views below alias x and grad
    x = np.array(point, dtype=np.float64, order="C")
    grad = np.empty_like(x, order="C")
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = f(x)
        flat[i] = orig - h
        f_minus = f(x)
        flat[i] = orig
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise NonFiniteValue(f"function is not finite near coordinate {i}")
        gflat[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def max_relative_error(analytic, numeric, floor: float = 1e-8) -> float:
    """Largest componentwise deviation relative to the larger gradient's max-norm.

    The denominator never drops below ``floor``: gradients far smaller than
    finite-difference resolution (a saturated softmax gives ~1e-40) carry no
    relative information.
    """
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    b = np.asarray(numeric, dtype=np.float64).reshape(-1)
    scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(b), initial=0.0))
    diff = np.max(np.abs(a - b), initial=0.0)
    return float(diff / max(scale, floor))
