"""A linear projection head trained with triplet or ArcFace loss.

The head maps a d_in embedding to ``l2_normalize(matrix @ v)`` in d_out
dimensions. Training is plain (optionally momentum) gradient descent driven
only by the seeded generator in the config, so equal seeds give bit-equal
heads and loss histories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .embedding import as_vector, l2_normalize, normalize_rows
from .errors import (
    DimensionMismatch,
    GradientCheckFailed,
    InsufficientClasses,
    NonFiniteLoss,
)
from .losses import (
    DEFAULT_MARGIN,
    DEFAULT_SCALE,
    ArcFaceParams,
    LabeledBatch,
    TripletConfig,
    arcface_loss_with_grad,
    finite_difference_gradient,
    indexed_triplet_loss,
    max_relative_error,
)

MINING_STRATEGIES = ("all", "semi_hard", "hard")
LOSS_KINDS = ("triplet", "arcface")
MOMENTUM = 0.9


@dataclass(frozen=True, eq=False)
class ProjectionHead:
    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64, ndmin=2)
        if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
            raise DimensionMismatch(f"projection matrix must be 2-D and non-empty, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("projection matrix has non-finite entries")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def d_in(self) -> int:
        return self.matrix.shape[1]

    @property
    def d_out(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class TrainConfig:
    loss_kind: str = "triplet"
    learning_rate: float = 0.05
    epochs: int = 50
    batch_size: int = 40
    seed: int = 42
    mining: str = "semi_hard"
    dim_out: int = 16
    use_momentum: bool = False
    triplet: TripletConfig = field(default_factory=TripletConfig)
    arcface_scale: float = DEFAULT_SCALE
    arcface_margin: float = DEFAULT_MARGIN
    # mean or sum of per-triplet losses within a step
    reduction: str = "mean"
    verify_gradient: bool = True

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if self.mining not in MINING_STRATEGIES:
            raise ValueError(f"mining must be one of {MINING_STRATEGIES}, got {self.mining!r}")
        if not (math.isfinite(self.learning_rate) and self.learning_rate >= 0):
            raise ValueError(f"learning rate must be finite and non-negative, got {self.learning_rate}")
        if self.epochs < 1 or self.batch_size < 1 or self.dim_out < 1:
            raise ValueError("epochs, batch_size and dim_out must be positive")
        if self.reduction not in ("mean", "sum"):
            raise ValueError(f"reduction must be 'mean' or 'sum', got {self.reduction!r}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


def project(head: ProjectionHead, v):
    x = as_vector(v)
    if x.shape[0] != head.d_in:
        raise DimensionMismatch(f"head expects dimension {head.d_in}, got {x.shape[0]}")
    out = l2_normalize(head.matrix @ x)
    if hasattr(v, "image_id"):
        return type(v)(v.image_id, out)
    return out


def project_rows(head: ProjectionHead, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != head.d_in:
        raise DimensionMismatch(f"head expects dimension {head.d_in}, got {x.shape[1]}")
    return normalize_rows(x @ head.matrix.T)


# --------------------------------------------------------------------------
# Mining
# --------------------------------------------------------------------------


def pairwise_squared_distances(z: np.ndarray) -> np.ndarray:
    # direct differences rather than the Gram expansion: exact zeros on the
    # diagonal and no cancellation near the semi-hard window edges
    return np.stack([np.sum((z - row) ** 2, axis=1) for row in z])


def _encode_labels(labels):
    index = {}
    return np.array([index.setdefault(y, len(index)) for y in labels], dtype=np.int64), len(index)


def mine_triplets(embeddings, labels, strategy: str = "semi_hard", margin: float = 0.2) -> np.ndarray:
    """Select (anchor, positive, negative) row indices from a labeled set.

    Returns an int array of shape (M, 3) in lexicographic index order. An
    empty result is valid (for example, when no negative falls inside the
    semi-hard window).
    """
    if strategy not in MINING_STRATEGIES:
        raise ValueError(f"unknown mining strategy {strategy!r}")
    z = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    y, _ = _encode_labels(labels)
    if z.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"{z.shape[0]} embeddings but {y.shape[0]} labels")

    same = y[:, None] == y[None, :]
    pos_mask = same & ~np.eye(len(y), dtype=bool)
    neg_mask = ~same
    if not (pos_mask.any() and neg_mask.any()):
        raise InsufficientClasses("need two classes and a class with at least two members")

    dist = pairwise_squared_distances(z) if strategy != "all" else None
    chunks = []
    for a in range(len(y)):
        positives = np.flatnonzero(pos_mask[a])
        negatives = np.flatnonzero(neg_mask[a])
        if positives.size == 0 or negatives.size == 0:
            continue
        if strategy == "hard":
            # argmin returns the lowest index among equal distances
            n_star = negatives[np.argmin(dist[a, negatives])]
            chunks.append(np.column_stack([
                np.full(positives.size, a), positives, np.full(positives.size, n_star)
            ]))
            continue
        pp, nn = np.meshgrid(positives, negatives, indexing="ij")
        pp, nn = pp.ravel(), nn.ravel()
        if strategy == "semi_hard":
            d_ap, d_an = dist[a, pp], dist[a, nn]
            keep = (d_ap < d_an) & (d_an < d_ap + margin)
            pp, nn = pp[keep], nn[keep]
        chunks.append(np.column_stack([np.full(pp.size, a), pp, nn]))
    if not chunks:
        return np.empty((0, 3), dtype=np.int64)
    return np.concatenate(chunks).astype(np.int64)


def mean_all_triplet_loss(z: np.ndarray, labels, margin: float) -> float:
    """Mean hinge loss over every valid triplet, without materializing them.

    Per anchor, sorting the negative distances turns the double sum over
    (positive, negative) into prefix sums.
    """
    y, _ = _encode_labels(labels)
    dist = pairwise_squared_distances(np.asarray(z, dtype=np.float64))
    total, count = 0.0, 0
    for a in range(len(y)):
        same = y == y[a]
        same[a] = False
        d_pos = dist[a, same]
        d_neg = np.sort(dist[a, y != y[a]])
        if d_pos.size == 0 or d_neg.size == 0:
            continue
        prefix = np.concatenate([[0.0], np.cumsum(d_neg)])
        thresholds = d_pos + margin
        k = np.searchsorted(d_neg, thresholds, side="left")
        total += float(np.sum(k * thresholds - prefix[k]))
        count += d_pos.size * d_neg.size
    if count == 0:
        raise InsufficientClasses("no valid triplet exists")
    return total / count


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------


def _backprop_normalize(grad_z, z, norms):
    return (grad_z - np.sum(grad_z * z, axis=1, keepdims=True) * z) / norms[:, None]


def batch_objective(matrix, x, y, cfg: TrainConfig, *, triplets=None, centers=None):
    """Step objective and gradients for one batch.

    ``triplets`` (index array) drives the triplet loss; ``centers`` (d_out x
    n_classes) drives ArcFace. Returns ``(loss, grad_matrix, grad_centers)``;
    ``grad_centers`` is None for triplet loss.
    """
    proj = x @ matrix.T
    if cfg.loss_kind == "triplet":
        norms = np.linalg.norm(proj, axis=1)
        z = proj / norms[:, None]
        losses, grad_z = indexed_triplet_loss(z, triplets, cfg.triplet.margin_alpha)
        loss = float(np.sum(losses))
        if cfg.reduction == "mean":
            loss /= len(triplets)
            grad_z = grad_z / len(triplets)
        grad_proj = _backprop_normalize(grad_z, z, norms)
        return loss, grad_proj.T @ x, None
    params = ArcFaceParams(centers, cfg.arcface_scale, cfg.arcface_margin)
    loss, grad_proj, grad_centers = arcface_loss_with_grad(LabeledBatch(proj, y), params, centers)
    return loss, grad_proj.T @ x, grad_centers


def _epoch_objective(matrix, x, y, cfg, centers):
    z = normalize_rows(x @ matrix.T)
    if cfg.loss_kind == "triplet":
        return mean_all_triplet_loss(z, y, cfg.triplet.margin_alpha)
    params = ArcFaceParams(centers, cfg.arcface_scale, cfg.arcface_margin)
    return arcface_loss_with_grad(LabeledBatch(z, y), params, centers)[0]


def _check_gradient(matrix, x, y, cfg, triplets, centers, tol=1e-4):
    _, grad_m, grad_c = batch_objective(matrix, x, y, cfg, triplets=triplets, centers=centers)
    numeric = finite_difference_gradient(
        lambda m: batch_objective(m, x, y, cfg, triplets=triplets, centers=centers)[0], matrix
    )
    err = max_relative_error(grad_m, numeric)
    if centers is not None:
        numeric_c = finite_difference_gradient(
            lambda c: batch_objective(matrix, x, y, cfg, triplets=triplets, centers=c)[0], centers
        )
        err = max(err, max_relative_error(grad_c, numeric_c))
    if err > tol:
        raise GradientCheckFailed(f"head gradient relative error {err:.3g} exceeds {tol}")
    return err


def train_projection(embeddings, labels, cfg: TrainConfig = TrainConfig()):
    """Fit a projection head; returns ``(head, history)``.

    ``history[e]`` is the full-data objective after epoch ``e``: the mean
    hinge over every valid triplet for triplet loss, or the mean ArcFace loss.
    Using the full data (not the mined batches) keeps the curve comparable
    across epochs whatever the mining strategy.
    """
    x = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    y, n_classes = _encode_labels(labels)
    n, d_in = x.shape
    if y.shape[0] != n:
        raise DimensionMismatch(f"{n} embeddings but {y.shape[0]} labels")
    if cfg.batch_size > n:
        raise ValueError(f"batch size {cfg.batch_size} exceeds dataset size {n}")
    if n_classes < 2:
        raise InsufficientClasses("training needs at least two classes")

    rng = np.random.default_rng(cfg.seed)
    bound = 1.0 / math.sqrt(d_in)
    matrix = rng.uniform(-bound, bound, size=(cfg.dim_out, d_in))
    centers = None
    if cfg.loss_kind == "arcface":
        c_bound = 1.0 / math.sqrt(cfg.dim_out)
        centers = rng.uniform(-c_bound, c_bound, size=(cfg.dim_out, n_classes))
        centers = normalize_rows(centers.T).T
    vel_m = np.zeros_like(matrix)
    vel_c = None if centers is None else np.zeros_like(centers)
    mu = MOMENTUM if cfg.use_momentum else 0.0
    checked = not cfg.verify_gradient

    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = x[idx], y[idx]
            triplets = None
            if cfg.loss_kind == "triplet":
                if len(np.unique(yb)) < 2 or len(np.unique(yb)) == len(yb):
                    continue
                zb = normalize_rows(xb @ matrix.T)
                triplets = mine_triplets(zb, yb, cfg.mining, cfg.triplet.margin_alpha)
                if len(triplets) == 0:
                    continue
            if not checked:
                _check_gradient(matrix, xb, yb, cfg, triplets, centers)
                checked = True
            loss, grad_m, grad_c = batch_objective(matrix, xb, yb, cfg, triplets=triplets, centers=centers)
            if not (math.isfinite(loss) and np.all(np.isfinite(grad_m))):
                raise NonFiniteLoss(epoch)
            vel_m = mu * vel_m - cfg.learning_rate * grad_m
            matrix = matrix + vel_m
            if centers is not None:
                vel_c = mu * vel_c - cfg.learning_rate * grad_c
                centers = normalize_rows((centers + vel_c).T).T
        objective = _epoch_objective(matrix, x, y, cfg, centers)
        if not math.isfinite(objective):
            raise NonFiniteLoss(epoch)
        history.append(objective)
    return ProjectionHead(matrix), history
