"""Seeded finite-difference suites for the analytic loss gradients."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .losses import (
    ArcFaceParams,
    LabeledBatch,
    Triplet,
    TripletConfig,
    _arcface_forward,
    arcface_loss_with_grad,
    finite_difference_gradient,
    max_relative_error,
    triplet_loss,
    triplet_loss_with_grad,
)

SCALES = (1.0, 16.0, 64.0)
MARGINS = (0.0, 0.3, 0.5)
# keep sampled points this far from the hinge, the |cos| = 1 singularity and
# the theta + m = pi switch, where central differences straddle a kink
KINK_CLEARANCE = 1e-3


@dataclass(frozen=True)
class GradCheckResult:
    suite: str
    index: int
    config: dict
    error: float


def triplet_case(rng, index, h=1e-5) -> GradCheckResult:
    d = int(rng.integers(1, 17))
    alpha = float(rng.uniform(0.05, 1.0))
    cfg = TripletConfig(alpha)
    while True:
        a, p, n = rng.normal(size=(3, d))
        loss = triplet_loss(Triplet(a, p, n), cfg)
        if loss > KINK_CLEARANCE:
            break
    _, ga, gp, gn = triplet_loss_with_grad(Triplet(a, p, n), cfg)
    num_a = finite_difference_gradient(lambda x: triplet_loss(Triplet(x, p, n), cfg), a, h)
    num_p = finite_difference_gradient(lambda x: triplet_loss(Triplet(a, x, n), cfg), p, h)
    num_n = finite_difference_gradient(lambda x: triplet_loss(Triplet(a, p, x), cfg), n, h)
    err = max(max_relative_error(ga, num_a), max_relative_error(gp, num_p), max_relative_error(gn, num_n))
    return GradCheckResult("triplet", index, {"d": d, "alpha": alpha}, err)


def _arcface_clear(x, w, y, margin) -> bool:
    x_hat = x / np.linalg.norm(x, axis=1, keepdims=True)
    w_hat = w / np.linalg.norm(w, axis=0, keepdims=True)
    c = np.einsum("ij,ji->i", x_hat, w_hat[:, y])
    return bool(
        np.all(1.0 - np.abs(c) > KINK_CLEARANCE)
        and np.all(np.abs(c + math.cos(margin)) > KINK_CLEARANCE)
    )


def arcface_case(rng, index, h=1e-5) -> GradCheckResult:
    d = int(rng.integers(2, 17))
    n_classes = int(rng.integers(1, 9))
    n = int(rng.integers(1, 9))
    scale = SCALES[index % len(SCALES)]
    margin = MARGINS[(index // len(SCALES)) % len(MARGINS)]
    while True:
        x = rng.normal(size=(n, d))
        w = rng.normal(size=(d, n_classes))
        y = rng.integers(0, n_classes, size=n)
        if _arcface_clear(x, w, y, margin):
            break
    params = ArcFaceParams(w, scale, margin)
    batch = LabeledBatch(x, y)
    _, gx, gw = arcface_loss_with_grad(batch, params, w)
    num_x = finite_difference_gradient(lambda v: _arcface_forward(LabeledBatch(v, y), params, w)[0], x, h)
    num_w = finite_difference_gradient(lambda v: _arcface_forward(batch, params, v)[0], w, h)
    err = max(max_relative_error(gx, num_x), max_relative_error(gw, num_w))
    config = {"d": d, "n_classes": n_classes, "batch": n, "scale": scale, "margin": margin}
    return GradCheckResult("arcface", index, config, err)


def run_gradcheck(n_configs: int = 100, seed: int = 42, h: float = 1e-5) -> list:
    """``n_configs`` triplet cases followed by ``n_configs`` ArcFace cases."""
    rng = np.random.default_rng(seed)
    results = [triplet_case(rng, i, h) for i in range(n_configs)]
    results += [arcface_case(rng, i, h) for i in range(n_configs)]
    return results
