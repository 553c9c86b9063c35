"""Per-feature weight losses and their closed-form minimizers.

A feature with summed squared reprojection residual ``r`` and weight ``w`` costs

    w^2 r + lam_w (1 - w)^2 + lam_m n^2 (w_prev - w)^2

where the last term ties ``w`` to its previous converged value ``w_prev`` with a
strength that grows with the number ``n`` of completed optimizations.
"""
from __future__ import annotations

import numpy as np


def regularizer(w):
    return 1.0 - w


def momentum(w, w_prev, n):
    return n * (w_prev - w)


def loss_rho(w, r, lam_w):
    return w * w * r + lam_w * regularizer(w) ** 2


def loss_rho_m(w, r, lam_w, lam_m, w_prev, n):
    return w * w * r + lam_w * regularizer(w) ** 2 + lam_m * momentum(w, w_prev, n) ** 2


def optimal_weight(r, lam_w):
    """Minimizer of ``loss_rho`` over w in [0, 1]."""
    return lam_w / (r + lam_w)


def optimal_weight_momentum(r, lam_w, lam_m, w_prev, n):
    """Minimizer of ``loss_rho_m`` over w in [0, 1].

    The loss is a convex quadratic in w, so the stationary point clamped to the
    interval is the constrained optimum. Works elementwise on arrays.
    """
    m = lam_m * np.square(n)
    w = (lam_w + m * w_prev) / (r + lam_w + m)
    return np.clip(w, 0.0, 1.0)


def converged_loss(r, lam_w):
    """Loss of a feature once its weight has settled at ``optimal_weight``."""
    return lam_w * r / (lam_w + r)


def huber(s, delta):
    """Huber loss on a squared norm ``s``: quadratic inside ``delta``, linear in sqrt(s) outside."""
    s = np.asarray(s, dtype=float)
    d2 = delta * delta
    return np.where(s <= d2, s, 2.0 * delta * np.sqrt(np.maximum(s, d2)) - d2)


def huber_sqrt_weight(s, delta):
    """Row scale for reweighted least squares: sqrt of d huber / d s."""
    s = np.asarray(s, dtype=float)
    return np.where(s <= delta * delta, 1.0, np.sqrt(delta / np.sqrt(np.maximum(s, 1e-300))))
