"""Ranking losses and their analytic gradients.

Scores are "higher is more similar" in every mode:

========================  ======================  ======================
geometry / mode           neg_inner               neg_distance
========================  ======================  ======================
hyperboloid               ``<u, v>_H``            ``-d_H(u, v)``
euclidean                 ``u . v``               ``-|u - v|``
========================  ======================  ======================

On the hyperboloid both modes are monotone in each other and induce the
same ranking. WMRB works on the dissimilarity ``-score``.

All array functions broadcast over leading (batch) axes and return gradients
with respect to the *ambient* coordinates; the optimizer turns those into
Riemannian updates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .errors import ConfigError, DomainError

SCORE_MODES = ("neg_inner", "neg_distance")
GEOMETRIES = ("hyperboloid", "euclidean")
# Floor on <u,v>^2 - 1 (hyperboloid) or |u-v|^2 (euclidean) in gradient denominators.
GRADIENT_FLOOR = 1e-6


def _check_mode(mode: str, geometry: str) -> None:
    if mode not in SCORE_MODES:
        raise ConfigError(f"unknown score mode {mode!r}; expected one of {SCORE_MODES}")
    if geometry not in GEOMETRIES:
        raise ConfigError(f"unknown geometry {geometry!r}; expected one of {GEOMETRIES}")


# ---------------------------------------------------------------------------
# Scores
# ---------------------------------------------------------------------------

def score(u, v, mode: str = "neg_inner", geometry: str = "hyperboloid") -> np.ndarray:
    _check_mode(mode, geometry)
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if geometry == "hyperboloid":
        if mode == "neg_inner":
            return geo.minkowski_inner(u, v)
        return -geo.hyperboloid_distance(u, v)
    if mode == "neg_inner":
        return np.sum(u * v, axis=-1)
    return -np.linalg.norm(u - v, axis=-1)


def score_gradients(u, v, mode: str = "neg_inner", geometry: str = "hyperboloid",
                    floor: float = GRADIENT_FLOOR):
    """Return ``(ds/du, ds/dv)`` for :func:`score`."""
    _check_mode(mode, geometry)
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if geometry == "hyperboloid":
        if mode == "neg_inner":
            gu, gv = geo.apply_metric(v), geo.apply_metric(u)
            return np.broadcast_arrays(gu, gv)
        return (-geo.distance_gradient(v, u, floor=floor),
                -geo.distance_gradient(u, v, floor=floor))
    if mode == "neg_inner":
        return np.broadcast_arrays(v, u)
    diff = u - v
    norm = np.sqrt(np.maximum(np.sum(diff * diff, axis=-1), floor))[..., None]
    return -diff / norm, diff / norm


# ---------------------------------------------------------------------------
# BPR
# ---------------------------------------------------------------------------

def bpr_loss(s_ui, s_uj, lam: float = 0.0, reg_term: float = 0.0):
    """``-ln sigma(s_ui - s_uj) + lam * reg_term``, evaluated without overflow."""
    return np.logaddexp(0.0, -(np.asarray(s_ui) - np.asarray(s_uj))) + lam * reg_term


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


def bpr_gradients(u, v_pos, v_neg, mode: str = "neg_inner", geometry: str = "hyperboloid",
                  floor: float = GRADIENT_FLOOR):
    """Loss and gradients of unregularised BPR for a batch of triplets.

    Returns ``(loss, d/du, d/dv_pos, d/dv_neg)``.
    """
    s_ui = score(u, v_pos, mode, geometry)
    s_uj = score(u, v_neg, mode, geometry)
    loss = bpr_loss(s_ui, s_uj)
    # dL/d(s_ui - s_uj) = -sigma(-(s_ui - s_uj))
    coef = -_sigmoid(-(s_ui - s_uj))[..., None]
    gu_i, gi = score_gradients(u, v_pos, mode, geometry, floor)
    gu_j, gj = score_gradients(u, v_neg, mode, geometry, floor)
    return loss, coef * (gu_i - gu_j), coef * gi, -coef * gj


# ---------------------------------------------------------------------------
# WMRB
# ---------------------------------------------------------------------------

def wmrb_rank(d_pos, d_negs, slack: float = 1.0):
    """Margin-rank approximation ``sum_k max(0, slack + d_pos - d_k)``.

    ``d_negs`` has the negatives on its last axis; ``d_pos`` broadcasts
    against ``d_negs[..., 0]``.
    """
    if slack <= 0:
        raise DomainError("slack must be positive")
    d_pos = np.asarray(d_pos, dtype=np.float64)
    d_negs = np.asarray(d_negs, dtype=np.float64)
    return np.maximum(slack + d_pos[..., None] - d_negs, 0.0).sum(axis=-1)


def wmrb_loss(d_pos, d_negs, slack: float = 1.0):
    """``log(1 + rank)``."""
    return np.log1p(wmrb_rank(d_pos, d_negs, slack))


def wmrb_gradients_arrays(u, v_pos, v_negs, slack: float = 1.0, mode: str = "neg_inner",
                          geometry: str = "hyperboloid", floor: float = GRADIENT_FLOOR):
    """Batched WMRB loss and gradients.

    Shapes: ``u`` and ``v_pos`` are (B, D), ``v_negs`` is (B, N, D).
    Dissimilarity is ``-score``. A negative k is active when
    ``slack + dis_pos - dis_k > 0`` (strict); inactive negatives get zero
    gradient.

    Returns ``(loss (B,), d/du (B, D), d/dv_pos (B, D), d/dv_negs (B, N, D))``.
    """
    if slack <= 0:
        raise DomainError("slack must be positive")
    u = np.asarray(u, dtype=np.float64)
    v_pos = np.asarray(v_pos, dtype=np.float64)
    v_negs = np.asarray(v_negs, dtype=np.float64)
    u_n = u[..., None, :]
    dis_pos = -score(u, v_pos, mode, geometry)
    dis_neg = -score(u_n, v_negs, mode, geometry)
    margin = slack + dis_pos[..., None] - dis_neg
    active = margin > 0
    rank = np.where(active, margin, 0.0).sum(axis=-1)
    loss = np.log1p(rank)
    inv = 1.0 / (1.0 + rank)
    n_active = active.sum(axis=-1)

    su_pos, sv_pos = score_gradients(u, v_pos, mode, geometry, floor)
    su_neg, sv_neg = score_gradients(u_n, v_negs, mode, geometry, floor)
    # d dis / d x = -d score / d x
    w_neg = (active * inv[..., None])[..., None]
    g_pos = -(n_active * inv)[..., None] * sv_pos
    g_negs = w_neg * sv_neg
    g_u = -(n_active * inv)[..., None] * su_pos + (w_neg * su_neg).sum(axis=-2)
    return loss, g_u, g_pos, g_negs


# ---------------------------------------------------------------------------
# Regularisation
# ---------------------------------------------------------------------------

def origin_penalty(x, geometry: str = "hyperboloid"):
    """Squared distance to the origin: ``arccosh(x_0)^2`` or ``|x|^2``."""
    x = np.asarray(x, dtype=np.float64)
    if geometry == "hyperboloid":
        return np.arccosh(np.maximum(x[..., 0], 1.0)) ** 2
    return np.sum(x * x, axis=-1)


def origin_penalty_gradient(x, geometry: str = "hyperboloid"):
    x = np.asarray(x, dtype=np.float64)
    if geometry == "euclidean":
        return 2.0 * x
    x0 = np.maximum(x[..., 0], 1.0)
    t = x0 - 1.0
    # arccosh(x0) / sqrt(x0^2 - 1) -> 1 - t/3 as x0 -> 1
    near = t < 1e-8
    ratio = np.where(near, 1.0 - t / 3.0,
                     np.arccosh(x0) / np.sqrt(np.where(near, 1.0, x0 * x0 - 1.0)))
    g = np.zeros_like(x)
    g[..., 0] = 2.0 * ratio
    return g


# ---------------------------------------------------------------------------
# Backpropagation through the Einstein midpoint
# ---------------------------------------------------------------------------

def midpoint_jacobian(history, j: int, weights=None) -> np.ndarray:
    """Full Jacobian ``d m / d k_j`` of the Einstein midpoint (n x n).

    With ``S = sum_k w_k gamma_k``:
    ``J = w_j (gamma_j I + gamma_j^3 (k_j - m) k_j^T) / S``.
    """
    k = np.asarray(history, dtype=np.float64)
    if k.ndim != 2 or k.shape[0] == 0:
        raise DomainError("history must be a non-empty (m, n) array")
    if not 0 <= j < k.shape[0]:
        raise IndexError(j)
    gamma = geo.lorentz_gamma(k)
    w = np.ones_like(gamma) if weights is None else np.asarray(weights, dtype=np.float64)
    total = np.sum(w * gamma)
    m = (w * gamma) @ k / total
    kj, gj = k[j], gamma[j]
    jac = gj * np.eye(k.shape[1]) + gj**3 * np.outer(kj - m, kj)
    return w[j] * jac / total


def midpoint_jacobian_apply(upstream, history, j: int, weights=None) -> np.ndarray:
    """Vector-Jacobian product ``upstream^T (d m / d k_j)``.

    This is the gradient with respect to history point ``j`` given the
    gradient ``upstream`` with respect to the midpoint.
    """
    a = np.asarray(upstream, dtype=np.float64)
    k = np.asarray(history, dtype=np.float64)
    if k.ndim != 2 or k.shape[0] == 0:
        raise DomainError("history must be a non-empty (m, n) array")
    if not 0 <= j < k.shape[0]:
        raise IndexError(j)
    gamma = geo.lorentz_gamma(k)
    w = np.ones_like(gamma) if weights is None else np.asarray(weights, dtype=np.float64)
    total = np.sum(w * gamma)
    m = (w * gamma) @ k / total
    kj, gj = k[j], gamma[j]
    return w[j] * (gj * a + gj**3 * np.dot(a, kj - m) * kj) / total


def lift_vjp(upstream, k) -> np.ndarray:
    """VJP of :func:`geometry.klein_to_hyperboloid` (``(n+1,) -> (n,)``)."""
    a = np.asarray(upstream, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    gamma = geo.lorentz_gamma(k)[..., None]
    a0, a_s = a[..., :1], a[..., 1:]
    inner = np.sum(a_s * k, axis=-1, keepdims=True)
    return gamma**3 * (a0 + inner) * k + gamma * a_s


def klein_projection_vjp(upstream, x) -> np.ndarray:
    """VJP of :func:`geometry.hyperboloid_to_klein` (``(n,) -> (n+1,)``)."""
    b = np.asarray(upstream, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    x0 = x[..., :1]
    g0 = -np.sum(b * x[..., 1:], axis=-1, keepdims=True) / (x0 * x0)
    return np.concatenate([g0, b / x0], axis=-1)


class MidpointAggregate:
    """Users as Einstein midpoints of item histories, with a backward pass.

    Parameters
    ----------
    item_points : ndarray, shape (m, n+1)
        Hyperboloid points of all history entries, concatenated.
    segments : ndarray of int, shape (m,)
        Which user (``0 .. n_users-1``) each entry belongs to.
    """

    def __init__(self, item_points, segments, n_users: int):
        self.x = np.asarray(item_points, dtype=np.float64)
        self.segments = np.asarray(segments)
        self.k = geo.hyperboloid_to_klein(self.x)
        self.mid, self.gamma, self.sums = geo.segment_einstein_midpoint(
            self.k, self.segments, n_users)
        self.users = geo.klein_to_hyperboloid(self.mid)

    def backward(self, grad_users) -> np.ndarray:
        """Map (n_users, n+1) ambient user gradients to (m, n+1) entry gradients."""
        g_mid = lift_vjp(grad_users, self.mid)[self.segments]
        m = self.mid[self.segments]
        g = self.gamma[:, None]
        dot = np.sum(g_mid * (self.k - m), axis=-1, keepdims=True)
        g_k = (g * g_mid + g**3 * dot * self.k) / self.sums[self.segments][:, None]
        return klein_projection_vjp(g_k, self.x)


class MeanAggregate:
    """Euclidean counterpart of :class:`MidpointAggregate`: users are item means."""

    def __init__(self, item_points, segments, n_users: int):
        self.x = np.asarray(item_points, dtype=np.float64)
        self.segments = np.asarray(segments)
        self.counts = np.bincount(self.segments, minlength=n_users).astype(np.float64)
        if np.any(self.counts == 0):
            raise DomainError("every user needs at least one history item")
        total = np.zeros((n_users, self.x.shape[-1]))
        np.add.at(total, self.segments, self.x)
        self.users = total / self.counts[:, None]

    def backward(self, grad_users) -> np.ndarray:
        return np.asarray(grad_users)[self.segments] / self.counts[self.segments][:, None]


# ---------------------------------------------------------------------------
# Single-example convenience API
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Triplet:
    user: int
    positive_item: int
    negative_item: int

    def __post_init__(self):
        if self.positive_item == self.negative_item:
            raise DomainError("positive and negative item must differ")


@dataclass(frozen=True)
class WmrbBatch:
    """One positive with its sampled negatives.

    ``history`` is only used for asymmetric users (the items aggregated into
    the user representation).
    """

    user: int
    positive_item: int
    negative_items: tuple
    slack: float = 1.0
    history: tuple = ()

    def __post_init__(self):
        if len(self.negative_items) == 0:
            raise DomainError("need at least one negative item")
        if self.slack <= 0:
            raise DomainError("slack must be positive")


@dataclass
class LossGradients:
    loss: float
    wrt_positive: np.ndarray
    wrt_negatives: list
    # item id -> gradient (asymmetric) or user id -> gradient (symmetric)
    wrt_user_items: dict = field(default_factory=dict)


def wmrb_gradients(batch: WmrbBatch, items, users=None, user_repr_mode: str = "symmetric",
                   mode: str = "neg_inner", geometry: str = "hyperboloid",
                   floor: float = GRADIENT_FLOOR) -> LossGradients:
    """WMRB gradients for a single :class:`WmrbBatch`.

    ``items`` (and ``users`` in symmetric mode) are row-indexed point arrays.
    In asymmetric mode the user gradient is pushed through the aggregation to
    every history item, so ``wrt_user_items`` is keyed by item id.
    """
    items = np.asarray(items, dtype=np.float64)
    negs = list(batch.negative_items)
    if user_repr_mode == "symmetric":
        if users is None:
            raise ConfigError("symmetric mode needs a user table")
        u = np.asarray(users, dtype=np.float64)[batch.user]
        agg = None
    elif user_repr_mode == "asymmetric":
        hist = list(batch.history)
        if not hist:
            raise DomainError("asymmetric mode needs a non-empty history")
        cls = MidpointAggregate if geometry == "hyperboloid" else MeanAggregate
        agg = cls(items[hist], np.zeros(len(hist), dtype=int), 1)
        u = agg.users[0]
    else:
        raise ConfigError(f"unknown user_repr_mode {user_repr_mode!r}")

    loss, g_u, g_pos, g_negs = wmrb_gradients_arrays(
        u[None], items[batch.positive_item][None], items[negs][None],
        batch.slack, mode, geometry, floor)
    if agg is None:
        by_owner = {batch.user: g_u[0]}
    else:
        by_owner = {}
        for item, g in zip(batch.history, agg.backward(g_u)):
            by_owner[item] = by_owner.get(item, 0.0) + g
    return LossGradients(float(loss[0]), g_pos[0], list(g_negs[0]), by_owner)
