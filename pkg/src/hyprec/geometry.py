"""Hyperbolic geometry on the hyperboloid, Klein and Poincare models.

Conventions
-----------
Points and vectors are float64 numpy arrays whose *last* axis holds the
coordinates; every function broadcasts over leading axes.

* A hyperboloid point has ``n + 1`` coordinates, ``x[..., 0]`` is the
  timelike one, and ``<x, x>_H = -1`` with ``x[..., 0] >= 1``.
* A tangent vector at ``x`` has ``n + 1`` coordinates with ``<v, x>_H = 0``.
* Klein and Poincare points have ``n`` coordinates and Euclidean norm < 1.

Curvature is fixed at -1.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, DomainError, SingularityError

# Below this Minkowski norm a tangent vector is treated as zero by exp_map.
EXP_ZERO_NORM = 1e-12
# Default floor on <u,v>^2 - 1 before distance_gradient refuses to divide.
SINGULARITY_FLOOR = 1e-12
# 1 - |k|^2 at or below this is treated as the ideal boundary.
BALL_EPS = 1e-15
# Tolerance used by check_hyperboloid.
MANIFOLD_TOL = 1e-9
# -<u,v>_H - 1 below which distances use the chord formula (d below about 1.4e-4).
NEAR_DISTANCE_ARG = 1e-8


def _as_float(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _check_pair(u: np.ndarray, v: np.ndarray) -> None:
    if u.shape[-1] != v.shape[-1]:
        raise DimensionError(f"coordinate lengths differ: {u.shape[-1]} vs {v.shape[-1]}")
    if u.shape[-1] < 2:
        raise DimensionError("Minkowski vectors need at least 2 coordinates")


# ---------------------------------------------------------------------------
# Minkowski space
# ---------------------------------------------------------------------------

def apply_metric(v) -> np.ndarray:
    """Multiply by the Minkowski metric diag(-1, 1, ..., 1).

    The metric is its own inverse, so this also applies ``g^-1``.
    """
    out = np.array(v, dtype=np.float64, copy=True)
    out[..., 0] = -out[..., 0]
    return out


def minkowski_inner(u, v) -> np.ndarray:
    """``-u_0 v_0 + sum_i u_i v_i`` along the last axis."""
    u = _as_float(u)
    v = _as_float(v)
    _check_pair(u, v)
    return np.sum(u[..., 1:] * v[..., 1:], axis=-1) - u[..., 0] * v[..., 0]


def minkowski_norm(v) -> np.ndarray:
    """Norm of a (spacelike) tangent vector; negative round-off is clamped to 0."""
    return np.sqrt(np.maximum(minkowski_inner(v, v), 0.0))


def origin(dim: int) -> np.ndarray:
    """The hyperboloid point ``(1, 0, ..., 0)`` of intrinsic dimension ``dim``."""
    o = np.zeros(dim + 1)
    o[0] = 1.0
    return o


def lift_spatial(spatial) -> np.ndarray:
    """Complete spatial coordinates to a hyperboloid point by solving for ``x_0``."""
    spatial = _as_float(spatial)
    x0 = np.sqrt(1.0 + np.sum(spatial * spatial, axis=-1, keepdims=True))
    return np.concatenate([x0, spatial], axis=-1)


def renormalize(x) -> np.ndarray:
    """Snap a near-hyperboloid point back onto the upper sheet.

    The spatial part is kept and ``x_0`` is recomputed, which also forces
    ``x_0 >= 1`` even when round-off has pushed ``<x,x>_H`` towards zero.
    """
    return lift_spatial(_as_float(x)[..., 1:])


def manifold_residual(x) -> np.ndarray:
    """``|<x,x>_H + 1|``."""
    return np.abs(minkowski_inner(x, x) + 1.0)


def check_hyperboloid(x, tol: float = MANIFOLD_TOL) -> np.ndarray:
    """Return ``x`` as an array, raising DomainError if any row is off the upper sheet.

    The residual is allowed ``tol`` plus the float64 rounding error of the
    inner product itself, which grows like ``eps * x_0**2`` far from the origin.
    """
    x = _as_float(x)
    if x.shape[-1] < 2:
        raise DimensionError("hyperboloid points need at least 2 coordinates")
    if not np.all(np.isfinite(x)):
        raise DomainError("non-finite hyperboloid coordinates")
    slack = tol + 8.0 * np.finfo(np.float64).eps * x[..., 0] ** 2
    if np.any(x[..., 0] < 1.0 - tol) or np.any(manifold_residual(x) > slack):
        raise DomainError("point is not on the upper sheet of the hyperboloid")
    return x


# ---------------------------------------------------------------------------
# Hyperboloid model
# ---------------------------------------------------------------------------

def hyperboloid_distance(u, v) -> np.ndarray:
    """Geodesic distance ``arccosh(-<u,v>_H)``.

    The argument is clamped at 1 so round-off never produces NaN. For nearly
    coincident points, where arccosh loses about half the significant digits,
    the equivalent ``2 arcsinh(|u - v|_H / 2)`` is used instead; it is exact
    at ``u == v``.
    """
    u = _as_float(u)
    v = _as_float(v)
    arg = -minkowski_inner(u, v)
    d = np.arccosh(np.maximum(arg, 1.0))
    near = arg - 1.0 < NEAR_DISTANCE_ARG
    if np.any(near):
        diff = u - v
        chord = np.sqrt(np.maximum(minkowski_inner(diff, diff), 0.0))
        d = np.where(near, 2.0 * np.arcsinh(0.5 * chord), d)
    return d


def distance_gradient(u, v, floor: float | None = None) -> np.ndarray:
    """Ambient Euclidean gradient of ``d(u, v)`` with respect to ``v``.

    ``d = arccosh(-<u,v>_H)`` so ``dd/dv = -g u / sqrt(<u,v>_H^2 - 1)``. By
    symmetry the gradient with respect to ``u`` is ``distance_gradient(v, u)``.

    Parameters
    ----------
    floor : float, optional
        If given, ``<u,v>^2 - 1`` is clamped below at ``floor`` instead of
        raising. Without it, values at or under ``SINGULARITY_FLOOR`` raise
        :class:`SingularityError` (the gradient diverges as ``u -> v``).
    """
    u = _as_float(u)
    v = _as_float(v)
    ip = minkowski_inner(u, v)
    gap = ip * ip - 1.0
    if floor is None:
        if np.any(gap <= SINGULARITY_FLOOR):
            raise SingularityError("distance gradient is singular for coincident points")
    else:
        gap = np.maximum(gap, floor)
    return -apply_metric(u) / np.sqrt(gap)[..., None]


def project_to_tangent(x, v) -> np.ndarray:
    """Orthogonal projection of an ambient vector onto ``T_x H^n``: ``v + <x,v>_H x``."""
    x = _as_float(x)
    v = _as_float(v)
    return v + minkowski_inner(x, v)[..., None] * x


def exp_map(x, v) -> np.ndarray:
    """Exponential map ``cosh(|v|) x + sinh(|v|) v / |v|``, renormalized onto the sheet.

    Tangent vectors with norm below ``EXP_ZERO_NORM`` return ``x`` unchanged.
    """
    x = _as_float(x)
    v = _as_float(v)
    norm = minkowski_norm(v)[..., None]
    small = norm < EXP_ZERO_NORM
    safe = np.where(small, 1.0, norm)
    out = np.cosh(norm) * x + np.sinh(norm) * (v / safe)
    out = np.where(small, x, out)
    return renormalize(out)


def log_map(x, y) -> np.ndarray:
    """Inverse of :func:`exp_map`: the tangent vector at ``x`` pointing to ``y``."""
    x = _as_float(x)
    y = _as_float(y)
    d = hyperboloid_distance(x, y)[..., None]
    direction = y + minkowski_inner(x, y)[..., None] * x
    dnorm = minkowski_norm(direction)[..., None]
    scale = np.where(dnorm > EXP_ZERO_NORM, d / np.where(dnorm > 0, dnorm, 1.0), 0.0)
    return scale * direction


# ---------------------------------------------------------------------------
# Klein and Poincare balls
# ---------------------------------------------------------------------------

def _check_ball(k: np.ndarray, name: str) -> np.ndarray:
    sq = np.sum(k * k, axis=-1)
    if np.any(~np.isfinite(sq)) or np.any(1.0 - sq <= BALL_EPS):
        raise DomainError(f"{name} point must lie strictly inside the unit ball")
    return sq


def hyperboloid_to_klein(x) -> np.ndarray:
    """``x[1:] / x[0]``."""
    x = _as_float(x)
    return x[..., 1:] / x[..., :1]


def klein_to_hyperboloid(k) -> np.ndarray:
    """``(1, k) / sqrt(1 - |k|^2)``; raises DomainError on or outside the boundary."""
    k = _as_float(k)
    sq = _check_ball(k, "Klein")
    gamma = 1.0 / np.sqrt(1.0 - sq)[..., None]
    return np.concatenate([gamma, gamma * k], axis=-1)


def hyperboloid_to_poincare(x) -> np.ndarray:
    """Stereographic projection from ``(-1, 0, ..., 0)``: ``x[1:] / (1 + x[0])``."""
    x = _as_float(x)
    return x[..., 1:] / (1.0 + x[..., :1])


def poincare_to_hyperboloid(p) -> np.ndarray:
    """Inverse stereographic projection ``(1 + |p|^2, 2p) / (1 - |p|^2)``."""
    p = _as_float(p)
    sq = _check_ball(p, "Poincare")[..., None]
    denom = 1.0 - sq
    return np.concatenate([(1.0 + sq) / denom, 2.0 * p / denom], axis=-1)


def poincare_distance(u, v) -> np.ndarray:
    """``arccosh(1 + 2|u-v|^2 / ((1-|u|^2)(1-|v|^2)))``."""
    u = _as_float(u)
    v = _as_float(v)
    if u.shape[-1] != v.shape[-1]:
        raise DimensionError(f"coordinate lengths differ: {u.shape[-1]} vs {v.shape[-1]}")
    su = _check_ball(u, "Poincare")
    sv = _check_ball(v, "Poincare")
    diff = u - v
    arg = 1.0 + 2.0 * np.sum(diff * diff, axis=-1) / ((1.0 - su) * (1.0 - sv))
    return np.arccosh(arg)


def lorentz_gamma(k) -> np.ndarray:
    """Lorentz factor ``(1 - |k|^2)^(-1/2)`` of a Klein point."""
    k = _as_float(k)
    sq = _check_ball(k, "Klein")
    return 1.0 / np.sqrt(1.0 - sq)


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

def einstein_midpoint(points, weights=None) -> np.ndarray:
    """Lorentz-factor weighted average of Klein points.

    Parameters
    ----------
    points : array_like, shape (m, n)
        Klein points.
    weights : array_like, shape (m,), optional
        Positive masses; each multiplies its point's Lorentz factor.

    Returns
    -------
    ndarray, shape (n,)
    """
    k = _as_float(points)
    if k.ndim != 2 or k.shape[0] == 0:
        raise DomainError("einstein_midpoint needs a non-empty (m, n) array of points")
    gamma = lorentz_gamma(k)
    if weights is not None:
        w = _as_float(weights)
        if w.shape != gamma.shape:
            raise DimensionError("weights must have one entry per point")
        if np.any(w <= 0):
            raise DomainError("weights must be positive")
        gamma = gamma * w
    return gamma @ k / gamma.sum()


def segment_einstein_midpoint(points, segments, n_segments: int):
    """Einstein midpoints of many groups at once.

    ``points`` is (m, n) Klein coordinates and ``segments`` an int array of
    length m assigning each point to a group in ``range(n_segments)``. Every
    group must be non-empty. Returns ``(midpoints, gamma, gamma_sums)`` so
    callers can reuse the factors for backpropagation.
    """
    k = _as_float(points)
    segments = np.asarray(segments)
    gamma = lorentz_gamma(k)
    sums = np.bincount(segments, weights=gamma, minlength=n_segments)
    if np.any(sums == 0):
        raise DomainError("every segment needs at least one point")
    num = np.zeros((n_segments, k.shape[-1]))
    np.add.at(num, segments, gamma[:, None] * k)
    return num / sums[:, None], gamma, sums


def frechet_mean(points, iterations: int = 10, step: float = 0.3) -> np.ndarray:
    """Riemannian gradient descent on the mean squared distance to ``points``.

    Starts from the first point. The Riemannian gradient of
    ``(1/m) sum_i d(p, x_i)^2`` is ``-(2/m) sum_i Log_p(x_i)``.
    """
    x = check_hyperboloid(points)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DomainError("frechet_mean needs a non-empty (m, n+1) array of points")
    if iterations < 1 or step <= 0:
        raise DomainError("iterations and step must be positive")
    p = x[0].copy()
    m = x.shape[0]
    for _ in range(iterations):
        grad = -2.0 / m * log_map(p, x).sum(axis=0)
        p = exp_map(p, project_to_tangent(p, -step * grad))
    return p
