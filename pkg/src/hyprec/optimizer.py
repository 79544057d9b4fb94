"""Riemannian SGD on the hyperboloid and embedding initialisation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry as geo
from .errors import ConfigError, DomainError


@dataclass(frozen=True)
class RsgdConfig:
    learning_rate: float = 0.1
    clip_norm: float | None = 1.0
    singularity_floor: float = 1e-12

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ConfigError("clip_norm must be positive when given")
        if not self.singularity_floor > 0:
            raise ConfigError("singularity_floor must be positive")


INIT_SCHEMES = ("cube_lift", "poincare_ball", "frequency_radius")


@dataclass(frozen=True)
class InitConfig:
    """How to place fresh points.

    ``frequencies`` (for ``frequency_radius``) is a sequence aligned with row
    indices, or a mapping from row index to count.
    """

    scheme: str = "cube_lift"
    width: float = 0.001
    frequencies: object = None

    def __post_init__(self):
        if self.scheme not in INIT_SCHEMES:
            raise ConfigError(f"unknown init scheme {self.scheme!r}; expected one of {INIT_SCHEMES}")
        if self.width < 0:
            raise ConfigError("width must be non-negative")
        if self.scheme == "frequency_radius" and self.frequencies is None:
            raise ConfigError("frequency_radius initialisation needs item frequencies")


def clip_tangent(v, max_norm: float) -> np.ndarray:
    """Rescale tangent vectors whose Minkowski norm exceeds ``max_norm``."""
    v = np.asarray(v, dtype=np.float64)
    norm = geo.minkowski_norm(v)[..., None]
    scale = np.where(norm > max_norm, max_norm / np.where(norm > 0, norm, 1.0), 1.0)
    return v * scale


def riemannian_gradient(x, euclid_grad, clip_norm: float | None = None) -> np.ndarray:
    """Metric correction, tangent projection and optional clipping of an ambient gradient."""
    h = geo.project_to_tangent(x, geo.apply_metric(euclid_grad))
    if clip_norm is not None:
        h = clip_tangent(h, clip_norm)
    return h


def rsgd_step(x, euclid_grad, cfg: RsgdConfig, learning_rate: float | None = None) -> np.ndarray:
    """One RSGD update ``Exp_x(-lr * clip(Pi_x(g^-1 grad)))``.

    Works row-wise on stacked points. ``learning_rate`` overrides
    ``cfg.learning_rate`` (used for decayed schedules).
    """
    grad = np.asarray(euclid_grad, dtype=np.float64)
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite gradient passed to rsgd_step")
    lr = cfg.learning_rate if learning_rate is None else learning_rate
    h = riemannian_gradient(x, grad, cfg.clip_norm)
    return geo.exp_map(x, -lr * h)


def sgd_step(x, grad, cfg: RsgdConfig, learning_rate: float | None = None) -> np.ndarray:
    """Flat-space twin of :func:`rsgd_step` with Euclidean norm clipping."""
    grad = np.asarray(grad, dtype=np.float64)
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite gradient passed to sgd_step")
    lr = cfg.learning_rate if learning_rate is None else learning_rate
    if cfg.clip_norm is not None:
        norm = np.linalg.norm(grad, axis=-1, keepdims=True)
        grad = grad * np.where(norm > cfg.clip_norm,
                               cfg.clip_norm / np.where(norm > 0, norm, 1.0), 1.0)
    return np.asarray(x, dtype=np.float64) - lr * grad


def _unit_directions(rng, count, dim):
    d = rng.standard_normal((count, dim))
    norms = np.linalg.norm(d, axis=1, keepdims=True)
    # a zero draw has probability zero but would divide by zero
    norms[norms == 0] = 1.0
    return d / norms


def init_embeddings(count: int, dim: int, cfg: InitConfig, rng_seed: int) -> np.ndarray:
    """Sample ``count`` hyperboloid points of intrinsic dimension ``dim``.

    ``cube_lift`` draws spatial coordinates in ``[-width, width]^dim`` and
    solves for ``x_0``. ``poincare_ball`` draws uniformly in a Poincare ball of
    radius ``width`` and lifts. ``frequency_radius`` draws a uniform
    direction at Poincare radius ``width / log(n_i)`` (``n_i <= 1`` counts as 2).
    """
    if count < 1 or dim < 2:
        raise DomainError("need count >= 1 and dim >= 2")
    rng = np.random.default_rng(rng_seed)
    if cfg.scheme == "cube_lift":
        spatial = rng.uniform(-cfg.width, cfg.width, size=(count, dim))
        return geo.lift_spatial(spatial)

    if cfg.scheme == "poincare_ball":
        radius = cfg.width * rng.uniform(size=(count, 1)) ** (1.0 / dim)
    else:
        freqs = cfg.frequencies
        if isinstance(freqs, dict):
            missing = [i for i in range(count) if i not in freqs]
            if missing:
                raise ConfigError(f"no frequency for ids {missing[:10]}")
            freqs = [freqs[i] for i in range(count)]
        freqs = np.asarray(freqs, dtype=np.float64)
        if freqs.shape != (count,):
            raise ConfigError(f"expected {count} frequencies, got {freqs.shape}")
        radius = (cfg.width / np.log(np.maximum(freqs, 2.0)))[:, None]
    if np.any(radius >= 1.0):
        raise ConfigError("initial Poincare radius must stay below 1")
    p = radius * _unit_directions(rng, count, dim)
    return geo.poincare_to_hyperboloid(p)


def init_euclidean(count: int, dim: int, cfg: InitConfig, rng_seed: int) -> np.ndarray:
    """Euclidean baseline initialisation: the same schemes without the lift."""
    if cfg.scheme == "cube_lift":
        rng = np.random.default_rng(rng_seed)
        return rng.uniform(-cfg.width, cfg.width, size=(count, dim))
    return geo.hyperboloid_to_poincare(init_embeddings(count, dim, cfg, rng_seed))
