"""Bipartite interaction-graph statistics and discrete power-law fitting.

The power-law procedure is the usual one for degree data: discrete maximum
likelihood for ``P(x) ~ x^-gamma`` on ``x >= x_min`` (Hurwitz-zeta
normalisation), ``x_min`` chosen to minimise the Kolmogorov-Smirnov distance,
and a semi-parametric bootstrap for the goodness-of-fit p-value.
"""

from __future__ import annotations

import warnings
from functools import lru_cache
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.special import zeta

from .errors import DataError, FitError

GAMMA_BOUNDS = (1.0 + 1e-6, 30.0)
MIN_TAIL = 50
# inverse-CDF lookup table size for the power-law sampler
_TABLE_SPAN = 100_000


# ---------------------------------------------------------------------------
# Bipartite graph
# ---------------------------------------------------------------------------

@dataclass
class BipartiteGraph:
    """Unique user-item edges with dense indices on both sides."""

    users: np.ndarray
    items: np.ndarray
    n_users: int
    n_items: int

    @classmethod
    def from_pairs(cls, user_keys, item_keys) -> "BipartiteGraph":
        u_ids, u = np.unique(np.asarray(user_keys), return_inverse=True)
        i_ids, i = np.unique(np.asarray(item_keys), return_inverse=True)
        edges = np.unique(np.stack([u, i], axis=1), axis=0) if len(u) else np.zeros((0, 2), int)
        return cls(edges[:, 0], edges[:, 1], len(u_ids), len(i_ids))

    @classmethod
    def from_interactions(cls, interactions) -> "BipartiteGraph":
        rows = list(interactions)
        return cls.from_pairs([x.user for x in rows], [x.item for x in rows])

    @classmethod
    def from_dataset(cls, dataset) -> "BipartiteGraph":
        return cls.from_pairs(*dataset.train_pairs())

    @property
    def edge_count(self) -> int:
        return int(self.users.size)

    @property
    def user_degrees(self) -> np.ndarray:
        return np.bincount(self.users, minlength=self.n_users)

    @property
    def item_degrees(self) -> np.ndarray:
        return np.bincount(self.items, minlength=self.n_items)

    def incidence(self) -> sparse.csr_matrix:
        data = np.ones(self.edge_count)
        return sparse.csr_matrix((data, (self.users, self.items)),
                                 shape=(self.n_users, self.n_items))


@dataclass(frozen=True)
class BipartiteStats:
    n_users: int
    n_items: int
    edges: int
    density: float
    mean_item_degree: float


def bipartite_stats(graph: BipartiteGraph) -> BipartiteStats:
    if graph.edge_count == 0:
        raise DataError("empty interaction graph")
    return BipartiteStats(graph.n_users, graph.n_items, graph.edge_count,
                          graph.edge_count / (graph.n_users * graph.n_items),
                          graph.edge_count / graph.n_items)


def one_mode_projection(graph: BipartiteGraph, side: str = "item") -> sparse.csr_matrix:
    """Weighted co-occurrence graph on one side (diagonal removed).

    Quadratic in the node count; use :func:`projection_weighted_degrees`
    when only degrees are needed.
    """
    b = graph.incidence()
    if side == "item":
        w = (b.T @ b).tocsr()
    elif side == "user":
        w = (b @ b.T).tocsr()
    else:
        raise ValueError("side must be 'item' or 'user'")
    w.setdiag(0)
    w.eliminate_zeros()
    return w


def projection_weighted_degrees(graph: BipartiteGraph, side: str = "item") -> np.ndarray:
    """Weighted degrees of the one-mode projection without building it.

    An item's weighted degree is the number of (user, other item) pairs it
    shares, i.e. the sum over its users of ``deg(user) - 1``.
    """
    if side == "item":
        other = graph.user_degrees[graph.users] - 1
        return np.bincount(graph.items, weights=other, minlength=graph.n_items).astype(np.int64)
    if side == "user":
        other = graph.item_degrees[graph.items] - 1
        return np.bincount(graph.users, weights=other, minlength=graph.n_users).astype(np.int64)
    raise ValueError("side must be 'item' or 'user'")


def ccdf(values):
    """``(x, P(X >= x))`` over the distinct values of ``values``."""
    x, counts = np.unique(np.asarray(values), return_counts=True)
    tail = np.cumsum(counts[::-1])[::-1]
    return x, tail / tail[0]


# ---------------------------------------------------------------------------
# Power-law fit
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PowerLawFit:
    gamma_hat: float
    x_min: int
    ks_statistic: float
    n_tail: int
    n: int
    p_value: float = float("nan")


def _tail_summaries(values):
    x, counts = np.unique(values, return_counts=True)
    n_tail = np.cumsum(counts[::-1])[::-1]
    log_tail = np.cumsum((counts * np.log(x))[::-1])[::-1]
    return x, counts, n_tail, log_tail


def _mle_gamma(x_min, mean_log):
    """Vectorised discrete MLE: solve ``-d/dg log zeta(g, x_min) = mean_log`` by bisection.

    The log-likelihood is concave in gamma, so its derivative is monotone.
    """
    x_min = np.asarray(x_min, dtype=np.float64)
    lo = np.full(x_min.shape, GAMMA_BOUNDS[0])
    hi = np.full(x_min.shape, GAMMA_BOUNDS[1])
    h = 1e-7
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        dlogz = (np.log(zeta(mid + h, x_min)) - np.log(zeta(mid - h, x_min))) / (2 * h)
        # score = -dlogz - mean_log is decreasing in gamma
        up = -dlogz - mean_log > 0
        lo = np.where(up, mid, lo)
        hi = np.where(up, hi, mid)
    return 0.5 * (lo + hi)


def _ks_distance(x, counts, start, gamma):
    """KS distance between the empirical tail ``x[start:]`` and the fitted law."""
    xs = x[start:]
    c = counts[start:]
    emp = np.cumsum(c) / c.sum()
    model = 1.0 - zeta(gamma, xs + 1.0) / zeta(gamma, xs[0])
    return float(np.max(np.abs(emp - model)))


def _fit_sorted(values, x_min=None, min_tail: int = MIN_TAIL):
    x, counts, n_tail, log_tail = _tail_summaries(values)
    if x.size < 2:
        raise FitError("power-law fit needs at least two distinct values")
    if x_min is None:
        cand = np.flatnonzero((n_tail >= min_tail) & (np.arange(x.size) < x.size - 1))
        if cand.size == 0:
            raise FitError(f"fewer than {min_tail} samples in every candidate tail")
    else:
        cand = np.flatnonzero(x >= x_min)[:1]
        if cand.size == 0:
            raise FitError(f"no data at or above x_min={x_min}")
    gammas = _mle_gamma(x[cand], log_tail[cand] / n_tail[cand])
    ks = np.array([_ks_distance(x, counts, s, g) for s, g in zip(cand, gammas)])
    best = int(np.argmin(ks))
    s = cand[best]
    return PowerLawFit(float(gammas[best]), int(x[s]), float(ks[best]), int(n_tail[s]),
                       int(len(values)))


def powerlaw_fit(degrees, x_min: int | None = None, min_tail: int = MIN_TAIL) -> PowerLawFit:
    """Discrete power-law MLE with ``x_min`` chosen by minimum KS distance.

    Parameters
    ----------
    degrees : array_like of positive int
    x_min : int, optional
        Fix the lower cutoff instead of scanning for it.
    min_tail : int
        Candidate cutoffs must leave at least this many samples.
    """
    values = np.asarray(degrees)
    if values.size == 0 or np.any(values < 1) or np.any(values != np.round(values)):
        raise FitError("degrees must be positive integers")
    return _fit_sorted(values.astype(np.int64), x_min, min_tail)


@lru_cache(maxsize=8)
def _cdf_table(gamma: float, x_min: int) -> np.ndarray:
    # bootstraps sample the same law many times, so the table is cached
    xs = np.arange(x_min, x_min + _TABLE_SPAN, dtype=np.float64)
    cdf = 1.0 - zeta(gamma, xs + 1.0) / zeta(gamma, x_min)
    cdf.flags.writeable = False
    return cdf


def sample_discrete_powerlaw(gamma: float, x_min: int, size: int, rng) -> np.ndarray:
    """Exact inverse-CDF sampling of ``P(x) ~ x^-gamma`` on ``x >= x_min``.

    A lookup table covers ``[x_min, x_min + 100000)``; draws beyond it use
    the continuous approximation of the remaining tail.
    """
    rng = np.random.default_rng(rng)
    cdf = _cdf_table(float(gamma), int(x_min))
    u = rng.random(size)
    idx = np.searchsorted(cdf, u, side="right")
    out = (x_min + idx).astype(np.float64)
    beyond = idx >= _TABLE_SPAN
    if beyond.any():
        # condition on exceeding the table, then invert the continuous tail
        x_end = x_min + _TABLE_SPAN
        frac = (u[beyond] - cdf[-1]) / (1.0 - cdf[-1])
        out[beyond] = np.floor((x_end - 0.5) * (1.0 - frac) ** (-1.0 / (gamma - 1.0)) + 0.5)
    return out.astype(np.int64)


def ks_p_value(fit: PowerLawFit, degrees, bootstraps: int = 1000, seed: int = 0,
               min_tail: int = MIN_TAIL) -> float:
    """Semi-parametric bootstrap p-value for the power-law hypothesis.

    Each replicate keeps the sample size, draws each point from the fitted
    law with probability ``n_tail / n`` and otherwise resamples the
    empirical body below ``x_min``; the replicate is refitted (including the
    ``x_min`` scan) and counted when its KS distance is at least the
    observed one.
    """
    if bootstraps < 100:
        warnings.warn(f"{bootstraps} bootstraps give an unreliable p-value", RuntimeWarning,
                      stacklevel=2)
    values = np.asarray(degrees).astype(np.int64)
    body = values[values < fit.x_min]
    n = values.size
    p_tail = fit.n_tail / n
    seeds = np.random.SeedSequence(seed).spawn(bootstraps)
    hits = 0
    for ss in seeds:
        rng = np.random.default_rng(ss)
        n_t = rng.binomial(n, p_tail) if body.size else n
        synth = np.concatenate([
            sample_discrete_powerlaw(fit.gamma_hat, fit.x_min, n_t, rng),
            rng.choice(body, size=n - n_t) if body.size else np.zeros(0, np.int64),
        ])
        try:
            ks = _fit_sorted(synth, None, min_tail).ks_statistic
        except FitError:
            continue
        hits += ks >= fit.ks_statistic
    return hits / bootstraps


def fit_with_p_value(degrees, bootstraps: int = 1000, seed: int = 0) -> PowerLawFit:
    fit = powerlaw_fit(degrees)
    p = ks_p_value(fit, degrees, bootstraps, seed)
    return PowerLawFit(fit.gamma_hat, fit.x_min, fit.ks_statistic, fit.n_tail, fit.n, p)


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------

TABLE_HEADER = "dataset\tN_user\tN_item\tdensity\tmean_item_degree\tgamma_hat\tx_min\tKS\tp_value"


def table_row(name: str, stats: BipartiteStats, fit: PowerLawFit) -> str:
    return (f"{name}\t{stats.n_users}\t{stats.n_items}\t{stats.density:.4f}\t"
            f"{stats.mean_item_degree:.4f}\t{fit.gamma_hat:.4f}\t{fit.x_min}\t"
            f"{fit.ks_statistic:.4f}\t{fit.p_value:.4f}")
