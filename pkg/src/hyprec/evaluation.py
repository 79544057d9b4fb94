"""Sampled-negative ranking evaluation: HR@k and NDCG@k."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import InteractionDataset, sample_negatives
from .errors import ConfigError, DataError

# draw index used by sample_negatives for each split, so the two never share negatives
_SPLIT_DRAW = {"validation": 0, "test": 1}


@dataclass(frozen=True)
class EvalConfig:
    k: int = 10
    num_negatives: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.k < 1 or self.num_negatives < 1:
            raise ConfigError("k and num_negatives must be positive")
        if self.k > self.num_negatives + 1:
            raise ConfigError("k cannot exceed the number of candidates")


@dataclass
class EvalResult:
    hr_at_k: float
    ndcg_at_k: float
    users_evaluated: int
    per_user_ranks: np.ndarray
    users: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    k: int = 10

    def record(self) -> str:
        """Single-line ``key=value`` summary."""
        return (f"hr@{self.k}={self.hr_at_k:.6f} ndcg@{self.k}={self.ndcg_at_k:.6f} "
                f"users={self.users_evaluated}")


def rank_of_positive(positive, negatives, scores) -> int:
    """1-based rank of ``positive`` among itself and ``negatives``.

    ``scores`` maps item id to score (dict or array). Ties count against the
    positive.
    """
    try:
        pos = scores[positive]
        neg = np.array([scores[n] for n in negatives], dtype=np.float64)
    except (KeyError, IndexError) as exc:
        raise DataError(f"missing score for item {exc.args[0]!r}") from None
    if positive in set(negatives):
        raise DataError("positive item appears among the negatives")
    return int(1 + np.count_nonzero(neg >= pos))


def ranks_from_scores(pos_scores, neg_scores) -> np.ndarray:
    """Vectorised :func:`rank_of_positive`: ``(U,)`` and ``(U, N)`` -> ``(U,)``."""
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    return 1 + np.count_nonzero(neg >= pos[:, None], axis=1)


def hit_rate_at_k(ranks, k: int = 10) -> float:
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise DataError("hit rate is undefined for an empty rank list")
    return float(np.mean(ranks <= k))


def ndcg_at_k(ranks, k: int = 10) -> float:
    """Mean of ``1 / log2(rank + 1)`` for ranks within the cutoff (one relevant item per user)."""
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size == 0:
        raise DataError("NDCG is undefined for an empty rank list")
    gain = np.where(ranks <= k, 1.0 / np.log2(ranks + 1.0), 0.0)
    return float(np.mean(gain))


def random_hit_rate(k: int = 10, num_negatives: int = 100) -> float:
    """Expected HR@k when the positive's rank is uniform over all candidates."""
    return k / (num_negatives + 1)


def build_candidates(dataset: InteractionDataset, split: str, cfg: EvalConfig):
    """``(users, candidates)`` with the positive in column 0 and fixed negatives after it."""
    if split not in _SPLIT_DRAW:
        raise ConfigError(f"split must be one of {sorted(_SPLIT_DRAW)}")
    held = dataset.validation if split == "validation" else dataset.test
    users = np.array(sorted(held), dtype=np.int64)
    if users.size == 0:
        raise DataError(f"no evaluable users in the {split} split")
    cands = np.empty((users.size, cfg.num_negatives + 1), dtype=np.int64)
    for row, u in enumerate(users):
        cands[row, 0] = held[u]
        cands[row, 1:] = sample_negatives(int(u), cfg.num_negatives, dataset,
                                          cfg.seed, _SPLIT_DRAW[split])
    return users, cands


def evaluate_candidates(model, users, candidates, dataset: InteractionDataset,
                        k: int = 10) -> EvalResult:
    """Score pre-built candidate lists (positive first) with ``model.score_candidates``."""
    scores = model.score_candidates(users, candidates, dataset)
    ranks = ranks_from_scores(scores[:, 0], scores[:, 1:])
    return EvalResult(hit_rate_at_k(ranks, k), ndcg_at_k(ranks, k), int(users.size),
                      ranks, users, k)


def evaluate(model, split: str, dataset: InteractionDataset,
             cfg: EvalConfig = EvalConfig()) -> EvalResult:
    """HR@k / NDCG@k of ``model`` on the validation or test hold-outs.

    ``model`` needs a ``score_candidates(users, candidates, dataset)`` method
    returning an array of shape ``candidates.shape``.
    """
    users, cands = build_candidates(dataset, split, cfg)
    return evaluate_candidates(model, users, cands, dataset, cfg.k)


class PopularityModel:
    """Baseline scoring every item by its training frequency."""

    def score_candidates(self, users, candidates, dataset: InteractionDataset):
        return dataset.frequencies[np.asarray(candidates)].astype(np.float64)


class RandomModel:
    """Baseline with i.i.d. uniform scores (seeded)."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def score_candidates(self, users, candidates, dataset: InteractionDataset):
        return np.random.default_rng(self.seed).random(np.shape(candidates))


def write_ranks(path, result: EvalResult, dataset: InteractionDataset) -> None:
    """Per-user rank file (``user<TAB>rank``) for significance tests across runs."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for u, r in zip(result.users, result.per_user_ranks):
            fh.write(f"{dataset.user_ids[u]}\t{int(r)}\n")
