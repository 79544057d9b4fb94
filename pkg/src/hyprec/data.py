"""Interaction ingestion, filtering, leave-one-out splits and negative sampling."""

from __future__ import annotations

import csv
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

FORMATS = {"csv_rating": ("user", "item", "rating", "timestamp"),
           "csv_implicit": ("user", "item", "timestamp")}

MANIFEST_NAME = "split_manifest.txt"
TRAIN_NAME = "train.csv"
USER_IDS_NAME = "user_ids.txt"
ITEM_IDS_NAME = "item_ids.txt"


class Interaction(NamedTuple):
    user: str
    item: str
    rating: float | None
    timestamp: int


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

def _parse_timestamp(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        value = float(text)
        if not value.is_integer():
            raise
        return int(value)


def _is_numeric(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def load_interactions(path, format: str = "csv_rating", delimiter: str = ",") -> list[Interaction]:
    """Read ``user,item,rating,timestamp`` or ``user,item,timestamp`` rows.

    A first row whose timestamp field is not numeric is treated as a header.
    File order is preserved. Ids stay opaque strings here; dense integer ids
    are assigned by :func:`chronological_split`.
    """
    if format not in FORMATS:
        raise ConfigError(f"unknown format {format!r}; expected one of {sorted(FORMATS)}")
    ncols = len(FORMATS[format])
    has_rating = format == "csv_rating"
    out: list[Interaction] = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh, delimiter=delimiter), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            row = [c.strip() for c in row]
            if len(row) != ncols:
                raise DataError(f"{path}:{lineno}: expected {ncols} fields, got {len(row)}")
            if lineno == 1 and not out and not _is_numeric(row[-1]):
                continue
            try:
                ts = _parse_timestamp(row[-1])
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad timestamp {row[-1]!r}") from None
            rating = None
            if has_rating:
                try:
                    rating = float(row[2])
                except ValueError:
                    raise DataError(f"{path}:{lineno}: bad rating {row[2]!r}") from None
            out.append(Interaction(row[0], row[1], rating, ts))
    if not out:
        raise DataError(f"{path}: no interactions")
    return out


# ---------------------------------------------------------------------------
# Filtering
# ---------------------------------------------------------------------------

def filter_positive(interactions, min_rating: float | None = None) -> list[Interaction]:
    """Keep interactions rated at least ``min_rating``; identity when it is None."""
    interactions = list(interactions)
    if min_rating is None:
        return interactions
    if any(x.rating is None for x in interactions):
        raise ConfigError("min_rating given but some interactions have no rating")
    return [x for x in interactions if x.rating >= min_rating]


def filter_min_interactions(interactions, k: int) -> list[Interaction]:
    """Keep users with strictly more than ``k`` interactions (single pass)."""
    interactions = list(interactions)
    counts: dict[str, int] = {}
    for x in interactions:
        counts[x.user] = counts.get(x.user, 0) + 1
    return [x for x in interactions if counts[x.user] > k]


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------

@dataclass
class InteractionDataset:
    """Leave-one-out split with dense integer ids.

    ``train[u]`` is user ``u``'s training items in time order. ``validation``
    and ``test`` map users to a single held-out item and only contain items
    that occur in training (the catalog is the set of training items).
    """

    user_ids: list[str]
    item_ids: list[str]
    train: list[np.ndarray]
    validation: dict[int, int]
    test: dict[int, int]
    train_times: list[np.ndarray] = field(default_factory=list)
    holdout_times: dict[str, dict[int, int]] = field(default_factory=dict)
    # held-out items that never occur in training, kept for negative exclusion
    unseen_holdouts: dict[int, list[str]] = field(default_factory=dict)

    def __post_init__(self):
        self.frequencies = np.zeros(len(self.item_ids), dtype=np.int64)
        for items in self.train:
            np.add.at(self.frequencies, items, 1)
        self._user_item_keys = None

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def catalog(self) -> np.ndarray:
        return np.arange(self.n_items)

    def train_pairs(self):
        """Flattened ``(users, items)`` arrays of all training interactions."""
        lengths = np.array([len(t) for t in self.train], dtype=np.int64)
        users = np.repeat(np.arange(self.n_users), lengths)
        items = np.concatenate(self.train) if self.train else np.zeros(0, dtype=np.int64)
        return users, items.astype(np.int64)

    def history_csr(self):
        """``(indptr, indices)`` of training histories."""
        lengths = np.array([len(t) for t in self.train], dtype=np.int64)
        indptr = np.concatenate([[0], np.cumsum(lengths)])
        return indptr, self.train_pairs()[1]

    def interacted(self, user: int) -> np.ndarray:
        """Every catalog item the user touched in any split."""
        extra = [d[user] for d in (self.validation, self.test) if user in d]
        return np.unique(np.concatenate([self.train[user], np.asarray(extra, dtype=np.int64)]))

    def train_item_keys(self) -> np.ndarray:
        """Sorted ``user * n_items + item`` keys of training pairs (membership tests)."""
        if self._user_item_keys is None:
            u, i = self.train_pairs()
            self._user_item_keys = np.unique(u * self.n_items + i)
        return self._user_item_keys


def chronological_split(interactions) -> InteractionDataset:
    """Per user: most recent interaction to test, second most recent to validation.

    Ties on timestamp go to the later file position. Repeated (user, item)
    pairs keep only their most recent occurrence so the three splits stay
    disjoint. Users left with fewer than 3 interactions are dropped.
    """
    per_user: "OrderedDict[str, list]" = OrderedDict()
    for pos, x in enumerate(interactions):
        per_user.setdefault(x.user, []).append((x.timestamp, pos, x.item))

    kept = OrderedDict()
    dropped = 0
    for user, rows in per_user.items():
        rows.sort()
        latest: dict[str, tuple] = {}
        for row in rows:
            latest[row[2]] = row
        rows = sorted(latest.values())
        if len(rows) < 3:
            dropped += 1
            continue
        kept[user] = rows
    if dropped:
        log.info("dropped %d users with fewer than 3 interactions", dropped)
    if not kept:
        raise DataError("no user has at least 3 interactions")

    # Dense item ids follow first appearance in the file among training rows.
    first_seen: dict[str, int] = {}
    for rows in kept.values():
        for ts, pos, item in rows[:-2]:
            if item not in first_seen or pos < first_seen[item]:
                first_seen[item] = pos
    item_ids = sorted(first_seen, key=first_seen.__getitem__)
    item_index = {it: n for n, it in enumerate(item_ids)}

    user_ids = list(kept)
    train, train_times = [], []
    validation, test = {}, {}
    times = {"validation": {}, "test": {}}
    unseen: dict[int, list[str]] = {}
    for u, rows in enumerate(kept.values()):
        train.append(np.array([item_index[r[2]] for r in rows[:-2]], dtype=np.int64))
        train_times.append(np.array([r[0] for r in rows[:-2]], dtype=np.int64))
        for name, target, row in (("validation", validation, rows[-2]), ("test", test, rows[-1])):
            if row[2] in item_index:
                target[u] = item_index[row[2]]
                times[name][u] = row[0]
            else:
                unseen.setdefault(u, []).append(row[2])
    n_unseen = sum(len(v) for v in unseen.values())
    if n_unseen:
        log.info("removed %d held-out interactions with items unseen in training", n_unseen)
    return InteractionDataset(user_ids, item_ids, train, validation, test,
                              train_times=train_times, holdout_times=times,
                              unseen_holdouts=unseen)


def build_dataset(path, format: str = "csv_rating", min_rating: float | None = None,
                  min_interactions: int = 0, delimiter: str = ",") -> InteractionDataset:
    """Load, filter and split in one call."""
    rows = load_interactions(path, format, delimiter)
    rows = filter_positive(rows, min_rating)
    rows = filter_min_interactions(rows, min_interactions)
    return chronological_split(rows)


# ---------------------------------------------------------------------------
# Negative sampling
# ---------------------------------------------------------------------------

def sample_negatives(user: int, n: int, dataset: InteractionDataset, seed: int = 0,
                     draw: int = 0) -> np.ndarray:
    """``n`` distinct catalog items the user never interacted with.

    Deterministic in ``(seed, user, draw)``.
    """
    eligible = np.setdiff1d(dataset.catalog, dataset.interacted(user), assume_unique=True)
    if len(eligible) < n:
        raise DataError(f"user {dataset.user_ids[user]!r} has only {len(eligible)} "
                        f"eligible negatives, {n} requested")
    rng = np.random.default_rng([seed, user, draw])
    return rng.choice(eligible, size=n, replace=False)


def sample_train_negatives(rng: np.random.Generator, users, n: int,
                           dataset: InteractionDataset) -> np.ndarray:
    """Uniform negatives (with replacement) outside each user's training history.

    Returns an int array of shape ``(len(users), n)``.
    """
    users = np.asarray(users, dtype=np.int64)
    keys = dataset.train_item_keys()
    n_items = dataset.n_items
    lengths = np.array([len(dataset.train[u]) for u in np.unique(users)])
    if np.any(lengths >= n_items):
        raise DataError("a user has interacted with every catalog item")
    out = rng.integers(0, n_items, size=(len(users), n))
    bad = np.ones(out.shape, dtype=bool)
    while True:
        cand = users[:, None] * n_items + out
        pos = np.searchsorted(keys, cand)
        pos = np.minimum(pos, len(keys) - 1)
        bad = keys[pos] == cand
        if not bad.any():
            return out
        out[bad] = rng.integers(0, n_items, size=int(bad.sum()))


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def save_split(dataset: InteractionDataset, out_dir, meta: dict | None = None) -> Path:
    """Write the split so training can replay it exactly.

    Files: ``split_manifest.txt`` (metadata and per-user hold-outs),
    ``train.csv`` (``user,item,timestamp`` in original ids), and the
    dense-id maps ``user_ids.txt`` / ``item_ids.txt``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / USER_IDS_NAME, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{u}\n" for u in dataset.user_ids)
    with open(out / ITEM_IDS_NAME, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{i}\n" for i in dataset.item_ids)
    with open(out / TRAIN_NAME, "w", encoding="utf-8", newline="\n") as fh:
        for u, (items, times) in enumerate(zip(dataset.train, dataset.train_times)):
            uid = dataset.user_ids[u]
            fh.writelines(f"{uid},{dataset.item_ids[i]},{t}\n" for i, t in zip(items, times))
    with open(out / MANIFEST_NAME, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# hyprec-split v1\n")
        for key, value in sorted((meta or {}).items()):
            fh.write(f"{key}={value}\n")
        fh.write(f"n_users={dataset.n_users}\nn_items={dataset.n_items}\n")
        for u, uid in enumerate(dataset.user_ids):
            cols = [uid]
            for name, d in (("validation", dataset.validation), ("test", dataset.test)):
                if u in d:
                    cols += [dataset.item_ids[d[u]], str(dataset.holdout_times[name][u])]
                else:
                    cols += ["-", "-"]
            cols.append(";".join(dataset.unseen_holdouts.get(u, [])) or "-")
            fh.write("holdout\t" + "\t".join(cols) + "\n")
    return out


def read_manifest_meta(split_dir) -> dict:
    path = Path(split_dir) / MANIFEST_NAME
    if not path.exists():
        raise DataError(f"no split manifest at {path}; run the split command first")
    meta = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("#") or line.startswith("holdout\t") or not line:
                continue
            key, _, value = line.partition("=")
            meta[key] = value
    return meta


def load_split(split_dir) -> InteractionDataset:
    """Inverse of :func:`save_split`."""
    d = Path(split_dir)
    if not (d / MANIFEST_NAME).exists():
        raise DataError(f"no split manifest in {d}; run the split command first")
    user_ids = (d / USER_IDS_NAME).read_text(encoding="utf-8").splitlines()
    item_ids = (d / ITEM_IDS_NAME).read_text(encoding="utf-8").splitlines()
    uidx = {u: n for n, u in enumerate(user_ids)}
    iidx = {i: n for n, i in enumerate(item_ids)}
    train = [[] for _ in user_ids]
    times = [[] for _ in user_ids]
    with open(d / TRAIN_NAME, encoding="utf-8", newline="") as fh:
        for row in csv.reader(fh):
            u = uidx[row[0]]
            train[u].append(iidx[row[1]])
            times[u].append(int(row[2]))
    validation, test = {}, {}
    holdout_times = {"validation": {}, "test": {}}
    unseen = {}
    with open(d / MANIFEST_NAME, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("holdout\t"):
                continue
            _, uid, vi, vt, ti, tt, extra = line.rstrip("\n").split("\t")
            u = uidx[uid]
            if vi != "-":
                validation[u] = iidx[vi]
                holdout_times["validation"][u] = int(vt)
            if ti != "-":
                test[u] = iidx[ti]
                holdout_times["test"][u] = int(tt)
            if extra != "-":
                unseen[u] = extra.split(";")
    return InteractionDataset(user_ids, item_ids,
                              [np.array(t, dtype=np.int64) for t in train],
                              validation, test,
                              train_times=[np.array(t, dtype=np.int64) for t in times],
                              holdout_times=holdout_times, unseen_holdouts=unseen)
