"""Model assembly, training loop, ranking and embedding files."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import geometry as geo
from . import losses
from .data import InteractionDataset, sample_train_negatives
from .errors import ConfigError, DataError, DomainError
from .evaluation import EvalConfig, build_candidates, evaluate_candidates
from .optimizer import InitConfig, RsgdConfig, init_embeddings, init_euclidean, rsgd_step, sgd_step

log = logging.getLogger(__name__)

EMBEDDING_MAGIC = "hyprec-embeddings"
EMBEDDING_VERSION = "v1"
EXPORT_TARGETS = ("hyperboloid", "klein", "poincare")


@dataclass(frozen=True)
class ModelConfig:
    geometry: str = "hyperboloid"
    user_mode: str = "symmetric"
    loss: str = "wmrb"
    dim: int = 50
    negatives_per_positive: int = 100
    slack: float = 1.0
    lambda_reg: float = 0.01
    epochs: int = 10
    batch_size: int = 128
    seed: int = 0
    score_mode: str = "neg_distance"
    # multiplicative per-epoch learning-rate decay: lr_e = lr * (1 - lr_decay)^e
    lr_decay: float = 0.0

    def __post_init__(self):
        if self.geometry not in losses.GEOMETRIES:
            raise ConfigError(f"geometry must be one of {losses.GEOMETRIES}")
        if self.user_mode not in ("symmetric", "asymmetric"):
            raise ConfigError("user_mode must be 'symmetric' or 'asymmetric'")
        if self.loss not in ("bpr", "wmrb"):
            raise ConfigError("loss must be 'bpr' or 'wmrb'")
        if self.score_mode not in losses.SCORE_MODES:
            raise ConfigError(f"score_mode must be one of {losses.SCORE_MODES}")
        if self.loss == "bpr" and self.negatives_per_positive != 1:
            raise ConfigError("bpr uses exactly one negative per positive "
                              f"(got negatives_per_positive={self.negatives_per_positive})")
        for name in ("dim", "negatives_per_positive", "epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.geometry == "hyperboloid" and self.dim < 2:
            raise ConfigError("hyperboloid models need dim >= 2")
        if self.slack <= 0 or self.lambda_reg < 0 or not 0 <= self.lr_decay < 1:
            raise ConfigError("need slack > 0, lambda_reg >= 0 and 0 <= lr_decay < 1")


@dataclass
class EmbeddingTable:
    """Row-indexed points. Hyperboloid rows have ``dim + 1`` coordinates."""

    geometry: str
    dim: int
    items: np.ndarray
    users: np.ndarray | None = None
    frequencies: np.ndarray | None = None

    @property
    def parameter_count(self) -> int:
        n = self.items.size
        return n + (0 if self.users is None else self.users.size)

    def check(self) -> None:
        if self.geometry == "hyperboloid":
            geo.check_hyperboloid(self.items)
            if self.users is not None:
                geo.check_hyperboloid(self.users)


@dataclass
class EpochLog:
    epoch: int
    mean_loss: float
    val_hr: float
    val_ndcg: float
    seconds: float


@dataclass
class TrainedModel:
    config: ModelConfig
    embeddings: EmbeddingTable
    training_log: list = field(default_factory=list)

    # -- scoring -----------------------------------------------------------
    def user_points(self, users, dataset: InteractionDataset) -> np.ndarray:
        users = np.asarray(users, dtype=np.int64)
        if self.config.user_mode == "symmetric":
            return self.embeddings.users[users]
        return _aggregate_histories(self.embeddings, [dataset.train[u] for u in users]).users

    def score_candidates(self, users, candidates, dataset: InteractionDataset) -> np.ndarray:
        u = self.user_points(users, dataset)
        v = self.embeddings.items[np.asarray(candidates)]
        return losses.score(u[:, None, :], v, self.config.score_mode, self.config.geometry)


def _aggregate_histories(table: EmbeddingTable, histories):
    lengths = np.array([len(h) for h in histories], dtype=np.int64)
    if np.any(lengths == 0):
        raise DomainError("cannot aggregate an empty history")
    flat = np.concatenate(histories).astype(np.int64)
    segments = np.repeat(np.arange(len(histories)), lengths)
    cls = losses.MidpointAggregate if table.geometry == "hyperboloid" else losses.MeanAggregate
    agg = cls(table.items[flat], segments, len(histories))
    agg.flat_items = flat
    return agg


def user_representation(history, embeddings: EmbeddingTable) -> np.ndarray:
    """Einstein midpoint (hyperboloid) or mean (euclidean) of the history's items."""
    if len(history) == 0:
        raise DomainError("user history is empty")
    unknown = [i for i in history if not 0 <= i < len(embeddings.items)]
    if unknown:
        raise DataError(f"unknown item ids in history: {unknown[:10]}")
    return _aggregate_histories(embeddings, [np.asarray(history)]).users[0]


def rank_items(model: TrainedModel, candidates, user: int | None = None, history=None,
               mode: str | None = None) -> list[int]:
    """Candidates by descending score, ties by ascending item id.

    Give either ``user`` (symmetric models) or ``history`` (any model).
    """
    cands = np.asarray(list(candidates), dtype=np.int64)
    missing = sorted(set(cands[(cands < 0) | (cands >= len(model.embeddings.items))].tolist()))
    if missing:
        raise DataError(f"unknown candidate ids: {missing}")
    if history is not None:
        u = user_representation(history, model.embeddings)
    elif user is not None and model.embeddings.users is not None:
        u = model.embeddings.users[user]
    else:
        raise ConfigError("rank_items needs a user id (symmetric model) or a history")
    s = losses.score(u[None, :], model.embeddings.items[cands],
                     mode or model.config.score_mode, model.config.geometry)
    order = np.lexsort((cands, -s))
    return cands[order].tolist()


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def _init_table(dataset, cfg: ModelConfig, init_cfg: InitConfig) -> EmbeddingTable:
    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    item_seed = int(seeds[0].generate_state(1)[0])
    user_seed = int(seeds[1].generate_state(1)[0])
    if cfg.geometry == "hyperboloid":
        make = init_embeddings
    else:
        make = init_euclidean
    items = make(dataset.n_items, cfg.dim, init_cfg, item_seed)
    users = None
    if cfg.user_mode == "symmetric":
        user_init = init_cfg
        if init_cfg.scheme == "frequency_radius":
            lengths = [len(t) for t in dataset.train]
            user_init = InitConfig(init_cfg.scheme, init_cfg.width, lengths)
        users = make(dataset.n_users, cfg.dim, user_init, user_seed)
    return EmbeddingTable(cfg.geometry, cfg.dim, items, users, dataset.frequencies.copy())


def _apply_updates(points, ids, grads, step, rsgd_cfg, lr, lam=0.0, geometry="hyperboloid"):
    """Sum gradients per row and take one optimizer step for every touched row.

    The origin penalty is added once per touched row, however often the row
    occurs in the batch.
    """
    uniq, inv = np.unique(ids, return_inverse=True)
    total = np.zeros((uniq.size, points.shape[1]))
    np.add.at(total, inv, grads)
    if lam > 0:
        total += lam * losses.origin_penalty_gradient(points[uniq], geometry)
    points[uniq] = step(points[uniq], total, rsgd_cfg, lr)


def _history_batch(dataset, indptr, indices, users, positives):
    """Flattened per-triplet histories with the triplet's positive removed.

    Users whose history is only the positive keep it (nothing else to aggregate).
    """
    starts, ends = indptr[users], indptr[users + 1]
    lengths = ends - starts
    seg = np.repeat(np.arange(users.size), lengths)
    offs = np.arange(lengths.sum()) - np.repeat(np.cumsum(lengths) - lengths, lengths)
    flat = indices[np.repeat(starts, lengths) + offs]
    keep = flat != positives[seg]
    kept_per = np.bincount(seg[keep], minlength=users.size)
    keep |= (kept_per == 0)[seg]
    return flat[keep], seg[keep]


def train(dataset: InteractionDataset, model_cfg: ModelConfig,
          rsgd_cfg: RsgdConfig = RsgdConfig(), init_cfg: InitConfig = InitConfig(),
          eval_cfg: EvalConfig | None = EvalConfig(), progress=None) -> TrainedModel:
    """Fit a model with (Riemannian) SGD over shuffled training interactions.

    Each mini-batch samples negatives outside the user's training history,
    evaluates the loss, sums per-row gradients across the batch and takes one
    optimizer step per touched row. In asymmetric mode each triplet's user is
    the aggregate of its history without the positive, recomputed from the
    current item table, and user gradients flow back to those history items.

    Validation HR@k/NDCG@k (fixed negatives) are logged after every epoch when
    ``eval_cfg`` is given and the dataset has validation hold-outs.
    """
    cfg = model_cfg
    table = _init_table(dataset, cfg, init_cfg)
    model = TrainedModel(cfg, table)
    step = rsgd_step if cfg.geometry == "hyperboloid" else sgd_step
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(3)[2])

    users, items = dataset.train_pairs()
    if users.size == 0:
        raise DataError("no training interactions")
    indptr, indices = dataset.history_csr()
    val = None
    if eval_cfg is not None and dataset.validation:
        val = build_candidates(dataset, "validation", eval_cfg)
    n_neg = cfg.negatives_per_positive

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lr = rsgd_cfg.learning_rate * (1.0 - cfg.lr_decay) ** epoch
        order = rng.permutation(users.size)
        loss_sum = 0.0
        for b, start in enumerate(range(0, users.size, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            bu, bi = users[idx], items[idx]
            negs = sample_train_negatives(rng, bu, n_neg, dataset)
            if cfg.user_mode == "symmetric":
                agg = None
                u_pts = table.users[bu]
            else:
                flat, seg = _history_batch(dataset, indptr, indices, bu, bi)
                cls = (losses.MidpointAggregate if cfg.geometry == "hyperboloid"
                       else losses.MeanAggregate)
                agg = cls(table.items[flat], seg, bu.size)
                u_pts = agg.users
            v_pos = table.items[bi]
            v_neg = table.items[negs]
            if cfg.loss == "wmrb":
                loss, g_u, g_pos, g_neg = losses.wmrb_gradients_arrays(
                    u_pts, v_pos, v_neg, cfg.slack, cfg.score_mode, cfg.geometry)
            else:
                loss, g_u, g_pos, g_n1 = losses.bpr_gradients(
                    u_pts, v_pos, v_neg[:, 0], cfg.score_mode, cfg.geometry)
                g_neg = g_n1[:, None, :]
            if not np.all(np.isfinite(loss)):
                bad = int(np.flatnonzero(~np.isfinite(loss))[0])
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch} batch {b}: user "
                    f"{dataset.user_ids[bu[bad]]!r} item {dataset.item_ids[bi[bad]]!r}")
            loss_sum += float(loss.sum())

            lam = cfg.lambda_reg
            item_ids = [bi, negs.ravel()]
            item_grads = [g_pos, g_neg.reshape(-1, g_neg.shape[-1])]
            if agg is None:
                _apply_updates(table.users, bu, g_u, step, rsgd_cfg, lr, lam, cfg.geometry)
            else:
                item_ids.append(flat)
                item_grads.append(agg.backward(g_u))
            _apply_updates(table.items, np.concatenate(item_ids), np.concatenate(item_grads),
                           step, rsgd_cfg, lr, lam, cfg.geometry)

        val_hr = val_ndcg = float("nan")
        if val is not None:
            res = evaluate_candidates(model, val[0], val[1], dataset, eval_cfg.k)
            val_hr, val_ndcg = res.hr_at_k, res.ndcg_at_k
        entry = EpochLog(epoch + 1, loss_sum / users.size, val_hr, val_ndcg,
                         time.perf_counter() - t0)
        model.training_log.append(entry)
        log.log(logging.INFO if val is not None else logging.DEBUG,
                "epoch %d loss %.5f val_hr %.4f val_ndcg %.4f (%.1fs)", entry.epoch,
                entry.mean_loss, entry.val_hr, entry.val_ndcg, entry.seconds)
        if progress is not None:
            progress(entry)
    return model


# ---------------------------------------------------------------------------
# Embedding files
# ---------------------------------------------------------------------------

def write_embedding_file(path, ids, points, model_name: str, dim: int) -> None:
    """``hyprec-embeddings v1 <model> <dim> <count>`` then ``<id> <c0> <c1> ...`` rows.

    Coordinates use 17 significant digits, which round-trips float64 exactly.
    """
    points = np.asarray(points, dtype=np.float64)
    if len(ids) != len(points):
        raise DataError("need one id per point")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{EMBEDDING_MAGIC} {EMBEDDING_VERSION} {model_name} {dim} {len(ids)}\n")
        for pid, row in zip(ids, points):
            fh.write(str(pid) + " " + " ".join(f"{c:.17g}" for c in row) + "\n")


def read_embedding_file(path):
    """Return ``(model_name, dim, ids, points)``."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 5 or header[0] != EMBEDDING_MAGIC or header[1] != EMBEDDING_VERSION:
            raise DataError(f"{path}: not a {EMBEDDING_MAGIC} {EMBEDDING_VERSION} file")
        model_name, dim, count = header[2], int(header[3]), int(header[4])
        ids, rows = [], []
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            ids.append(parts[0])
            rows.append([float(c) for c in parts[1:]])
    if len(ids) != count:
        raise DataError(f"{path}: header says {count} rows, found {len(ids)}")
    return model_name, dim, ids, np.array(rows, dtype=np.float64).reshape(count, -1)


def convert_points(points, geometry: str, target: str) -> np.ndarray:
    if geometry == "euclidean":
        if target != "hyperboloid":
            raise ConfigError("euclidean models can only be exported as-is")
        return points
    if target == "hyperboloid":
        return points
    if target == "klein":
        return geo.hyperboloid_to_klein(points)
    if target == "poincare":
        return geo.hyperboloid_to_poincare(points)
    raise ConfigError(f"unknown export target {target!r}; expected one of {EXPORT_TARGETS}")


def export_embeddings(model: TrainedModel, target: str, path, item_ids=None,
                      user_ids=None) -> list[Path]:
    """Write item (and, for symmetric models, user) points in the target model.

    Users go to a sibling file named ``<stem>.users<suffix>``. Returns the
    paths written.
    """
    path = Path(path)
    table = model.embeddings
    name = "euclidean" if table.geometry == "euclidean" else target
    item_ids = item_ids if item_ids is not None else [str(i) for i in range(len(table.items))]
    write_embedding_file(path, item_ids, convert_points(table.items, table.geometry, target),
                         name, table.dim)
    written = [path]
    if table.users is not None:
        upath = path.with_name(f"{path.stem}.users{path.suffix}")
        user_ids = user_ids if user_ids is not None else [str(i) for i in range(len(table.users))]
        write_embedding_file(upath, user_ids,
                             convert_points(table.users, table.geometry, target), name, table.dim)
        written.append(upath)
    return written


def config_to_text(cfg) -> str:
    return "".join(f"{k}={v}\n" for k, v in asdict(cfg).items())


def config_from_dict(cls, values: dict):
    """Build a frozen config dataclass from string values, coercing by field type."""
    kwargs = {}
    for f in fields(cls):
        if f.name not in values:
            continue
        raw = values[f.name]
        default = f.default
        if isinstance(raw, str):
            if raw in ("None", "none", ""):
                kwargs[f.name] = None
                continue
            if isinstance(default, bool):
                kwargs[f.name] = raw.lower() in ("1", "true", "yes")
            elif isinstance(default, int):
                kwargs[f.name] = int(raw)
            elif isinstance(default, float) or default is None:
                kwargs[f.name] = float(raw)
            else:
                kwargs[f.name] = raw
        else:
            kwargs[f.name] = raw
    return cls(**kwargs)
