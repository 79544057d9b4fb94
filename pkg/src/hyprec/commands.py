"""Implementations behind the ``hyprec`` subcommands.

Every function takes already-resolved settings (see :mod:`hyprec.cli`) and
returns an exit status. Files written here never contain wall-clock times,
so reruns with the same inputs and seed reproduce them byte for byte.
"""

from __future__ import annotations

import logging
import math
from pathlib import Path

from . import netstats
from .data import (build_dataset, filter_min_interactions, filter_positive, load_interactions,
                   load_split, read_manifest_meta, save_split)
from .errors import ConfigError, DataError
from .evaluation import EvalConfig, PopularityModel, RandomModel, evaluate, write_ranks
from .optimizer import InitConfig, RsgdConfig
from .recommender import (EmbeddingTable, ModelConfig, TrainedModel, config_from_dict,
                          export_embeddings, read_embedding_file, train, write_embedding_file)
from .simulations import SCENARIOS, run_simulation

log = logging.getLogger("hyprec")

MODEL_CONFIG_NAME = "config.txt"
ITEMS_NAME = "items.emb"
USERS_NAME = "users.emb"
TRAINING_LOG_NAME = "training_log.tsv"
ANALYZE_NAME = "analyze.tsv"


def _out_dir(path) -> Path | None:
    if path is None:
        return None
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_lines(path: Path, lines) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{line}\n" for line in lines)


def _read_key_values(path: Path) -> dict:
    values = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


# ---------------------------------------------------------------------------
# analyze / split
# ---------------------------------------------------------------------------

def analyze(opts: dict) -> int:
    rows = load_interactions(opts["input"], opts["format"], opts["delimiter"])
    rows = filter_positive(rows, opts["min_rating"])
    rows = filter_min_interactions(rows, opts["min_interactions"])
    graph = netstats.BipartiteGraph.from_interactions(rows)
    stats = netstats.bipartite_stats(graph)
    side = opts["degrees"]
    if side == "item":
        degrees = graph.item_degrees
    elif side == "user":
        degrees = graph.user_degrees
    else:
        degrees = netstats.projection_weighted_degrees(graph, "item")
    degrees = degrees[degrees > 0]
    fit = netstats.powerlaw_fit(degrees, min_tail=opts["min_tail"])
    if opts["bootstraps"] > 0:
        p = netstats.ks_p_value(fit, degrees, opts["bootstraps"], opts["seed"], opts["min_tail"])
        fit = netstats.PowerLawFit(fit.gamma_hat, fit.x_min, fit.ks_statistic, fit.n_tail,
                                   fit.n, p)
    name = opts["name"] or Path(opts["input"]).stem
    lines = [netstats.TABLE_HEADER, netstats.table_row(name, stats, fit)]
    print("\n".join(lines))
    out = _out_dir(opts["out_dir"])
    if out is not None:
        _write_lines(out / ANALYZE_NAME, lines)
    if opts["dump_ccdf"]:
        x, p = netstats.ccdf(degrees)
        _write_lines(Path(opts["dump_ccdf"]), ["x\tccdf"] + [f"{a}\t{b:.17g}" for a, b in zip(x, p)])
    return 0


def split(opts: dict) -> int:
    if opts["out_dir"] is None:
        raise ConfigError("split needs --out-dir")
    ds = build_dataset(opts["input"], opts["format"], opts["min_rating"],
                       opts["min_interactions"], opts["delimiter"])
    meta = {"source": Path(opts["input"]).name, "format": opts["format"],
            "min_rating": opts["min_rating"], "min_interactions": opts["min_interactions"],
            "seed": opts["seed"]}
    out = save_split(ds, opts["out_dir"], meta)
    print(f"users={ds.n_users} items={ds.n_items} train={sum(len(t) for t in ds.train)} "
          f"validation={len(ds.validation)} test={len(ds.test)} out={out}")
    return 0


# ---------------------------------------------------------------------------
# train / evaluate / export
# ---------------------------------------------------------------------------

def _configs(opts: dict, dataset=None):
    model_cfg = config_from_dict(ModelConfig, {**opts, "seed": opts["seed"]})
    rsgd_cfg = RsgdConfig(opts["learning_rate"], opts["clip_norm"], opts["singularity_floor"])
    freqs = dataset.frequencies if dataset is not None else None
    if opts["init_scheme"] == "frequency_radius" and freqs is None:
        raise ConfigError("frequency_radius initialisation needs a dataset")
    init_cfg = InitConfig(opts["init_scheme"], opts["init_width"],
                          freqs if opts["init_scheme"] == "frequency_radius" else None)
    eval_cfg = EvalConfig(opts["k"], opts["num_negatives"], opts["seed"])
    return model_cfg, rsgd_cfg, init_cfg, eval_cfg


def train_command(opts: dict, config_lines: list[str]) -> int:
    if opts["out_dir"] is None:
        raise ConfigError("train needs --out-dir")
    split_dir = Path(opts["input"]).resolve()
    read_manifest_meta(split_dir)
    dataset = load_split(split_dir)
    model_cfg, rsgd_cfg, init_cfg, eval_cfg = _configs(opts, dataset)
    out = _out_dir(opts["out_dir"])
    model = train(dataset, model_cfg, rsgd_cfg, init_cfg, eval_cfg)
    _write_lines(out / MODEL_CONFIG_NAME, [f"split_dir={split_dir}"] + config_lines)
    _write_lines(out / TRAINING_LOG_NAME,
                 ["epoch\tmean_loss\tval_hr\tval_ndcg"]
                 + [f"{e.epoch}\t{e.mean_loss:.17g}\t{e.val_hr:.17g}\t{e.val_ndcg:.17g}"
                    for e in model.training_log])
    table = model.embeddings
    write_embedding_file(out / ITEMS_NAME, dataset.item_ids, table.items, table.geometry, table.dim)
    if table.users is not None:
        write_embedding_file(out / USERS_NAME, dataset.user_ids, table.users, table.geometry,
                             table.dim)
    last = model.training_log[-1]
    print(f"epochs={last.epoch} loss={last.mean_loss:.6f} val_hr@{eval_cfg.k}={last.val_hr:.6f} "
          f"val_ndcg@{eval_cfg.k}={last.val_ndcg:.6f} out={out}")
    return 0


def _check_ids(path, ids, expected) -> None:
    if list(ids) != list(expected):
        raise DataError(f"{path}: ids do not match the split's id map")


def load_model(model_dir) -> tuple[TrainedModel, object, dict]:
    """Rebuild ``(model, dataset, config values)`` from a ``train`` output directory."""
    model_dir = Path(model_dir)
    cfg_path = model_dir / MODEL_CONFIG_NAME
    if not cfg_path.exists():
        raise DataError(f"no {MODEL_CONFIG_NAME} in {model_dir}; run the train command first")
    values = _read_key_values(cfg_path)
    dataset = load_split(values["split_dir"])
    model_cfg = config_from_dict(ModelConfig, values)
    _, dim, ids, items = read_embedding_file(model_dir / ITEMS_NAME)
    _check_ids(model_dir / ITEMS_NAME, ids, dataset.item_ids)
    users = None
    if model_cfg.user_mode == "symmetric":
        _, _, uids, users = read_embedding_file(model_dir / USERS_NAME)
        _check_ids(model_dir / USERS_NAME, uids, dataset.user_ids)
    table = EmbeddingTable(model_cfg.geometry, dim, items, users, dataset.frequencies.copy())
    table.check()
    return TrainedModel(model_cfg, table), dataset, values


def evaluate_command(opts: dict) -> int:
    if opts["baseline"]:
        dataset = load_split(opts["input"])
        model = PopularityModel() if opts["baseline"] == "popularity" else RandomModel(opts["seed"])
        out = _out_dir(opts["out_dir"])
        tag = opts["baseline"]
    else:
        model, dataset, _ = load_model(opts["input"])
        out = _out_dir(opts["out_dir"] or opts["input"])
        tag = "model"
    eval_cfg = EvalConfig(opts["k"], opts["num_negatives"], opts["seed"])
    result = evaluate(model, opts["split"], dataset, eval_cfg)
    record = f"split={opts['split']} model={tag} {result.record()}"
    print(record)
    if out is not None:
        _write_lines(out / f"eval_{tag}_{opts['split']}.txt", [record])
        write_ranks(out / f"ranks_{tag}_{opts['split']}.tsv", result, dataset)
    if opts["min_hr"] is not None and not result.hr_at_k >= opts["min_hr"]:
        log.error("hr@%d %.6f below required %.6f", result.k, result.hr_at_k, opts["min_hr"])
        return 1
    return 0


def export_command(opts: dict) -> int:
    model, dataset, _ = load_model(opts["input"])
    out = _out_dir(opts["out_dir"] or opts["input"])
    target = opts["target"]
    paths = export_embeddings(model, target, out / f"{target}.emb",
                              item_ids=dataset.item_ids, user_ids=dataset.user_ids)
    for p in paths:
        print(p)
    return 0


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def simulate_command(opts: dict) -> int:
    names = SCENARIOS if opts["scenario"] == "all" else (opts["scenario"],)
    n_seeds = opts["seeds"]
    min_pass = opts["min_pass"] if opts["min_pass"] is not None else math.ceil(0.9 * n_seeds)
    out = _out_dir(opts["out_dir"])
    status = 0
    for name in names:
        lines, passes = [], 0
        for seed in range(opts["seed"], opts["seed"] + n_seeds):
            scenario, model, report = run_simulation(name, seed, opts["sim_epochs"])
            passes += report.passed
            lines += report.lines()
            if out is not None:
                export_embeddings(model, "poincare", out / f"{name}.seed{seed}.emb",
                                  item_ids=scenario.dataset.item_ids,
                                  user_ids=scenario.dataset.user_ids)
        ok = passes >= min_pass
        lines.append(f"scenario={name} passed={passes}/{n_seeds} required={min_pass} "
                     f"status={'pass' if ok else 'fail'}")
        print(lines[-1])
        if out is not None:
            _write_lines(out / f"{name}.report.txt", lines)
        status = status or (0 if ok else 1)
    return status
