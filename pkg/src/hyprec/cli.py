"""``hyprec`` command-line entry point.

Settings come from three layers: built-in defaults, an optional flat
``key=value`` file given with ``--config``, and command-line flags. Flags
win. Every config key has a matching flag (``lambda_reg`` <-> ``--lambda-reg``).

Exit codes: 0 success, 1 assertion or metric failure, 2 input error.

This module avoids importing numpy at import time so that ``--threads`` can
cap BLAS/OpenMP worker pools before they start.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_FAILURE, EXIT_INPUT = 0, 1, 2

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "BLIS_NUM_THREADS", "NUMEXPR_NUM_THREADS")


def _optional(conv):
    def parse(text):
        if isinstance(text, str) and text.strip().lower() in ("none", ""):
            return None
        return conv(text)
    parse.__name__ = conv.__name__
    return parse


opt_float = _optional(float)
opt_int = _optional(int)
opt_str = _optional(str)

# key: (converter, default, help, groups)
# groups name the commands that read the key
_DATA = ("analyze", "split")
_TRAIN = ("train",)
_EVAL = ("train", "evaluate")
KEYS = {
    "format": (str, "csv_rating", "input format: csv_rating or csv_implicit", _DATA),
    "delimiter": (str, ",", "field delimiter of the input file", _DATA),
    "min_rating": (opt_float, None, "keep interactions rated at least this (none: keep all)", _DATA),
    "min_interactions": (int, 0, "keep users with strictly more positives than this", _DATA),
    "geometry": (str, "hyperboloid", "hyperboloid or euclidean", _TRAIN),
    "user_mode": (str, "symmetric", "symmetric (user embeddings) or asymmetric (item aggregates)",
                  _TRAIN),
    "loss": (str, "wmrb", "wmrb or bpr", _TRAIN),
    "dim": (int, 50, "embedding dimension", _TRAIN),
    "negatives_per_positive": (int, 100, "training negatives per positive (bpr needs 1)", _TRAIN),
    "slack": (float, 1.0, "WMRB margin", _TRAIN),
    "lambda_reg": (float, 0.01, "origin-distance regularisation weight", _TRAIN),
    "epochs": (int, 10, "training epochs", _TRAIN),
    "batch_size": (int, 128, "mini-batch size", _TRAIN),
    "score_mode": (str, "neg_distance", "neg_distance or neg_inner", _TRAIN),
    "lr_decay": (float, 0.0, "per-epoch multiplicative learning-rate decay", _TRAIN),
    "learning_rate": (float, 0.1, "SGD learning rate", _TRAIN),
    "clip_norm": (opt_float, 1.0, "tangent gradient norm clip (none: no clipping)", _TRAIN),
    "singularity_floor": (float, 1e-12, "floor for the distance-gradient denominator", _TRAIN),
    "init_scheme": (str, "cube_lift", "cube_lift, poincare_ball or frequency_radius", _TRAIN),
    "init_width": (float, 0.001, "initialisation width", _TRAIN),
    "k": (int, 10, "cutoff for HR@k and NDCG@k", _EVAL),
    "num_negatives": (int, 100, "sampled negatives per evaluated user", _EVAL),
    "split": (str, "test", "evaluation split: test or validation", ("evaluate",)),
    "baseline": (opt_str, None, "evaluate a baseline (popularity or random) on a split directory",
                 ("evaluate",)),
    "min_hr": (opt_float, None, "exit 1 when HR@k falls below this", ("evaluate",)),
    "bootstraps": (int, 1000, "bootstrap replicates for the KS p-value (0 skips it)", ("analyze",)),
    "min_tail": (int, 50, "minimum samples at or above x_min", ("analyze",)),
    "degrees": (str, "item", "degree sequence to fit: item, user or projection", ("analyze",)),
    "name": (opt_str, None, "dataset label in the report (default: input file stem)",
             ("analyze",)),
    "dump_ccdf": (opt_str, None, "write (x, P(X >= x)) of the fitted degrees to this file",
                  ("analyze",)),
    "seeds": (int, 1, "number of consecutive seeds to run, starting at --seed", ("simulate",)),
    "min_pass": (opt_int, None, "seeds that must pass (default: 90%% of --seeds, rounded up)",
                 ("simulate",)),
    "sim_epochs": (int, 200, "training epochs per simulation", ("simulate",)),
    "target": (str, "poincare", "export model: hyperboloid, klein or poincare", ("export",)),
}
SHARED = {"seed": (int, 0, "random seed"),
          "input": (opt_str, None, "input file or directory"),
          "out_dir": (opt_str, None, "output directory"),
          "threads": (opt_int, None, "cap on BLAS/OpenMP worker threads")}

CHOICES = {"format": ("csv_rating", "csv_implicit"), "geometry": ("hyperboloid", "euclidean"),
           "user_mode": ("symmetric", "asymmetric"), "loss": ("wmrb", "bpr"),
           "score_mode": ("neg_distance", "neg_inner"),
           "init_scheme": ("cube_lift", "poincare_ball", "frequency_radius"),
           "split": ("test", "validation"), "baseline": (None, "popularity", "random"),
           "degrees": ("item", "user", "projection"),
           "target": ("hyperboloid", "klein", "poincare")}

COMMANDS = {
    "analyze": "bipartite statistics and power-law fit of a dataset (one report row)",
    "split": "filter and split a dataset; writes the split manifest and id maps",
    "train": "train a model on a split directory (--input); writes embeddings and a log",
    "evaluate": "HR@k / NDCG@k of a trained model directory (--input) or a baseline",
    "simulate": "toy cluster scenarios with structural pass/fail checks",
    "export": "write a trained model's embeddings in the hyperboloid, Klein or Poincare model",
}


class InputError(Exception):
    """Bad command-line or config-file input (exit code 2)."""


def _flag(key: str) -> str:
    return "--" + key.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hyprec", description=__doc__.split("\n\n")[0])
    parser.add_argument("--log-level", default="INFO",
                        choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, help_text in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        if name == "simulate":
            p.add_argument("scenario", choices=("sim1", "sim2", "sim3", "all"))
        p.add_argument("--config", help="flat key=value file; flags override it")
        for key, (conv, _, help_, *_rest) in SHARED.items():
            p.add_argument(_flag(key), dest=key, type=conv, default=None, help=help_)
        for key, (conv, default, help_, groups) in KEYS.items():
            if name in groups:
                p.add_argument(_flag(key), dest=key, type=conv, default=None,
                               help=f"{help_} (default: {default})")
    return parser


def read_config_file(path) -> dict:
    """Parse a flat ``key=value`` file into converted values."""
    known = {**KEYS, **SHARED}
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read config file {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InputError(f"{path}:{lineno}: expected key=value")
        key, _, value = (s.strip() for s in line.partition("="))
        if key == "split_dir":
            continue
        if key not in known:
            raise InputError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            values[key] = known[key][0](value)
        except ValueError:
            raise InputError(f"{path}:{lineno}: bad value {value!r} for {key}") from None
    return values


def resolve(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags."""
    opts = {k: v[1] for k, v in {**KEYS, **SHARED}.items()}
    if args.config:
        opts.update(read_config_file(args.config))
    for key in (*SHARED, *KEYS):
        value = getattr(args, key, None)
        if value is not None:
            opts[key] = value
    for key, allowed in CHOICES.items():
        if opts[key] not in allowed:
            raise InputError(f"{key} must be one of {[a for a in allowed if a]}, got {opts[key]!r}")
    if getattr(args, "scenario", None):
        opts["scenario"] = args.scenario
    return opts


def config_lines(opts: dict, command: str) -> list[str]:
    """Resolved ``key=value`` lines for the keys ``command`` reads, plus the seed."""
    keys = ["seed"] + [k for k, v in KEYS.items() if command in v[3]]
    return [f"{k}={opts[k]}" for k in keys]


def _cap_threads(n: int | None) -> None:
    if n is None:
        return
    if n < 1:
        raise InputError("--threads must be positive")
    for var in _THREAD_VARS:
        os.environ[var] = str(n)


def _run(command: str, opts: dict) -> int:
    from . import commands

    if command != "simulate" and not opts["input"]:
        raise InputError(f"{command} needs --input")
    if command == "analyze":
        return commands.analyze(opts)
    if command == "split":
        return commands.split(opts)
    if command == "train":
        return commands.train_command(opts, config_lines(opts, "train"))
    if command == "evaluate":
        return commands.evaluate_command(opts)
    if command == "export":
        return commands.export_command(opts)
    return commands.simulate_command(opts)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    log = logging.getLogger("hyprec")
    try:
        opts = resolve(args)
        _cap_threads(opts["threads"])
        from .errors import HyprecError, SingularityError

        try:
            return _run(args.command, opts)
        except (SingularityError, FloatingPointError) as exc:
            log.error("%s", exc)
            return EXIT_FAILURE
        except (HyprecError, OSError, UnicodeDecodeError) as exc:
            log.error("%s", exc)
            return EXIT_INPUT
    except InputError as exc:
        log.error("%s", exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
