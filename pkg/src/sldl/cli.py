"""``sldl`` command line: train, predict, eval, cv.

Exit codes: 0 ok, 2 input/contract error, 3 numeric failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

import numpy as np

from . import correlation, embedding, model_io, pipeline
from .dataset import Dataset, DatasetFormatError, load_dataset, parse_sparse_dataset
from .decoder import format_prediction
from .pipeline import RunConfig

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("sldl")

_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}
_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in _BOOL_TRUE:
        return True
    if t in _BOOL_FALSE:
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _convert(key: str, value: str):
    kind = _FIELD_TYPES[key]
    if kind == "bool":
        return _parse_bool(value)
    if kind == "int":
        return int(value)
    if kind == "float":
        return float(value)
    return value


def read_config_file(path) -> dict:
    """Parse ``key = value`` (or ``key value``) lines; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                key, _, value = line.partition(" ")
            key = key.strip().lstrip("-").replace("-", "_")
            if key not in _FIELD_TYPES:
                raise ValueError(f"{path}:{line_no}: unknown config key {key!r}")
            out[key] = _convert(key, value.strip())
    return out


def _int_list(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _add_run_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model configuration (defaults < --config file < flags)")
    g.add_argument("--config", help="key=value file with configuration entries")
    g.add_argument("--embed-dim", type=int, help="embedding dimension (default 64)")
    g.add_argument("--tau", type=float, help="triplet margin (default 0.1)")
    g.add_argument("--alpha", type=float, help="ridge factor (default 1)")
    g.add_argument("--walk-steps", type=int, help="random-walk steps (default 4)")
    g.add_argument("--rounds", type=int, help="embedding training rounds (default 20)")
    g.add_argument("--pairs-per-anchor", type=int, help="ranked pairs per anchor label (default 10)")
    g.add_argument("--learning-rate", type=float, help="embedding learning rate (default 0.05)")
    g.add_argument("-k", "--k-neighbors", type=int, help="decoder neighbors (default 50)")
    g.add_argument("--k-out", type=int, help="labels printed per instance (default 5)")
    g.add_argument("--seed", type=int, help="random seed (default 0)")
    g.add_argument("--no-gaussian", action="store_const", const=True,
                   help="point embeddings with squared-Euclidean triplets")
    g.add_argument("--symmetric", action="store_const", const=True,
                   help="symmetric (JS) divergence instead of KL")
    g.add_argument("--bias", action="store_const", const=True, help="append a constant-1 feature")
    g.add_argument("--drop-empty", action="store_const", const=True,
                   help="exclude training instances without labels")
    g.add_argument("--epsilon", type=float, help="cosine-distance floor for decoder weights (default 1e-6)")
    g.add_argument("--lbfgs-memory", type=int, help="L-BFGS history size (default 10)")
    g.add_argument("--lbfgs-max-iters", type=int, help="L-BFGS iteration cap (default 500)")
    g.add_argument("--grad-tol", type=float, help="L-BFGS gradient-norm tolerance (default 1e-6)")
    g.add_argument("--c1", type=float, help="Armijo constant (default 1e-4)")
    g.add_argument("--c2", type=float, help="curvature constant (default 0.9)")
    g.add_argument("--ndcg-normalizer", choices=("paper", "standard"), help="nDCG normalizer (default paper)")


def run_config_from_args(args) -> RunConfig:
    values = read_config_file(args.config) if getattr(args, "config", None) else {}
    for name in _FIELD_TYPES:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    return RunConfig(**values)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sldl", description="Scalable label distribution learning for multi-label data.")
    parser.add_argument("--verbose", "-v", action="store_true", help="log optimizer progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def data_flags(p, required=True):
        # accept --verbose after the subcommand as well
        p.add_argument("--verbose", "-v", action="store_true", default=argparse.SUPPRESS,
                       help="log optimizer progress to stderr")
        p.add_argument("--data", required=required, help="dataset in sparse text format")
        p.add_argument("--one-based", action="store_true", help="indices in the data file start at 1")

    p = sub.add_parser("train", help="fit a model and write it to --model")
    data_flags(p)
    p.add_argument("--model", required=True, help="output model path")
    p.add_argument("--dump-transfer", metavar="PATH", help="write the transfer matrix as text")
    p.add_argument("--dump-embeddings", metavar="PATH", help="write label Gaussians as text")
    _add_run_config_flags(p)

    p = sub.add_parser("predict", help="rank labels for every test instance")
    data_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--k-out", type=int, help="labels per line (default: the model's k_out)")
    p.add_argument("--out", help="write predictions here instead of stdout")

    p = sub.add_parser("eval", help="score a model on labeled test data")
    data_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--ks", type=_int_list, default=[], help="extra k values, comma separated")
    p.add_argument("--out", help="write the JSON report here")

    p = sub.add_parser("cv", help="cross-validated grid search")
    data_flags(p)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--grid-dims", type=_int_list, default=list(pipeline.DEFAULT_DIM_GRID),
                   help="embedding dimensions to search (default 16,32,...,128)")
    p.add_argument("--grid-k", type=_int_list, default=list(pipeline.DEFAULT_K_GRID),
                   help="neighbor counts to search (default 10,20,...,100)")
    p.add_argument("--no-grid", action="store_true", help="evaluate only --embed-dim/--k-neighbors")
    p.add_argument("--select-metric", default="P@1", help="metric maximized by the grid search")
    p.add_argument("--ks", type=_int_list, default=[], help="extra k values, comma separated")
    p.add_argument("--jobs", type=int, default=1, help="parallel (fold, dimension) jobs")
    p.add_argument("--out", help="write the JSON report here")
    _add_run_config_flags(p)
    return parser


def _read_data(args) -> Dataset:
    return load_dataset(args.data, one_based=args.one_based)


def cmd_train(args) -> int:
    cfg = run_config_from_args(args)
    d = _read_data(args)
    model = pipeline.fit(d, cfg)
    model_io.save_model(args.model, model)
    if args.dump_transfer:
        correlation.dump_matrix(args.dump_transfer, model.transfer.P_hat)
    if args.dump_embeddings:
        embedding.dump_embeddings(args.dump_embeddings, model.embeddings)
    log.info("trained on n=%d q=%d c=%d, wrote %s", d.n, d.q, d.c, args.model)
    return EXIT_OK


def _read_test_data(args) -> Dataset | None:
    with open(args.data, encoding="utf-8") as fh:
        text = fh.read()
    if not text.strip():
        return None
    return parse_sparse_dataset(text, one_based=args.one_based)


def cmd_predict(args) -> int:
    model = model_io.load_model(args.model)
    d = _read_test_data(args)
    k_out = args.k_out if args.k_out is not None else model.config.k_out
    lines = []
    if d is not None and d.n:
        k_out = min(k_out, model.c)
        scores = pipeline.predict_scores(model, d)
        lines = [format_prediction(row, k_out) for row in scores]
    text = "".join(line + "\n" for line in lines)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_eval(args) -> int:
    model = model_io.load_model(args.model)
    d = _read_data(args)
    report = pipeline.evaluate_model(model, d, args.ks)
    print(report.to_table())
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(report.to_json() + "\n")
    return EXIT_OK


def cmd_cv(args) -> int:
    cfg = run_config_from_args(args)
    d = _read_data(args)
    dims = None if args.no_grid else args.grid_dims
    ks = None if args.no_grid else args.grid_k
    result = pipeline.cross_validate(d, cfg, folds=args.folds, dims=dims, k_grid=ks,
                                     select_metric=args.select_metric, ks=args.ks, jobs=args.jobs)
    dim, k = result.selected
    print(f"selected embed_dim={dim} k_neighbors={k} by mean {result.select_metric}")
    print(result.report.to_table())
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(result.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "predict": cmd_predict, "eval": cmd_eval, "cv": cmd_cv}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"sldl: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DatasetFormatError, model_io.ModelFormatError, ValueError) as exc:
        print(f"sldl: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"sldl: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
