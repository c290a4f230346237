#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
#==============================================================================
#                         geodemo v1.0
#     Demographics of Geographic Units from Geotagged Short Texts
#==============================================================================
#
#  Batch command line over the pipeline stages:
#
#    ingest     filter raw records (accounts, urls, retweets, bounding box)
#    assign     attach the containing census block to every record
#    bag        tokenize and build per-unit bags at a resolution
#    split      seeded train / validation / test split of the units
#    featurize  vocabulary, idf and transformed sparse features
#    train      grid search + SGD ridge regression per variable
#    predict    category counts for held-out units
#    evaluate   r, R^2, paired t-tests and the relative-error table
#    run        every stage from one config file
#    synth      synthetic records, boundaries and ground truth
#
#  Usage: python app.py [--config cfg.json] [--workers N] [--seed N]
#                       [--verbose] <subcommand> [options]
#
#==============================================================================
"""
import argparse
import logging
import sys

from pydantic import ValidationError

from config import APP_DESCRIPTION, APP_TITLE, APP_VERSION, EXIT_CODES, LOG_CONFIG

import geodemo
from geodemo import exceptions
from geodemo import evaluation
from geodemo.features import Scheme, Transform, load_features
from geodemo.geomap import Resolution, resolution_of
from geodemo.model import Variant

from modules import pipeline
from modules.synthetic import generate_synthetic, write_synthetic
from modules.utilities import parse_float_list, parse_int_list, resolve_workers

logger = logging.getLogger(LOG_CONFIG['logger_name'])


# ==============================================================================
# SUBCOMMAND HANDLERS
# ==============================================================================

def _config(args, overrides=None):
    base = {"train.seed": args.seed, "split_seed": args.seed}
    base.update(overrides or {})
    return pipeline.load_config(args.config, base)


def cmd_ingest(args):
    cfg = _config(args, {"bbox": args.bbox, "max_followers": args.max_followers,
                         "max_friends": args.max_friends})
    pipeline.stage_ingest(args.input, args.output, cfg.bbox, args.workers,
                          cfg.max_followers, cfg.max_friends)


def cmd_assign(args):
    cfg = _config(args, {"node_capacity": args.node_capacity})
    pipeline.stage_assign(args.records, args.boundaries, args.output, cfg.node_capacity)


def cmd_bag(args):
    cfg = _config(args, {"resolution": args.resolution, "stopwords": args.stopwords})
    pipeline.stage_bag(args.records, args.output, cfg.resolution, cfg.stopwords)


def cmd_split(args):
    cfg = _config(args)
    pipeline.stage_split(pipeline.read_bags(args.bags), args.output, cfg.split_seed)


SPLIT_SELECTION = {
    "train": (evaluation.TRAIN, evaluation.VALIDATION),
    "test": (evaluation.TEST,),
    "all": None,
}


def cmd_featurize(args):
    cfg = _config(args, {"feature.scheme": args.scheme, "feature.transform": args.transform})
    bags = pipeline.read_bags(args.bags)
    split = evaluation.read_split(args.assignment)
    if args.split == "test":
        vocab, idf = pipeline.read_vocab(args.vocab)
    else:
        vocab, idf = pipeline.stage_vocab(bags, split, args.vocab)
    pipeline.stage_featurize(bags, split, vocab, idf, cfg.feature, args.output,
                             SPLIT_SELECTION[args.split])


def cmd_train(args):
    overrides = {
        "variant": args.variant,
        "train.denominator": args.denominator,
        "train.alpha": args.alpha,
        "train.epochs": args.epochs,
        "train.rho": args.rho,
        "train.fit_intercept": args.fit_intercept or None,
        "grid_lambda": parse_float_list(args.grid_lambda) if args.grid_lambda else None,
        "grid_eta0": parse_float_list(args.grid_eta0) if args.grid_eta0 else None,
    }
    cfg = _config(args, overrides)
    _, X, meta = load_features(args.features)
    truth = pipeline.load_truth(args.truth)
    pipeline.stage_train(X, meta, truth, args.variable, cfg.train_config(), cfg.grid_lambda,
                         cfg.grid_eta0, args.output, args.workers)


def cmd_predict(args):
    _, X, meta = load_features(args.features)
    models = [pipeline.read_model(p) for p in args.model]
    truth = pipeline.load_truth(args.population) if args.population else None
    if truth is None and any(m.variant == Variant.KNOWN for m in models):
        raise exceptions.ConfigError("--population is required for known-population models")
    pipeline.stage_predict(models, X, meta, truth, args.output, SPLIT_SELECTION[args.split])


def cmd_evaluate(args):
    overrides = {
        "quantile": args.quantile,
        "thresholds": parse_int_list(args.thresholds) if args.thresholds else None,
    }
    cfg = _config(args, overrides)
    compare = {}
    for item in args.compare or []:
        label, sep, path = item.partition("=")
        if not sep:
            raise exceptions.ConfigError("--compare expects label=path, got %r" % item)
        compare[label] = path
    truth = pipeline.load_truth(args.truth)
    bags = pipeline.read_bags(args.bags)
    resolution = args.resolution or _resolution_of(bags)
    variables = args.variables.split(",") if args.variables else None
    pipeline.stage_evaluate(args.pred, truth, bags, args.output, resolution, variables,
                            cfg.thresholds, cfg.quantile, compare, args.name)


def _resolution_of(bags):
    if not bags:
        raise exceptions.DataError("no bags")
    return resolution_of(bags[0].geoid)


def cmd_run(args):
    overrides = {
        "workdir": args.workdir,
        "resolution": args.resolution,
        "variables": args.variable.split(",") if args.variable else None,
        "variant": args.variant,
        "feature.scheme": args.scheme,
        "feature.transform": args.transform,
    }
    cfg = _config(args, overrides)
    pipeline.run_pipeline(cfg, args.workers)


def cmd_synth(args):
    corpus = generate_synthetic(seed=args.seed if args.seed is not None else 7,
                                n_units=args.units, vocab_size=args.vocab,
                                users_min=args.users_min, users_max=args.users_max)
    write_synthetic(corpus, args.output)


# ==============================================================================
# ARGUMENT PARSER
# ==============================================================================

def build_parser():
    parser = argparse.ArgumentParser(prog="geodemo", description=APP_TITLE,
                                     epilog=APP_DESCRIPTION)
    parser.add_argument("--version", action="version",
                        version="%%(prog)s %s (library %s)" % (APP_VERSION, geodemo.get_version()))
    parser.add_argument("--config", help="JSON pipeline config; flags override its values")
    parser.add_argument("--workers", type=int, default=None,
                        help="worker processes (default: every CPU; 1 = single-threaded)")
    parser.add_argument("--seed", type=int, default=None,
                        help="seed for the split, SGD shuffling and synthetic data")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="filter raw records")
    p.add_argument("--input", nargs="+", required=True,
                   help="record files or quoted glob patterns")
    p.add_argument("--output", required=True)
    p.add_argument("--bbox", help="W,E,S,N")
    p.add_argument("--max-followers", type=int)
    p.add_argument("--max-friends", type=int)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("assign", help="attach block geoids to records")
    p.add_argument("--records", required=True)
    p.add_argument("--boundaries", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--node-capacity", type=int)
    p.set_defaults(func=cmd_assign)

    p = sub.add_parser("bag", help="build per-unit bags")
    p.add_argument("--records", required=True)
    p.add_argument("--resolution", choices=[r.value for r in Resolution])
    p.add_argument("--stopwords")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_bag)

    p = sub.add_parser("split", help="split units into train / validation / test")
    p.add_argument("--bags", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("featurize", help="vocabulary, idf and feature matrix")
    p.add_argument("--bags", required=True)
    p.add_argument("--assignment", required=True, help="split CSV")
    p.add_argument("--split", choices=sorted(SPLIT_SELECTION), default="all")
    p.add_argument("--scheme", choices=[s.value for s in Scheme])
    p.add_argument("--transform", choices=[t.value for t in Transform])
    p.add_argument("--vocab", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="grid search and fit one variable")
    p.add_argument("--features", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--variant", choices=[v.value for v in Variant])
    p.add_argument("--variable", required=True)
    p.add_argument("--grid-lambda")
    p.add_argument("--grid-eta0")
    p.add_argument("--denominator", type=int, help="denominator category index")
    p.add_argument("--alpha", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--rho", type=float)
    p.add_argument("--fit-intercept", action="store_true")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict category counts")
    p.add_argument("--model", action="append", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--population", help="truth CSV with population rows")
    p.add_argument("--split", choices=["test", "all"], default="test")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="metrics and relative-error report")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--bags", required=True)
    p.add_argument("--variables")
    p.add_argument("--quantile", type=float)
    p.add_argument("--thresholds")
    p.add_argument("--compare", action="append", help="label=predictions.csv")
    p.add_argument("--name", default="model")
    p.add_argument("--resolution", choices=[r.value for r in Resolution])
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run", help="run every stage")
    p.add_argument("--workdir")
    p.add_argument("--resolution", choices=[r.value for r in Resolution])
    p.add_argument("--variable")
    p.add_argument("--variant", choices=[v.value for v in Variant])
    p.add_argument("--scheme", choices=[s.value for s in Scheme])
    p.add_argument("--transform", choices=[t.value for t in Transform])
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--output", required=True)
    p.add_argument("--units", type=int, default=2000)
    p.add_argument("--vocab", type=int, default=500)
    p.add_argument("--users-min", type=int, default=20)
    p.add_argument("--users-max", type=int, default=80)
    p.set_defaults(func=cmd_synth)
    return parser


def exit_code(error):
    if isinstance(error, pipeline.StageError):
        error = error.cause
    if isinstance(error, exceptions.DivergenceError):
        return EXIT_CODES['divergence']
    if isinstance(error, UnicodeError):
        return EXIT_CODES['data']
    if isinstance(error, (exceptions.ConfigError, ValidationError, ValueError)):
        return EXIT_CODES['config']
    return EXIT_CODES['data']


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else LOG_CONFIG['log_level'],
                        format=LOG_CONFIG['format'])
    try:
        args.workers = resolve_workers(args.workers)
        args.func(args)
    except (exceptions.GeoDemoError, ValidationError, ValueError, OSError) as e:
        print("❌ %s: %s" % (args.command, e), file=sys.stderr)
        logger.debug("failure", exc_info=True)
        return exit_code(e)
    return EXIT_CODES['ok']


if __name__ == "__main__":
    sys.exit(main())
