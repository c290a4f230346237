#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
#==============================================================================
#                    geodemo v1.0 - PIPELINE MODULE
#      Stage functions behind the CLI subcommands and the full pipeline run
#==============================================================================

Stages and the files they exchange (names relative to the work directory
come from config.ARTIFACTS):

    ingest     raw record files      -> records.clean.jsonl (+ .summary.json)
    assign     clean records, GeoJSON -> records.assigned.jsonl
    bag        assigned records       -> bags.jsonl
    split      bags                   -> split.csv
    featurize  bags, split            -> vocab.tsv, features.npz (+ .meta.json)
    train      features, truth        -> model.<variable>.txt
    predict    model, features, truth -> predictions.csv
    evaluate   predictions, truth, bags -> report.csv, report.plot.csv
"""

import glob
import json
import logging
import os
from collections import Counter
from typing import List, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

import sys
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config import ARTIFACTS, EVAL_CONFIG, INDEX_CONFIG, INGEST_CONFIG

from geodemo import exceptions
from geodemo import census
from geodemo import evaluation
from geodemo import features
from geodemo import geomap
from geodemo import ingest
from geodemo import model as regression
from geodemo.features import FeatureConfig, TokenizedRecord
from geodemo.geomap import Resolution
from geodemo.model import TrainConfig, Variant
from geodemo.tokenizer import Tokenizer

from modules import report_export
from modules.utilities import atomic_output, file_digest, fingerprint, write_json

logger = logging.getLogger("geodemo.pipeline")

# suffix of the per-artifact config stamp written by run_pipeline
STAMP_SUFFIX = ".config.json"


class StageError(exceptions.GeoDemoError):
    """ A pipeline stage failed; `cause` holds the original error. """

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super(StageError, self).__init__("stage %s failed: %s" % (stage, cause))


# ==============================================================================
# CONFIGURATION
# ==============================================================================

class PipelineConfig(BaseModel):
    records: List[str] = Field(default_factory=list)
    boundaries: str = ""
    truth: str = ""
    workdir: str = "outputs"

    resolution: Resolution = Resolution.BLOCK
    variables: List[str] = Field(default_factory=lambda: ["gender"])
    variant: Variant = Variant.UNKNOWN
    feature: FeatureConfig = Field(default_factory=FeatureConfig)
    compare_features: List[FeatureConfig] = Field(default_factory=list)
    train: TrainConfig = Field(default_factory=TrainConfig)
    grid_lambda: List[float] = Field(default_factory=lambda: list(regression.LAMBDA_GRID))
    grid_eta0: List[float] = Field(default_factory=lambda: list(regression.ETA0_GRID))

    split_seed: int = 0
    thresholds: List[int] = Field(default_factory=lambda: list(EVAL_CONFIG['thresholds']))
    quantile: float = EVAL_CONFIG['quantile']

    bbox: str = INGEST_CONFIG['bbox']
    max_followers: int = INGEST_CONFIG['max_followers']
    max_friends: int = INGEST_CONFIG['max_friends']
    node_capacity: int = INDEX_CONFIG['node_capacity']
    stopwords: Optional[str] = None

    @model_validator(mode="before")
    @classmethod
    def _single_variable(cls, data):
        if isinstance(data, dict) and "variable" in data:
            data = dict(data)
            variable = data.pop("variable")
            data.setdefault("variables", [variable] if isinstance(variable, str) else variable)
        return data

    @field_validator("variables")
    @classmethod
    def _known_variables(cls, value):
        if not value:
            raise ValueError("at least one variable is required")
        return value

    @field_validator("quantile")
    @classmethod
    def _quantile_range(cls, value):
        if not 0.0 < value < 1.0:
            raise ValueError("quantile must lie in (0, 1)")
        return value

    @field_validator("grid_lambda", "grid_eta0")
    @classmethod
    def _non_empty_grid(cls, value):
        if not value:
            raise ValueError("grids must not be empty")
        return value

    def train_config(self):
        return self.train.model_copy(update={"variant": self.variant})

    def path(self, key, *suffix):
        name = ARTIFACTS[key]
        if suffix:
            stem, ext = os.path.splitext(name)
            name = ".".join((stem,) + suffix) + ext
        return os.path.join(self.workdir, name)

    @property
    def fingerprint(self):
        return fingerprint(self.model_dump(mode="json"))


def _set_dotted(data, key, value):
    parts = key.split(".")
    node = data
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value


def load_config(path=None, overrides=None):
    """
    Read a JSON config file and apply flag overrides

    Args:
        path: JSON file, or None for defaults only
        overrides: {dotted.key: value}; None values are ignored, flags win

    Returns:
        Validated PipelineConfig

    Raises:
        ConfigError: unreadable file or failed validation
    """
    data = {}
    if path:
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except (OSError, ValueError) as e:
            raise exceptions.ConfigError("cannot read config %s: %s" % (path, e))
        if not isinstance(data, dict):
            raise exceptions.ConfigError("config %s is not a JSON object" % path)
    for key, value in (overrides or {}).items():
        if value is not None:
            _set_dotted(data, key, value)
    try:
        return PipelineConfig.model_validate(data)
    except ValidationError as e:
        raise exceptions.ConfigError("invalid config: %s" % e)


def expand_inputs(patterns):
    """ Record paths with glob patterns expanded (sorted per pattern); a
    pattern that matches nothing is kept as given. """
    paths = []
    for pattern in patterns:
        matches = sorted(glob.glob(pattern))
        paths.extend(matches or [pattern])
    return paths


def check_paths(cfg):
    missing = [p for p in expand_inputs(cfg.records) + [cfg.boundaries, cfg.truth]
               if not p or not os.path.exists(p)]
    if missing:
        raise exceptions.ConfigError("missing input paths: %s" % ", ".join(map(repr, missing)))


# ==============================================================================
# STAGES
# ==============================================================================

def stage_ingest(paths, output, bbox, workers=1, max_followers=ingest.MAX_FOLLOWERS,
                 max_friends=ingest.MAX_FRIENDS):
    paths = expand_inputs([paths] if isinstance(paths, str) else paths)
    if not paths:
        raise exceptions.ConfigError("no record files given")
    if isinstance(bbox, str):
        bbox = ingest.BoundingBox.parse(bbox)
    with atomic_output(output) as out:
        counter = ingest.ingest_files(paths, out, bbox, workers, max_followers, max_friends)
    write_json(output + ".summary.json", dict(sorted(counter.items())))
    print("✅ ingest: kept %d of %d records -> %s" % (counter["kept"], counter["read"], output))
    return counter


def stage_assign(records_path, boundaries_path, output, node_capacity=16):
    units = geomap.load_boundaries(boundaries_path)
    index = geomap.build_index(units, node_capacity)
    counter = Counter()
    with atomic_output(output) as out:
        lines = ingest.iter_lines(records_path, counter)
        for line in geomap.annotate_records(lines, index, counter):
            out.write(line)
            out.write("\n")
    print("✅ assign: %d of %d records inside a unit -> %s"
          % (counter["assigned"], counter["read"], output))
    return counter


def iter_tokenized(records_path, tokenizer, counter):
    lines = ingest.iter_lines(records_path, counter)
    for geoid, record in geomap.iter_assigned_records(lines, counter):
        yield TokenizedRecord(geoid, record.user_id, tokenizer.tokenize(record.text))


def stage_bag(records_path, output, resolution, stopwords=None):
    tokenizer = Tokenizer.from_files(stopwords) if stopwords else Tokenizer()
    counter = Counter()
    bags = features.build_bags(iter_tokenized(records_path, tokenizer, counter), resolution)
    with atomic_output(output) as out:
        features.write_bags(bags, out)
    print("✅ bag: %d %s bags -> %s" % (len(bags), Resolution(resolution).value, output))
    return bags


def read_bags(path):
    with open(path, "r", encoding="utf-8") as f:
        return features.read_bags(f)


def stage_split(bags, output, seed):
    split = evaluation.split_units([b.geoid for b in bags], seed)
    with atomic_output(output) as out:
        evaluation.write_split(split, out)
    counts = split.counts()
    print("✅ split: %d train / %d validation / %d test -> %s"
          % (counts["train"], counts["validation"], counts["test"], output))
    return split


def training_bags(bags, split):
    """ Bags of the full training split (training and validation). """
    keep = set(split.geoids(evaluation.TRAIN)) | set(split.geoids(evaluation.VALIDATION))
    return [b for b in bags if b.geoid in keep]


def stage_vocab(bags, split, vocab_path):
    train = training_bags(bags, split)
    vocab = features.build_vocabulary(train)
    idf = features.compute_idf(train, vocab)
    with atomic_output(vocab_path) as out:
        features.write_vocab(vocab, idf, out)
    return vocab, idf


def read_vocab(path):
    with open(path, "r", encoding="utf-8") as f:
        return features.read_vocab(f)


def stage_featurize(bags, split, vocab, idf, feature_config, output, splits=None):
    """
    Write the feature matrix of the bags whose split is in `splits`
    (every split when None) plus its .meta.json sidecar
    """
    if splits is not None:
        bags = [b for b in bags if split.assignment.get(b.geoid) in splits]
    geoids, X = features.featurize(bags, vocab, idf, feature_config)
    meta = features.features_meta(geoids, feature_config, vocab)
    meta["splits"] = [split.assignment.get(g, "") for g in geoids]
    meta["digest"] = features.matrix_digest(X)
    with atomic_output(output, "wb") as out:
        features.save_features(out, X)
    write_json(output + ".meta.json", meta)
    print("✅ featurize: %d x %d %s -> %s" % (X.shape[0], X.shape[1], feature_config.name, output))
    return geoids, X, meta


def load_truth(path):
    return geomap.load_truth(path)


def _rows(meta, splits):
    return [i for i, s in enumerate(meta["splits"]) if s in splits]


def stage_train(X, meta, truth, variable, train_cfg, lambdas, eta0s, output, workers=1):
    """
    Grid-search and fit one model for `variable` on the training and
    validation rows of X, then write it to `output`
    """
    geoids = meta["geoids"]
    train_rows = _rows(meta, (evaluation.TRAIN,))
    val_rows = _rows(meta, (evaluation.VALIDATION,))
    if not train_rows or not val_rows:
        raise exceptions.DataError("features hold no training or validation rows")

    matrix = geomap.truth_matrix(truth, variable, [geoids[i] for i in train_rows + val_rows])
    categories = [c for c in matrix.columns if c != geomap.POPULATION]
    units = geomap.units_from_truth(matrix, variable, categories)
    q = regression.resolve_denominator(train_cfg, variable, categories)
    Y = regression.make_targets(units, train_cfg.variant, variable, q, train_cfg.alpha)
    n_train = len(train_rows)
    result = regression.grid_search((X[train_rows], Y[:n_train]), (X[val_rows], Y[n_train:]),
                                    lambdas, eta0s, train_cfg, workers)
    feature_config = FeatureConfig.model_validate(meta["feature_config"])
    fitted = regression.build_model(result, variable, categories, q,
                                    meta["vocab_fingerprint"], feature_config)
    with atomic_output(output) as out:
        regression.write_model(fitted, out)
    print("✅ train: %s %s lam=%g eta0=%g -> %s" % (variable, train_cfg.variant.value,
                                                  result.config.lam, result.config.eta0, output))
    return fitted, result


def read_model(path):
    with open(path, "r", encoding="utf-8") as f:
        return regression.read_model(f)


def predict_rows(fitted, X, meta, truth, rows):
    """ (geoids, raw (n, k), exported counts (n, k)) for the given rows. """
    geoids = [meta["geoids"][i] for i in rows]
    if fitted.vocab_fingerprint != meta["vocab_fingerprint"]:
        raise exceptions.DataError("model and features use different vocabularies")
    population = None
    if fitted.variant == Variant.KNOWN:
        matrix = geomap.truth_matrix(truth, fitted.variable, geoids, fitted.categories)
        population = matrix[geomap.POPULATION].to_numpy(dtype=float)
        if np.any(np.isnan(population)):
            raise exceptions.DataError("known-population prediction needs population rows")
    raw = regression.predict_matrix(fitted, X[rows], population)
    counts = regression.clamp_counts(raw) if fitted.variant == Variant.UNKNOWN else raw
    return geoids, raw, counts


def stage_predict(models, X, meta, truth, output, splits=(evaluation.TEST,)):
    """
    Predictions of every model (one per variable) for the rows of X whose
    split is in `splits` (every row when empty), written as one long CSV
    """
    rows = _rows(meta, splits) if splits else list(range(X.shape[0]))
    sets = []
    for fitted in models:
        geoids, raw, counts = predict_rows(fitted, X, meta, truth, rows)
        sets.append(report_export.PredictionSet(fitted.variable, fitted.categories,
                                                geoids, raw, counts))
    report_export.export_predictions_csv(output, sets)
    print("✅ predict: %d units x %d variables -> %s" % (len(rows), len(models), output))
    return sets


def _prediction_variables(pred_path):
    df = pd.read_csv(pred_path, dtype=str, keep_default_na=False, usecols=["variable"])
    return list(dict.fromkeys(df["variable"]))


def evaluate_predictions(pred_path, truth, bags, variables=None,
                         thresholds=evaluation.DEFAULT_THRESHOLDS,
                         quantile=evaluation.DEFAULT_QUANTILE, compare=None, name="model"):
    """
    Build the evaluation report of one predictions file

    Args:
        pred_path: predictions CSV
        truth: long truth table (load_truth)
        bags: finalized bags, for the per-unit user counts
        variables: variables to score; every variable in the file when None
        thresholds, quantile: relative-error table parameters
        compare: {label: predictions CSV} compared to pred_path by paired t-test
        name: label of pred_path in comparison rows

    Returns:
        EvalReport
    """
    variables = variables or _prediction_variables(pred_path)
    users_by_geoid = dict((b.geoid, b.n_users) for b in bags)
    report = evaluation.EvalReport()
    preds, truths, unit_ids = [], [], None

    for variable in variables:
        geoids, categories, raw, counts = report_export.read_predictions(pred_path, variable)
        if unit_ids is not None and geoids != unit_ids:
            raise exceptions.DataError("variables were predicted for different units")
        unit_ids = geoids
        matrix = geomap.truth_matrix(truth, variable, geoids, categories)
        y = matrix[categories].to_numpy(dtype=float)
        report.metrics.extend(evaluation.category_metrics(raw, y, variable, categories))

        for label in sorted(compare or {}):
            other_ids, _, other_raw, _ = report_export.read_predictions(
                compare[label], variable, categories)
            if other_ids != geoids:
                raise exceptions.DataError("%s predicts other units than %s" % (label, name))
            p = evaluation.compare_predictions(y, raw, other_raw)
            report.comparisons.append(evaluation.ComparisonRow(variable, name, label, p))

        population = matrix[geomap.POPULATION].to_numpy(dtype=float)
        if variable in census.NATIONAL_SHARES and not np.any(np.isnan(population)):
            baseline = np.vstack([evaluation.baseline_national(p, variable) for p in population])
            p = evaluation.compare_predictions(y, raw, baseline)
            report.comparisons.append(evaluation.ComparisonRow(variable, name, "national", p))

        preds.append(counts)
        truths.append(y)

    users = [users_by_geoid.get(g, 0) for g in unit_ids]
    report.errors = evaluation.relative_error_report(preds, truths, users, thresholds, quantile)
    return report


def stage_evaluate(pred_path, truth, bags, output, resolution, variables=None,
                   thresholds=evaluation.DEFAULT_THRESHOLDS,
                   quantile=evaluation.DEFAULT_QUANTILE, compare=None, name="model"):
    report = evaluate_predictions(pred_path, truth, bags, variables, thresholds, quantile,
                                  compare, name)
    report_export.export_report_csv(output, report)
    plot_path = os.path.splitext(output)[0] + ".plot.csv"
    report_export.export_plot_data_csv(plot_path, {Resolution(resolution).value: report.errors})
    print("✅ evaluate: %d metrics, %d comparisons -> %s"
          % (len(report.metrics), len(report.comparisons), output))
    return report


# ==============================================================================
# FULL RUN
# ==============================================================================

def _run_stage(stage, fn, *args, **kwargs):
    logger.info("stage %s", stage)
    try:
        return fn(*args, **kwargs)
    except (exceptions.GeoDemoError, OSError) as e:
        raise StageError(stage, e)


def usable_bags(bags, feature_configs):
    """ Every unit with records, except that normalized_word (which divides
    by C_i) drops the units whose records left no token. """
    if not any(c.scheme == features.Scheme.NORMALIZED_WORD for c in feature_configs):
        return list(bags)
    kept = [b for b in bags if b.total_words > 0]
    if len(kept) < len(bags):
        logger.warning("normalized_word: dropping %d units whose records have no tokens",
                       len(bags) - len(kept))
    return kept


def stamp_artifacts(cfg, paths):
    """ Write a <artifact>.config.json sidecar naming the config that
    produced each path. Sidecars stay out of the manifest digests, which
    must not depend on the work directory. """
    for path in paths:
        write_json(path + STAMP_SUFFIX, {"artifact": os.path.basename(path),
                                         "config_fingerprint": cfg.fingerprint})


def _safe_name(feature_config):
    return feature_config.name.replace("+", "-")


def train_and_predict(cfg, bags, split, vocab, idf, truth, feature_config, features_path,
                      pred_path, model_suffix=(), workers=1):
    _, X, meta = _run_stage("featurize", stage_featurize, bags, split, vocab, idf,
                            feature_config, features_path)
    models = []
    for variable in cfg.variables:
        model_path = cfg.path("model", variable, *model_suffix)
        fitted, _ = _run_stage("train", stage_train, X, meta, truth, variable,
                               cfg.train_config(), cfg.grid_lambda, cfg.grid_eta0, model_path,
                               workers)
        models.append(fitted)
    _run_stage("predict", stage_predict, models, X, meta, truth, pred_path)
    return meta


def run_pipeline(cfg, workers=1):
    """
    ingest -> assign -> bag -> split -> featurize -> train -> predict -> evaluate

    Every artifact goes to cfg.workdir; manifest.json records the config
    fingerprint and a digest of each artifact, and each features, model,
    predictions and report file gets a .config.json stamp. Returns the
    EvalReport.
    """
    check_paths(cfg)
    os.makedirs(cfg.workdir, exist_ok=True)
    digests = {}

    _run_stage("ingest", stage_ingest, cfg.records, cfg.path("clean"), cfg.bbox, workers,
               cfg.max_followers, cfg.max_friends)
    _run_stage("assign", stage_assign, cfg.path("clean"), cfg.boundaries, cfg.path("assigned"),
               cfg.node_capacity)
    bags = _run_stage("bag", stage_bag, cfg.path("assigned"), cfg.path("bags"),
                      cfg.resolution, cfg.stopwords)
    bags = usable_bags(bags, [cfg.feature] + list(cfg.compare_features))
    split = _run_stage("split", stage_split, bags, cfg.path("split"), cfg.split_seed)
    vocab, idf = _run_stage("featurize", stage_vocab, bags, split, cfg.path("vocab"))
    truth = _run_stage("evaluate", load_truth, cfg.truth)

    meta = train_and_predict(cfg, bags, split, vocab, idf, truth, cfg.feature,
                             cfg.path("features"), cfg.path("predictions"), (), workers)
    digests[ARTIFACTS["features"]] = meta["digest"]

    stamped = [cfg.path("features"), cfg.path("predictions"), cfg.path("report")]
    stamped += [cfg.path("model", v) for v in cfg.variables]
    compare = {}
    for other in cfg.compare_features:
        suffix = _safe_name(other)
        pred_path = cfg.path("predictions", suffix)
        other_meta = train_and_predict(cfg, bags, split, vocab, idf, truth, other,
                                       cfg.path("features", suffix), pred_path, (suffix,),
                                       workers)
        digests[os.path.basename(cfg.path("features", suffix))] = other_meta["digest"]
        stamped += [cfg.path("features", suffix), pred_path]
        stamped += [cfg.path("model", v, suffix) for v in cfg.variables]
        compare[other.name] = pred_path

    report = _run_stage("evaluate", stage_evaluate, cfg.path("predictions"), truth, bags,
                        cfg.path("report"), cfg.resolution, cfg.variables, cfg.thresholds,
                        cfg.quantile, compare, cfg.feature.name)
    stamp_artifacts(cfg, stamped)

    for name in sorted(os.listdir(cfg.workdir)):
        full = os.path.join(cfg.workdir, name)
        if name in digests or name == ARTIFACTS["manifest"] or not os.path.isfile(full):
            continue
        if name.endswith((".npz", ".partial", STAMP_SUFFIX)):
            continue
        digests[name] = file_digest(full)
    write_json(cfg.path("manifest"), {
        "config_fingerprint": cfg.fingerprint,
        "artifacts": dict(sorted(digests.items())),
    })
    print("✅ run: artifacts in %s (config %s)" % (cfg.workdir, cfg.fingerprint[:12]))
    return report
