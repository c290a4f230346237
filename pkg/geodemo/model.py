"""
Per-category linear regression trained by stochastic gradient descent.

Two problem variants share the trainer:

- unknown population: one weight vector per category, predicting the
  category count directly;
- known population: one weight vector per category other than the
  denominator q, predicting log((y_j + alpha) / (y_q + alpha)); counts
  are rebuilt from the scores with a softmax scaled to the population.
"""
import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field
from scipy import sparse

from . import census
from . import exceptions
from .evaluation import r_squared


logger = logging.getLogger(__name__)

LAMBDA_GRID = (1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1)
ETA0_GRID = (1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0)
EPOCHS = 10
RHO = 0.25

MODEL_FORMAT = "geodemo-model/1"


class Variant(str, Enum):
    UNKNOWN = "unknown"
    KNOWN = "known"


class TrainConfig(BaseModel):
    lam: float = Field(default=1e-4, ge=0.0)
    eta0: float = Field(default=0.01, gt=0.0)
    rho: float = Field(default=RHO, ge=0.0)
    epochs: int = Field(default=EPOCHS, ge=1)
    seed: int = 0
    variant: Variant = Variant.UNKNOWN
    # category index of the denominator; None picks the variable's default
    denominator: Optional[int] = Field(default=None, ge=0)
    alpha: float = Field(default=1.0, ge=0.0)
    fit_intercept: bool = False


def learning_rate(eta0, tau, rho):
    """ Inverse scaling: eta0 / tau ** rho, tau counting from 1. """
    if tau < 1:
        raise exceptions.ConfigError("step counter starts at 1, got %s" % tau)
    return eta0 / float(tau) ** rho


# ==============================================================================
# TRAINING
# ==============================================================================

def fit_sgd_matrix(X, y, cfg):
    """ Minimise (1/2n) sum (w.x_i + b - y_i)^2 + lam ||w||^2 by SGD.

    One update per example, examples reshuffled every epoch from
    cfg.seed, the step counter running across epochs. Returns (w, b);
    b stays 0 unless cfg.fit_intercept.
    """
    X = sparse.csr_matrix(X)
    y = np.asarray(y, dtype=float)
    n, dim = X.shape
    if n < 1:
        raise exceptions.DataError("no training examples")
    if len(y) != n:
        raise exceptions.DataError("%d rows but %d targets" % (n, len(y)))

    indptr, indices, data = X.indptr, X.indices, X.data
    w = np.zeros(dim)
    b = 0.0
    rng = np.random.default_rng(cfg.seed)
    tau = 1
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(1, cfg.epochs + 1):
            for step, i in enumerate(rng.permutation(n), start=1):
                idx = indices[indptr[i]:indptr[i + 1]]
                vals = data[indptr[i]:indptr[i + 1]]
                eta = learning_rate(cfg.eta0, tau, cfg.rho)
                err = float(np.dot(w[idx], vals)) + b - y[i]
                if not math.isfinite(err):
                    raise exceptions.DivergenceError(epoch, step)
                if cfg.lam:
                    w *= 1.0 - 2.0 * eta * cfg.lam
                w[idx] -= eta * err * vals
                if cfg.fit_intercept:
                    b -= eta * err
                tau += 1
            if not (np.all(np.isfinite(w)) and math.isfinite(b)):
                raise exceptions.DivergenceError(epoch, n)
    return w, b


def fit_sgd(examples, cfg):
    """ Train one weight vector on (SparseVector, target) pairs. """
    if not examples:
        raise exceptions.DataError("no training examples")
    dim = examples[0][0].dim
    indptr, indices, data, y = [0], [], [], []
    for x, target in examples:
        if x.dim != dim:
            raise exceptions.DataError("dimension mismatch: %d != %d" % (x.dim, dim))
        indices.append(x.indices)
        data.append(x.values)
        indptr.append(indptr[-1] + len(x))
        y.append(target)
    X = sparse.csr_matrix((np.concatenate(data), np.concatenate(indices), indptr),
                          shape=(len(examples), dim))
    w, _ = fit_sgd_matrix(X, y, cfg)
    return w


# ==============================================================================
# TARGETS
# ==============================================================================

def resolve_denominator(cfg, variable, categories):
    if cfg.denominator is not None:
        if cfg.denominator >= len(categories):
            raise exceptions.ConfigError("denominator %d out of range for %d categories"
                                         % (cfg.denominator, len(categories)))
        return cfg.denominator
    return census.denominator_index(variable, categories)


def output_categories(variant, k, q):
    """ Indices of the categories that get a weight vector. """
    if Variant(variant) == Variant.UNKNOWN:
        return list(range(k))
    return [j for j in range(k) if j != q]


def targets_from_counts(counts, variant, q=None, alpha=1.0):
    """ Regression targets from an (n, k) count matrix: the counts
    themselves, or log-ratios against column q. """
    counts = np.asarray(counts, dtype=float)
    if Variant(variant) == Variant.UNKNOWN:
        return counts.copy()
    if q is None:
        raise exceptions.ConfigError("known-population targets need a denominator")
    if alpha == 0 and np.any(counts == 0):
        raise exceptions.DegenerateTarget(
            "zero category count with alpha = 0 makes a log-ratio undefined")
    keep = output_categories(variant, counts.shape[1], q)
    return np.log((counts[:, keep] + alpha) / (counts[:, [q]] + alpha))


def make_targets(units, variant, variable, q=None, alpha=1.0):
    """ Per-category targets for a list of GeoUnits, shape (n, m). """
    rows = []
    for unit in units:
        if variable not in unit.demographics:
            raise exceptions.DataError("%s has no %s counts" % (unit.geoid, variable))
        if Variant(variant) == Variant.KNOWN and unit.population is None:
            raise exceptions.DataError("%s has no population" % unit.geoid)
        rows.append(unit.demographics[variable])
    return targets_from_counts(np.vstack(rows), variant, q, alpha)


# ==============================================================================
# MODEL & PREDICTION
# ==============================================================================

@dataclass
class RegressionModel:
    variant: Variant
    variable: str
    categories: Tuple[str, ...]
    weights: np.ndarray
    intercepts: np.ndarray
    q: Optional[int] = None
    vocab_fingerprint: str = ""
    feature_fingerprint: str = ""
    feature_name: str = ""
    hyper: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        self.variant = Variant(self.variant)
        self.categories = tuple(self.categories)
        self.weights = np.atleast_2d(np.asarray(self.weights, dtype=float))
        self.intercepts = np.asarray(self.intercepts, dtype=float)
        if len(self.weights) != len(self.outputs):
            raise exceptions.DataError("%d weight vectors for %d outputs"
                                       % (len(self.weights), len(self.outputs)))

    @property
    def k(self):
        return len(self.categories)

    @property
    def dim(self):
        return self.weights.shape[1]

    @property
    def outputs(self):
        return output_categories(self.variant, self.k, self.q)

    def scores(self, X):
        X = sparse.csr_matrix(X)
        if X.shape[1] != self.dim:
            raise exceptions.DataError("features have %d columns, model expects %d"
                                       % (X.shape[1], self.dim))
        return np.asarray(X @ self.weights.T) + self.intercepts


def _as_row(model, x):
    if x.dim != model.dim:
        raise exceptions.DataError("vector has dimension %d, model expects %d"
                                   % (x.dim, model.dim))
    return sparse.csr_matrix((x.values, x.indices, [0, len(x)]), shape=(1, x.dim))


def softmax_counts(scores, q, population):
    """ Counts from (n, k-1) scores with the denominator's score fixed at
    zero; each row sums to its population. """
    scores = np.atleast_2d(scores)
    n = scores.shape[0]
    full = np.insert(scores, q, np.zeros(n), axis=1)
    full = full - full.max(axis=1, keepdims=True)
    e = np.exp(full)
    return np.asarray(population, dtype=float).reshape(n, 1) * e / e.sum(axis=1, keepdims=True)


def predict_unknown(model, x):
    """ Raw counts w_j.x; may be negative. """
    if model.variant != Variant.UNKNOWN:
        raise exceptions.VariantMismatch("predict_unknown needs an unknown-population model")
    return model.scores(_as_row(model, x))[0]


def predict_known(model, x, p):
    if model.variant != Variant.KNOWN:
        raise exceptions.VariantMismatch("predict_known needs a known-population model")
    if p < 0:
        raise exceptions.DataError("population must be non-negative")
    return softmax_counts(model.scores(_as_row(model, x)), model.q, [p])[0]


def predict_matrix(model, X, population=None):
    """ (n, k) predicted counts for every row of X. """
    scores = model.scores(X)
    if model.variant == Variant.UNKNOWN:
        return scores
    if population is None:
        raise exceptions.DataError("known-population prediction needs populations")
    population = np.asarray(population, dtype=float)
    if np.any(~np.isfinite(population)) or np.any(population < 0):
        raise exceptions.DataError("populations must be finite and non-negative")
    return softmax_counts(scores, model.q, population)


def clamp_counts(pred):
    """ Export copy of raw predictions with negatives set to zero. """
    return np.maximum(np.asarray(pred, dtype=float), 0.0)


# ==============================================================================
# GRID SEARCH
# ==============================================================================

@dataclass
class TrialResult:
    lam: float
    eta0: float
    score: float
    diverged: bool = False


@dataclass
class GridSearchResult:
    config: TrainConfig
    weights: np.ndarray
    intercepts: np.ndarray
    trials: List[TrialResult]


def fit_outputs(X, Y, cfg):
    """ Fit one weight vector per target column. """
    Y = np.atleast_2d(np.asarray(Y, dtype=float).T).T
    weights, intercepts = [], []
    for j in range(Y.shape[1]):
        w, b = fit_sgd_matrix(X, Y[:, j], cfg)
        weights.append(w)
        intercepts.append(b)
    return np.vstack(weights), np.array(intercepts)


def _score_columns(Y_val):
    return [j for j in range(Y_val.shape[1]) if np.ptp(Y_val[:, j]) > 0]


def _evaluate_trial(args):
    X_train, Y_train, X_val, Y_val, cfg = args
    try:
        W, b = fit_outputs(X_train, Y_train, cfg)
    except exceptions.DivergenceError as e:
        logger.warning("lam=%g eta0=%g: %s", cfg.lam, cfg.eta0, e)
        return TrialResult(cfg.lam, cfg.eta0, float("-inf"), True)
    pred = np.asarray(sparse.csr_matrix(X_val) @ W.T) + b
    if not np.all(np.isfinite(pred)):
        return TrialResult(cfg.lam, cfg.eta0, float("-inf"), True)
    scores = [r_squared(pred[:, j], Y_val[:, j]) for j in _score_columns(Y_val)]
    score = float(np.mean(scores))
    logger.debug("lam=%g eta0=%g: validation R2 %.6f", cfg.lam, cfg.eta0, score)
    return TrialResult(cfg.lam, cfg.eta0, score)


def grid_search(train, val, lambdas=LAMBDA_GRID, eta0s=ETA0_GRID, template=None,
                workers=1):
    """ Exhaustive search over lambdas x eta0s.

    `train` and `val` are (X, Y) pairs with Y holding one target column
    per output. Each combination is scored by validation R^2 averaged over
    the columns (in target space); diverged combinations score -inf and
    ties keep the earlier combination. The winner is refit on train and
    validation together.
    """
    template = template or TrainConfig()
    if not lambdas or not eta0s:
        raise exceptions.ConfigError("grids must not be empty")
    X_train, Y_train = sparse.csr_matrix(train[0]), np.atleast_2d(np.asarray(train[1], dtype=float).T).T
    X_val, Y_val = sparse.csr_matrix(val[0]), np.atleast_2d(np.asarray(val[1], dtype=float).T).T
    if Y_val.shape[0] < 2:
        raise exceptions.DataError("validation needs at least 2 units")
    if not _score_columns(Y_val):
        raise exceptions.DataError("every validation target column is constant")

    configs = [template.model_copy(update={"lam": float(lam), "eta0": float(eta0)})
               for lam, eta0 in itertools.product(lambdas, eta0s)]
    args = [(X_train, Y_train, X_val, Y_val, c) for c in configs]
    if workers > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            trials = list(pool.map(_evaluate_trial, args))
    else:
        trials = [_evaluate_trial(a) for a in args]

    best = None
    for cfg, trial in zip(configs, trials):
        if trial.diverged or not math.isfinite(trial.score):
            continue
        if best is None or trial.score > best[1].score:
            best = (cfg, trial)
    if best is None:
        raise exceptions.DivergenceError(template.epochs, 0,
                                         "every grid combination diverged")
    cfg, trial = best
    logger.info("grid search: %d combinations, best lam=%g eta0=%g R2=%.4f",
                len(configs), cfg.lam, cfg.eta0, trial.score)

    X_all = sparse.vstack([X_train, X_val], format="csr")
    Y_all = np.vstack([Y_train, Y_val])
    W, b = fit_outputs(X_all, Y_all, cfg)
    return GridSearchResult(cfg, W, b, trials)


# ==============================================================================
# MODEL FILE
# ==============================================================================

HEADER_KEYS = ("format", "variant", "variable", "categories", "k", "q", "D",
               "feature", "feature_fingerprint", "vocab_fingerprint")


def write_model(model, out):
    header = [
        ("format", MODEL_FORMAT),
        ("variant", model.variant.value),
        ("variable", model.variable),
        ("categories", ",".join(model.categories)),
        ("k", model.k),
        ("q", "" if model.q is None else model.q),
        ("D", model.dim),
        ("feature", model.feature_name),
        ("feature_fingerprint", model.feature_fingerprint),
        ("vocab_fingerprint", model.vocab_fingerprint),
    ]
    for key in sorted(model.hyper):
        header.append(("hyper." + key, repr(model.hyper[key])))
    for key, value in header:
        out.write("%s\t%s\n" % (key, value))
    for row, j in enumerate(model.outputs):
        out.write("[category %s]\n" % model.categories[j])
        out.write("intercept\t%r\n" % float(model.intercepts[row]))
        w = model.weights[row]
        for i in np.flatnonzero(w):
            out.write("%d\t%r\n" % (i, float(w[i])))


def _literal(text):
    if text in ("True", "False"):
        return text == "True"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text.strip("'\"")


def read_model(f):
    header, sections, current = {}, [], None
    for line_number, line in enumerate(f, start=1):
        line = line.rstrip("\n")
        if not line:
            continue
        if line.startswith("[category ") and line.endswith("]"):
            current = {"name": line[len("[category "):-1], "intercept": 0.0, "w": {}}
            sections.append(current)
            continue
        key, sep, value = line.partition("\t")
        if not sep:
            raise exceptions.FormatError("model line %d: expected key<TAB>value" % line_number)
        if current is None:
            header[key] = value
            continue
        try:
            if key == "intercept":
                current["intercept"] = float(value)
            else:
                current["w"][int(key)] = float(value)
        except ValueError:
            raise exceptions.FormatError("model line %d: bad weight %r" % (line_number, line))

    missing = [k for k in HEADER_KEYS if k not in header]
    if missing:
        raise exceptions.FormatError("model header lacks %s" % ", ".join(missing))
    if header["format"] != MODEL_FORMAT:
        raise exceptions.FormatError("unknown model format %r" % header["format"])
    categories = tuple(header["categories"].split(","))
    dim = int(header["D"])
    q = int(header["q"]) if header["q"] != "" else None
    variant = Variant(header["variant"])
    expected = [categories[j] for j in output_categories(variant, len(categories), q)]
    if [s["name"] for s in sections] != expected:
        raise exceptions.FormatError("model sections %s do not match outputs %s"
                                     % ([s["name"] for s in sections], expected))
    weights = np.zeros((len(sections), dim))
    for row, s in enumerate(sections):
        for i, value in s["w"].items():
            weights[row, i] = value
    hyper = dict((k[len("hyper."):], _literal(v)) for k, v in header.items()
                 if k.startswith("hyper."))
    return RegressionModel(
        variant=variant,
        variable=header["variable"],
        categories=categories,
        weights=weights,
        intercepts=np.array([s["intercept"] for s in sections]),
        q=q,
        vocab_fingerprint=header["vocab_fingerprint"],
        feature_fingerprint=header["feature_fingerprint"],
        feature_name=header["feature"],
        hyper=hyper,
    )


def build_model(result, variable, categories, q, vocab_fingerprint, feature_config):
    """ RegressionModel from a grid-search result. """
    cfg = result.config
    return RegressionModel(
        variant=cfg.variant,
        variable=variable,
        categories=categories,
        weights=result.weights,
        intercepts=result.intercepts,
        q=q if cfg.variant == Variant.KNOWN else None,
        vocab_fingerprint=vocab_fingerprint,
        feature_fingerprint=feature_config.fingerprint,
        feature_name=feature_config.name,
        hyper={"lam": cfg.lam, "eta0": cfg.eta0, "rho": cfg.rho, "epochs": cfg.epochs,
               "seed": cfg.seed, "alpha": cfg.alpha, "fit_intercept": cfg.fit_intercept},
    )
