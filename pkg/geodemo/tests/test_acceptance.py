"""
End to end recovery of demographic shares from the seeded synthetic
corpus (seed 7, 2000 block units, 500 words), full hyperparameter grid.
"""
import numpy as np
import pytest

from geodemo import evaluation
from geodemo import features
from geodemo import geomap
from geodemo import model as regression
from geodemo.features import FeatureConfig, Scheme, Transform
from geodemo.geomap import Resolution
from geodemo.model import TrainConfig, Variant

from modules.synthetic import generate_synthetic

FEATURE_CONFIG = FeatureConfig(scheme=Scheme.NORMALIZED_USER, transform=Transform.GAUSSIAN)


@pytest.fixture(scope="module")
def corpus():
    return generate_synthetic(seed=7, n_units=2000, vocab_size=500)


@pytest.fixture(scope="module")
def prepared(corpus):
    bags = [b for b in features.build_bags(corpus.tokenized(), Resolution.BLOCK)
            if b.total_words > 0]
    split = evaluation.split_units([b.geoid for b in bags], seed=0)
    by_split = dict((name, [b for b in bags if split.assignment[b.geoid] == name])
                    for name in (evaluation.TRAIN, evaluation.VALIDATION, evaluation.TEST))
    train_bags = by_split[evaluation.TRAIN] + by_split[evaluation.VALIDATION]
    vocab = features.build_vocabulary(train_bags)
    idf = features.compute_idf(train_bags, vocab)
    rows = {}
    for name, group in by_split.items():
        rows[name] = features.featurize(group, vocab, idf, FEATURE_CONFIG)
    return {"rows": rows, "vocab": vocab, "truth": corpus.truth_frame()}


def fit(prepared, variable, template):
    rows, truth = prepared["rows"], prepared["truth"]
    data = {}
    for name, (geoids, X) in rows.items():
        matrix = geomap.truth_matrix(truth, variable, geoids)
        categories = [c for c in matrix.columns if c != geomap.POPULATION]
        counts = matrix[categories].to_numpy(dtype=float)
        population = matrix[geomap.POPULATION].to_numpy(dtype=float)
        data[name] = (X, counts, population, categories)
    q = regression.resolve_denominator(template, variable, categories)

    def targets(name):
        return regression.targets_from_counts(data[name][1], template.variant, q, template.alpha)

    result = regression.grid_search(
        (data[evaluation.TRAIN][0], targets(evaluation.TRAIN)),
        (data[evaluation.VALIDATION][0], targets(evaluation.VALIDATION)),
        regression.LAMBDA_GRID, regression.ETA0_GRID, template, workers=1)
    fitted = regression.build_model(result, variable, categories, q,
                                    prepared["vocab"].fingerprint, FEATURE_CONFIG)
    return fitted, result, data[evaluation.TEST]


def test_corpus_shape(corpus):
    assert len(corpus.units) == 2000
    assert corpus.params["vocab_size"] == 500
    for variable, shares in corpus.proportions.items():
        assert np.allclose(shares.sum(axis=1), 1.0, atol=1e-12)
    for unit in corpus.units:
        assert unit.demographics["gender"].sum() == unit.population
        assert unit.demographics["race"].sum() == unit.population


def test_records_fall_inside_their_units(corpus):
    bounds = dict((u.geoid, u.bounds) for u in corpus.units)
    for record in corpus.records:
        min_lon, min_lat, max_lon, max_lat = bounds[record["geoid"]]
        assert min_lon < record["lon"] < max_lon
        assert min_lat < record["lat"] < max_lat
    polygons = dict((u.geoid, u.polygons) for u in corpus.units)
    for record in corpus.records[:500]:
        assert geomap.point_in_polygon((record["lon"], record["lat"]), polygons[record["geoid"]])


def test_unknown_population_recovers_gender(prepared):
    fitted, result, (X, counts, _, categories) = fit(
        prepared, "gender", TrainConfig(variant=Variant.UNKNOWN))
    assert len(result.trials) == 48
    pred = regression.predict_matrix(fitted, X)
    for j, category in enumerate(categories):
        r, _ = evaluation.pearson_r(pred[:, j], counts[:, j])
        assert r >= 0.9, (category, r)


def test_known_population_recovers_gender(prepared):
    template = TrainConfig(variant=Variant.KNOWN, denominator=0, alpha=1.0)
    fitted, _, (X, counts, population, categories) = fit(prepared, "gender", template)
    assert fitted.q == 0
    pred = regression.predict_matrix(fitted, X, population)
    assert np.all(np.abs(pred.sum(axis=1) - population) <= 1e-9 * population)
    for j, category in enumerate(categories):
        r, _ = evaluation.pearson_r(pred[:, j], counts[:, j])
        assert r >= 0.9, (category, r)
