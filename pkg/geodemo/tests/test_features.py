import io
import json
import math
from collections import Counter, defaultdict

import numpy as np
import pytest

from geodemo import exceptions
from geodemo import features
from geodemo.features import (FeatureConfig, Scheme, SparseVector, TokenizedRecord,
                              Transform, UnitBag)

G = "420010201001001"


def row_vector(X, i):
    start, end = X.indptr[i], X.indptr[i + 1]
    return SparseVector(X.indices[start:end], X.data[start:end], X.shape[1])


def example_bag():
    bag = UnitBag(geoid=G)
    for user, tokens in [("u1", ["a", "a", "b"]), ("u1", ["b", "c"]), ("u2", ["a"])]:
        features.accumulate_bag(bag, TokenizedRecord(G, user, tokens))
    return bag.finalize()


def bag_of(geoid, words):
    bag = UnitBag(geoid=geoid)
    features.accumulate_bag(bag, TokenizedRecord(geoid, "u", list(words)))
    return bag.finalize()


def test_accumulate_example():
    bag = example_bag()
    assert bag.word_counts == {"a": 3, "b": 2, "c": 1}
    assert bag.total_words == 6
    assert bag.user_counts == {"a": 2, "b": 1, "c": 1}
    assert bag.n_users == 2


def test_user_with_no_tokens_still_counts():
    bag = UnitBag(geoid=G)
    features.accumulate_bag(bag, TokenizedRecord(G, "u1", ["x"]))
    features.accumulate_bag(bag, TokenizedRecord(G, "u3", []))
    bag = bag.finalize()
    assert bag.total_words == 1
    assert bag.n_users == 2
    assert bag.word_counts == {"x": 1}
    assert bag.user_counts == {"x": 1}


def test_geoid_mismatch():
    with pytest.raises(exceptions.GeoidMismatch):
        features.accumulate_bag(UnitBag(geoid=G), TokenizedRecord("420010201001002", "u", []))


def test_merge_equals_single_stream():
    records = [TokenizedRecord(G, "u%d" % (i % 3), ["w%d" % (i % 4), "w0"]) for i in range(10)]
    whole, left, right = UnitBag(G), UnitBag(G), UnitBag(G)
    for i, r in enumerate(records):
        features.accumulate_bag(whole, r)
        features.accumulate_bag(left if i % 2 else right, r)
    assert features.merge_bags(left, right).finalize() == whole.finalize()


def test_bags_match_brute_force_recount():
    rng = np.random.default_rng(4)
    blocks = ["42001020100100%d" % i for i in range(4)]
    records = []
    for _ in range(100):
        n = int(rng.integers(0, 5))
        records.append(TokenizedRecord(blocks[int(rng.integers(4))],
                                       "u%d" % rng.integers(12),
                                       ["w%d" % rng.integers(8) for _ in range(n)]))
    bags = features.build_bags(records, "blockgroup")
    assert [b.geoid for b in bags] == ["420010201001"]
    bag = bags[0]
    counts = Counter(t for r in records for t in r.tokens)
    users = defaultdict(set)
    for r in records:
        for t in r.tokens:
            users[t].add(r.user_id)
    assert bag.word_counts == dict(counts)
    assert bag.user_counts == dict((w, len(s)) for w, s in users.items())
    assert bag.total_words == sum(len(r.tokens) for r in records)
    assert bag.n_users == len(set(r.user_id for r in records))
    for w in bag.words:
        assert 1 <= bag.user_counts[w] <= bag.n_users
        assert bag.user_counts[w] <= bag.word_counts[w]


def test_bags_file_round_trip():
    bags = [example_bag(), bag_of("420010201001002", ["z", "café"])]
    out = io.StringIO()
    features.write_bags(bags, out)
    assert features.read_bags(io.StringIO(out.getvalue())) == bags


def test_bags_file_rejects_inconsistent_totals():
    line = '{"geoid": "%s", "C": 5, "U": 1, "words": [["a", 2, 1]]}\n' % G
    with pytest.raises(exceptions.FormatError):
        features.read_bags(io.StringIO(line))


def test_vocabulary_is_sorted_union():
    vocab = features.build_vocabulary([bag_of(G, "ab"), bag_of(G, "bc")])
    assert vocab.index == {"a": 0, "b": 1, "c": 2}
    assert vocab.size == 3


def test_vocabulary_needs_training_bags():
    with pytest.raises(exceptions.DataError):
        features.build_vocabulary([])


def test_empty_vocabulary_fails_vectorize():
    empty = UnitBag(geoid=G).finalize()
    vocab = features.build_vocabulary([empty])
    assert vocab.size == 0
    with pytest.raises(exceptions.DataError):
        features.vectorize(empty, vocab, Scheme.RAW_WORD)


def test_idf_values():
    bags = [bag_of(G, "wx"), bag_of(G, "x"), bag_of(G, "x"), bag_of(G, "x")]
    vocab = features.build_vocabulary(bags)
    idf = features.compute_idf(bags, vocab)
    assert idf["w"] == pytest.approx(math.log(2.0))
    assert idf["x"] == pytest.approx(-0.223144, abs=1e-6)
    single = [bag_of(G, "w")]
    assert features.compute_idf(single, features.build_vocabulary(single))["w"] == \
        pytest.approx(-0.693147, abs=1e-6)


def test_vocab_file_round_trip():
    bags = [bag_of(G, "ab"), bag_of(G, "bc"), bag_of(G, "c")]
    vocab = features.build_vocabulary(bags)
    idf = features.compute_idf(bags, vocab)
    out = io.StringIO()
    features.write_vocab(vocab, idf, out)
    vocab2, idf2 = features.read_vocab(io.StringIO(out.getvalue()))
    assert vocab2.words == vocab.words
    assert vocab2.fingerprint == vocab.fingerprint
    np.testing.assert_array_equal(idf2.values, idf.values)


@pytest.mark.parametrize("scheme,expected", [
    (Scheme.RAW_WORD, {0: 3.0, 1: 2.0, 2: 1.0}),
    (Scheme.NORMALIZED_WORD, {0: 0.5, 1: 1.0 / 3, 2: 1.0 / 6}),
    (Scheme.RAW_USER, {0: 2.0, 1: 1.0, 2: 1.0}),
    (Scheme.NORMALIZED_USER, {0: 1.0, 1: 0.5, 2: 0.5}),
])
def test_vectorize_schemes(scheme, expected):
    bag = example_bag()
    v = features.vectorize(bag, features.build_vocabulary([bag]), scheme)
    assert v.to_dict() == pytest.approx(expected)


def test_normalized_word_sums_to_one():
    bag = example_bag()
    v = features.vectorize(bag, features.build_vocabulary([bag]), Scheme.NORMALIZED_WORD)
    assert abs(v.values.sum() - 1.0) <= 1e-12


def test_out_of_vocabulary_words_are_dropped():
    vocab = features.build_vocabulary([bag_of(G, "ab")])
    v = features.vectorize(bag_of(G, "z"), vocab, Scheme.RAW_WORD)
    assert len(v) == 0
    assert v.dim == 2


def test_normalized_scheme_needs_users_and_words():
    vocab = features.build_vocabulary([bag_of(G, "a")])
    empty = UnitBag(geoid=G).finalize()
    with pytest.raises(exceptions.DataError):
        features.vectorize(empty, vocab, Scheme.NORMALIZED_USER)
    with pytest.raises(exceptions.DataError):
        features.vectorize(empty, vocab, Scheme.NORMALIZED_WORD)


def test_no_leakage_from_test_bags():
    train = [bag_of(G, "ab"), bag_of(G, "bc")]
    vocab = features.build_vocabulary(train)
    idf = features.compute_idf(train, vocab)
    test_bag = bag_of("420010201001009", "az")
    v = features.vectorize(test_bag, vocab, Scheme.RAW_WORD)
    assert v.to_dict() == {0: 1.0}
    assert "z" not in vocab
    assert "z" not in idf


@pytest.mark.parametrize("transform,value,expected", [
    (Transform.ANSCOMBE, 0.625, 2.0),
    (Transform.GAUSSIAN, 1.0, 0.367879),
    (Transform.LOGISTIC, 0.5, 0.622459),
    (Transform.TANH, 0.5, 0.462117),
    (Transform.ARCTAN, 1.0, 0.785398),
    (Transform.SOFTSIGN, 1.0, 0.5),
])
def test_transform_examples(transform, value, expected):
    v = SparseVector([0], [value], 1)
    x = features.apply_transform(v, transform)
    assert x.values[0] == pytest.approx(expected, abs=1e-6)


def test_tfidf_example():
    vocab = features.Vocabulary(["a"])
    idf = features.IdfTable(vocab, np.array([0.693147]))
    x = features.apply_transform(SparseVector([0], [3.0], 1), Transform.TFIDF, idf)
    assert x.values[0] == pytest.approx(5.079441, abs=1e-6)


def test_idf_required_only_for_tfidf():
    v = SparseVector([0], [3.0], 1)
    idf = features.IdfTable(features.Vocabulary(["a"]), np.array([0.5]))
    with pytest.raises(exceptions.ConfigError):
        features.apply_transform(v, Transform.TFIDF)
    with pytest.raises(exceptions.ConfigError):
        features.apply_transform(v, Transform.ANSCOMBE, idf)


NONLINEAR = [Transform.ANSCOMBE, Transform.LOGISTIC, Transform.GAUSSIAN,
             Transform.TANH, Transform.ARCTAN, Transform.SOFTSIGN]


def test_transforms_preserve_sparsity():
    rng = np.random.default_rng(0)
    dim = 50
    for _ in range(10000):
        nnz = int(rng.integers(0, 8))
        indices = np.sort(rng.choice(dim, size=nnz, replace=False))
        v = SparseVector(indices, rng.uniform(1e-3, 1.0, size=nnz), dim)
        for transform in NONLINEAR:
            x = features.apply_transform(v, transform)
            np.testing.assert_array_equal(x.indices, v.indices)


@pytest.mark.parametrize("transform,increasing", [
    (Transform.ANSCOMBE, True),
    (Transform.LOGISTIC, True),
    (Transform.GAUSSIAN, False),
    (Transform.TANH, True),
    (Transform.ARCTAN, True),
    (Transform.SOFTSIGN, True),
])
def test_transform_monotonicity(transform, increasing):
    values = np.sort(np.random.default_rng(1).uniform(0.01, 1.0, size=200))
    values = np.unique(values)
    x = features.apply_transform(SparseVector(np.arange(len(values)), values, len(values)),
                                 transform).values
    steps = np.diff(x)
    assert np.all(steps > 0) if increasing else np.all(steps < 0)


@pytest.mark.parametrize("scheme,transform", [
    (Scheme.NORMALIZED_WORD, Transform.TFIDF),
    (Scheme.NORMALIZED_USER, Transform.TFIDF),
    (Scheme.RAW_WORD, Transform.ANSCOMBE),
    (Scheme.RAW_USER, Transform.GAUSSIAN),
    (Scheme.RAW_USER, Transform.LOGISTIC),
])
def test_invalid_pairings(scheme, transform):
    with pytest.raises(exceptions.ConfigError):
        features.check_pairing(scheme, transform)
    with pytest.raises(ValueError):
        FeatureConfig(scheme=scheme, transform=transform)


def test_feature_config_names():
    assert FeatureConfig().name == "normalized_user"
    cfg = FeatureConfig(scheme="raw_user", transform="tfidf")
    assert cfg.name == "raw_user+tfidf"
    assert cfg.fingerprint != FeatureConfig().fingerprint


def test_sparse_vector_invariants():
    with pytest.raises(exceptions.DataError):
        SparseVector([1, 0], [1.0, 1.0], 3)
    with pytest.raises(exceptions.DataError):
        SparseVector([0, 3], [1.0, 1.0], 3)
    with pytest.raises(exceptions.DataError):
        SparseVector([0], [0.0], 3)


def test_featurize_rows():
    train = [example_bag(), bag_of("420010201001002", "bd")]
    vocab = features.build_vocabulary(train)
    idf = features.compute_idf(train, vocab)
    cfg = FeatureConfig(scheme="raw_word", transform="tfidf")
    geoids, X = features.featurize(train, vocab, idf, cfg)
    assert geoids == [G, "420010201001002"]
    assert X.shape == (2, 4)
    row = row_vector(X, 1)
    expected = features.apply_transform(
        features.vectorize(train[1], vocab, Scheme.RAW_WORD), Transform.TFIDF, idf)
    np.testing.assert_array_equal(row.indices, expected.indices)
    np.testing.assert_allclose(row.values, expected.values)
    assert features.matrix_digest(X) == features.matrix_digest(X.copy())


def test_features_file_round_trip(tmp_path):
    train = [example_bag(), bag_of("420010201001002", "bd")]
    vocab = features.build_vocabulary(train)
    cfg = FeatureConfig()
    geoids, X = features.featurize(train, vocab, None, cfg)
    path = str(tmp_path / "features.npz")
    with open(path, "wb") as out:
        features.save_features(out, X)
    with open(path + ".meta.json", "w", encoding="utf-8") as f:
        json.dump(features.features_meta(geoids, cfg, vocab), f)
    geoids2, X2, meta = features.load_features(path)
    assert geoids2 == geoids
    assert meta["vocab_fingerprint"] == vocab.fingerprint
    assert features.matrix_digest(X2) == features.matrix_digest(X)
