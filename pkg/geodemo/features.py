"""
Per-unit bags of words, the training vocabulary and idf table, and the
feature schemes and transformations that turn a bag into a sparse vector.

For a unit i and word w:

    c_{w,i}  occurrences of w in the unit's records
    C_i      total word occurrences
    u_{w,i}  distinct users who used w in the unit
    U_i      distinct users with at least one record in the unit
"""
import hashlib
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, NamedTuple, Set

import numpy as np
from pydantic import BaseModel, model_validator
from scipy import sparse

from . import exceptions
from .geomap import rollup_geoid


logger = logging.getLogger(__name__)


# ==============================================================================
# BAGS
# ==============================================================================

def user_hash(user_id):
    """ 64-bit hash of a user id. """
    digest = hashlib.blake2b(str(user_id).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def counts_toward_users(tokens):
    """ Whether a record adds its author to U_i. Every record does, even
    when nothing survived tokenization. """
    return True


class TokenizedRecord(NamedTuple):
    geoid: str
    user_id: str
    tokens: List[str]


@dataclass
class UnitBag:
    geoid: str
    word_counts: Counter = field(default_factory=Counter)
    user_sets: Dict[str, Set[int]] = field(default_factory=dict)
    unit_users: Set[int] = field(default_factory=set)
    total_words: int = 0

    def finalize(self):
        return FinalizedBag(
            geoid=self.geoid,
            word_counts=dict(self.word_counts),
            user_counts=dict((w, len(s)) for w, s in self.user_sets.items()),
            total_words=self.total_words,
            n_users=len(self.unit_users),
        )


@dataclass(frozen=True)
class FinalizedBag:
    geoid: str
    word_counts: Dict[str, int]
    user_counts: Dict[str, int]
    total_words: int
    n_users: int

    @property
    def words(self):
        return sorted(self.word_counts)


def accumulate_bag(bag, record):
    """ Add one tokenized record to `bag` in place and return it. """
    if record.geoid != bag.geoid:
        raise exceptions.GeoidMismatch("record geoid %s does not belong to bag %s"
                                       % (record.geoid, bag.geoid))
    h = user_hash(record.user_id)
    for token in record.tokens:
        bag.word_counts[token] += 1
        bag.user_sets.setdefault(token, set()).add(h)
        bag.total_words += 1
    if counts_toward_users(record.tokens):
        bag.unit_users.add(h)
    return bag


def merge_bags(a, b):
    """ Union of two unfinalized bags of the same unit. """
    if a.geoid != b.geoid:
        raise exceptions.GeoidMismatch("cannot merge bags %s and %s" % (a.geoid, b.geoid))
    merged = UnitBag(geoid=a.geoid)
    merged.word_counts = a.word_counts + b.word_counts
    for source in (a.user_sets, b.user_sets):
        for word, users in source.items():
            merged.user_sets.setdefault(word, set()).update(users)
    merged.unit_users = a.unit_users | b.unit_users
    merged.total_words = a.total_words + b.total_words
    return merged


def build_bags(records, resolution):
    """ Stream TokenizedRecords into finalized bags at `resolution`,
    rolling each record's block geoid up first. Sorted by geoid. """
    bags = {}
    n = 0
    for record in records:
        geoid = rollup_geoid(record.geoid, resolution)
        bag = bags.get(geoid)
        if bag is None:
            bag = bags[geoid] = UnitBag(geoid=geoid)
        accumulate_bag(bag, record._replace(geoid=geoid))
        n += 1
    logger.info("built %d bags from %d records", len(bags), n)
    return [bags[g].finalize() for g in sorted(bags)]


def write_bags(bags, out):
    for bag in bags:
        words = [[w, bag.word_counts[w], bag.user_counts[w]] for w in bag.words]
        out.write(json.dumps({"geoid": bag.geoid, "C": bag.total_words,
                              "U": bag.n_users, "words": words},
                             ensure_ascii=False))
        out.write("\n")


def read_bags(f):
    bags = []
    for line_number, line in enumerate(f, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            words = obj["words"]
            bag = FinalizedBag(
                geoid=str(obj["geoid"]),
                word_counts=dict((w, int(c)) for w, c, _ in words),
                user_counts=dict((w, int(u)) for w, _, u in words),
                total_words=int(obj["C"]),
                n_users=int(obj["U"]),
            )
        except (ValueError, KeyError, TypeError) as e:
            raise exceptions.FormatError("bags line %d: %s" % (line_number, e))
        if sum(bag.word_counts.values()) != bag.total_words:
            raise exceptions.FormatError("bags line %d: C does not match word counts"
                                         % line_number)
        bags.append(bag)
    return bags


# ==============================================================================
# VOCABULARY & IDF
# ==============================================================================

class Vocabulary(object):
    """ Word to dense column index, in lexicographic word order. """

    def __init__(self, words):
        self.words = tuple(sorted(set(words)))
        self.index = dict((w, i) for i, w in enumerate(self.words))

    @property
    def size(self):
        return len(self.words)

    def __len__(self):
        return len(self.words)

    def __contains__(self, word):
        return word in self.index

    @property
    def fingerprint(self):
        return hashlib.sha256("\n".join(self.words).encode("utf-8")).hexdigest()


def build_vocabulary(train_bags):
    if not train_bags:
        raise exceptions.DataError("cannot build a vocabulary from no training bags")
    words = set()
    for bag in train_bags:
        words.update(bag.word_counts)
    vocab = Vocabulary(words)
    logger.info("vocabulary: %d words from %d bags", vocab.size, len(train_bags))
    return vocab


@dataclass
class IdfTable:
    vocab: Vocabulary
    values: np.ndarray

    def __getitem__(self, word):
        return float(self.values[self.vocab.index[word]])

    def __contains__(self, word):
        return word in self.vocab

    def __len__(self):
        return len(self.values)


def compute_idf(train_bags, vocab):
    """ idf(w) = ln(n / (1 + df(w))) over the n training bags. """
    n = len(train_bags)
    if n < 1:
        raise exceptions.DataError("idf needs at least one training bag")
    df = np.zeros(vocab.size, dtype=np.int64)
    for bag in train_bags:
        for word in bag.word_counts:
            j = vocab.index.get(word)
            if j is not None:
                df[j] += 1
    return IdfTable(vocab, np.log(n / (1.0 + df)))


def write_vocab(vocab, idf, out):
    for j, word in enumerate(vocab.words):
        out.write("%s\t%d\t%r\n" % (word, j, float(idf.values[j])))


def read_vocab(f):
    words, values = [], []
    for line_number, line in enumerate(f, start=1):
        line = line.rstrip("\n")
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise exceptions.FormatError("vocab line %d: expected 3 columns" % line_number)
        word, index, value = parts
        try:
            index, value = int(index), float(value)
        except ValueError:
            raise exceptions.FormatError("vocab line %d: bad number" % line_number)
        if index != len(words):
            raise exceptions.FormatError("vocab line %d: index %s out of order"
                                         % (line_number, index))
        words.append(word)
        values.append(float(value))
    vocab = Vocabulary(words)
    if vocab.words != tuple(words):
        raise exceptions.FormatError("vocab words are not sorted and unique")
    return vocab, IdfTable(vocab, np.array(values, dtype=float))


# ==============================================================================
# SCHEMES & TRANSFORMS
# ==============================================================================

class Scheme(str, Enum):
    RAW_WORD = "raw_word"
    NORMALIZED_WORD = "normalized_word"
    RAW_USER = "raw_user"
    NORMALIZED_USER = "normalized_user"

    @property
    def normalized(self):
        return self in (Scheme.NORMALIZED_WORD, Scheme.NORMALIZED_USER)


class Transform(str, Enum):
    NONE = "none"
    TFIDF = "tfidf"
    ANSCOMBE = "anscombe"
    LOGISTIC = "logistic"
    GAUSSIAN = "gaussian"
    TANH = "tanh"
    ARCTAN = "arctan"
    SOFTSIGN = "softsign"


TRANSFORM_FUNCTIONS = {
    Transform.ANSCOMBE: lambda v: 2.0 * np.sqrt(v + 3.0 / 8.0),
    Transform.LOGISTIC: lambda v: 1.0 / (1.0 + np.exp(-v)),
    Transform.GAUSSIAN: lambda v: np.exp(-v * v),
    Transform.TANH: np.tanh,
    Transform.ARCTAN: np.arctan,
    Transform.SOFTSIGN: lambda v: v / (1.0 + np.abs(v)),
}


def check_pairing(scheme, transform):
    scheme, transform = Scheme(scheme), Transform(transform)
    if transform == Transform.NONE:
        return
    if transform == Transform.TFIDF and scheme.normalized:
        raise exceptions.ConfigError("tfidf applies to raw_word and raw_user only, not %s"
                                     % scheme.value)
    if transform != Transform.TFIDF and not scheme.normalized:
        raise exceptions.ConfigError("%s applies to normalized schemes only, not %s"
                                     % (transform.value, scheme.value))


class FeatureConfig(BaseModel):
    scheme: Scheme = Scheme.NORMALIZED_USER
    transform: Transform = Transform.NONE

    @model_validator(mode="after")
    def _valid_pairing(self):
        try:
            check_pairing(self.scheme, self.transform)
        except exceptions.ConfigError as e:
            raise ValueError(str(e))
        return self

    @property
    def name(self):
        if self.transform == Transform.NONE:
            return self.scheme.value
        return "%s+%s" % (self.scheme.value, self.transform.value)

    @property
    def fingerprint(self):
        payload = json.dumps(self.model_dump(mode="json"), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass
class SparseVector:
    indices: np.ndarray
    values: np.ndarray
    dim: int

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=float)
        if self.indices.shape != self.values.shape:
            raise exceptions.DataError("indices and values differ in length")
        if len(self.indices):
            if np.any(np.diff(self.indices) <= 0):
                raise exceptions.DataError("indices must be strictly increasing")
            if self.indices[0] < 0 or self.indices[-1] >= self.dim:
                raise exceptions.DataError("index out of range for dimension %d" % self.dim)
        if np.any(self.values == 0):
            raise exceptions.DataError("sparse vector stores a zero")

    def __len__(self):
        return len(self.indices)

    def to_dict(self):
        return dict(zip(self.indices.tolist(), self.values.tolist()))

    def dot(self, w):
        return float(np.dot(w[self.indices], self.values))


def vectorize(bag, vocab, scheme):
    """ Raw or normalized word/user frequencies of the in-vocabulary
    words of `bag`; out-of-vocabulary words are dropped. """
    scheme = Scheme(scheme)
    if vocab.size == 0:
        raise exceptions.DataError("empty vocabulary")
    if scheme == Scheme.NORMALIZED_WORD and bag.total_words == 0:
        raise exceptions.DataError("%s: normalized_word with no words" % bag.geoid)
    if scheme == Scheme.NORMALIZED_USER and bag.n_users == 0:
        raise exceptions.DataError("%s: normalized_user with no users" % bag.geoid)

    if scheme in (Scheme.RAW_WORD, Scheme.NORMALIZED_WORD):
        source, denominator = bag.word_counts, bag.total_words
    else:
        source, denominator = bag.user_counts, bag.n_users

    pairs = sorted((vocab.index[w], c) for w, c in source.items()
                   if w in vocab.index and c > 0)
    indices = np.array([j for j, _ in pairs], dtype=np.int64)
    values = np.array([c for _, c in pairs], dtype=float)
    if scheme.normalized:
        values = values / float(denominator)
    return SparseVector(indices, values, vocab.size)


def apply_transform(v, transform, idf=None, scheme=None):
    """ Element-wise transform of the stored entries of `v`. Absent
    entries stay absent. """
    transform = Transform(transform)
    if scheme is not None:
        check_pairing(scheme, transform)
    if (idf is not None) != (transform == Transform.TFIDF):
        raise exceptions.ConfigError("an idf table is required for tfidf and only for tfidf")

    if transform == Transform.NONE:
        values = v.values.copy()
    elif transform == Transform.TFIDF:
        if len(idf) != v.dim:
            raise exceptions.DataError("idf table covers %d words, vector has %d"
                                       % (len(idf), v.dim))
        values = v.values * (idf.values[v.indices] + 1.0)
    else:
        values = TRANSFORM_FUNCTIONS[transform](v.values)
    return SparseVector(v.indices.copy(), values, v.dim)


def featurize(bags, vocab, idf, config):
    """ Rows of transformed feature vectors, one per bag.

    Returns (geoids, csr matrix of shape (len(bags), D)).
    """
    use_idf = idf if config.transform == Transform.TFIDF else None
    indptr, indices, data = [0], [], []
    geoids = []
    for bag in bags:
        x = apply_transform(vectorize(bag, vocab, config.scheme), config.transform,
                            use_idf, config.scheme)
        indices.append(x.indices)
        data.append(x.values)
        indptr.append(indptr[-1] + len(x))
        geoids.append(bag.geoid)
    if bags:
        indices = np.concatenate(indices)
        data = np.concatenate(data)
    else:
        indices, data = np.zeros(0, dtype=np.int64), np.zeros(0)
    X = sparse.csr_matrix((data, indices, np.array(indptr)),
                          shape=(len(bags), vocab.size))
    return geoids, X


def matrix_digest(X):
    """ Content hash of a csr matrix (npz archives embed timestamps). """
    h = hashlib.sha256()
    h.update(np.asarray(X.shape, dtype=np.int64).tobytes())
    for arr in (X.indptr, X.indices, X.data):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def features_meta(geoids, config, vocab):
    return {
        "geoids": list(geoids),
        "feature_config": config.model_dump(mode="json"),
        "feature_fingerprint": config.fingerprint,
        "vocab_fingerprint": vocab.fingerprint,
        "dim": vocab.size,
    }


def save_features(out, X):
    sparse.save_npz(out, sparse.csr_matrix(X), compressed=True)


def load_features(path, meta_path=None):
    """ Returns (geoids, X, meta). """
    X = sparse.load_npz(path).tocsr()
    with open(meta_path or path + ".meta.json", "r", encoding="utf-8") as f:
        meta = json.load(f)
    if len(meta.get("geoids", [])) != X.shape[0]:
        raise exceptions.FormatError("%s: %d rows but %d geoids"
                                     % (path, X.shape[0], len(meta.get("geoids", []))))
    return meta["geoids"], X, meta
