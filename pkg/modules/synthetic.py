#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
#==============================================================================
#                    geodemo v1.0 - SYNTHETIC DATA MODULE
#        Seeded generator of records, block boundaries and ground truth
#==============================================================================

Units are square cells of a regular grid. Each unit draws a population,
a gender split and a race composition; its users are allocated to
categories in proportion to that composition, and every user posts the
marker words of their own categories, the common words and an
occasional Zipf-distributed filler word. Normalized user frequencies of
the marker words therefore track the true category shares.
"""

import json
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np
import pandas as pd

import sys
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config import SYNTH_CONFIG

from geodemo import census
from geodemo import exceptions
from geodemo.features import TokenizedRecord
from geodemo.geomap import GeoUnit, Resolution

from modules.utilities import atomic_output, write_json

VARIABLES = ("gender", "race")
BLOCKS_PER_GROUP = 10
GROUPS_PER_TRACT = 4
TRACTS_PER_COUNTY = 5


@dataclass
class SyntheticCorpus:
    units: List[GeoUnit]
    records: List[Dict]
    proportions: Dict[str, np.ndarray]
    params: Dict = field(default_factory=dict)

    def tokenized(self):
        """ TokenizedRecords of the compliant records (text is already
        space-separated vocabulary words). """
        for r in self.records:
            if r.get("_spam"):
                continue
            yield TokenizedRecord(r["geoid"], r["user_id"], r["text"].split())

    def truth_frame(self):
        rows = []
        for unit in self.units:
            for variable in VARIABLES:
                for category, count in zip(census.CATEGORIES[variable],
                                           unit.demographics[variable]):
                    rows.append((unit.geoid, variable, category, int(count)))
            rows.append((unit.geoid, "population", "", int(unit.population)))
        return pd.DataFrame(rows, columns=["geoid", "variable", "category", "count"])


def block_geoid(u):
    """ 15-digit block geoid of the u-th synthetic unit. """
    block = u % BLOCKS_PER_GROUP
    group = (u // BLOCKS_PER_GROUP) % GROUPS_PER_TRACT + 1
    tract = (u // (BLOCKS_PER_GROUP * GROUPS_PER_TRACT)) % TRACTS_PER_COUNTY + 1
    county = 2 * (u // (BLOCKS_PER_GROUP * GROUPS_PER_TRACT * TRACTS_PER_COUNTY)) + 1
    return "42%03d%06d%d%03d" % (county, tract * 100, group, block)


def allocate(total, shares):
    """ Largest-remainder split of an integer total by shares. """
    shares = np.asarray(shares, dtype=float)
    exact = shares * total
    counts = np.floor(exact).astype(np.int64)
    short = int(total - counts.sum())
    if short > 0:
        order = np.argsort(-(exact - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def _square(x0, y0, size):
    ring = np.array([[x0, y0], [x0 + size, y0], [x0 + size, y0 + size],
                     [x0, y0 + size], [x0, y0]])
    return [(ring, [])]


def _spam(rng, record):
    """ A copy of a record that some ingest filter rejects. """
    spam = dict(record)
    kind = rng.integers(3)
    if kind == 0:
        spam["followers_count"] = 5000
    elif kind == 1:
        spam["urls"] = ["http://example.com/x"]
        spam["text"] = record["text"] + " http://example.com/x"
    else:
        spam["text"] = "RT " + record["text"]
    spam["_spam"] = True
    return spam


def generate_synthetic(seed=SYNTH_CONFIG['seed'], n_units=SYNTH_CONFIG['n_units'],
                       vocab_size=SYNTH_CONFIG['vocab_size'],
                       users_min=SYNTH_CONFIG['users_min'], users_max=SYNTH_CONFIG['users_max'],
                       population_min=SYNTH_CONFIG['population_min'],
                       population_max=SYNTH_CONFIG['population_max'],
                       marker_rate=SYNTH_CONFIG['marker_rate'],
                       filler_rate=SYNTH_CONFIG['filler_rate'],
                       spam_fraction=SYNTH_CONFIG['spam_fraction'],
                       cell_size=SYNTH_CONFIG['cell_size'],
                       origin=SYNTH_CONFIG['origin']):
    """
    Build a synthetic corpus in memory

    Args:
        seed: Seed of the single random stream
        n_units: Number of block units (>= 20)
        vocab_size: Number of distinct words, at least one marker word per category
        users_min, users_max: Inclusive range of users per unit

    Returns:
        SyntheticCorpus
    """
    k_total = sum(len(census.CATEGORIES[v]) for v in VARIABLES)
    if n_units < 20:
        raise exceptions.ConfigError("n_units must be >= 20, got %d" % n_units)
    if vocab_size < k_total:
        raise exceptions.ConfigError("vocab_size must be >= %d, got %d" % (k_total, vocab_size))
    if not 1 <= users_min <= users_max:
        raise exceptions.ConfigError("need 1 <= users_min <= users_max")

    rng = np.random.default_rng(seed)
    words = ["w%03d" % i for i in range(vocab_size)]
    roles = rng.permutation(vocab_size)
    n_markers = max(1, vocab_size // (4 * k_total))
    n_common = vocab_size // 100
    markers = {}
    pos = 0
    for variable in VARIABLES:
        for category in census.CATEGORIES[variable]:
            markers[(variable, category)] = [words[i] for i in roles[pos:pos + n_markers]]
            pos += n_markers
    common = [words[i] for i in roles[pos:pos + n_common]]
    fillers = [words[i] for i in roles[pos + n_common:]]
    zipf = 1.0 / np.arange(1, len(fillers) + 1) if fillers else np.zeros(0)
    zipf = zipf / zipf.sum() if len(zipf) else zipf

    n_cols = int(math.ceil(math.sqrt(n_units)))
    units, records = [], []
    props = {"gender": np.zeros((n_units, 2)), "race": np.zeros((n_units, 5))}
    for u in range(n_units):
        geoid = block_geoid(u)
        x0 = origin[0] + (u % n_cols) * cell_size
        y0 = origin[1] + (u // n_cols) * cell_size
        population = int(rng.integers(population_min, population_max + 1))
        pi = rng.uniform(0.1, 0.9)
        shares = {"gender": np.array([pi, 1.0 - pi]),
                  "race": rng.dirichlet(np.full(5, 2.0))}
        demographics = {}
        for variable in VARIABLES:
            props[variable][u] = shares[variable]
            demographics[variable] = allocate(population, shares[variable])
        units.append(GeoUnit(geoid=geoid, resolution=Resolution.BLOCK,
                             polygons=_square(x0, y0, cell_size),
                             demographics=demographics, population=population))

        n_users = int(rng.integers(users_min, users_max + 1))
        user_categories = {}
        for variable in VARIABLES:
            labels = np.repeat(np.arange(len(census.CATEGORIES[variable])),
                               allocate(n_users, shares[variable]))
            user_categories[variable] = rng.permutation(labels)

        for j in range(n_users):
            user_id = "u%05d%03d" % (u, j)
            tokens = []
            for variable in VARIABLES:
                category = census.CATEGORIES[variable][user_categories[variable][j]]
                own = markers[(variable, category)]
                tokens.extend(w for w, hit in zip(own, rng.random(len(own)) < marker_rate) if hit)
            tokens.extend(common)
            if len(fillers) and rng.random() < filler_rate:
                tokens.append(fillers[int(rng.choice(len(fillers), p=zipf))])
            tokens = [tokens[i] for i in rng.permutation(len(tokens))]

            n_tweets = min(int(rng.integers(1, 4)), max(1, len(tokens)))
            cuts = np.array_split(np.arange(len(tokens)), n_tweets)
            for cut in cuts:
                margin = cell_size * 0.05
                record = {
                    "lat": float(y0 + rng.uniform(margin, cell_size - margin)),
                    "lon": float(x0 + rng.uniform(margin, cell_size - margin)),
                    "user_id": user_id,
                    "text": " ".join(tokens[i] for i in cut),
                    "followers_count": int(rng.integers(0, 1000)),
                    "friends_count": int(rng.integers(0, 1000)),
                    "urls": [],
                    "geoid": geoid,
                }
                records.append(record)
                if rng.random() < spam_fraction:
                    records.append(_spam(rng, record))

    params = {
        "seed": seed, "n_units": n_units, "vocab_size": vocab_size,
        "users_min": users_min, "users_max": users_max,
        "population_min": population_min, "population_max": population_max,
        "marker_rate": marker_rate, "filler_rate": filler_rate,
        "spam_fraction": spam_fraction, "cell_size": cell_size, "origin": list(origin),
        "markers": dict(("%s/%s" % key, value) for key, value in sorted(markers.items())),
        "common": common,
    }
    return SyntheticCorpus(units, records, props, params)


def write_synthetic(corpus, outdir):
    """
    Write records.jsonl, boundaries.geojson, truth.csv and synth_params.json

    Returns:
        {name: path}
    """
    os.makedirs(outdir, exist_ok=True)
    paths = {
        "records": os.path.join(outdir, "records.jsonl"),
        "boundaries": os.path.join(outdir, "boundaries.geojson"),
        "truth": os.path.join(outdir, "truth.csv"),
        "params": os.path.join(outdir, "synth_params.json"),
    }
    with atomic_output(paths["records"]) as f:
        for record in corpus.records:
            public = dict((k, v) for k, v in record.items()
                          if k not in ("geoid", "_spam"))
            f.write(json.dumps(public, sort_keys=True))
            f.write("\n")

    features = []
    for unit in corpus.units:
        (ring, _), = unit.polygons
        features.append({
            "type": "Feature",
            "properties": {"geoid": unit.geoid},
            "geometry": {"type": "Polygon", "coordinates": [ring.tolist()]},
        })
    with atomic_output(paths["boundaries"]) as f:
        json.dump({"type": "FeatureCollection", "features": features}, f)
        f.write("\n")

    with atomic_output(paths["truth"]) as f:
        corpus.truth_frame().to_csv(f, index=False, lineterminator="\n")
    write_json(paths["params"], corpus.params)
    print("✅ synth: %d units, %d records -> %s" % (len(corpus.units), len(corpus.records), outdir))
    return paths
