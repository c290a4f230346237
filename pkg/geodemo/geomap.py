"""
Boundary loading, point-in-polygon containment, an STR tree
over unit bounding boxes, GEOID assignment and the GEOID prefix
hierarchy (county > tract > blockgroup > block).
"""
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import shapely
import shapely.errors
from shapely.geometry import shape

from . import census
from . import exceptions
from .ingest import parse_record, serialize_record


logger = logging.getLogger(__name__)


class Resolution(str, Enum):
    BLOCK = "block"
    BLOCKGROUP = "blockgroup"
    TRACT = "tract"
    COUNTY = "county"


GEOID_LENGTHS = {
    Resolution.COUNTY: 5,
    Resolution.TRACT: 11,
    Resolution.BLOCKGROUP: 12,
    Resolution.BLOCK: 15,
}

RESOLUTION_BY_LENGTH = dict((v, k) for k, v in GEOID_LENGTHS.items())


def resolution_of(geoid):
    if not isinstance(geoid, str) or not geoid.isdigit():
        raise exceptions.DataError("geoid must be a digit string: %r" % (geoid,))
    try:
        return RESOLUTION_BY_LENGTH[len(geoid)]
    except KeyError:
        raise exceptions.DataError("geoid %r has no resolution (length %d)"
                                   % (geoid, len(geoid)))


def rollup_geoid(geoid, target):
    """ Prefix of `geoid` at the `target` resolution.

    The input must itself be a valid geoid at the same or a finer
    resolution; a county geoid cannot be refined to a block.
    """
    target = Resolution(target)
    source = resolution_of(geoid)
    if GEOID_LENGTHS[source] < GEOID_LENGTHS[target]:
        raise exceptions.DataError("cannot refine %s geoid %r to %s"
                                   % (source.value, geoid, target.value))
    return geoid[:GEOID_LENGTHS[target]]


# ==============================================================================
# UNITS
# ==============================================================================

# (outer ring, [holes]); rings are (n, 2) float arrays of lon/lat, closed
Polygon = Tuple[np.ndarray, List[np.ndarray]]


def _shapes(polygons):
    """ One prepared shapely Polygon per (outer, holes) part. """
    parts = []
    for outer, holes in polygons:
        part = shapely.Polygon(outer, [h for h in holes])
        shapely.prepare(part)
        parts.append(part)
    return parts


@dataclass
class GeoUnit:
    geoid: str
    resolution: Resolution
    polygons: List[Polygon] = field(default_factory=list)
    demographics: Dict[str, np.ndarray] = field(default_factory=dict)
    population: Optional[int] = None
    parts: list = field(default_factory=list, init=False, repr=False, compare=False)

    def __post_init__(self):
        expected = GEOID_LENGTHS[Resolution(self.resolution)]
        if len(self.geoid) != expected or not self.geoid.isdigit():
            raise exceptions.DataError("geoid %r does not match resolution %s"
                                       % (self.geoid, self.resolution))
        for variable, counts in self.demographics.items():
            counts = np.asarray(counts)
            if np.any(counts < 0):
                raise exceptions.DataError("%s: negative %s count"
                                           % (self.geoid, variable))
            if self.population is not None and counts.sum() > self.population:
                raise exceptions.DataError(
                    "%s: %s counts sum to %d > population %d"
                    % (self.geoid, variable, counts.sum(), self.population))
        self.parts = _shapes(self.polygons)

    @property
    def bounds(self):
        """ (min lon, min lat, max lon, max lat) over outer rings. """
        if not self.parts:
            raise exceptions.DataError("%s has no boundary" % self.geoid)
        return tuple(float(v) for v in shapely.total_bounds(self.parts))

    def covers(self, pt):
        point = shapely.Point(float(pt[0]), float(pt[1]))
        return any(part.covers(point) for part in self.parts)


def _ring(coords, geoid):
    ring = np.asarray(coords, dtype=float)
    if ring.ndim != 2 or ring.shape[1] < 2:
        raise exceptions.FormatError("%s: malformed ring" % geoid)
    ring = ring[:, :2]
    if len(ring) < 4:
        raise exceptions.FormatError("%s: ring has %d vertices, need >= 4"
                                     % (geoid, len(ring)))
    if not np.array_equal(ring[0], ring[-1]):
        raise exceptions.FormatError("%s: unclosed ring" % geoid)
    return ring


def _polygons(geometry, geoid):
    """ (outer, holes) parts of a GeoJSON Polygon or MultiPolygon. Rings
    are checked as given (shapely closes open rings silently). """
    if not geometry or "type" not in geometry:
        raise exceptions.FormatError("%s: missing geometry" % geoid)
    if geometry["type"] == "Polygon":
        raw_parts = [geometry.get("coordinates")]
    elif geometry["type"] == "MultiPolygon":
        raw_parts = geometry.get("coordinates") or []
    else:
        raise exceptions.FormatError("%s: unsupported geometry %s"
                                     % (geoid, geometry["type"]))
    for rings in raw_parts:
        if not rings:
            raise exceptions.FormatError("%s: empty polygon" % geoid)
        for r in rings:
            _ring(r, geoid)
    try:
        geom = shape(geometry)
    except (ValueError, TypeError, shapely.errors.GEOSException) as e:
        raise exceptions.FormatError("%s: %s" % (geoid, e))
    parts = list(geom.geoms) if geom.geom_type == "MultiPolygon" else [geom]
    return [(np.asarray(p.exterior.coords)[:, :2],
             [np.asarray(r.coords)[:, :2] for r in p.interiors]) for p in parts]


def load_boundaries(path):
    """ Read a GeoJSON FeatureCollection with a "geoid" property per
    feature into GeoUnits. Resolution follows from the geoid length. """
    with open(path, "r", encoding="utf-8") as f:
        try:
            collection = json.load(f)
        except ValueError as e:
            raise exceptions.FormatError("%s: invalid JSON (%s)" % (path, e))
    features = collection.get("features") if isinstance(collection, dict) else None
    if features is None:
        raise exceptions.FormatError("%s: not a feature collection" % path)

    units = []
    seen = set()
    for n, feature in enumerate(features):
        props = feature.get("properties") or {}
        geoid = props.get("geoid", props.get("GEOID"))
        if geoid is None or geoid == "":
            raise exceptions.FormatError("%s: feature %d has no geoid" % (path, n))
        if not isinstance(geoid, str):
            # a numeric property has already lost its leading zeros
            raise exceptions.FormatError("%s: feature %d geoid %r is not a string"
                                         % (path, n, geoid))
        if geoid in seen:
            raise exceptions.FormatError("%s: duplicate geoid %s" % (path, geoid))
        seen.add(geoid)
        try:
            resolution = resolution_of(geoid)
        except exceptions.DataError as e:
            raise exceptions.FormatError("%s: %s" % (path, e))
        units.append(GeoUnit(geoid=geoid, resolution=resolution,
                             polygons=_polygons(feature.get("geometry"), geoid)))
    logger.info("loaded %d units from %s", len(units), path)
    return units


# ==============================================================================
# CONTAINMENT
# ==============================================================================

def point_in_polygon(pt, poly):
    """ Containment of a (lon, lat) point in a polygon set.

    A point inside a hole is outside; points on any edge, of the outer
    ring or of a hole, are inside.
    """
    point = shapely.Point(float(pt[0]), float(pt[1]))
    return any(part.covers(point) for part in _shapes(poly))


# ==============================================================================
# SPATIAL INDEX
# ==============================================================================

class SpatialIndex(object):
    """ Immutable bulk-loaded STR tree over unit polygons. query()
    returns the units whose bounding boxes hold the point, a superset of
    the units whose polygons contain it. """

    def __init__(self, units, node_capacity=16):
        if node_capacity < 2:
            raise exceptions.ConfigError("node_capacity must be >= 2")
        self.units = list(units)
        self.node_capacity = node_capacity
        self.tree = None
        if self.units:
            envelopes = shapely.box(*np.array([u.bounds for u in self.units]).T)
            self.tree = shapely.STRtree(envelopes, node_capacity=node_capacity)

    def __len__(self):
        return len(self.units)

    def query(self, pt):
        if self.tree is None:
            return []
        hits = self.tree.query(shapely.Point(float(pt[0]), float(pt[1])))
        return [self.units[i] for i in sorted(hits)]


def build_index(units, node_capacity=16):
    return SpatialIndex(units, node_capacity)


def _smallest_containing(pt, candidates):
    containing = [u.geoid for u in candidates if u.covers(pt)]
    return min(containing) if containing else None


def assign_geoid(pt, idx):
    """ GEOID of the unit containing (lon, lat) `pt`; ties on shared
    edges go to the lexicographically smallest geoid. """
    return _smallest_containing(pt, idx.query(pt))


def scan_geoid(pt, units):
    """ Exhaustive linear-scan version of assign_geoid. """
    return _smallest_containing(pt, units)


def annotate_records(lines, idx, counter):
    """ Attach the containing block geoid to each (line_number, line);
    yields serialized records, counting parse errors and misses. """
    for line_number, line in lines:
        counter["read"] += 1
        try:
            record = parse_record(line, line_number)
        except exceptions.ParseError as e:
            counter["parse_errors"] += 1
            logger.debug("%s", e)
            continue
        geoid = assign_geoid((record.longitude, record.latitude), idx)
        if geoid is None:
            counter["unassigned"] += 1
            continue
        counter["assigned"] += 1
        yield serialize_record(record, geoid=geoid)


def iter_assigned_records(lines, counter):
    """ Yield (geoid, RawRecord) from annotated record lines. """
    for line_number, line in lines:
        try:
            geoid = json.loads(line).get("geoid")
            record = parse_record(line, line_number)
        except (ValueError, exceptions.ParseError) as e:
            counter["parse_errors"] += 1
            logger.debug("line %s: %s", line_number, e)
            continue
        if not isinstance(geoid, str):
            counter["missing_geoid"] += 1
            continue
        yield geoid, record


# ==============================================================================
# GROUND TRUTH
# ==============================================================================

TRUTH_COLUMNS = ["geoid", "variable", "category", "count"]
POPULATION = "population"


def load_truth(path):
    """ Long-format demographics CSV: geoid,variable,category,count plus
    geoid,population,,count rows. """
    df = pd.read_csv(path, dtype={"geoid": str, "variable": str, "category": str},
                     keep_default_na=False)
    missing = [c for c in TRUTH_COLUMNS if c not in df.columns]
    if missing:
        raise exceptions.FormatError("%s: missing columns %s" % (path, missing))
    df = df[TRUTH_COLUMNS].copy()
    df["count"] = pd.to_numeric(df["count"], errors="coerce")
    if df["count"].isna().any() or (df["count"] < 0).any():
        raise exceptions.FormatError("%s: counts must be non-negative numbers" % path)
    if (df["count"] != df["count"].round()).any():
        raise exceptions.FormatError("%s: counts must be integers" % path)
    df["count"] = df["count"].astype(np.int64)
    return df


def _rolled(truth, length):
    truth = truth[truth["geoid"].str.len() >= length].copy()
    truth["geoid"] = truth["geoid"].str.slice(0, length)
    return truth


def truth_matrix(truth, variable, geoids, categories=None):
    """ Category counts (and population, when present) for `geoids`,
    summing finer-resolution rows up to the geoids' resolution.

    Returns a DataFrame indexed by geoid with one column per category
    and a "population" column (NaN where the CSV has none).
    """
    geoids = list(geoids)
    if not geoids:
        raise exceptions.DataError("no geoids requested")
    length = len(geoids[0])
    if any(len(g) != length for g in geoids):
        raise exceptions.DataError("geoids mix resolutions")
    truth = _rolled(truth, length)

    rows = truth[truth["variable"] == variable]
    if rows.empty:
        raise exceptions.DataError("no truth rows for variable %r" % variable)
    if categories is None:
        categories = census.categories_for(variable, rows["category"].unique())
    counts = rows.pivot_table(index="geoid", columns="category", values="count",
                              aggfunc="sum", fill_value=0)
    unknown = sorted(set(counts.columns) - set(categories))
    if unknown:
        raise exceptions.DataError("%s: unexpected categories %s" % (variable, unknown))
    counts = counts.reindex(columns=list(categories), fill_value=0)

    absent = [g for g in geoids if g not in counts.index]
    if absent:
        raise exceptions.DataError("%d units have no %s truth (e.g. %s)"
                                   % (len(absent), variable, absent[0]))
    out = counts.loc[geoids].astype(np.int64)

    pop = truth[truth["variable"] == POPULATION].groupby("geoid")["count"].sum()
    out[POPULATION] = pop.reindex(geoids).to_numpy(dtype=float)
    return out


def units_from_truth(matrix, variable, categories=None):
    """ Boundary-less GeoUnits carrying one variable's counts. """
    if categories is None:
        categories = [c for c in matrix.columns if c != POPULATION]
    units = []
    for geoid, row in matrix.iterrows():
        pop = row.get(POPULATION)
        population = None if pop is None or np.isnan(pop) else int(pop)
        units.append(GeoUnit(
            geoid=geoid,
            resolution=resolution_of(geoid),
            demographics={variable: row[list(categories)].to_numpy(dtype=np.int64)},
            population=population))
    return units
