"""
Record parsing and the account/content/geography filters applied before
any text is tokenized.

Input is line-delimited JSON, one record per line::

    {"lat": 40.0, "lon": -77.0, "user_id": "123", "text": "hello",
     "followers_count": 10, "friends_count": 12, "urls": []}
"""
import json
import logging
import re
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

from . import exceptions


logger = logging.getLogger(__name__)

MAX_FOLLOWERS = 1000
MAX_FRIENDS = 1000

RETWEET_TOKEN_RE = re.compile(r"^\s*RT\b")
URL_SCAN_RE = re.compile(r"https?://", re.I)

# counter keys written to the summary sidecar
REASON_ACCOUNT = "filtered_account"
REASON_URL = "filtered_url"
REASON_RETWEET = "filtered_retweet"
REASON_BBOX = "filtered_bbox"


@dataclass(frozen=True)
class RawRecord:
    latitude: float
    longitude: float
    user_id: str
    text: str
    followers_count: int = 0
    friends_count: int = 0
    is_retweet: bool = False
    has_url: bool = False


@dataclass(frozen=True)
class BoundingBox:
    west: float
    east: float
    south: float
    north: float

    def __post_init__(self):
        if not self.west < self.east:
            raise exceptions.ConfigError(
                "bounding box west %s must be < east %s" % (self.west, self.east))
        if not self.south < self.north:
            raise exceptions.ConfigError(
                "bounding box south %s must be < north %s" % (self.south, self.north))

    @classmethod
    def parse(cls, text):
        """ Parse "W,E,S,N". Two positive longitudes with W > E are read
        as degrees west (e.g. "125.0011,66.9326,24.9493,49.5904"). """
        try:
            west, east, south, north = [float(p) for p in str(text).split(",")]
        except ValueError:
            raise exceptions.ConfigError("bbox must be W,E,S,N: %r" % text)
        if west > 0 and east > 0 and west > east:
            west, east = -west, -east
        return cls(west, east, south, north)

    def contains(self, latitude, longitude):
        # inclusive on every side
        return (self.south <= latitude <= self.north and
                self.west <= longitude <= self.east)


CONTIGUOUS_US = BoundingBox(-125.0011, -66.9326, 24.9493, 49.5904)


def _count_field(obj, name, line_number):
    value = obj.get(name)
    if value is None:
        return 0
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise exceptions.ParseError("%s is not a number" % name, line_number)
    if value < 0 or value != int(value):
        raise exceptions.ParseError("%s must be a non-negative integer" % name,
                                    line_number)
    return int(value)


def _coordinate(obj, name, low, high, line_number):
    value = obj.get(name)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise exceptions.ParseError("missing or non-numeric %s" % name,
                                    line_number)
    value = float(value)
    if not low <= value <= high:
        raise exceptions.ParseError("%s %s out of range" % (name, value),
                                    line_number)
    return value


def parse_record(line, line_number=None):
    """ Parse one JSON line into a RawRecord.

    Missing follower/friend counts default to 0. A record is a retweet
    when it carries a truthy "retweeted" flag or a "retweeted_status"
    object, or when its text starts with the RT token. When "urls" is
    absent the text is scanned for http:// and https://.
    """
    try:
        obj = json.loads(line)
    except ValueError as e:
        raise exceptions.ParseError("invalid JSON (%s)" % e, line_number)
    if not isinstance(obj, dict):
        raise exceptions.ParseError("record is not an object", line_number)

    latitude = _coordinate(obj, "lat", -90.0, 90.0, line_number)
    longitude = _coordinate(obj, "lon", -180.0, 180.0, line_number)

    user_id = obj.get("user_id")
    if user_id is None or isinstance(user_id, (bool, float, list, dict)):
        raise exceptions.ParseError("missing user_id", line_number)
    user_id = str(user_id)
    if not user_id:
        raise exceptions.ParseError("empty user_id", line_number)

    text = obj.get("text")
    if not isinstance(text, str):
        raise exceptions.ParseError("missing text", line_number)
    try:
        text.encode("utf-8")
        user_id.encode("utf-8")
    except UnicodeEncodeError:
        raise exceptions.ParseError("unpaired surrogate in text or user_id", line_number)

    is_retweet = (bool(obj.get("retweeted")) or
                  obj.get("retweeted_status") is not None or
                  RETWEET_TOKEN_RE.match(text) is not None)

    if "urls" in obj and obj["urls"] is not None:
        if not isinstance(obj["urls"], list):
            raise exceptions.ParseError("urls must be a list", line_number)
        has_url = len(obj["urls"]) > 0
    else:
        has_url = URL_SCAN_RE.search(text) is not None

    return RawRecord(
        latitude=latitude,
        longitude=longitude,
        user_id=user_id,
        text=text,
        followers_count=_count_field(obj, "followers_count", line_number),
        friends_count=_count_field(obj, "friends_count", line_number),
        is_retweet=is_retweet,
        has_url=has_url,
    )


def serialize_record(record, **extra):
    obj = {
        "lat": record.latitude,
        "lon": record.longitude,
        "user_id": record.user_id,
        "text": record.text,
        "followers_count": record.followers_count,
        "friends_count": record.friends_count,
        "retweeted": record.is_retweet,
        "urls": ["<url>"] if record.has_url else [],
    }
    obj.update(extra)
    return json.dumps(obj, ensure_ascii=False, sort_keys=True)


def filter_reason(record, bbox, max_followers=MAX_FOLLOWERS,
                  max_friends=MAX_FRIENDS):
    """ Name of the first rule the record fails, or None if it passes. """
    if record.followers_count > max_followers or record.friends_count > max_friends:
        return REASON_ACCOUNT
    if record.has_url:
        return REASON_URL
    if record.is_retweet:
        return REASON_RETWEET
    if not bbox.contains(record.latitude, record.longitude):
        return REASON_BBOX
    return None


def passes_filters(record, bbox, max_followers=MAX_FOLLOWERS,
                   max_friends=MAX_FRIENDS):
    return filter_reason(record, bbox, max_followers, max_friends) is None


def iter_lines(path, counter):
    """ Yield (line_number, text) for every decodable, non-blank line.
    Lines that are not valid UTF-8 are counted and skipped. """
    with open(path, "rb") as f:
        for line_number, raw in enumerate(f, start=1):
            try:
                line = raw.decode("utf-8")
            except UnicodeDecodeError:
                counter["bad_utf8"] += 1
                continue
            if not line.strip():
                continue
            yield line_number, line


def iter_clean_records(path, bbox, counter, max_followers=MAX_FOLLOWERS,
                       max_friends=MAX_FRIENDS):
    """ Stream (line_number, RawRecord) pairs that pass every filter. """
    for line_number, line in iter_lines(path, counter):
        counter["read"] += 1
        try:
            record = parse_record(line, line_number)
        except exceptions.ParseError as e:
            counter["parse_errors"] += 1
            logger.debug("%s: %s", path, e)
            continue
        reason = filter_reason(record, bbox, max_followers, max_friends)
        if reason is not None:
            counter[reason] += 1
            continue
        counter["kept"] += 1
        yield line_number, record


def filter_file(path, bbox, max_followers=MAX_FOLLOWERS, max_friends=MAX_FRIENDS):
    """ Filter one input file; returns (serialized lines, counter). """
    counter = Counter()
    lines = [serialize_record(r) for _, r in
             iter_clean_records(path, bbox, counter, max_followers, max_friends)]
    logger.info("%s: kept %d of %d records", path, counter["kept"], counter["read"])
    return lines, counter


def ingest_files(paths, out, bbox, workers=1, max_followers=MAX_FOLLOWERS,
                 max_friends=MAX_FRIENDS):
    """ Filter every input file into the open text stream `out`.

    Files are sharded across worker processes when workers > 1; output
    keeps input-file order either way. Returns the merged counter.
    """
    total = Counter()
    args = [(p, bbox, max_followers, max_friends) for p in paths]
    if workers > 1 and len(paths) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = pool.map(_filter_file_args, args)
            for lines, counter in results:
                _emit(out, lines)
                total.update(counter)
    else:
        for a in args:
            lines, counter = _filter_file_args(a)
            _emit(out, lines)
            total.update(counter)
    return total


def _filter_file_args(args):
    return filter_file(*args)


def _emit(out, lines):
    for line in lines:
        out.write(line)
        out.write("\n")
