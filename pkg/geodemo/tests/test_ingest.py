import io
import json
from collections import Counter

import pytest

from geodemo import exceptions
from geodemo import ingest


def record(**kw):
    obj = {"lat": 40.0, "lon": -77.0, "user_id": "u1", "text": "hello world",
           "followers_count": 10, "friends_count": 10, "urls": []}
    obj.update(kw)
    return json.dumps(obj)


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return str(path)


def test_account_url_and_retweet_filters(tmp_path):
    path = write_lines(tmp_path / "raw.jsonl", [
        record(user_id="a", followers_count=999),
        record(user_id="b", followers_count=1000),
        record(user_id="c", followers_count=1001),
        record(user_id="d", urls=["http://x.co/1"]),
        record(user_id="e", text="RT @bob: nice"),
    ])
    out = io.StringIO()
    counter = ingest.ingest_files([path], out, ingest.CONTIGUOUS_US)
    kept = [json.loads(line) for line in out.getvalue().splitlines()]
    assert [r["user_id"] for r in kept] == ["a", "b"]
    assert counter["kept"] == 2
    assert counter[ingest.REASON_ACCOUNT] == 1
    assert counter[ingest.REASON_URL] == 1
    assert counter[ingest.REASON_RETWEET] == 1


def test_friends_threshold_is_inclusive():
    bbox = ingest.CONTIGUOUS_US
    assert ingest.passes_filters(ingest.parse_record(record(friends_count=1000)), bbox)
    assert not ingest.passes_filters(ingest.parse_record(record(friends_count=1001)), bbox)


def test_bbox_is_inclusive_and_rejects_outside():
    bbox = ingest.BoundingBox(-10.0, 10.0, -5.0, 5.0)
    assert bbox.contains(5.0, 10.0)
    assert bbox.contains(-5.0, -10.0)
    r = ingest.parse_record(record(lat=48.8, lon=2.35))
    assert ingest.filter_reason(r, ingest.CONTIGUOUS_US) == ingest.REASON_BBOX


def test_first_failing_rule_wins():
    r = ingest.parse_record(record(followers_count=5000, text="RT hi", lat=0.0, lon=0.0))
    assert ingest.filter_reason(r, ingest.CONTIGUOUS_US) == ingest.REASON_ACCOUNT


def test_missing_counts_default_to_zero():
    r = ingest.parse_record(json.dumps({"lat": 40.0, "lon": -77.0, "user_id": 7,
                                        "text": "hi"}))
    assert r.followers_count == 0
    assert r.friends_count == 0
    assert r.user_id == "7"
    assert not r.has_url


def test_url_detected_in_text_when_urls_absent():
    r = ingest.parse_record(json.dumps({"lat": 40.0, "lon": -77.0, "user_id": "u",
                                        "text": "see https://example.com"}))
    assert r.has_url


@pytest.mark.parametrize("obj", [
    {"retweeted": True},
    {"retweeted_status": {"id": 1}},
    {"text": "RT look"},
])
def test_retweet_markers(obj):
    r = ingest.parse_record(record(**obj))
    assert r.is_retweet


def test_rt_inside_word_is_not_retweet():
    assert not ingest.parse_record(record(text="RTX launch")).is_retweet


@pytest.mark.parametrize("line", [
    "{not json",
    "[1, 2]",
    json.dumps({"lat": 40.0, "user_id": "u", "text": "x"}),
    json.dumps({"lat": 91.0, "lon": 0.0, "user_id": "u", "text": "x"}),
    json.dumps({"lat": 40.0, "lon": -77.0, "text": "x"}),
    json.dumps({"lat": 40.0, "lon": -77.0, "user_id": "u"}),
    json.dumps({"lat": 40.0, "lon": -77.0, "user_id": "u", "text": "x",
                "followers_count": -1}),
])
def test_malformed_records_raise_parse_error(line):
    with pytest.raises(exceptions.ParseError) as info:
        ingest.parse_record(line, 12)
    assert info.value.line_number == 12
    assert "line 12" in str(info.value)


def test_malformed_lines_are_counted_and_skipped(tmp_path):
    path = tmp_path / "raw.jsonl"
    path.write_bytes(b"{bad\n\n" + b"\xff\xfe\n" + record(user_id="ok").encode("utf-8") + b"\n")
    counter = Counter()
    kept = list(ingest.iter_clean_records(str(path), ingest.CONTIGUOUS_US, counter))
    assert [r.user_id for _, r in kept] == ["ok"]
    assert kept[0][0] == 4
    assert counter["parse_errors"] == 1
    assert counter["bad_utf8"] == 1


def test_bbox_parse_degrees_west():
    bbox = ingest.BoundingBox.parse("125.0011,66.9326,24.9493,49.5904")
    assert bbox == ingest.CONTIGUOUS_US
    assert ingest.BoundingBox.parse("-125.0011,-66.9326,24.9493,49.5904") == ingest.CONTIGUOUS_US


@pytest.mark.parametrize("text", ["1,2,3", "a,b,c,d", "10,-10,0,1", "0,1,5,5"])
def test_bbox_parse_rejects_bad_input(text):
    with pytest.raises(exceptions.ConfigError):
        ingest.BoundingBox.parse(text)


def test_output_order_follows_input_order(tmp_path):
    paths = [write_lines(tmp_path / ("f%d.jsonl" % i),
                         [record(user_id="f%d-%d" % (i, j)) for j in range(3)])
             for i in range(3)]
    sequential, parallel = io.StringIO(), io.StringIO()
    ingest.ingest_files(paths, sequential, ingest.CONTIGUOUS_US, workers=1)
    ingest.ingest_files(paths, parallel, ingest.CONTIGUOUS_US, workers=3)
    assert sequential.getvalue() == parallel.getvalue()
    users = [json.loads(line)["user_id"] for line in sequential.getvalue().splitlines()]
    assert users == ["f%d-%d" % (i, j) for i in range(3) for j in range(3)]


def test_serialized_record_parses_back():
    r = ingest.parse_record(record(text="café ☕", followers_count=3))
    assert ingest.parse_record(ingest.serialize_record(r)) == r


def test_unpaired_surrogate_is_a_counted_parse_error(tmp_path):
    path = write_lines(tmp_path / "raw.jsonl", [
        record(user_id="good"),
        record(user_id="cut", text="broken \ud83d emoji"),
    ])
    with pytest.raises(exceptions.ParseError):
        ingest.parse_record(record(text="broken \ud83d emoji"), 2)
    out_path = tmp_path / "clean.jsonl"
    with open(str(out_path), "w", encoding="utf-8") as out:
        counter = ingest.ingest_files([path], out, ingest.CONTIGUOUS_US)
    kept = [json.loads(line) for line in out_path.read_text(encoding="utf-8").splitlines()]
    assert [r["user_id"] for r in kept] == ["good"]
    assert counter["kept"] == 1
    assert counter["parse_errors"] == 1
