import os
import re

import pytest

from geodemo import tokenizer
from geodemo.tokenizer import Tokenizer, tokenize_text

TESTDATA = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "testdata")
EMAIL_SHAPE = re.compile(r"@[\w-]+\.")


@pytest.mark.parametrize("text,expected", [
    ("Hello @bob #Sunny :)", ["hello", "#sunny", ":)"]),
    ("", []),
    ("The the THE", []),
    ("wow!!! so good !", ["wow", "!!!", "good"]),
    ("mail me: a.b@c.org", ["mail"]),
    ("Tom &amp; Jerry", ["tom", "jerry"]),
    ("see https://t.co/x and www.x.com", ["see"]),
    (".@bob great game", ["great", "game"]),
    ("nice!#win", ["nice", "#win"]),
    ("ok?! @ann", ["ok", "?!"]),
])
def test_tokenize_examples(text, expected):
    assert tokenize_text(text) == expected


@pytest.mark.parametrize("token,expected", [
    ("the", True),
    ("#the", False),
    ("zebra", False),
])
def test_is_stopword(token, expected):
    assert tokenizer.is_stopword(token) is expected


def test_rule_priority_order():
    names = [r.name for r in tokenizer.default_rules([":\\)"])]
    assert names == ["url", "email", "mention", "hashtag", "emoticon", "punct", "word"]


def test_scan_reports_rule_kinds():
    kinds = Tokenizer().scan("@ann #x :) !! a@b.co hi")
    assert kinds == [("mention", "@ann"), ("hashtag", "#x"), ("emoticon", ":)"),
                     ("punct", "!!"), ("email", "a@b.co"), ("word", "hi")]


def test_custom_stopword_list(tmp_path):
    path = tmp_path / "stop.txt"
    path.write_text("# custom list\nsunny\n\n", encoding="utf-8")
    tok = Tokenizer.from_files(str(path))
    assert tok.tokenize("The sunny day") == ["the", "day"]


def read_fixture(name):
    with open(os.path.join(TESTDATA, name), "r", encoding="utf-8") as f:
        return f.read()


def test_golden_corpus():
    lines = read_fixture("tweets_fixture.txt").splitlines()
    assert len(lines) == 20
    rendered = "\n".join(" ".join(tokenize_text(line)) for line in lines) + "\n"
    assert rendered == read_fixture("tweets_golden.txt")


def test_output_invariants_on_fixture():
    for line in read_fixture("tweets_fixture.txt").splitlines():
        tokens = tokenize_text(line)
        assert tokens == tokenize_text(line)
        for token in tokens:
            assert token == token.lower()
            assert not token.startswith("@")
            assert not (len(token) == 1 and not token.isalnum())
            assert not EMAIL_SHAPE.search(token)
