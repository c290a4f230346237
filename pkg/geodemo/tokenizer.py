"""
Tweet-aware tokenizer.

Rules are tried in priority order at every position and the first one
that matches wins. Hashtags, emoticons and blocks of punctuation survive
as tokens; urls, emails and username mentions are matched so that they
can be dropped whole.
"""
import html
import logging
import os
import re
from dataclasses import dataclass


logger = logging.getLogger(__name__)

module_dir = os.path.split(os.path.abspath(__file__))[0]
TABLES_DIR = os.path.join(module_dir, "tables")
STOPWORDS_PATH = os.path.join(TABLES_DIR, "stopwords.txt")
EMOTICONS_PATH = os.path.join(TABLES_DIR, "emoticons.txt")

# token kinds that never reach the output
DROPPED_RULES = frozenset(["url", "email", "mention"])


@dataclass(frozen=True)
class TokenRule:
    name: str
    pattern: str
    priority: int


def load_wordlist(path):
    """ One entry per line; blank lines and "# " comments are skipped. """
    with open(path, "r", encoding="utf-8") as f:
        entries = []
        for line in f:
            line = line.rstrip("\n").strip()
            if not line or line.startswith("# "):
                continue
            entries.append(line)
    return entries


def default_rules(emoticons):
    emoticon = "|".join("(?:%s)" % e for e in emoticons)
    rules = [
        ("url", r"(?i:https?://\S+|www\.\S+)"),
        ("email", r"[\w.+-]+@[\w-]+\.[\w.-]+"),
        ("mention", r"@\w+"),
        ("hashtag", r"\#\w+"),
        ("emoticon", r"(?<!\w)(?:%s)(?!\w)" % emoticon),
        ("punct", r"(?:[^\w\s@#]|[@#](?!\w))+"),
        ("word", r"\d+(?:[.,:/]\d+)+|\w+(?:[-']\w+)*"),
    ]
    return [TokenRule(name, pattern, n) for n, (name, pattern) in enumerate(rules)]


class Tokenizer(object):

    def __init__(self, stopwords=None, emoticons=None, rules=None):
        if stopwords is None:
            stopwords = load_wordlist(STOPWORDS_PATH)
        if emoticons is None:
            emoticons = load_wordlist(EMOTICONS_PATH)
        self.stopwords = frozenset(w.lower() for w in stopwords)
        if rules is None:
            rules = default_rules(emoticons)
        self.rules = sorted(rules, key=lambda r: r.priority)
        self.regex = re.compile("|".join("(?P<%s>%s)" % (r.name, r.pattern)
                                         for r in self.rules))

    @classmethod
    def from_files(cls, stopwords_path=None, emoticons_path=None):
        stopwords = load_wordlist(stopwords_path or STOPWORDS_PATH)
        emoticons = load_wordlist(emoticons_path or EMOTICONS_PATH)
        logger.debug("tokenizer: %d stopwords, %d emoticon patterns",
                     len(stopwords), len(emoticons))
        return cls(stopwords, emoticons)

    def scan(self, text):
        """ (rule name, raw token) for every match, nothing dropped. """
        return [(m.lastgroup, m.group()) for m in self.regex.finditer(text)]

    def is_stopword(self, token):
        return token in self.stopwords

    def keep(self, kind, token):
        if kind in DROPPED_RULES or token.startswith("@"):
            return False
        if len(token) == 1 and not token.isalnum():
            return False
        return not self.is_stopword(token)

    def tokenize(self, text):
        text = html.unescape(text)
        tokens = []
        for kind, token in self.scan(text):
            token = token.lower()
            if self.keep(kind, token):
                tokens.append(token)
        return tokens


_default = None


def default_tokenizer():
    global _default
    if _default is None:
        _default = Tokenizer()
    return _default


def tokenize_text(text, tokenizer=None):
    return (tokenizer or default_tokenizer()).tokenize(text)


def is_stopword(token):
    return default_tokenizer().is_stopword(token)
