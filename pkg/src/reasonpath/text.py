"""Tokenization, feature hashing and answer-string matching.

These rules are frozen: TF-IDF indexes, encoder features and reader
token sequences all depend on them bit-for-bit.

* text is NFC-normalized and lowercased;
* tokens are maximal runs of Unicode letters/digits (``[^\\W_]+``);
* content tokens drop the built-in :data:`STOPWORDS`;
* n-grams are joined by one ASCII space and hashed with 32-bit FNV-1a
  over their UTF-8 bytes, then masked into a power-of-two bucket range.
"""
import re
import unicodedata
from functools import lru_cache

FNV_OFFSET = 0x811C9DC5
FNV_PRIME = 0x01000193

_TOKEN_RE = re.compile(r"[^\W_]+")

STOPWORDS = frozenset("""
a about above after again against all am an and any are as at be because been
before being below between both but by can could did do does doing down during
each few for from further had has have having he her here hers herself him
himself his how i if in into is it its itself just me more most my myself no
nor not now of off on once only or other our ours ourselves out over own same
she should so some such than that the their theirs them themselves then there
these they this those through to too under until up very was we were what when
where which while who whom why will with would you your yours yourself
yourselves s t d ll m o re ve y
""".split())


def normalize(text):
    return unicodedata.normalize("NFC", text)


def fnv1a_32(data):
    """32-bit FNV-1a of a ``bytes`` object (or a str, hashed as UTF-8)."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & 0xFFFFFFFF
    return h


def is_power_of_two(n):
    return isinstance(n, int) and n > 0 and (n & (n - 1)) == 0


def tokenize(text):
    """All lowercase tokens of ``text`` (stopwords kept)."""
    return _TOKEN_RE.findall(normalize(text).lower())


def content_tokens(text):
    return [t for t in tokenize(text) if t not in STOPWORDS]


def ngrams(tokens, n=2):
    """Unigrams through ``n``-grams of ``tokens``, in position order per order."""
    out = list(tokens)
    for k in range(2, n + 1):
        out.extend(" ".join(tokens[i:i + k]) for i in range(len(tokens) - k + 1))
    return out


@lru_cache(maxsize=1 << 20)
def _hash(gram):
    return fnv1a_32(gram.encode("utf-8"))


def hash_features(grams, bucket_count):
    mask = bucket_count - 1
    return [_hash(g) & mask for g in grams]


def tokenize_with_offsets(text):
    """``[(token_lower, start, end)]`` with character offsets into ``text``.

    Offsets index the NFC form of ``text``; callers decoding spans must
    slice the same normalized string.
    """
    text = normalize(text)
    return [(m.group().lower(), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]


def find_answer(answer, text):
    """Token index range ``(i, j)`` of the first whole-token occurrence.

    Matching is case-insensitive and ignores punctuation, because both
    sides are reduced to their token sequences. Returns ``None`` if absent.
    """
    needle = tokenize(answer)
    if not needle:
        return None
    hay = tokenize(text)
    n = len(needle)
    for i in range(len(hay) - n + 1):
        if hay[i:i + n] == needle:
            return i, i + n - 1
    return None


def contains_answer(text, answers):
    return any(find_answer(a, text) is not None for a in answers)
