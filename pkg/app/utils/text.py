"""Text normalization shared by lexical features, the generator and the metrics."""

from functools import lru_cache
import re

_TOKEN_PATTERN = re.compile(r"[^\W_]+")


@lru_cache(maxsize=65536)
def tokenize(text: str) -> tuple[str, ...]:
    """Lowercase ``text`` and split it on runs of non-alphanumeric characters."""
    return tuple(_TOKEN_PATTERN.findall(text.lower()))


def normalize_text(text: str) -> str:
    """Canonical form used for comparisons: normalized tokens joined by single spaces."""
    return " ".join(tokenize(text))


def contains_tokens(haystack: tuple[str, ...], needle: tuple[str, ...]) -> bool:
    """True iff ``needle`` occurs as a contiguous token subsequence of ``haystack``.

    An empty needle is never contained, so a blank answer cannot match a document.
    """
    size = len(needle)
    if size == 0 or size > len(haystack):
        return False
    first = needle[0]
    for start in range(len(haystack) - size + 1):
        if haystack[start] == first and haystack[start:start + size] == needle:
            return True
    return False


def contains_text(document: str, phrase: str) -> bool:
    """Token-subsequence containment of ``phrase`` in ``document`` after normalization."""
    return contains_tokens(tokenize(document), tokenize(phrase))
