from app.utils.text import contains_text, contains_tokens, normalize_text, tokenize


def test_tokenize_lowercases_and_splits_on_punctuation():
    assert tokenize("Hello, World! 42") == ("hello", "world", "42")


def test_tokenize_splits_underscores():
    assert tokenize("term_0017") == ("term", "0017")
    assert tokenize("term0017") == ("term0017",)


def test_normalize_text_collapses_whitespace():
    assert normalize_text("  The   Cat\tsat ") == "the cat sat"


def test_contains_tokens_requires_contiguous_order():
    doc = ("the", "eiffel", "tower", "is", "tall")
    assert contains_tokens(doc, ("eiffel", "tower"))
    assert not contains_tokens(doc, ("tower", "eiffel"))
    assert not contains_tokens(doc, ("eiffel", "is"))


def test_empty_or_oversized_needle_is_never_contained():
    assert not contains_tokens(("a", "b"), ())
    assert not contains_tokens(("a",), ("a", "b"))


def test_contains_text_normalizes_both_sides():
    assert contains_text("The capital is PARIS.", "paris")
    assert not contains_text("Parisian cafes", "paris")


def test_normalize_text_is_idempotent():
    for text in ["  The   Cat\tsat ", "Hello, World! 42", "term_0017 --- TERM0017", "", "?!"]:
        once = normalize_text(text)
        assert normalize_text(once) == once
