import string

import pytest

from strkit.charset import CharsetSpec, default_charset


def test_default_has_94_characters():
    cs = default_charset()
    assert len(cs) == 94
    assert len(set(cs.recognizable_chars)) == 94
    for group in (string.ascii_uppercase, string.ascii_lowercase, string.digits, string.punctuation):
        for c in group:
            assert c in cs


def test_index_assignment_is_total_and_stable():
    cs = default_charset()
    indices = [cs.index_of(c) for c in cs.recognizable_chars]
    assert indices == list(range(94))
    for i, c in enumerate(cs.recognizable_chars):
        assert cs.char_at(i) == c
    # a second instance assigns the same indices
    again = default_charset()
    assert all(again.index_of(c) == cs.index_of(c) for c in cs.recognizable_chars)


def test_special_tokens_do_not_collide():
    cs = default_charset()
    for token in cs.special_tokens:
        if len(token) == 1:
            assert token not in cs.recognizable_chars
    with pytest.raises(ValueError):
        CharsetSpec(recognizable_chars="abc", special_tokens=("a",))


def test_duplicates_rejected():
    with pytest.raises(ValueError):
        CharsetSpec(recognizable_chars="aab")


def test_is_clean():
    cs = default_charset()
    assert cs.is_clean("Hello!42")
    assert not cs.is_clean("a b")  # space is a special token, not a character
    assert not cs.is_clean("café")


def test_unknown_character_raises():
    cs = default_charset()
    with pytest.raises(KeyError):
        cs.index_of("é")
