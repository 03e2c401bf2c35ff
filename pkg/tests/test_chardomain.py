from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from chatscreen.chardomain import (
    DOMAIN,
    LETTERS,
    OOV_GLYPH,
    SEQ_LEN,
    SPECIALS,
    CharSeq,
    EmptyTokenError,
    TokenTooLongError,
    decode,
    encode_token,
)

domain_text = st.text(alphabet=LETTERS + SPECIALS, min_size=1, max_size=SEQ_LEN)


def test_basic_encoding():
    seq = encode_token("ab")
    assert seq.ids[:2] == (1, 2)
    assert seq.ids[2:] == (0,) * 22
    assert seq.true_len == 2


def test_oov_maps_to_oov_id():
    seq = encode_token("a#b")
    assert seq.ids[:3] == (1, DOMAIN.oov_id, 2)


def test_full_length_token_has_no_padding():
    token = "abcdefghijklmnopqrstuvwx"
    assert len(token) == SEQ_LEN
    seq = encode_token(token)
    assert seq.true_len == SEQ_LEN
    assert 0 not in seq.ids


def test_empty_token_rejected():
    with pytest.raises(EmptyTokenError):
        encode_token("")


def test_over_long_token_rejected():
    with pytest.raises(TokenTooLongError):
        encode_token("a" * (SEQ_LEN + 1))


def test_specials_and_letters_have_distinct_ids():
    ids = {DOMAIN.char_id(ch) for ch in LETTERS + SPECIALS}
    assert len(ids) == 29
    assert DOMAIN.pad_id not in ids
    assert DOMAIN.oov_id not in ids


def test_decode_renders_oov_glyph():
    assert decode(encode_token("a#b")) == f"a{OOV_GLYPH}b"


def test_decode_strips_padding():
    assert decode(encode_token("z")) == "z"


@given(domain_text)
def test_round_trip(token):
    assert decode(encode_token(token)) == token


@given(domain_text)
def test_ids_stay_in_alphabet(token):
    assert all(0 <= i <= 30 for i in encode_token(token).ids)


@given(domain_text)
def test_encoding_is_deterministic(token):
    assert encode_token(token) == encode_token(token)


def test_charseq_validates_length():
    with pytest.raises(ValueError):
        CharSeq(ids=(1, 2), true_len=2)
    with pytest.raises(ValueError):
        CharSeq(ids=(1,) * SEQ_LEN, true_len=0)
