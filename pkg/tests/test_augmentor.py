from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chatscreen.augmentor import (
    TRAIN_POLICY,
    VALID_POLICY,
    AugmentPolicy,
    TokenTooShortError,
    augment,
    make_pair,
)
from chatscreen.chardomain import EmptyTokenError, TokenTooLongError

tokens = st.text(alphabet="abcdefghijklmnopqrstuvwxyz", min_size=2, max_size=24)


def rng(seed=0):
    return np.random.default_rng(seed)


def is_star_subsequence(variant: str, anchor: str) -> bool:
    """Monotone alignment of variant onto anchor where every aligned pair is
    equal or the variant side is '*'."""
    # dynamic programming: d[i][j] = variant[:i] alignable onto anchor[:j]
    d = [[False] * (len(anchor) + 1) for _ in range(len(variant) + 1)]
    d[0][0] = True
    for j in range(1, len(anchor) + 1):
        d[0][j] = d[0][j - 1]  # anchor char deleted
    for i in range(1, len(variant) + 1):
        for j in range(1, len(anchor) + 1):
            match = variant[i - 1] == anchor[j - 1] or variant[i - 1] == "*"
            d[i][j] = (match and d[i - 1][j - 1]) or d[i][j - 1]
    return d[len(variant)][len(anchor)]


@given(tokens, st.integers(0, 2**32 - 1))
@settings(max_examples=300)
def test_endpoints_always_retained(token, seed):
    variant = augment(token, TRAIN_POLICY, rng(seed))
    assert variant[0] == token[0]
    assert variant[-1] == token[-1]


@given(tokens, st.integers(0, 2**32 - 1))
@settings(max_examples=300)
def test_length_bounds(token, seed):
    variant = augment(token, TRAIN_POLICY, rng(seed))
    assert len(token) - TRAIN_POLICY.effective_max_ops(len(token)) <= len(variant) <= len(token)


@given(st.text(alphabet="abcdefgh", min_size=3, max_size=8), st.integers(0, 2**32 - 1))
@settings(max_examples=300)
def test_variant_is_star_subsequence_of_anchor(token, seed):
    variant = augment(token, TRAIN_POLICY, rng(seed))
    assert is_star_subsequence(variant, token)
    # and interior-only: endpoints already checked elsewhere
    assert is_star_subsequence(variant[1:-1], token[1:-1])


def test_never_drops_an_endpoint():
    seen = set()
    for seed in range(300):
        seen.add(augment("bitch", TRAIN_POLICY, rng(seed)))
    assert "itch" not in seen
    assert all(v[0] == "b" and v[-1] == "h" for v in seen)
    assert {"b*tch", "btch"} <= seen  # both edit kinds actually occur


def test_length_two_tokens_unchanged():
    assert augment("ab", TRAIN_POLICY, rng(1)) == "ab"


def test_length_three_tokens_unchanged_by_policy_invariant():
    # max_ops is clamped below len-2, so a 3-char token has no edit budget
    assert all(augment("abc", TRAIN_POLICY, rng(s)) == "abc" for s in range(20))


def test_seeded_determinism():
    a = augment("abcdef", TRAIN_POLICY, rng(42))
    b = augment("abcdef", TRAIN_POLICY, rng(42))
    assert a == b


def test_make_pair_draws_two_independent_variants():
    pair = make_pair("fuck", TRAIN_POLICY, rng(7))
    for variant in (pair.t, pair.t_prime):
        assert variant[0] == "f" and variant[-1] == "k"
        assert is_star_subsequence(variant, "fuck")


def test_make_pair_degenerate_cases():
    pair = make_pair("ab", TRAIN_POLICY, rng(0))
    assert (pair.t, pair.t_prime) == ("ab", "ab")


def test_make_pair_seeded_determinism():
    pairs = {make_pair("abcdefgh", TRAIN_POLICY, rng(42)) for _ in range(5)}
    assert len(pairs) == 1


def test_zero_edit_draw_returns_anchor():
    # with max_ops=1 the k=0 draw happens often; scan a few seeds
    outputs = {augment("abcd", VALID_POLICY, rng(s)) for s in range(50)}
    assert "abcd" in outputs


def test_errors():
    with pytest.raises(TokenTooShortError):
        augment("a", TRAIN_POLICY, rng(0))
    with pytest.raises(EmptyTokenError):
        augment("", TRAIN_POLICY, rng(0))
    with pytest.raises(TokenTooLongError):
        augment("a" * 25, TRAIN_POLICY, rng(0))


def test_policy_validation():
    with pytest.raises(ValueError):
        AugmentPolicy(p_delete=1.5)
    with pytest.raises(ValueError):
        AugmentPolicy(keep_endpoints=False)


def test_effective_max_ops_clamp():
    policy = AugmentPolicy(max_ops=lambda n: 100)
    assert policy.effective_max_ops(2) == 0
    assert policy.effective_max_ops(3) == 0
    assert policy.effective_max_ops(4) == 1
    assert policy.effective_max_ops(10) == 7


def test_one_edit_space_is_exactly_the_enumerable_set():
    # every 1-edit output of a 5-char token is one of the six expected strings
    expected = {"a*cde", "ab*de", "abc*e", "acde", "abde", "abce", "abcde"}
    seen = {augment("abcde", VALID_POLICY, rng(s)) for s in range(400)}
    assert seen <= expected
    assert len(seen) >= 6  # all six edits plus possibly the k=0 identity
