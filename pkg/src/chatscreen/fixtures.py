"""Deterministic synthetic corpora for desk-scale training and testing.

Generated profane keys keep an edit distance of at least 3 from each other
and from every safe token, so a 1-edit variant of a key can never be
mistaken for (or collide with) anything else in the corpus. Real
vocabularies carry no such guarantee; the separation exists to make
acceptance measurements unambiguous.

The variant generator deliberately re-implements the deletion/starring edit
model by exhaustive enumeration rather than reusing the training augmentor,
so tests retain an independent oracle.
"""

from __future__ import annotations

import itertools
import string
from dataclasses import dataclass

import numpy as np


class SpecInfeasibleError(RuntimeError):
    """Could not place the requested tokens with the required separation."""


class NotEnoughVariantsError(ValueError):
    """The edit space of the key is smaller than the number requested."""


@dataclass(frozen=True)
class CorpusSpec:
    n_safe: int = 450
    n_profane: int = 50
    len_range: tuple[int, int] = (3, 12)
    seed: int = 0
    variant_ops: int = 1

    def __post_init__(self) -> None:
        if self.n_safe + self.n_profane < 10:
            raise ValueError("corpus too small to be useful")
        lo, hi = self.len_range
        if not 2 <= lo <= hi <= 24:
            raise ValueError("len_range must satisfy 2 <= lo <= hi <= 24")


def levenshtein(a: str, b: str) -> int:
    """Plain dynamic-programming edit distance (the separation oracle)."""
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            current.append(
                min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + (ca != cb))
            )
        previous = current
    return previous[-1]


def _random_token(rng: np.random.Generator, len_range: tuple[int, int]) -> str:
    length = int(rng.integers(len_range[0], len_range[1] + 1))
    letters = rng.integers(0, 26, size=length)
    return "".join(string.ascii_lowercase[i] for i in letters)


def generate_corpus(spec: CorpusSpec) -> tuple[list[str], list[str]]:
    """Return (safe tokens, profane keys) for the CorpusSpec, deterministically.

    Profane keys are pairwise >= 3 edits apart and >= 3 edits from every
    safe token. No token is a prefix of a profane key (and no key a prefix
    of another): prefix collisions would break spaced-out-key recovery by
    re-classifying a partial merge mid-chain.
    """
    rng = np.random.default_rng(spec.seed)
    max_attempts = 200 * (spec.n_safe + spec.n_profane)

    profane: list[str] = []
    attempts = 0
    while len(profane) < spec.n_profane:
        if attempts > max_attempts:
            raise SpecInfeasibleError("cannot place profane keys with separation 3")
        attempts += 1
        token = _random_token(rng, spec.len_range)
        if any(levenshtein(token, k) < 3 for k in profane):
            continue
        if any(k.startswith(token) or token.startswith(k) for k in profane):
            continue
        profane.append(token)

    safe: list[str] = []
    seen = set(profane)
    attempts = 0
    while len(safe) < spec.n_safe:
        if attempts > max_attempts:
            raise SpecInfeasibleError("cannot place safe tokens with separation 3")
        attempts += 1
        token = _random_token(rng, spec.len_range)
        if token in seen:
            continue
        if any(levenshtein(token, k) < 3 for k in profane):
            continue
        if any(k.startswith(token) for k in profane):
            continue
        safe.append(token)
        seen.add(token)
    return safe, profane


def edit_space(key: str, ops: int = 1) -> list[str]:
    """Every distinct token reachable by exactly `ops` interior edits, sorted.

    Each edit deletes or stars one distinct interior position; the first and
    last characters always survive. Plans that collapse to the same string
    are deduplicated, and a plan reproducing the key itself ('*' edits of a
    '*' character) does not count as a variant.
    """
    if len(key) < 3:
        raise ValueError("key must have at least 3 characters")
    if ops < 1:
        raise ValueError("ops must be >= 1")
    interior = range(1, len(key) - 1)
    variants: set[str] = set()
    for positions in itertools.combinations(interior, min(ops, len(key) - 2)):
        for kinds in itertools.product(("del", "star"), repeat=len(positions)):
            edits = dict(zip(positions, kinds))
            chars = []
            for i, ch in enumerate(key):
                kind = edits.get(i)
                if kind == "del":
                    continue
                chars.append("*" if kind == "star" else ch)
            variant = "".join(chars)
            if variant != key:
                variants.add(variant)
    return sorted(variants)


def generate_variants(key: str, n: int, ops: int = 1) -> list[str]:
    """The first n members of the exact-`ops`-edit space of the key."""
    ordered = edit_space(key, ops)
    if n > len(ordered):
        raise NotEnoughVariantsError(
            f"edit space of {key!r} at ops={ops} has {len(ordered)} variants, wanted {n}"
        )
    return ordered[:n]


def generate_labeled_chats(
    safe_tokens: list[str],
    profane_keys: list[str],
    n_chats: int,
    seed: int = 0,
    profane_fraction: float = 0.3,
) -> list[tuple[str, bool]]:
    """(text, is_profane) pairs mixing clean chats with direct keys, 1-edit
    variants, and spaced-out keys."""
    rng = np.random.default_rng(seed)
    chats: list[tuple[str, bool]] = []
    for _ in range(n_chats):
        words = [safe_tokens[int(i)] for i in rng.integers(0, len(safe_tokens), size=rng.integers(2, 7))]
        if rng.random() < profane_fraction and profane_keys:
            key = profane_keys[int(rng.integers(0, len(profane_keys)))]
            style = rng.random()
            if style < 0.4:
                attack = key
            elif style < 0.8:
                variants = generate_variants(key, n=1 if len(key) < 4 else 2)
                attack = variants[int(rng.integers(0, len(variants)))]
            else:
                attack = " ".join(key)
            position = int(rng.integers(0, len(words) + 1))
            words.insert(position, attack)
            chats.append((" ".join(words), True))
        else:
            chats.append((" ".join(words), False))
    return chats
