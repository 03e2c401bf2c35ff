"""Positive-pair generation by interior character deletion and star-censoring.

Variants imitate the tricks used to sneak a word past exact matching:
dropping characters ("fck") and self-censoring ("f*ck"). The first and last
character of the anchor are always retained, and the number of edits is
bounded as a function of token length so a variant never loses most of its
signal.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .chardomain import SEQ_LEN, EmptyTokenError, TokenTooLongError

STAR = "*"


class TokenTooShortError(ValueError):
    """Raised for tokens below the minimum augmentable length."""


def train_max_ops(length: int) -> int:
    """Default training edit budget: roughly a quarter of the token, at least 1."""
    return max(1, length // 4)


def valid_max_ops(length: int) -> int:
    """Validation split is augmented with less intensity: at most one edit."""
    return 1


@dataclass(frozen=True)
class AugmentPolicy:
    p_delete: float = 0.5
    max_ops: Callable[[int], int] = train_max_ops
    keep_endpoints: bool = True  # always true in this artifact
    rng_seed: int | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_delete <= 1.0:
            raise ValueError("p_delete must be in [0, 1]")
        if not self.keep_endpoints:
            raise ValueError("endpoint retention is mandatory")

    def effective_max_ops(self, length: int) -> int:
        """Edit budget clamped so endpoints plus one interior character survive.

        The clamp (<= length - 3) keeps any user-supplied max_ops formula
        inside the policy invariant; lengths 2 and 3 therefore get 0 edits.
        """
        if length < 3:
            return 0
        return max(0, min(self.max_ops(length), length - 3))


TRAIN_POLICY = AugmentPolicy(max_ops=train_max_ops)
VALID_POLICY = AugmentPolicy(max_ops=valid_max_ops)


@dataclass(frozen=True)
class AugmentedPair:
    anchor: str
    t: str
    t_prime: str


def augment(token: str, policy: AugmentPolicy, rng: np.random.Generator) -> str:
    """Draw one variant: k ~ Uniform{0..max_ops}, k distinct interior edits."""
    n = len(token)
    if n < 2:
        if n == 0:
            raise EmptyTokenError("cannot augment an empty token")
        raise TokenTooShortError(f"token too short to augment: {token!r}")
    if n > SEQ_LEN:
        raise TokenTooLongError(f"token of length {n} exceeds {SEQ_LEN}")
    k_max = policy.effective_max_ops(n)
    if k_max == 0:
        return token
    k = int(rng.integers(0, k_max + 1))
    if k == 0:
        return token
    positions = rng.choice(np.arange(1, n - 1), size=k, replace=False)
    edits: dict[int, str] = {}
    for pos in sorted(int(p) for p in positions):
        edits[pos] = "" if rng.random() < policy.p_delete else STAR
    return "".join(edits.get(i, ch) for i, ch in enumerate(token))


def make_pair(token: str, policy: AugmentPolicy, rng: np.random.Generator) -> AugmentedPair:
    """Two independent variant draws of the same anchor (they may coincide)."""
    t = augment(token, policy, rng)
    t_prime = augment(token, policy, rng)
    return AugmentedPair(anchor=token, t=t, t_prime=t_prime)
