"""Closed character alphabet and fixed-length integer encoding of tokens.

Every other module speaks in terms of this alphabet: 26 lowercase letters,
3 special characters (space, '*', '-'), one out-of-vocabulary id, and one
padding id, for a total alphabet size of 31. Tokens are encoded to exactly
SEQ_LEN ids, padded with pad_id.
"""

from __future__ import annotations

from dataclasses import dataclass, field

SEQ_LEN = 24
LETTERS = "abcdefghijklmnopqrstuvwxyz"
SPECIALS = " *-"
OOV_GLYPH = "?"


class EmptyTokenError(ValueError):
    """Raised when asked to encode a zero-length token."""


class TokenTooLongError(ValueError):
    """Raised when a token exceeds the fixed sequence length."""


@dataclass(frozen=True)
class CharSeq:
    """A token rendered as exactly SEQ_LEN integer ids plus its true length."""

    ids: tuple[int, ...]
    true_len: int

    def __post_init__(self) -> None:
        if len(self.ids) != SEQ_LEN:
            raise ValueError(f"CharSeq must hold {SEQ_LEN} ids, got {len(self.ids)}")
        if not 1 <= self.true_len <= SEQ_LEN:
            raise ValueError(f"true_len out of range: {self.true_len}")


@dataclass(frozen=True)
class CharDomain:
    """Bijective character<->id mapping over letters + specials, with OOV and PAD.

    pad_id is 0 so zero-filled buffers are valid padding; letters take 1..26,
    specials 27..29, and anything outside the alphabet maps to oov_id (30).
    """

    specials: str = SPECIALS
    pad_id: int = 0
    oov_id: int = 30
    _char_to_id: dict[str, int] = field(init=False, repr=False)
    _id_to_char: dict[int, str] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if len(self.specials) != 3 or len(set(self.specials)) != 3:
            raise ValueError("exactly 3 distinct special characters required")
        char_to_id: dict[str, int] = {}
        for i, ch in enumerate(LETTERS):
            char_to_id[ch] = i + 1
        for i, ch in enumerate(self.specials):
            char_to_id[ch] = 27 + i
        id_to_char = {v: k for k, v in char_to_id.items()}
        object.__setattr__(self, "_char_to_id", char_to_id)
        object.__setattr__(self, "_id_to_char", id_to_char)

    @property
    def size(self) -> int:
        return 31

    def __contains__(self, ch: str) -> bool:
        return ch in self._char_to_id

    def char_id(self, ch: str) -> int:
        """Id for a single character; out-of-domain characters map to oov_id."""
        return self._char_to_id.get(ch, self.oov_id)

    def encode_token(self, token: str) -> CharSeq:
        """Encode a normalized token to a padded CharSeq.

        The token must already be normalized; characters outside the domain
        are mapped to oov_id rather than rejected.
        """
        if len(token) == 0:
            raise EmptyTokenError("cannot encode an empty token")
        if len(token) > SEQ_LEN:
            raise TokenTooLongError(f"token of length {len(token)} exceeds {SEQ_LEN}")
        ids = [self.char_id(ch) for ch in token]
        ids.extend([self.pad_id] * (SEQ_LEN - len(ids)))
        return CharSeq(ids=tuple(ids), true_len=len(token))

    def decode(self, seq: CharSeq) -> str:
        """Render a CharSeq back to text; oov ids become OOV_GLYPH, padding is dropped."""
        chars = []
        for i in seq.ids[: seq.true_len]:
            if i == self.oov_id:
                chars.append(OOV_GLYPH)
            else:
                chars.append(self._id_to_char[i])
        return "".join(chars)


DOMAIN = CharDomain()


def encode_token(token: str, domain: CharDomain = DOMAIN) -> CharSeq:
    return domain.encode_token(token)


def decode(seq: CharSeq, domain: CharDomain = DOMAIN) -> str:
    return domain.decode(seq)
