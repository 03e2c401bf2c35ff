"""Space-based tokenization, vocabulary classification, and suspicious-token merging.

Tokens are classified against a profane dictionary and several safe
dictionaries (profane checked first). Tokens found in neither are
"suspicious" and flow on to the latent matcher. Spaced-out profanity
("a b u s e") is recovered by greedily concatenating short suspicious
tokens onto a preceding suspicious token and re-classifying the result.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from pathlib import Path

from .chardomain import DOMAIN, SEQ_LEN, CharDomain, CharSeq
from .normalizer import DEFAULT_CONFIG, NormalizationConfig, normalize_text

MERGE_MAX_LEN = 4  # a suspicious token longer than this never merges onto the previous one

_version_counter = itertools.count(1)


class FormatError(ValueError):
    """A vocabulary file line violates the entry invariants."""


class ConflictError(ValueError):
    """A token appears in both the profane vocabulary and a safe vocabulary."""


class TokenClass(enum.Enum):
    SAFE = "safe"
    PROFANE_DIRECT = "profane_direct"
    SUSPICIOUS = "suspicious"


class VocabKind(enum.Enum):
    SAFE_ENGLISH = "safe_english"
    SAFE_HINGLISH = "safe_hinglish"
    SAFE_PLATFORM = "safe_platform"
    PROFANE = "profane"


@dataclass(frozen=True)
class Vocabulary:
    kind: VocabKind
    entries: frozenset[str]
    version: int

    def __contains__(self, token: str) -> bool:
        return token in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def with_entry(self, token: str) -> "Vocabulary":
        """New snapshot containing one extra entry, with a bumped version."""
        return Vocabulary(
            kind=self.kind,
            entries=self.entries | {token},
            version=next(_version_counter),
        )


def empty_vocabulary(kind: VocabKind) -> Vocabulary:
    return Vocabulary(kind=kind, entries=frozenset(), version=next(_version_counter))


def load_vocabulary(
    path: str | Path,
    kind: VocabKind,
    norm_cfg: NormalizationConfig = DEFAULT_CONFIG,
) -> Vocabulary:
    """Load a one-token-per-line vocabulary file, normalizing each entry.

    Blank lines and '#' comments are skipped; duplicates (after
    normalization) collapse silently. Lines that normalize to something
    with an embedded space, to nothing, or to more than SEQ_LEN characters
    are collected into a single FormatError listing every offender.
    """
    entries: set[str] = set()
    problems: list[str] = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        token = normalize_text(stripped, norm_cfg)
        if not token:
            problems.append(f"line {lineno}: normalizes to empty ({stripped!r})")
        elif " " in token:
            problems.append(f"line {lineno}: embedded space after normalization ({token!r})")
        elif len(token) > SEQ_LEN:
            problems.append(f"line {lineno}: longer than {SEQ_LEN} characters ({token!r})")
        else:
            entries.add(token)
    if problems:
        raise FormatError(f"{path}: " + "; ".join(problems))
    return Vocabulary(kind=kind, entries=frozenset(entries), version=next(_version_counter))


@dataclass(frozen=True)
class VocabularySet:
    """Immutable snapshot of all loaded vocabularies, validated for disjointness."""

    profane: Vocabulary
    safe: tuple[Vocabulary, ...]

    def __post_init__(self) -> None:
        overlap: set[str] = set()
        for vocab in self.safe:
            overlap |= self.profane.entries & vocab.entries
        if overlap:
            sample = ", ".join(sorted(overlap)[:10])
            raise ConflictError(f"tokens in both profane and safe vocabularies: {sample}")

    def classify(self, token: str) -> TokenClass:
        # Profane first: protect-the-student bias. Over-long tokens are not
        # matchable and are treated as safe.
        if len(token) > SEQ_LEN:
            return TokenClass.SAFE
        if token in self.profane:
            return TokenClass.PROFANE_DIRECT
        if any(token in vocab for vocab in self.safe):
            return TokenClass.SAFE
        return TokenClass.SUSPICIOUS

    def add_profane(self, token: str) -> "VocabularySet":
        """Snapshot with one more profane key (ConflictError if it is safe-listed)."""
        return VocabularySet(profane=self.profane.with_entry(token), safe=self.safe)


def empty_vocabulary_set() -> VocabularySet:
    return VocabularySet(profane=empty_vocabulary(VocabKind.PROFANE), safe=())


@dataclass(frozen=True)
class TokenRecord:
    text: str
    seq: CharSeq | None  # None when the token is too long to encode
    token_class: TokenClass
    span: tuple[int, int]  # character offsets into the normalized chat


def _record(text: str, span: tuple[int, int], vocabs: VocabularySet, domain: CharDomain) -> TokenRecord:
    seq = domain.encode_token(text) if len(text) <= SEQ_LEN else None
    return TokenRecord(text=text, seq=seq, token_class=vocabs.classify(text), span=span)


def tokenize(
    text: str,
    vocabs: VocabularySet,
    domain: CharDomain = DOMAIN,
) -> list[TokenRecord]:
    """Split normalized text into classified tokens (maximal space-free runs)."""
    records: list[TokenRecord] = []
    start = None
    for i, ch in enumerate(text):
        if ch == " ":
            if start is not None:
                records.append(_record(text[start:i], (start, i), vocabs, domain))
                start = None
        elif start is None:
            start = i
    if start is not None:
        records.append(_record(text[start:], (start, len(text)), vocabs, domain))
    return records


def merge_suspicious(
    tokens: list[TokenRecord],
    vocabs: VocabularySet,
    domain: CharDomain = DOMAIN,
) -> list[TokenRecord]:
    """Greedy left-to-right concatenation of short suspicious tokens.

    A suspicious token of length <= MERGE_MAX_LEN is appended (no separator)
    to an immediately preceding suspicious token; the merged token is
    re-classified, and a merge that lands in the profane dictionary stops
    further growth of that chain. A merge that would exceed the encodable
    length is abandoned and both tokens kept. Non-suspicious tokens always
    break chains.
    """
    out: list[TokenRecord] = []
    chain_open = False  # previous output token can still absorb
    for tok in tokens:
        if (
            chain_open
            and tok.token_class is TokenClass.SUSPICIOUS
            and len(tok.text) <= MERGE_MAX_LEN
        ):
            prev = out[-1]
            merged_text = prev.text + tok.text
            if len(merged_text) > SEQ_LEN:
                out.append(tok)  # merge aborted; this suspicious token heads a new chain
                chain_open = True
                continue
            merged = _record(merged_text, (prev.span[0], tok.span[1]), vocabs, domain)
            out[-1] = merged
            chain_open = merged.token_class is TokenClass.SUSPICIOUS
        else:
            out.append(tok)
            chain_open = tok.token_class is TokenClass.SUSPICIOUS
    return out
