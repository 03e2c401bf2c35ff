"""Chat text normalization.

Collapses the raw variance of chat text (look-alike symbols, digits, accents,
emoji, symbol floods, character elongation, case) down to the closed alphabet
{a..z, space, '*', '-'} before tokenization. The rule order is fixed and part
of the contract: look-alike mapping must run before digit deletion so that
configured digit look-alikes (e.g. '0'->'o') survive, and symbol starring must
run before lowercasing so that non-ASCII letters are starred, not lowercased
into characters outside the output alphabet.
"""

from __future__ import annotations

import functools
import re
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

DEFAULT_SPECIAL_MAP: dict[str, str] = {"$": "s", "@": "a"}

# Codepoint intervals treated as emoji (inclusive). Config, not exhaustive:
# anything not covered falls through to the symbol-starring rule.
DEFAULT_EMOJI_RANGES: tuple[tuple[int, int], ...] = (
    (0x1F000, 0x1FAFF),  # emoji & pictographs, incl. supplemental
    (0x1FB00, 0x1FBFF),
    (0x2600, 0x27BF),  # misc symbols, dingbats
    (0x2B00, 0x2BFF),
    (0xFE00, 0xFE0F),  # variation selectors
    (0x200D, 0x200D),  # zero-width joiner
)

_URL_RE = re.compile(r"(?:https?|ftp)://\S+|www\.\S+", re.IGNORECASE)
_EMAIL_RE = re.compile(r"[^\s@]+@[^\s@]+\.[^\s@]+")
_WS_RE = re.compile(r"\s+")
_DIGIT_RE = re.compile(r"\d")


@dataclass(frozen=True)
class RawChat:
    """One inbound chat message; meta is carried opaquely through the pipeline."""

    id: str
    text: str
    meta: Mapping[str, object] = field(default_factory=dict)


@dataclass(frozen=True)
class NormalizationConfig:
    special_to_letter_map: Mapping[str, str] = field(
        default_factory=lambda: dict(DEFAULT_SPECIAL_MAP)
    )
    emoji_ranges: tuple[tuple[int, int], ...] = DEFAULT_EMOJI_RANGES
    name_list: frozenset[str] = frozenset()
    repeat_cap: int = 2

    def __post_init__(self) -> None:
        if self.repeat_cap < 1:
            raise ValueError("repeat_cap must be >= 1")
        for src, dst in self.special_to_letter_map.items():
            if len(src) != 1:
                raise ValueError(f"map key must be a single character: {src!r}")
            if len(dst) != 1 or not ("a" <= dst <= "z"):
                raise ValueError(f"map value must be one lowercase letter: {dst!r}")


DEFAULT_CONFIG = NormalizationConfig()


@functools.lru_cache(maxsize=64)
def _name_pattern(names: tuple[str, ...]) -> re.Pattern[str]:
    # Longest-first so "annabel" wins over "anna"; boundaries are non-letters,
    # which also catches digit-glued forms like "Anna123".
    ordered = sorted(names, key=len, reverse=True)
    alt = "|".join(re.escape(n) for n in ordered)
    return re.compile(rf"(?<![a-zA-Z])(?:{alt})(?![a-zA-Z])", re.IGNORECASE)


def _is_emoji(cp: int, ranges: tuple[tuple[int, int], ...]) -> bool:
    return any(lo <= cp <= hi for lo, hi in ranges)


def _star_residual_symbols(text: str) -> str:
    # Each maximal run of non-domain characters becomes one '*'. Letters keep
    # their case here; lowercasing is the final rule.
    out: list[str] = []
    in_run = False
    for ch in text:
        if ch.isascii() and (ch.isalpha() or ch in " *-"):
            out.append(ch)
            in_run = False
        else:
            if not in_run:
                out.append("*")
            in_run = True
    return "".join(out)


def _cap_repeats(text: str, cap: int) -> str:
    # Case-insensitive comparison so the later lowercasing cannot create a
    # run longer than the cap (e.g. "aAa" with cap 2).
    out: list[str] = []
    run_char = ""
    run_len = 0
    for ch in text:
        folded = ch.lower()
        if folded == run_char:
            run_len += 1
        else:
            run_char = folded
            run_len = 1
        if run_len <= cap:
            out.append(ch)
    return "".join(out)


def normalize_text(text: str, cfg: NormalizationConfig = DEFAULT_CONFIG) -> str:
    """Apply the full normalization rule chain to raw text.

    Total function: any Unicode input is accepted and the output alphabet is
    a subset of {a..z, ' ', '*', '-'}. The output may be empty.
    """
    # 1. strip urls, email handles, and configured names
    text = _URL_RE.sub(" ", text)
    text = _EMAIL_RE.sub(" ", text)
    if cfg.name_list:
        text = _name_pattern(tuple(sorted(cfg.name_list))).sub(" ", text)
    # 2. look-alike symbols to letters
    if cfg.special_to_letter_map:
        table = {ord(k): v for k, v in cfg.special_to_letter_map.items()}
        text = text.translate(table)
    # 3. delete remaining digits
    text = _DIGIT_RE.sub("", text)
    # 4. fold accents to ASCII base letters
    text = unicodedata.normalize("NFKD", text)
    text = "".join(ch for ch in text if unicodedata.category(ch) != "Mn")
    # 5. delete emoji codepoints
    ranges = cfg.emoji_ranges
    text = "".join(ch for ch in text if not _is_emoji(ord(ch), ranges))
    # 6. delete mathematical operators, collapse whitespace
    text = "".join(ch for ch in text if unicodedata.category(ch) != "Sm")
    text = _WS_RE.sub(" ", text)
    # 7. residual symbol runs -> single '*'
    text = _star_residual_symbols(text)
    # 8. cap consecutive repeats
    text = _cap_repeats(text, cfg.repeat_cap)
    # 9. lowercase, trim
    return text.lower().strip()


def normalize(chat: RawChat, cfg: NormalizationConfig = DEFAULT_CONFIG) -> str:
    return normalize_text(chat.text, cfg)


def is_normalized(text: str, cfg: NormalizationConfig = DEFAULT_CONFIG) -> bool:
    """True iff the text is a fixed point of normalization (names not scrubbed)."""
    if cfg.name_list:
        cfg = NormalizationConfig(
            special_to_letter_map=cfg.special_to_letter_map,
            emoji_ranges=cfg.emoji_ranges,
            name_list=frozenset(),
            repeat_cap=cfg.repeat_cap,
        )
    return normalize_text(text, cfg) == text


def load_name_list(path: str | Path) -> frozenset[str]:
    """One name per line; blank lines and '#' comments ignored."""
    names = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            names.add(line)
    return frozenset(names)
