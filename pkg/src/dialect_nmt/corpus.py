"""Parallel corpus loading, Bangla text normalization and deterministic splits.

Corpus files are UTF-8 JSON Lines, one record per line::

    {"region": "Chittagong", "standard": "...", "dialect": "...",
     "banglish": "...", "english": "..."}

``banglish`` and ``english`` are optional and carried through untouched.
Files written by :func:`save_corpus` with ``normalized=True`` also carry a
``"normalized": true`` marker, which :func:`load_corpus` accepts.
"""

from __future__ import annotations

import enum
import json
import unicodedata
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

from ._util import atomic_write_text, substream

__all__ = [
    "CorpusError",
    "Region",
    "ParallelExample",
    "SplitCorpus",
    "NormalizationConfig",
    "DEFAULT_PUNCTUATION",
    "DEFAULT_EMOJI_RANGES",
    "load_corpus",
    "save_corpus",
    "normalize_text",
    "normalize_corpus",
    "split_corpus",
]


class CorpusError(ValueError):
    """Raised for unreadable or malformed corpus input."""


class Region(str, enum.Enum):
    CHITTAGONG = "Chittagong"
    NOAKHALI = "Noakhali"
    SYLHET = "Sylhet"
    BARISHAL = "Barishal"
    MYMENSINGH = "Mymensingh"

    @classmethod
    def parse(cls, name: "str | Region") -> "Region":
        if isinstance(name, Region):
            return name
        for region in cls:
            if region.value.lower() == str(name).strip().lower():
                return region
        valid = ", ".join(r.value for r in cls)
        raise CorpusError(f"unknown region {name!r} (expected one of: {valid})")

    def __str__(self) -> str:
        return self.value


DEFAULT_PUNCTUATION = frozenset("?!.,;:\"'()[]{}—–-…।")

# Inclusive code point ranges.
DEFAULT_EMOJI_RANGES: tuple[tuple[int, int], ...] = (
    (0x1F600, 0x1F64F),  # emoticons
    (0x1F300, 0x1F5FF),  # misc symbols and pictographs
    (0x1F680, 0x1F6FF),  # transport and map
    (0x1F900, 0x1F9FF),  # supplemental symbols and pictographs
    (0x2600, 0x26FF),  # misc symbols
    (0xFE0F, 0xFE0F),  # variation selector-16
)


@dataclass(frozen=True)
class NormalizationConfig:
    punctuation: frozenset[str] = DEFAULT_PUNCTUATION
    emoji_ranges: tuple[tuple[int, int], ...] = DEFAULT_EMOJI_RANGES

    def __post_init__(self):
        for ch in self.punctuation:
            if len(ch) != 1:
                raise ValueError(f"punctuation entries must be single characters, got {ch!r}")
        for lo, hi in self.emoji_ranges:
            if lo > hi:
                raise ValueError(f"empty emoji range {lo:#x}-{hi:#x}")

    def is_emoji(self, ch: str) -> bool:
        cp = ord(ch)
        return any(lo <= cp <= hi for lo, hi in self.emoji_ranges)


DEFAULT_NORMALIZATION = NormalizationConfig()


@dataclass(frozen=True)
class ParallelExample:
    """One corpus row: a standard Bangla source and its dialect rendering."""

    region: Region
    standard: str
    dialect: str
    banglish: str | None = None
    english: str | None = None

    def to_record(self) -> dict:
        record = {"region": self.region.value, "standard": self.standard, "dialect": self.dialect}
        if self.banglish is not None:
            record["banglish"] = self.banglish
        if self.english is not None:
            record["english"] = self.english
        return record


@dataclass(frozen=True)
class SplitCorpus:
    train: tuple[ParallelExample, ...]
    validation: tuple[ParallelExample, ...]
    test: tuple[ParallelExample, ...]
    split_seed: int = 0

    def for_region(self, region: Region) -> "SplitCorpus":
        keep = lambda part: tuple(ex for ex in part if ex.region == region)  # noqa: E731
        return replace(self, train=keep(self.train), validation=keep(self.validation), test=keep(self.test))


_REQUIRED = ("region", "standard", "dialect")
_OPTIONAL = ("banglish", "english", "normalized")


def _parse_record(line: str, lineno: int, path: Path) -> ParallelExample:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise CorpusError(f"{path}:{lineno}: malformed record ({exc.msg})") from None
    if not isinstance(record, dict):
        raise CorpusError(f"{path}:{lineno}: malformed record (expected a JSON object)")
    missing = [k for k in _REQUIRED if k not in record]
    if missing:
        raise CorpusError(f"{path}:{lineno}: malformed record (missing {', '.join(missing)})")
    unknown = sorted(set(record) - set(_REQUIRED) - set(_OPTIONAL))
    if unknown:
        raise CorpusError(f"{path}:{lineno}: malformed record (unknown keys {', '.join(unknown)})")
    for key in ("standard", "dialect"):
        if not isinstance(record[key], str):
            raise CorpusError(f"{path}:{lineno}: malformed record ({key!r} must be a string)")
    for key in ("banglish", "english"):
        if record.get(key) is not None and not isinstance(record[key], str):
            raise CorpusError(f"{path}:{lineno}: malformed record ({key!r} must be a string)")
    try:
        region = Region.parse(record["region"])
    except CorpusError as exc:
        raise CorpusError(f"{path}:{lineno}: {exc}") from None
    return ParallelExample(
        region=region,
        standard=record["standard"],
        dialect=record["dialect"],
        banglish=record.get("banglish"),
        english=record.get("english"),
    )


def load_corpus(path: str | Path, region_filter: Region | str | None = None) -> list[ParallelExample]:
    """Read a JSON Lines corpus in file order. Blank lines are skipped.

    Normalization is *not* applied here; see :func:`normalize_corpus`.
    """
    path = Path(path)
    if not path.is_file():
        raise CorpusError(f"corpus file not found: {path}")
    wanted = Region.parse(region_filter) if region_filter is not None else None
    examples = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            example = _parse_record(line, lineno, path)
            if wanted is None or example.region == wanted:
                examples.append(example)
    return examples


def save_corpus(examples: Iterable[ParallelExample], path: str | Path, *, normalized: bool = False) -> Path:
    lines = []
    for ex in examples:
        record = ex.to_record()
        if normalized:
            record["normalized"] = True
        lines.append(json.dumps(record, ensure_ascii=False))
    return atomic_write_text(path, "".join(line + "\n" for line in lines))


def normalize_text(raw: str, config: NormalizationConfig = DEFAULT_NORMALIZATION) -> str:
    """NFC-normalize, drop emoji and punctuation, then collapse whitespace.

    Punctuation goes before whitespace collapsing so that ``"a ? b"`` becomes
    ``"a b"`` rather than ``"a  b"``. Digits (ASCII and Bangla) are kept.
    NFC is applied again at the end: dropping a character that sat between a
    base letter and a combining mark can leave a composable pair behind.

    >>> normalize_text("a\\t b\\n c")
    'a b c'
    """
    text = unicodedata.normalize("NFC", raw)
    text = "".join(ch for ch in text if ch not in config.punctuation and not config.is_emoji(ch))
    return unicodedata.normalize("NFC", " ".join(text.split()))


def normalize_corpus(
    examples: Iterable[ParallelExample], config: NormalizationConfig = DEFAULT_NORMALIZATION
) -> tuple[list[ParallelExample], int]:
    """Normalize both sides of every example.

    Returns the surviving examples and the number dropped because their
    standard or dialect side became empty.
    """
    kept, dropped = [], 0
    for ex in examples:
        standard = normalize_text(ex.standard, config)
        dialect = normalize_text(ex.dialect, config)
        if not standard or not dialect:
            dropped += 1
            continue
        kept.append(replace(ex, standard=standard, dialect=dialect))
    return kept, dropped


def split_corpus(
    examples: Sequence[ParallelExample],
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> SplitCorpus:
    """Shuffle with a seed-keyed permutation, then cut into train/validation/test."""
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ValueError(f"expected three non-negative ratios, got {ratios!r}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {sum(ratios)!r}")
    n = len(examples)
    if n < 3:
        raise ValueError(f"corpus too small to split: {n} examples (need at least 3)")
    order = substream(seed, "split").permutation(n)
    n_train = min(n, round(ratios[0] * n))
    n_val = min(n - n_train, round(ratios[1] * n))
    shuffled = [examples[i] for i in order]
    return SplitCorpus(
        train=tuple(shuffled[:n_train]),
        validation=tuple(shuffled[n_train : n_train + n_val]),
        test=tuple(shuffled[n_train + n_val :]),
        split_seed=seed,
    )
