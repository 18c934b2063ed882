"""Character and word error rates built on Levenshtein distance."""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass
from typing import Hashable, Iterable, Sequence

from .corpus import DEFAULT_NORMALIZATION, NormalizationConfig, normalize_text


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class EditBreakdown:
    insertions: int = 0
    deletions: int = 0
    substitutions: int = 0

    @property
    def distance(self) -> int:
        return self.insertions + self.deletions + self.substitutions

    def __add__(self, other: "EditBreakdown") -> "EditBreakdown":
        return EditBreakdown(
            self.insertions + other.insertions,
            self.deletions + other.deletions,
            self.substitutions + other.substitutions,
        )

    def as_dict(self) -> dict[str, int]:
        return {
            "insertions": self.insertions,
            "deletions": self.deletions,
            "substitutions": self.substitutions,
            "distance": self.distance,
        }


@dataclass(frozen=True)
class ScorePair:
    wer: float
    cer: float


def edit_distance(reference: Sequence[Hashable], hypothesis: Sequence[Hashable]) -> EditBreakdown:
    """Unit-cost Levenshtein distance with an operation breakdown.

    A deletion removes a reference symbol, an insertion adds a hypothesis
    symbol. Among equal-cost scripts the backtrace prefers the diagonal
    (match or substitution), then deletion, then insertion, so the breakdown
    is deterministic.
    """
    n, m = len(reference), len(hypothesis)
    table = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        table[i][0] = i
    for j in range(m + 1):
        table[0][j] = j
    for i in range(1, n + 1):
        row, prev = table[i], table[i - 1]
        r = reference[i - 1]
        for j in range(1, m + 1):
            row[j] = min(
                prev[j - 1] + (r != hypothesis[j - 1]),
                prev[j] + 1,
                row[j - 1] + 1,
            )

    ins = dels = subs = 0
    i, j = n, m
    while i > 0 or j > 0:
        here = table[i][j]
        if i > 0 and j > 0:
            cost = reference[i - 1] != hypothesis[j - 1]
            if here == table[i - 1][j - 1] + cost:
                subs += cost
                i, j = i - 1, j - 1
                continue
        if i > 0 and here == table[i - 1][j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return EditBreakdown(insertions=ins, deletions=dels, substitutions=subs)


def _prepare(text: str, normalize: bool, config: NormalizationConfig) -> str:
    if normalize:
        return normalize_text(text, config)
    return unicodedata.normalize("NFC", text)


def _char_units(text: str) -> list[str]:
    return list(text)


def _word_units(text: str) -> list[str]:
    return text.split(" ") if text else []


def _check_reference(units: list, kind: str, reference: str) -> None:
    if not units:
        raise MetricError(f"reference has no {kind}s after normalization: {reference!r}")


def char_breakdown(
    reference: str, hypothesis: str, *, normalize: bool = True, config: NormalizationConfig = DEFAULT_NORMALIZATION
) -> tuple[EditBreakdown, int]:
    ref = _char_units(_prepare(reference, normalize, config))
    _check_reference(ref, "character", reference)
    return edit_distance(ref, _char_units(_prepare(hypothesis, normalize, config))), len(ref)


def word_breakdown(
    reference: str, hypothesis: str, *, normalize: bool = True, config: NormalizationConfig = DEFAULT_NORMALIZATION
) -> tuple[EditBreakdown, int]:
    # without normalization, fall back to generic whitespace splitting
    ref_text = _prepare(reference, normalize, config)
    hyp_text = _prepare(hypothesis, normalize, config)
    ref = _word_units(ref_text) if normalize else ref_text.split()
    hyp = _word_units(hyp_text) if normalize else hyp_text.split()
    _check_reference(ref, "word", reference)
    return edit_distance(ref, hyp), len(ref)


def sentence_cer(reference: str, hypothesis: str, *, normalize: bool = True) -> float:
    breakdown, length = char_breakdown(reference, hypothesis, normalize=normalize)
    return breakdown.distance / length


def sentence_wer(reference: str, hypothesis: str, *, normalize: bool = True) -> float:
    breakdown, length = word_breakdown(reference, hypothesis, normalize=normalize)
    return breakdown.distance / length


@dataclass(frozen=True)
class CorpusScores:
    """Corpus-level scores plus the totals they were computed from."""

    scores: ScorePair
    sentences: int
    char_breakdown: EditBreakdown
    word_breakdown: EditBreakdown
    ref_chars: int
    ref_words: int

    def as_dict(self) -> dict:
        return {
            "cer": self.scores.cer,
            "wer": self.scores.wer,
            "sentences": self.sentences,
            "breakdown": {
                "char": {**self.char_breakdown.as_dict(), "reference_length": self.ref_chars},
                "word": {**self.word_breakdown.as_dict(), "reference_length": self.ref_words},
            },
        }


def corpus_details(
    pairs: Iterable[tuple[str, str]], *, normalize: bool = True, macro: bool = False
) -> CorpusScores:
    """Aggregate over (reference, hypothesis) pairs.

    The default is the micro-average (total distance over total reference
    length); ``macro=True`` averages the per-sentence rates instead.
    """
    char_total = word_total = EditBreakdown()
    ref_chars = ref_words = 0
    cer_sum = wer_sum = 0.0
    n = 0
    for reference, hypothesis in pairs:
        cb, cl = char_breakdown(reference, hypothesis, normalize=normalize)
        wb, wl = word_breakdown(reference, hypothesis, normalize=normalize)
        char_total += cb
        word_total += wb
        ref_chars += cl
        ref_words += wl
        cer_sum += cb.distance / cl
        wer_sum += wb.distance / wl
        n += 1
    if n == 0:
        raise MetricError("cannot score an empty set of pairs")
    if macro:
        scores = ScorePair(wer=wer_sum / n, cer=cer_sum / n)
    else:
        scores = ScorePair(wer=word_total.distance / ref_words, cer=char_total.distance / ref_chars)
    return CorpusScores(scores, n, char_total, word_total, ref_chars, ref_words)


def corpus_scores(pairs: Iterable[tuple[str, str]], *, normalize: bool = True, macro: bool = False) -> ScorePair:
    return corpus_details(pairs, normalize=normalize, macro=macro).scores
