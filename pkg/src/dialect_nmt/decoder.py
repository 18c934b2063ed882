"""Greedy and beam-search generation, and side-by-side translation with several models."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .corpus import DEFAULT_NORMALIZATION, NormalizationConfig, normalize_text
from .model import ModelConfig, decode, encode, log_softmax
from .tokenizer import BOS, EOS, PAD, Vocabulary, decode_ids, encode_text

# never generated: PAD, and BOS beyond position 0
_FORBIDDEN = (PAD, BOS)


class DecodeError(ValueError):
    pass


@dataclass(frozen=True)
class DecodeSettings:
    beam_width: int = 4
    length_penalty: float = 0.6
    max_len: int = 128

    def __post_init__(self):
        if self.beam_width < 1:
            raise DecodeError("beam_width must be at least 1")
        if self.length_penalty < 0:
            raise DecodeError("length_penalty must be non-negative")
        if self.max_len < 1:
            raise DecodeError("max_len must be at least 1")


@dataclass(frozen=True)
class BeamHypothesis:
    ids: tuple[int, ...]
    log_prob: float
    finished: bool

    @property
    def length(self) -> int:
        """Generated tokens, EOS included, BOS excluded."""
        return len(self.ids) - 1

    def score(self, alpha: float) -> float:
        return self.log_prob / (max(self.length, 1) ** alpha)


def _step_log_probs(params, config, memory, src_mask, prefixes: np.ndarray) -> np.ndarray:
    logits, _ = decode(params, config, memory, src_mask, prefixes)
    logp = log_softmax(logits[:, -1, :].astype(np.float64))
    logp[:, _FORBIDDEN] = -np.inf
    return logp


def _encode_source(params, config, src):
    src = np.asarray(src, dtype=np.int64).reshape(1, -1)
    memory, src_mask, _ = encode(params, config, src)
    return memory, src_mask


def greedy_decode(params, config: ModelConfig, src: Sequence[int], max_len: int = 128) -> list[int]:
    """Argmax decoding from BOS until EOS or ``max_len`` generated tokens.

    Ties go to the lowest token id. The result starts with BOS.
    """
    max_len = min(max_len, config.max_seq_len)
    memory, src_mask = _encode_source(params, config, src)
    out = [BOS]
    for _ in range(max_len):
        logp = _step_log_probs(params, config, memory, src_mask, np.array([out]))
        token = int(np.argmax(logp[0]))
        out.append(token)
        if token == EOS:
            break
    return out


def beam_search(
    params,
    config: ModelConfig,
    src: Sequence[int],
    beam_width: int = 4,
    max_len: int = 128,
    length_penalty_alpha: float = 0.6,
) -> list[BeamHypothesis]:
    """Beam search returning every finished hypothesis, best first.

    Each step keeps the ``beam_width`` best expansions by cumulative log
    probability; expansions ending in EOS leave the beam as finished.
    Hypotheses still open after ``max_len`` tokens are finished as-is.
    Final ranking uses ``log_prob / length ** alpha``.
    """
    if beam_width < 1:
        raise DecodeError("beam_width must be at least 1")
    if length_penalty_alpha < 0:
        raise DecodeError("length_penalty_alpha must be non-negative")
    max_len = min(max_len, config.max_seq_len)
    memory, src_mask = _encode_source(params, config, src)

    live: list[tuple[tuple[int, ...], float]] = [((BOS,), 0.0)]
    finished: list[BeamHypothesis] = []
    for step in range(max_len):
        prefixes = np.array([ids for ids, _ in live])
        n = len(live)
        logp = _step_log_probs(params, config, np.repeat(memory, n, axis=0), np.repeat(src_mask, n, axis=0), prefixes)
        candidates = []
        for (ids, total), row in zip(live, logp):
            for token in np.flatnonzero(np.isfinite(row)):
                step_lp = float(row[token])
                candidates.append((total + step_lp, step_lp, ids + (int(token),)))
        # the step score breaks ties in the cumulative score, which keeps
        # width-1 search identical to greedy argmax
        candidates.sort(key=lambda c: (-c[0], -c[1], c[2]))
        live = []
        last_step = step == max_len - 1
        for total, _, ids in candidates[:beam_width]:
            if ids[-1] == EOS or last_step:
                finished.append(BeamHypothesis(ids, total, True))
            else:
                live.append((ids, total))
        if not live:
            break
    finished.sort(key=lambda h: (-h.score(length_penalty_alpha), h.ids))
    return finished


@dataclass(frozen=True)
class TranslationSet:
    source: str
    candidates: dict[str, str] = field(default_factory=dict)

    def to_record(self) -> dict:
        return {"source": self.source, "candidates": dict(self.candidates)}


def translate_ids(params, config: ModelConfig, src_ids: Sequence[int], settings: DecodeSettings) -> list[int]:
    if settings.beam_width == 1:
        return greedy_decode(params, config, src_ids, settings.max_len)
    best = beam_search(params, config, src_ids, settings.beam_width, settings.max_len, settings.length_penalty)
    return list(best[0].ids)


def translate_all(
    models: Mapping[str, tuple],
    src_text: str,
    vocab: Vocabulary | Mapping[str, Vocabulary],
    settings: DecodeSettings = DecodeSettings(),
    normalization: NormalizationConfig = DEFAULT_NORMALIZATION,
) -> TranslationSet:
    """Translate one source sentence with every registered model.

    ``models`` maps a tag to ``(params, config)``. ``vocab`` is either shared
    or a per-tag mapping.
    """
    if not models:
        raise DecodeError("no models registered")
    source = normalize_text(src_text, normalization)
    if not source:
        raise DecodeError(f"source is empty after normalization: {src_text!r}")
    candidates = {}
    for tag in sorted(models):
        params, config = models[tag]
        tag_vocab = vocab[tag] if isinstance(vocab, Mapping) else vocab
        out = translate_ids(params, config, encode_text(tag_vocab, source), settings)
        candidates[tag] = decode_ids(tag_vocab, out)
    return TranslationSet(source, candidates)
