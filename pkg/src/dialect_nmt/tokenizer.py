"""Character-level (code point) vocabulary with four reserved special ids."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from ._util import atomic_write_text
from .corpus import ParallelExample

PAD, BOS, EOS, UNK = 0, 1, 2, 3
N_SPECIALS = 4
SPECIAL_NAMES = ("<pad>", "<bos>", "<eos>", "<unk>")
UNK_CHAR = "�"


class VocabularyError(ValueError):
    pass


@dataclass(frozen=True)
class Vocabulary:
    """Bijective code point <-> id table; ids 0-3 are PAD, BOS, EOS, UNK.

    ``tokens[i]`` has id ``i + 4``.
    """

    tokens: tuple[str, ...]
    token_to_id: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mapping = {}
        for i, tok in enumerate(self.tokens):
            if len(tok) != 1:
                raise VocabularyError(f"tokens must be single code points, got {tok!r}")
            if tok in mapping:
                raise VocabularyError(f"duplicate token {tok!r}")
            mapping[tok] = i + N_SPECIALS
        object.__setattr__(self, "token_to_id", mapping)

    @property
    def size(self) -> int:
        return N_SPECIALS + len(self.tokens)

    def __len__(self) -> int:
        return self.size

    def id_to_token(self, idx: int) -> str:
        if not 0 <= idx < self.size:
            raise VocabularyError(f"id {idx} out of range for vocabulary of size {self.size}")
        if idx < N_SPECIALS:
            return SPECIAL_NAMES[idx]
        return self.tokens[idx - N_SPECIALS]

    def save(self, path: str | Path) -> Path:
        """One token per line; line ``n`` (0-based) holds id ``n + 4``."""
        if "\n" in self.tokens:
            raise VocabularyError("cannot serialize a vocabulary containing a line feed")
        return atomic_write_text(path, "".join(tok + "\n" for tok in self.tokens))

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        text = Path(path).read_text(encoding="utf-8")
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(tuple(lines))


def build_vocab(examples: Iterable[ParallelExample]) -> Vocabulary:
    """Every distinct code point of the standard and dialect sides, sorted."""
    chars: set[str] = set()
    n = 0
    for ex in examples:
        n += 1
        chars.update(ex.standard)
        chars.update(ex.dialect)
    if n == 0:
        raise VocabularyError("cannot build a vocabulary from an empty corpus")
    if not chars:
        raise VocabularyError("corpus contains no characters")
    return Vocabulary(tuple(sorted(chars)))


def encode_text(vocab: Vocabulary, text: str) -> list[int]:
    lookup = vocab.token_to_id
    return [BOS, *(lookup.get(ch, UNK) for ch in text), EOS]


def decode_ids(vocab: Vocabulary, ids: Sequence[int]) -> str:
    out = []
    for idx in ids:
        idx = int(idx)
        if not 0 <= idx < vocab.size:
            raise VocabularyError(f"id {idx} out of range for vocabulary of size {vocab.size}")
        if idx == UNK:
            out.append(UNK_CHAR)
        elif idx >= N_SPECIALS:
            out.append(vocab.tokens[idx - N_SPECIALS])
    return "".join(out)
