"""Run configuration and its key-value file format.

Grammar, one setting per line::

    # comment
    key = <JSON value>

Blank lines and lines starting with ``#`` are ignored. The value is any JSON
literal: ``0.001``, ``8``, ``"runs/toy"``, ``true``, ``[0.8, 0.1, 0.1]``.
Each key may appear once; unknown keys are rejected. Command-line flags
override values from the file, which override the defaults below.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .corpus import DEFAULT_EMOJI_RANGES, DEFAULT_PUNCTUATION, NormalizationConfig
from .decoder import DecodeSettings
from .model import ModelConfig
from .trainer import Hyperparams


class RunConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    corpus: str | None = None
    out_dir: str = "runs"
    checkpoint_dir: str | None = None
    model_tag: str = "transformer"
    seed: int = 0
    jobs: int = 1
    # training
    learning_rate: float = 1e-3
    batch_size: int = 8
    epochs: int = 30
    precision: str = "float32"
    split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    # model shape
    d_model: int = 128
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 256
    max_seq_len: int = 128
    dropout_rate: float = 0.1
    # normalization
    punctuation: str = "".join(sorted(DEFAULT_PUNCTUATION))
    emoji_ranges: tuple[tuple[int, int], ...] = DEFAULT_EMOJI_RANGES
    metric_normalize: bool = True
    macro: bool = False
    # decoding
    beam_width: int = 4
    length_penalty: float = 0.6
    max_decode_len: int = 128

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_mapping(cls, values: dict, base: "RunConfig | None" = None) -> "RunConfig":
        base = base or cls()
        unknown = sorted(set(values) - set(cls.keys()))
        if unknown:
            raise RunConfigError(f"unknown config key(s): {', '.join(unknown)}")
        values = dict(values)
        if "split_ratios" in values:
            values["split_ratios"] = tuple(float(x) for x in values["split_ratios"])
        if "emoji_ranges" in values:
            values["emoji_ranges"] = tuple((int(lo), int(hi)) for lo, hi in values["emoji_ranges"])
        config = replace(base, **values)
        config.validate()
        return config

    @classmethod
    def load(cls, path: str | Path, base: "RunConfig | None" = None) -> "RunConfig":
        return cls.from_mapping(parse_config_text(Path(path).read_text(encoding="utf-8"), str(path)), base)

    def validate(self) -> None:
        try:
            self.hyperparams()
            self.normalization()
            self.decode_settings()
        except (ValueError, TypeError) as exc:
            raise RunConfigError(str(exc)) from exc
        if len(self.split_ratios) != 3:
            raise RunConfigError("split_ratios needs exactly three values")
        if self.jobs < 1:
            raise RunConfigError("jobs must be at least 1")

    def model_config(self, vocab_size: int = 5) -> ModelConfig:
        return ModelConfig(
            vocab_size=vocab_size,
            d_model=self.d_model,
            n_heads=self.n_heads,
            n_layers=self.n_layers,
            d_ff=self.d_ff,
            max_seq_len=self.max_seq_len,
            dropout_rate=self.dropout_rate,
        )

    def hyperparams(self) -> Hyperparams:
        return Hyperparams(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            model=self.model_config(),
            seed=self.seed,
            precision=self.precision,
        )

    def normalization(self) -> NormalizationConfig:
        return NormalizationConfig(frozenset(self.punctuation), tuple(self.emoji_ranges))

    def decode_settings(self) -> DecodeSettings:
        return DecodeSettings(self.beam_width, self.length_penalty, self.max_decode_len)

    def to_text(self) -> str:
        lines = []
        for key, value in asdict(self).items():
            lines.append(f"{key} = {json.dumps(value, ensure_ascii=False)}")
        return "\n".join(lines) + "\n"


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise RunConfigError(f"{source}:{lineno}: expected 'key = value'")
        if key in values:
            raise RunConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = json.loads(value.strip())
        except json.JSONDecodeError:
            raise RunConfigError(f"{source}:{lineno}: value for {key!r} is not a JSON literal") from None
    return values
