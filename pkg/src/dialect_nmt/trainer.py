"""Mini-batch Adam training per dialect, loss curves, and hyperparameter sweeps."""

from __future__ import annotations

import csv
import io
import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ._util import atomic_write_text, substream
from .corpus import ParallelExample, Region, SplitCorpus
from .decoder import greedy_decode
from .metrics import corpus_scores
from .model import (
    AdamState,
    Checkpoint,
    DivergenceError,
    ModelConfig,
    backward,
    forward,
    init_params,
    load_checkpoint,
    loss,
    optimizer_step,
    save_checkpoint,
)
from .tokenizer import PAD, Vocabulary, build_vocab, decode_ids, encode_text

log = logging.getLogger(__name__)

PAPER_LEARNING_RATES = (1e-3, 1e-4, 1e-5)
PAPER_BATCH_SIZES = (8, 16)
PAPER_EPOCHS = (30, 50)

_DTYPES = {"float32": np.float32, "float64": np.float64}


class TrainingError(ValueError):
    pass


@dataclass(frozen=True)
class Hyperparams:
    learning_rate: float = 1e-3
    batch_size: int = 8
    epochs: int = 30
    model: ModelConfig = ModelConfig()
    seed: int = 0
    precision: str = "float32"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise TrainingError(f"learning_rate must be positive, got {self.learning_rate!r}")
        if self.batch_size < 1:
            raise TrainingError(f"batch_size must be positive, got {self.batch_size!r}")
        if self.epochs < 1:
            raise TrainingError(f"epochs must be positive, got {self.epochs!r}")
        if self.precision not in _DTYPES:
            raise TrainingError(f"precision must be one of {sorted(_DTYPES)}, got {self.precision!r}")

    def check_paper_ranges(self) -> None:
        """Raise unless the settings fall inside the published tuning ranges."""
        if not 1e-5 <= self.learning_rate <= 1e-3:
            raise TrainingError(f"learning rate {self.learning_rate} outside [1e-5, 1e-3]")
        if not 8 <= self.batch_size <= 16:
            raise TrainingError(f"batch size {self.batch_size} outside [8, 16]")
        if not 30 <= self.epochs <= 50:
            raise TrainingError(f"epochs {self.epochs} outside [30, 50]")

    @property
    def dtype(self):
        return _DTYPES[self.precision]


def paper_grid(base: Hyperparams = Hyperparams(), *, validate: bool = True) -> list[Hyperparams]:
    """The 12 corner configurations: 3 learning rates x 2 batch sizes x 2 epoch budgets."""
    grid = [
        replace(base, learning_rate=lr, batch_size=bs, epochs=ep)
        for lr, bs, ep in itertools.product(PAPER_LEARNING_RATES, PAPER_BATCH_SIZES, PAPER_EPOCHS)
    ]
    if validate:
        for hp in grid:
            hp.check_paper_ranges()
    return grid


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float | None


@dataclass
class LossHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def append(self, train_loss: float, val_loss: float | None) -> None:
        self.records.append(EpochRecord(len(self.records) + 1, train_loss, val_loss))

    @property
    def train_losses(self) -> list[float]:
        return [r.train_loss for r in self.records]

    def to_list(self) -> list[dict]:
        return [asdict(r) for r in self.records]

    @classmethod
    def from_list(cls, rows: list[dict]) -> "LossHistory":
        return cls([EpochRecord(**row) for row in rows])


# -- batching ----------------------------------------------------------------


def encode_pairs(vocab: Vocabulary, examples: Sequence[ParallelExample], max_seq_len: int):
    """Token ids for (standard -> dialect) pairs that fit the model."""
    pairs = []
    skipped = 0
    for ex in examples:
        src = encode_text(vocab, ex.standard)
        tgt = encode_text(vocab, ex.dialect)
        if len(src) > max_seq_len or len(tgt) - 1 > max_seq_len:
            skipped += 1
            continue
        pairs.append((src, tgt))
    if skipped:
        log.warning("skipped %d pairs longer than max_seq_len=%d", skipped, max_seq_len)
    return pairs


def _pad(seqs: list[list[int]]) -> np.ndarray:
    width = max(len(s) for s in seqs)
    out = np.full((len(seqs), width), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out


def make_batch(pairs):
    src = _pad([s for s, _ in pairs])
    tgt = _pad([t for _, t in pairs])
    return src, tgt[:, :-1], tgt[:, 1:]


def _batches(pairs, batch_size: int, order=None):
    idx = range(len(pairs)) if order is None else order
    idx = list(idx)
    for start in range(0, len(idx), batch_size):
        yield make_batch([pairs[i] for i in idx[start : start + batch_size]])


# -- training ----------------------------------------------------------------


def evaluate_epoch(params, config: ModelConfig, pairs, batch_size: int) -> float:
    """Token-weighted mean cross-entropy with dropout off.

    ``pairs`` are ``(src_ids, tgt_ids)`` tuples as built by :func:`encode_pairs`.
    """
    if not pairs:
        raise TrainingError("cannot evaluate an empty split")
    total = 0.0
    tokens = 0
    for src, tgt_in, tgt_out in _batches(pairs, batch_size):
        n = int((tgt_out != PAD).sum())
        total += loss(forward(params, config, src, tgt_in), tgt_out) * n
        tokens += n
    return total / tokens


def _region_split(corpus: SplitCorpus, region: Region | None) -> SplitCorpus:
    return corpus if region is None else corpus.for_region(Region.parse(region))


def model_config_for(hp: Hyperparams, vocab: Vocabulary) -> ModelConfig:
    return replace(hp.model, vocab_size=vocab.size)


def train(
    corpus: SplitCorpus,
    region: Region | str | None,
    hp: Hyperparams,
    *,
    vocab: Vocabulary | None = None,
    checkpoint_path: str | Path | None = None,
    resume_from: str | Path | None = None,
    extra_metadata: dict | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
):
    """Train one standard -> dialect model with teacher forcing.

    The vocabulary defaults to the one built from the training split, and
    the model's ``vocab_size`` is taken from it. Shuffling and dropout draw
    from streams keyed by ``(hp.seed, epoch)``, so a run resumed from a
    checkpoint continues bit-for-bit. When ``checkpoint_path`` is given the
    checkpoint is rewritten after every epoch.

    Returns ``(params, history)``.
    """
    split = _region_split(corpus, region)
    if not split.train:
        raise TrainingError("training split is empty")
    vocab = vocab or build_vocab(split.train)
    config = model_config_for(hp, vocab)
    train_pairs = encode_pairs(vocab, split.train, config.max_seq_len)
    val_pairs = encode_pairs(vocab, split.validation, config.max_seq_len)
    if not train_pairs:
        raise TrainingError("no training pairs fit within max_seq_len")

    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        if ckpt.config != config or ckpt.seed != hp.seed or ckpt.vocab_tokens != vocab.tokens:
            raise TrainingError("checkpoint does not match the requested configuration")
        params, state, start = ckpt.params, ckpt.optimizer, ckpt.epoch
        history = LossHistory.from_list(ckpt.extra.get("history", []))
    else:
        params = init_params(config, hp.seed, dtype=hp.dtype)
        state, start, history = AdamState.fresh(params), 0, LossHistory()

    for epoch in range(start + 1, hp.epochs + 1):
        order = substream(hp.seed, "shuffle", epoch).permutation(len(train_pairs))
        dropout_rng = substream(hp.seed, "dropout", epoch)
        total, tokens = 0.0, 0
        for src, tgt_in, tgt_out in _batches(train_pairs, hp.batch_size, order):
            # overflow shows up as a non-finite loss or gradient, checked below
            with np.errstate(over="ignore", invalid="ignore"):
                value, grads = backward(params, config, src, tgt_in, tgt_out, training=True, rng=dropout_rng)
            if not math.isfinite(value):
                raise DivergenceError(f"non-finite training loss at epoch {epoch}", epoch)
            try:
                params, state = optimizer_step(params, grads, state, hp.learning_rate)
            except DivergenceError as exc:
                raise DivergenceError(f"{exc} at epoch {epoch}", epoch) from None
            n = int((tgt_out != PAD).sum())
            total += value * n
            tokens += n
        with np.errstate(over="ignore", invalid="ignore"):
            val_loss = evaluate_epoch(params, config, val_pairs, hp.batch_size) if val_pairs else None
        if val_loss is not None and not math.isfinite(val_loss):
            raise DivergenceError(f"non-finite validation loss at epoch {epoch}", epoch)
        history.append(total / tokens, val_loss)
        log.info("epoch %d train %.4f val %s", epoch, total / tokens, val_loss)
        if on_epoch is not None:
            on_epoch(history.records[-1])
        if checkpoint_path is not None:
            meta = dict(extra_metadata or {})
            meta["history"] = history.to_list()
            meta["hyperparams"] = {"learning_rate": hp.learning_rate, "batch_size": hp.batch_size, "epochs": hp.epochs}
            save_checkpoint(
                Checkpoint(config, params, state, epoch, hp.seed, vocab.tokens, meta),
                checkpoint_path,
            )
    return params, history


def decode_split(params, config: ModelConfig, vocab: Vocabulary, examples, max_len: int | None = None) -> list[str]:
    max_len = max_len or config.max_seq_len
    return [decode_ids(vocab, greedy_decode(params, config, encode_text(vocab, ex.standard), max_len)) for ex in examples]


# -- sweeps ------------------------------------------------------------------


@dataclass
class SweepRecord:
    index: int
    hyperparams: Hyperparams
    final_val_loss: float | None = None
    val_cer: float | None = None
    val_wer: float | None = None
    failed: bool = False
    error: str | None = None
    history: LossHistory | None = None

    def rank_key(self):
        hp = self.hyperparams
        return (self.val_cer, self.val_wer, hp.learning_rate, hp.batch_size, hp.epochs, hp.seed, self.index)


@dataclass
class SweepResult:
    records: list[SweepRecord]
    best_by_cer: SweepRecord | None

    @property
    def failed(self) -> list[SweepRecord]:
        return [r for r in self.records if r.failed]


def rank_records(records: Sequence[SweepRecord]) -> SweepRecord | None:
    """Lowest validation CER; ties by WER, then learning rate, then batch size."""
    survivors = [r for r in records if not r.failed]
    return min(survivors, key=SweepRecord.rank_key) if survivors else None


def _run_one(args) -> SweepRecord:
    index, corpus, region, hp, vocab, checkpoint_dir = args
    record = SweepRecord(index, hp)
    ckpt = None if checkpoint_dir is None else Path(checkpoint_dir) / f"entry_{index}.npz"
    try:
        params, history = train(corpus, region, hp, vocab=vocab, checkpoint_path=ckpt)
        config = model_config_for(hp, vocab)
        split = _region_split(corpus, region)
        hyps = decode_split(params, config, vocab, split.validation)
        scores = corpus_scores([(ex.dialect, h) for ex, h in zip(split.validation, hyps)])
        record.final_val_loss = history.records[-1].val_loss
        record.val_cer, record.val_wer = scores.cer, scores.wer
        record.history = history
    except DivergenceError as exc:
        record.failed, record.error = True, str(exc)
        log.warning("sweep entry %d diverged: %s", index, exc)
    return record


def sweep(
    corpus: SplitCorpus,
    region: Region | str | None,
    grid: Sequence[Hyperparams],
    *,
    vocab: Vocabulary | None = None,
    jobs: int = 1,
    indices: Sequence[int] | None = None,
    checkpoint_dir: str | Path | None = None,
) -> SweepResult:
    """Train and score every grid entry independently.

    Validation CER/WER come from greedy decoding. A diverging entry becomes a
    failed record instead of aborting the sweep. ``indices`` labels the
    entries (defaults to their positions), which lets callers resume a sweep.
    With ``checkpoint_dir`` each entry keeps ``entry_<index>.npz`` there.
    """
    if not grid:
        raise TrainingError("sweep grid is empty")
    split = _region_split(corpus, region)
    if not split.validation:
        raise TrainingError("sweep needs a non-empty validation split")
    vocab = vocab or build_vocab(split.train)
    indices = list(range(len(grid))) if indices is None else list(indices)
    tasks = [(i, split, None, hp, vocab, checkpoint_dir) for i, hp in zip(indices, grid)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_run_one, tasks))
    else:
        records = [_run_one(t) for t in tasks]
    return SweepResult(records, rank_records(records))


SWEEP_COLUMNS = (
    "index",
    "learning_rate",
    "batch_size",
    "epochs",
    "seed",
    "d_model",
    "n_heads",
    "n_layers",
    "d_ff",
    "dropout_rate",
    "final_val_loss",
    "val_cer",
    "val_wer",
    "status",
)


def sweep_row(record: SweepRecord) -> dict:
    hp, m = record.hyperparams, record.hyperparams.model
    fmt = lambda x: "" if x is None else repr(float(x))  # noqa: E731
    return {
        "index": record.index,
        "learning_rate": repr(hp.learning_rate),
        "batch_size": hp.batch_size,
        "epochs": hp.epochs,
        "seed": hp.seed,
        "d_model": m.d_model,
        "n_heads": m.n_heads,
        "n_layers": m.n_layers,
        "d_ff": m.d_ff,
        "dropout_rate": repr(m.dropout_rate),
        "final_val_loss": fmt(record.final_val_loss),
        "val_cer": fmt(record.val_cer),
        "val_wer": fmt(record.val_wer),
        "status": "failed" if record.failed else "ok",
    }


def export_sweep_csv(records: Sequence[SweepRecord], path: str | Path) -> Path:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for record in sorted(records, key=lambda r: r.index):
        writer.writerow(sweep_row(record))
    return atomic_write_text(path, buf.getvalue())


def read_sweep_csv(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
