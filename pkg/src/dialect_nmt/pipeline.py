"""End-to-end runs: ingest, normalize, split, train, decode, score, report.

All artifacts of a run go under ``config.out_dir``::

    run_config.txt                      resolved configuration
    corpus_<region>.jsonl               normalized corpus
    vocab_<region>.txt
    checkpoints/<run_id>.npz
    loss_<run_id>.csv
    predictions_<run_id>.jsonl          test-split hypotheses
    report.jsonl (+ report.jsonl.meta.json)

``run_id`` is ``<model_tag>_<region>_e<epochs>``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import shutil
import time
from dataclasses import asdict, dataclass, replace
from pathlib import Path

from ._util import atomic_write_text
from .config import RunConfig
from .corpus import CorpusError, Region, SplitCorpus, load_corpus, normalize_corpus, save_corpus, split_corpus
from .decoder import translate_ids
from .metrics import MetricError, corpus_details
from .report import (
    EvalReport,
    add_entry,
    config_digest,
    export_loss_csv,
    load_report,
    remove_entry,
    save_report,
)
from .tokenizer import Vocabulary, build_vocab, decode_ids, encode_text
from .trainer import (
    SWEEP_COLUMNS,
    SweepRecord,
    model_config_for,
    paper_grid,
    read_sweep_csv,
    sweep,
    sweep_row,
    train,
)

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


@dataclass
class PreparedData:
    region: Region
    corpus: SplitCorpus
    vocab: Vocabulary
    dropped: int
    dataset_id: str


def run_id_for(config: RunConfig, region: Region) -> str:
    return f"{config.model_tag}_{region.value}_e{config.epochs}"


def _checkpoint_dir(config: RunConfig) -> Path:
    return Path(config.checkpoint_dir) if config.checkpoint_dir else Path(config.out_dir) / "checkpoints"


def prepare_data(config: RunConfig, region: Region | str) -> PreparedData:
    """Ingest, normalize, split and build the vocabulary for one region."""
    region = Region.parse(region)
    if not config.corpus:
        raise CorpusError("no corpus path configured")
    raw = load_corpus(config.corpus, region)
    examples, dropped = normalize_corpus(raw, config.normalization())
    if dropped:
        log.info("dropped %d examples that were empty after normalization", dropped)
    out = Path(config.out_dir)
    save_corpus(examples, out / f"corpus_{region.value}.jsonl", normalized=True)
    corpus = split_corpus(examples, tuple(config.split_ratios), config.seed)
    vocab = build_vocab(corpus.train)
    vocab.save(out / f"vocab_{region.value}.txt")
    digest = hashlib.sha256(Path(config.corpus).read_bytes()).hexdigest()[:16]
    return PreparedData(region, corpus, vocab, dropped, f"{Path(config.corpus).name}:{digest}")


def _timestamp() -> str:
    # SOURCE_DATE_EPOCH pins the timestamp for reproducible builds
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = int(epoch) if epoch else int(time.time())
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(t))


@dataclass
class PipelineResult:
    run_id: str
    wer: float
    cer: float
    report_path: Path
    loss_csv: Path
    checkpoint: Path
    predictions: Path


def run_pipeline(config: RunConfig, region: Region | str) -> PipelineResult:
    """Train one dialect model and score it on the test split."""
    region = Region.parse(region)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "run_config.txt", config.to_text())

    data = prepare_data(config, region)
    if not data.corpus.test:
        raise PipelineError("split", "test split is empty; the corpus is too small for the configured ratios")
    hp = config.hyperparams()
    run_id = run_id_for(config, region)
    ckpt_path = _checkpoint_dir(config) / f"{run_id}.npz"
    params, history = train(
        data.corpus,
        region,
        hp,
        vocab=data.vocab,
        checkpoint_path=ckpt_path,
        extra_metadata={"model_tag": config.model_tag, "region": region.value},
    )
    loss_csv = export_loss_csv(history, out, run_id)

    model_config = model_config_for(hp, data.vocab)
    settings = config.decode_settings()
    pairs, lines = [], []
    for ex in data.corpus.test:
        ids = translate_ids(params, model_config, encode_text(data.vocab, ex.standard), settings)
        hyp = decode_ids(data.vocab, ids)
        pairs.append((ex.dialect, hyp))
        lines.append(json.dumps({"source": ex.standard, "reference": ex.dialect, "hypothesis": hyp}, ensure_ascii=False))
    predictions = atomic_write_text(out / f"predictions_{run_id}.jsonl", "".join(line + "\n" for line in lines))
    try:
        details = corpus_details(pairs, normalize=config.metric_normalize, macro=config.macro)
    except MetricError as exc:
        raise PipelineError("evaluate", str(exc)) from exc

    report_path = out / "report.jsonl"
    report = load_report(report_path) if report_path.is_file() else EvalReport()
    report = remove_entry(report, config.model_tag, region, config.epochs)
    report = add_entry(report, config.model_tag, region, config.epochs, details.scores)
    report = replace(
        report,
        metadata={
            "dataset": data.dataset_id,
            "timestamp": _timestamp(),
            "config_digest": config_digest(asdict(config)),
        },
    )
    save_report(report, report_path)
    return PipelineResult(run_id, details.scores.wer, details.scores.cer, report_path, loss_csv, ckpt_path, predictions)


def parse_grid_scale(items: list[str] | None) -> dict[str, int]:
    """``["epochs=2"]`` -> ``{"epochs": 2}``; only ``epochs`` can be scaled."""
    scale = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep or key != "epochs":
            raise ValueError(f"unsupported --grid-scale entry {item!r} (expected epochs=N)")
        try:
            scale[key] = int(value)
        except ValueError:
            raise ValueError(f"--grid-scale value must be an integer: {item!r}") from None
        if scale[key] < 1:
            raise ValueError("--grid-scale epochs must be positive")
    return scale


@dataclass
class GridResult:
    sweep_csv: Path
    rows: list[dict]
    best_index: int | None
    best_checkpoint: Path | None


def _row_rank_key(row: dict):
    return (
        float(row["val_cer"]),
        float(row["val_wer"]),
        float(row["learning_rate"]),
        int(row["batch_size"]),
        int(row["epochs"]),
        int(row["seed"]),
        int(row["index"]),
    )


def run_paper_grid(config: RunConfig, region: Region | str, grid_scale: dict | None = None) -> GridResult:
    """Sweep the 12 published-range corners for one region.

    Rows already present in ``sweep_<region>.csv`` are kept and their
    configurations are not re-run, so an interrupted sweep can be resumed.
    Each entry's checkpoint is kept under ``checkpoints/sweep_<region>/``;
    the best one is copied to ``checkpoints/best_<region>.npz``.
    """
    region = Region.parse(region)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "run_config.txt", config.to_text())
    data = prepare_data(config, region)

    grid = paper_grid(config.hyperparams())
    nominal_epochs = [hp.epochs for hp in grid]
    if grid_scale and "epochs" in grid_scale:
        grid = [replace(hp, epochs=grid_scale["epochs"]) for hp in grid]

    sweep_csv = out / f"sweep_{region.value}.csv"
    rows = {int(r["index"]): r for r in read_sweep_csv(sweep_csv)} if sweep_csv.is_file() else {}
    pending = [i for i in range(len(grid)) if i not in rows]
    ckpt_dir = _checkpoint_dir(config) / f"sweep_{region.value}"

    chunk = max(1, config.jobs)
    for start in range(0, len(pending), chunk):
        batch = pending[start : start + chunk]
        result = sweep(
            data.corpus,
            region,
            [grid[i] for i in batch],
            vocab=data.vocab,
            jobs=config.jobs,
            indices=batch,
            checkpoint_dir=ckpt_dir,
        )
        for record in result.records:
            row = _row(record, nominal_epochs[record.index])
            rows[record.index] = row
        _write_rows(rows, sweep_csv)

    ordered = [rows[i] for i in sorted(rows)]
    ok = [r for r in ordered if r["status"] == "ok"]
    best_index = int(min(ok, key=_row_rank_key)["index"]) if ok else None
    best_ckpt = None
    if best_index is not None:
        src = ckpt_dir / f"entry_{best_index}.npz"
        if src.is_file():
            best_ckpt = _checkpoint_dir(config) / f"best_{region.value}.npz"
            shutil.copyfile(src, best_ckpt)
    return GridResult(sweep_csv, ordered, best_index, best_ckpt)


def _row(record: SweepRecord, nominal_epochs: int) -> dict:
    row = {k: str(v) for k, v in sweep_row(record).items()}
    row["grid_epochs"] = str(nominal_epochs)
    return row


def _write_rows(rows: dict, path: Path) -> None:
    columns = [*SWEEP_COLUMNS, "grid_epochs"]
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for index in sorted(rows):
        writer.writerow({c: rows[index].get(c, "") for c in columns})
    atomic_write_text(path, buf.getvalue())

