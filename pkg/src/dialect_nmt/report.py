"""Score tables by model, region and epoch budget, plus loss-curve CSV export."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field, replace
from decimal import ROUND_HALF_EVEN, Decimal
from pathlib import Path
from typing import Iterable

from ._util import atomic_write_text
from .corpus import Region
from .metrics import ScorePair
from .trainer import EpochRecord, LossHistory

MISSING = "—"
METRICS = ("wer", "cer")
# column order of the published table
REGION_ORDER = (Region.BARISHAL, Region.NOAKHALI, Region.MYMENSINGH, Region.SYLHET, Region.CHITTAGONG)
MODEL_ORDER = ("mT5", "BanglaT5", "mBART50")


class ReportError(ValueError):
    pass


@dataclass(frozen=True)
class ReportEntry:
    model_tag: str
    region: Region
    epoch_budget: int
    wer: float
    cer: float

    @property
    def key(self) -> tuple[str, Region, int]:
        return (self.model_tag, self.region, self.epoch_budget)

    def to_record(self) -> dict:
        return {
            "model_tag": self.model_tag,
            "region": self.region.value,
            "epoch_budget": self.epoch_budget,
            "wer": self.wer,
            "cer": self.cer,
        }

    @classmethod
    def from_record(cls, record: dict) -> "ReportEntry":
        return cls(
            str(record["model_tag"]),
            Region.parse(record["region"]),
            int(record["epoch_budget"]),
            float(record["wer"]),
            float(record["cer"]),
        )


@dataclass(frozen=True)
class EvalReport:
    entries: tuple[ReportEntry, ...] = ()
    metadata: dict = field(default_factory=dict, compare=False)

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, model_tag: str, region: Region | str, epoch_budget: int) -> ReportEntry | None:
        key = (model_tag, Region.parse(region), epoch_budget)
        return next((e for e in self.entries if e.key == key), None)


def add_entry(
    report: EvalReport, model_tag: str, region: Region | str, epoch_budget: int, scores: ScorePair
) -> EvalReport:
    """Return a new report with one more entry; duplicate triples are rejected."""
    entry = ReportEntry(model_tag, Region.parse(region), int(epoch_budget), float(scores.wer), float(scores.cer))
    for value in (entry.wer, entry.cer):
        if not (math.isfinite(value) and value >= 0):
            raise ReportError(f"scores must be finite and non-negative, got {scores!r}")
    if any(e.key == entry.key for e in report.entries):
        raise ReportError(f"duplicate entry for {model_tag}/{entry.region}/{epoch_budget}")
    return replace(report, entries=report.entries + (entry,))


def remove_entry(report: EvalReport, model_tag: str, region: Region | str, epoch_budget: int) -> EvalReport:
    key = (model_tag, Region.parse(region), epoch_budget)
    return replace(report, entries=tuple(e for e in report.entries if e.key != key))


def save_report(report: EvalReport, path: str | Path) -> Path:
    """Entries as JSON Lines in canonical order; metadata goes to ``<path>.meta.json``."""
    path = Path(path)
    ordered = sorted(report.entries, key=_entry_sort_key)
    atomic_write_text(path, "".join(json.dumps(e.to_record(), ensure_ascii=False) + "\n" for e in ordered))
    if report.metadata:
        atomic_write_text(path.with_name(path.name + ".meta.json"), json.dumps(report.metadata, indent=2, sort_keys=True) + "\n")
    return path


def load_report(path: str | Path) -> EvalReport:
    path = Path(path)
    if not path.is_file():
        raise ReportError(f"report not found: {path}")
    report = EvalReport()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                e = ReportEntry.from_record(json.loads(line))
            except (ValueError, KeyError, TypeError) as exc:
                raise ReportError(f"{path}:{lineno}: malformed entry ({exc})") from None
            report = add_entry(report, e.model_tag, e.region, e.epoch_budget, ScorePair(e.wer, e.cer))
    meta_path = path.with_name(path.name + ".meta.json")
    if meta_path.is_file():
        report = replace(report, metadata=json.loads(meta_path.read_text(encoding="utf-8")))
    return report


def config_digest(payload) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode("utf-8")).hexdigest()[:16]


# -- rendering ---------------------------------------------------------------


def format_score(value: float) -> str:
    """Round half-even to four decimals, working from the shortest repr."""
    return str(Decimal(repr(float(value))).quantize(Decimal("0.0001"), rounding=ROUND_HALF_EVEN))


def _model_sort_key(tag: str):
    return (MODEL_ORDER.index(tag), "") if tag in MODEL_ORDER else (len(MODEL_ORDER), tag)


def _entry_sort_key(e: ReportEntry):
    return (_model_sort_key(e.model_tag), REGION_ORDER.index(e.region), e.epoch_budget)


@dataclass(frozen=True)
class TableGrid:
    """Cells of one metric: rows are models, columns (region, epoch budget)."""

    metric: str
    models: tuple[str, ...]
    columns: tuple[tuple[Region, int], ...]
    values: dict  # (model, region, budget) -> float
    best: frozenset  # keys holding their column's minimum


def table_grid(report: EvalReport, metric: str) -> TableGrid:
    metric = metric.lower()
    if metric not in METRICS:
        raise ReportError(f"metric must be one of {METRICS}, got {metric!r}")
    if not report.entries:
        raise ReportError("cannot render an empty report")
    models = tuple(sorted({e.model_tag for e in report.entries}, key=_model_sort_key))
    regions = [r for r in REGION_ORDER if any(e.region == r for e in report.entries)]
    budgets = sorted({e.epoch_budget for e in report.entries})
    columns = tuple((r, b) for r in regions for b in budgets)
    values = {e.key: getattr(e, metric) for e in report.entries}
    best = set()
    for region, budget in columns:
        cells = {k: v for k, v in values.items() if k[1] == region and k[2] == budget}
        if cells:
            low = min(cells.values())
            best.update(k for k, v in cells.items() if v == low)
    return TableGrid(metric, models, columns, values, frozenset(best))


def _cell(grid: TableGrid, model: str, column, style: str) -> str:
    key = (model, column[0], column[1])
    if key not in grid.values:
        return MISSING
    text = format_score(grid.values[key])
    if key in grid.best:
        return f"**{text}**" if style == "md" else f"{text}*"
    return text


def render_table(report: EvalReport, metric: str, fmt: str = "text") -> str:
    """Render one metric with regions as column groups and epoch budgets as sub-columns.

    Each column's lowest (best) value is marked: ``*`` in text and CSV,
    bold in Markdown. Missing cells show ``—``.
    """
    grid = table_grid(report, metric)
    label = grid.metric.upper()
    header_regions = [r.value for r, _ in grid.columns]
    header_budgets = [str(b) for _, b in grid.columns]
    rows = [[m, *(_cell(grid, m, c, fmt) for c in grid.columns)] for m in grid.models]

    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["metric", "model", *(f"{r}/{b}" for r, b in zip(header_regions, header_budgets))])
        for row in rows:
            writer.writerow([label, *row])
        return buf.getvalue()
    if fmt == "md":
        lines = [
            "| " + " | ".join([label, *(f"{r} {b}" for r, b in zip(header_regions, header_budgets))]) + " |",
            "|" + "---|" * (len(grid.columns) + 1),
        ]
        lines += ["| " + " | ".join(row) + " |" for row in rows]
        return "\n".join(lines) + "\n"
    if fmt != "text":
        raise ReportError(f"unknown format {fmt!r} (expected text, csv or md)")

    table = [[label, *header_regions], ["Epoch", *header_budgets], *rows]
    widths = [max(len(r[i]) for r in table) for i in range(len(table[0]))]
    # collapse repeated region names in the first header row
    first = table[0][:]
    for i in range(len(first) - 1, 1, -1):
        if first[i] == first[i - 1]:
            first[i] = ""
    table[0] = first
    sep = "-+-".join("-" * w for w in widths)
    out = []
    for n, row in enumerate(table):
        out.append(" | ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if n == 1:
            out.append(sep)
    return "\n".join(out) + "\n"


# -- published fixture --------------------------------------------------------

# (model, region) -> ((wer@30, wer@50), (cer@30, cer@50))
_PUBLISHED = {
    ("mT5", Region.BARISHAL): ((0.4569, 0.3958), (0.3156, 0.2288)),
    ("mT5", Region.NOAKHALI): ((0.6974, 0.5804), (0.4123, 0.2949)),
    ("mT5", Region.MYMENSINGH): ((0.4265, 0.3351), (0.3126, 0.2017)),
    ("mT5", Region.SYLHET): ((0.7956, 0.6602), (0.4866, 0.3326)),
    ("mT5", Region.CHITTAGONG): ((0.9264, 0.7557), (0.6812, 0.4218)),
    ("BanglaT5", Region.BARISHAL): ((0.5755, 0.3932), (0.3769, 0.2378)),
    ("BanglaT5", Region.NOAKHALI): ((0.7065, 0.5775), (0.4236, 0.2952)),
    ("BanglaT5", Region.MYMENSINGH): ((0.3678, 0.2380), (0.2659, 0.1216)),
    ("BanglaT5", Region.SYLHET): ((0.6956, 0.6064), (0.3847, 0.3345)),
    ("BanglaT5", Region.CHITTAGONG): ((0.7408, 0.7066), (0.4045, 0.3706)),
    ("mBART50", Region.BARISHAL): ((0.4263, 0.3350), (0.2365, 0.1789)),
    ("mBART50", Region.NOAKHALI): ((0.7569, 0.6665), (0.5894, 0.4014)),
    ("mBART50", Region.MYMENSINGH): ((0.3987, 0.2983), (0.3145, 0.1749)),
    ("mBART50", Region.SYLHET): ((0.8975, 0.7579), (0.6164, 0.4289)),
    ("mBART50", Region.CHITTAGONG): ((0.9874, 0.8264), (0.7523, 0.4896)),
}


def published_report() -> EvalReport:
    """The 60 published WER/CER cells of the three pretrained models."""
    report = EvalReport(metadata={"dataset": "Vashantor", "source": "published results"})
    for (model, region), (wers, cers) in _PUBLISHED.items():
        for budget, wer, cer in zip((30, 50), wers, cers):
            report = add_entry(report, model, region, budget, ScorePair(wer=wer, cer=cer))
    return report


# -- loss curves -------------------------------------------------------------

LOSS_HEADER = ("epoch", "train_loss", "val_loss")


def loss_csv_path(out_dir: str | Path, run_id: str) -> Path:
    return Path(out_dir) / f"loss_{run_id}.csv"


def export_loss_csv(history: LossHistory, out_dir: str | Path, run_id: str) -> Path:
    """Write ``loss_<run_id>.csv``; floats use repr so re-reading is exact."""
    if not history.records:
        raise ReportError("cannot export an empty loss history")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LOSS_HEADER)
    for r in history.records:
        writer.writerow([r.epoch, repr(float(r.train_loss)), "" if r.val_loss is None else repr(float(r.val_loss))])
    try:
        return atomic_write_text(loss_csv_path(out_dir, run_id), buf.getvalue())
    except OSError as exc:
        raise ReportError(f"cannot write loss curve to {out_dir}: {exc}") from exc


def read_loss_csv(path: str | Path) -> LossHistory:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != LOSS_HEADER:
            raise ReportError(f"{path}: unexpected header {header!r}")
        records = [
            EpochRecord(int(epoch), float(train), float(val) if val else None) for epoch, train, val in reader
        ]
    return LossHistory(records)


def iter_entries(report: EvalReport) -> Iterable[ReportEntry]:
    return iter(sorted(report.entries, key=_entry_sort_key))
