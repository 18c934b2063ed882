"""Command-line entry point.

Settings resolve in three layers: built-in defaults, then the ``--config``
file (grammar in :mod:`dialect_nmt.config`), then command-line flags.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric divergence. Failures print one JSON error record to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import RunConfig, RunConfigError
from .corpus import CorpusError, Region, load_corpus, normalize_corpus, save_corpus
from .decoder import DecodeError, translate_all
from .metrics import MetricError, corpus_details
from .model import CheckpointError, ConfigError, DivergenceError, ModelInputError, load_checkpoint
from .pipeline import PipelineError, parse_grid_scale, run_paper_grid, run_pipeline
from .report import METRICS, ReportError, load_report, published_report, render_table
from .tokenizer import Vocabulary, VocabularyError
from .trainer import TrainingError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3

REGION_NAMES = [r.value for r in Region]
REGION_METAVAR = "{" + ",".join(REGION_NAMES) + "}"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; route it to our code 1
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _region(text: str) -> Region:
    try:
        return Region.parse(text)
    except CorpusError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _global_flags() -> argparse.ArgumentParser:
    # SUPPRESS keeps a flag given before the subcommand from being reset after it
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", default=argparse.SUPPRESS, help="key = value settings file; flags override it")
    parent.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="root seed for every random stream")
    parent.add_argument("--jobs", type=int, default=argparse.SUPPRESS, help="parallel sweep workers")
    return parent


def _out_flag() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--out", dest="out_dir", default=argparse.SUPPRESS, help="output directory for run artifacts")
    return parent


def _training_flags() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--corpus", default=argparse.SUPPRESS, help="parallel corpus (JSON Lines)")
    parent.add_argument("--region", required=True, type=_region, metavar=REGION_METAVAR, help="dialect region to train")
    parent.add_argument("--model-tag", dest="model_tag", default=argparse.SUPPRESS, help="label used in reports")
    parent.add_argument(
        "--learning-rate", dest="learning_rate", type=float, default=argparse.SUPPRESS, help="Adam step size"
    )
    parent.add_argument("--batch-size", dest="batch_size", type=int, default=argparse.SUPPRESS, help="pairs per batch")
    parent.add_argument("--epochs", type=int, default=argparse.SUPPRESS, help="training epochs")
    return parent


def build_parser() -> argparse.ArgumentParser:
    common, out = _global_flags(), _out_flag()
    parser = _Parser(
        prog="dialect-nmt",
        description="Standard Bangla to regional dialect translation toolkit.",
        parents=[common, out],
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("ingest", parents=[common], help="normalize a raw corpus file")
    p.add_argument("--input", required=True, help="raw corpus (JSON Lines)")
    p.add_argument("--region", type=_region, metavar=REGION_METAVAR, help="keep only this region")
    p.add_argument("--out", dest="ingest_out", required=True, help="normalized corpus to write")
    p.set_defaults(handler=cmd_ingest)

    p = sub.add_parser("train", parents=[common, out, _training_flags()], help="train, decode and score one model")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("sweep", parents=[common, out, _training_flags()], help="run the 12-entry hyperparameter grid")
    p.add_argument(
        "--grid-scale",
        dest="grid_scale",
        action="append",
        metavar="epochs=N",
        help="override every grid entry's epoch budget (repeatable)",
    )
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("translate", parents=[common, out], help="translate sentences with one or more checkpoints")
    p.add_argument("--model", nargs="+", required=True, metavar="CHECKPOINT", help="checkpoint files; tag = file stem")
    p.add_argument("--region", required=True, type=_region, metavar=REGION_METAVAR, help="target dialect region")
    p.add_argument("--input", required=True, help="one source sentence per line, or - for stdin")
    p.add_argument("--beam", type=int, default=argparse.SUPPRESS, help="beam width; 1 means greedy")
    p.set_defaults(handler=cmd_translate)

    p = sub.add_parser("evaluate", parents=[common], help="score hypotheses against references")
    p.add_argument("--references", required=True, help="reference sentences, one per line")
    p.add_argument("--hypotheses", required=True, help="hypothesis sentences, aligned by line")
    p.add_argument("--macro", action="store_true", default=None, help="average per-sentence rates instead of pooling")
    p.add_argument(
        "--no-normalize", dest="no_normalize", action="store_true", help="score raw text without normalization"
    )
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("report", parents=[common, out], help="render evaluation tables")
    report_sub = p.add_subparsers(dest="report_command", metavar="ACTION", parser_class=_Parser)
    report_sub.required = True
    for name, help_text, handler in (
        ("render", "render a stored report", cmd_report_render),
        ("published", "render the published reference table", cmd_report_published),
    ):
        rp = report_sub.add_parser(name, parents=[common, out], help=help_text)
        rp.add_argument("--metric", choices=METRICS, default="wer", help="score column to render")
        rp.add_argument("--format", dest="fmt", choices=("text", "csv", "md"), default="text", help="output format")
        if name == "render":
            rp.add_argument("--report", help="report file (default: <out>/report.jsonl)")
        rp.set_defaults(handler=handler)
    return parser


# -- configuration -----------------------------------------------------------

_OVERRIDES = ("seed", "jobs", "out_dir", "corpus", "model_tag", "learning_rate", "batch_size", "epochs")


def resolve_config(args: argparse.Namespace) -> RunConfig:
    config = RunConfig()
    if getattr(args, "config", None):
        try:
            config = RunConfig.load(args.config)
        except OSError as exc:
            raise RunConfigError(f"cannot read config file: {exc}") from None
    overrides = {k: getattr(args, k) for k in _OVERRIDES if hasattr(args, k)}
    if getattr(args, "beam", None) is not None:
        overrides["beam_width"] = args.beam
    if getattr(args, "macro", None):
        overrides["macro"] = True
    if getattr(args, "no_normalize", False):
        overrides["metric_normalize"] = False
    return RunConfig.from_mapping(overrides, config)


# -- commands ----------------------------------------------------------------


def _emit(record: dict) -> None:
    print(json.dumps(record, ensure_ascii=False, sort_keys=True))


def cmd_ingest(args, config: RunConfig) -> int:
    raw = load_corpus(args.input, args.region)
    kept, dropped = normalize_corpus(raw, config.normalization())
    save_corpus(kept, args.ingest_out, normalized=True)
    _emit({"input": str(args.input), "out": str(args.ingest_out), "kept": len(kept), "dropped": dropped})
    return EXIT_OK


def cmd_train(args, config: RunConfig) -> int:
    result = run_pipeline(config, args.region)
    _emit(
        {
            "run_id": result.run_id,
            "wer": result.wer,
            "cer": result.cer,
            "report": str(result.report_path),
            "loss_csv": str(result.loss_csv),
            "checkpoint": str(result.checkpoint),
        }
    )
    return EXIT_OK


def cmd_sweep(args, config: RunConfig) -> int:
    try:
        scale = parse_grid_scale(args.grid_scale)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    result = run_paper_grid(config, args.region, scale)
    failed = sum(r["status"] != "ok" for r in result.rows)
    _emit(
        {
            "sweep_csv": str(result.sweep_csv),
            "rows": len(result.rows),
            "failed": failed,
            "best_index": result.best_index,
            "best_checkpoint": None if result.best_checkpoint is None else str(result.best_checkpoint),
        }
    )
    return EXIT_OK


def _read_lines(source: str) -> list[str]:
    text = sys.stdin.read() if source == "-" else Path(source).read_text(encoding="utf-8")
    return text.splitlines()


def _load_models(paths: list[str], region: Region):
    models, vocabs = {}, {}
    for path in paths:
        ckpt = load_checkpoint(path)
        tag = Path(path).stem
        if tag in models:
            raise UsageError(f"two checkpoints share the tag {tag!r}; rename one")
        trained_for = ckpt.extra.get("region")
        if trained_for is not None and Region.parse(trained_for) != region:
            raise CheckpointError(f"{path}: trained for {trained_for}, not {region.value}")
        if not ckpt.vocab_tokens:
            raise CheckpointError(f"{path}: checkpoint carries no vocabulary")
        models[tag] = (ckpt.params, ckpt.config)
        vocabs[tag] = Vocabulary(ckpt.vocab_tokens)
    return models, vocabs


def cmd_translate(args, config: RunConfig) -> int:
    models, vocabs = _load_models(args.model, args.region)
    settings, norm = config.decode_settings(), config.normalization()
    for line in _read_lines(args.input):
        if not line.strip():
            continue
        _emit(translate_all(models, line, vocabs, settings, norm).to_record())
    return EXIT_OK


def cmd_evaluate(args, config: RunConfig) -> int:
    refs, hyps = _read_lines(args.references), _read_lines(args.hypotheses)
    if len(refs) != len(hyps):
        raise MetricError(f"{len(refs)} references but {len(hyps)} hypotheses")
    details = corpus_details(list(zip(refs, hyps)), normalize=config.metric_normalize, macro=config.macro)
    _emit(details.as_dict())
    return EXIT_OK


def cmd_report_render(args, config: RunConfig) -> int:
    path = args.report or Path(config.out_dir) / "report.jsonl"
    sys.stdout.write(render_table(load_report(path), args.metric, args.fmt))
    return EXIT_OK


def cmd_report_published(args, config: RunConfig) -> int:
    sys.stdout.write(render_table(published_report(), args.metric, args.fmt))
    return EXIT_OK


# -- entry point -------------------------------------------------------------

_DATA_ERRORS = (
    CorpusError,
    VocabularyError,
    MetricError,
    CheckpointError,
    ReportError,
    DecodeError,
    PipelineError,
    TrainingError,
    ModelInputError,
    OSError,
)


def _fail(code: int, exc: BaseException) -> int:
    record = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    if isinstance(exc, PipelineError):
        record["stage"] = exc.stage
    if isinstance(exc, DivergenceError) and exc.epoch is not None:
        record["epoch"] = exc.epoch
    print(json.dumps(record, ensure_ascii=False, sort_keys=True), file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        config = resolve_config(args)
        return args.handler(args, config)
    except UsageError as exc:
        return _fail(EXIT_USAGE, exc)
    except (RunConfigError, ConfigError) as exc:
        return _fail(EXIT_USAGE, exc)
    except DivergenceError as exc:
        return _fail(EXIT_DIVERGED, exc)
    except _DATA_ERRORS as exc:
        return _fail(EXIT_DATA, exc)


if __name__ == "__main__":
    sys.exit(main())
