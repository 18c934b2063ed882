import argparse
import json
import math
import shutil
from dataclasses import replace

import pytest

from dialect_nmt.cli import build_parser, main
from dialect_nmt.config import RunConfig, RunConfigError, parse_config_text
from dialect_nmt.corpus import Region
from dialect_nmt.model import load_checkpoint
from dialect_nmt.pipeline import PipelineError, parse_grid_scale, run_paper_grid, run_pipeline
from dialect_nmt.report import load_report

TINY_CONFIG = """\
# small model so the tests stay fast
d_model = 16
n_heads = 2
n_layers = 1
d_ff = 32
epochs = 2
max_decode_len = 24
beam_width = 2
"""


@pytest.fixture
def corpus_file(tmp_path, toy_corpus_path):
    path = tmp_path / "toy.jsonl"
    shutil.copyfile(toy_corpus_path, path)
    return path


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY_CONFIG, encoding="utf-8")
    return path


def _tiny(corpus, out, **kwargs):
    base = RunConfig.from_mapping(parse_config_text(TINY_CONFIG))
    return replace(base, corpus=str(corpus), out_dir=str(out), **kwargs)


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


# -- config --------------------------------------------------------------------


def test_config_grammar():
    values = parse_config_text('# c\n\nlearning_rate = 0.0001\nout_dir = "x"\nsplit_ratios = [0.8, 0.1, 0.1]\n')
    assert values == {"learning_rate": 1e-4, "out_dir": "x", "split_ratios": [0.8, 0.1, 0.1]}
    config = RunConfig.from_mapping(values)
    assert config.split_ratios == (0.8, 0.1, 0.1)


@pytest.mark.parametrize("text", ["learning_rate 0.1", "epochs = 3\nepochs = 4", "epochs = three", "= 1"])
def test_config_grammar_errors(text):
    with pytest.raises(RunConfigError):
        parse_config_text(text)


def test_config_unknown_key_named():
    with pytest.raises(RunConfigError, match="learnin_rate"):
        RunConfig.from_mapping({"learnin_rate": 0.1})


def test_config_text_round_trip():
    config = RunConfig(seed=3, corpus="c.jsonl")
    assert RunConfig.from_mapping(parse_config_text(config.to_text())) == config


# -- parser --------------------------------------------------------------------


def _all_parsers(parser):
    yield parser
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for child in action.choices.values():
                yield from _all_parsers(child)


def test_every_flag_has_help():
    for parser in _all_parsers(build_parser()):
        for action in parser._actions:
            if action.option_strings and not isinstance(action, argparse._HelpAction):
                assert action.help, f"{parser.prog} {action.option_strings} lacks help"


@pytest.mark.parametrize("command", ["ingest", "train", "sweep", "translate", "evaluate", "report", "report render"])
def test_subcommand_help(command, capsys):
    with pytest.raises(SystemExit) as info:
        main([*command.split(), "--help"])
    assert info.value.code == 0
    assert "usage" in capsys.readouterr().out


def test_usage_errors_exit_one(capsys):
    code, _, err = _run(capsys, "train")
    assert code == 1 and json.loads(err)["exit_code"] == 1
    code, _, _ = _run(capsys, "frobnicate")
    assert code == 1
    code, _, _ = _run(capsys, "train", "--region", "Atlantis")
    assert code == 1


def test_unknown_config_key_exits_one(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("learnin_rate = 0.1\n", encoding="utf-8")
    code, _, err = _run(capsys, "report", "published", "--config", bad)
    assert code == 1
    assert "learnin_rate" in json.loads(err)["message"]


def test_missing_config_file_exits_one(tmp_path, capsys):
    code, _, _ = _run(capsys, "report", "published", "--config", tmp_path / "absent.cfg")
    assert code == 1


# -- commands ------------------------------------------------------------------


def test_evaluate_command(tmp_path, capsys):
    refs, hyps = tmp_path / "refs.txt", tmp_path / "hyps.txt"
    refs.write_text("abcd\nab\n", encoding="utf-8")
    hyps.write_text("abed\n\n", encoding="utf-8")
    code, out, _ = _run(capsys, "evaluate", "--references", refs, "--hypotheses", hyps)
    assert code == 0 and json.loads(out)["cer"] == pytest.approx(3 / 6)
    code, out, _ = _run(capsys, "evaluate", "--references", refs, "--hypotheses", hyps, "--macro")
    assert json.loads(out)["cer"] == pytest.approx(0.625)
    hyps.write_text("abed\n", encoding="utf-8")
    code, _, err = _run(capsys, "evaluate", "--references", refs, "--hypotheses", hyps)
    assert code == 2 and json.loads(err)["error"] == "MetricError"


def test_evaluate_no_normalize(tmp_path, capsys):
    refs, hyps = tmp_path / "refs.txt", tmp_path / "hyps.txt"
    refs.write_text("ab?\n", encoding="utf-8")
    hyps.write_text("ab\n", encoding="utf-8")
    _, out, _ = _run(capsys, "evaluate", "--references", refs, "--hypotheses", hyps)
    assert json.loads(out)["cer"] == 0.0
    _, out, _ = _run(capsys, "evaluate", "--references", refs, "--hypotheses", hyps, "--no-normalize")
    assert json.loads(out)["cer"] == pytest.approx(1 / 3)


def test_ingest_command(tmp_path, corpus_file, capsys):
    out_path = tmp_path / "clean.jsonl"
    code, out, _ = _run(capsys, "ingest", "--input", corpus_file, "--region", "chittagong", "--out", out_path)
    assert code == 0 and json.loads(out)["kept"] == 32
    assert len(out_path.read_text(encoding="utf-8").splitlines()) == 32


def test_report_published_command(capsys):
    code, out, _ = _run(capsys, "report", "published", "--metric", "wer", "--format", "csv")
    assert code == 0
    assert "WER,mBART50" in out and "0.3350*" in out


def test_missing_corpus_exits_two(tmp_path, config_file, capsys):
    code, _, err = _run(
        capsys, "train", "--config", config_file, "--corpus", tmp_path / "nope.jsonl", "--region", "Sylhet",
        "--out", tmp_path / "run",
    )
    assert code == 2 and "error" in json.loads(err)


def test_divergence_exits_three(tmp_path, config_file, corpus_file, capsys):
    code, _, err = _run(
        capsys, "train", "--config", config_file, "--corpus", corpus_file, "--region", "Chittagong",
        "--learning-rate", "1e20", "--out", tmp_path / "run",
    )
    record = json.loads(err)
    assert code == 3 and record["error"] == "DivergenceError" and record["epoch"] >= 1


def test_train_translate_render(tmp_path, config_file, corpus_file, capsys):
    out_dir = tmp_path / "run"
    code, out, _ = _run(
        capsys, "train", "--config", config_file, "--corpus", corpus_file, "--region", "Chittagong",
        "--out", out_dir, "--seed", "1",
    )
    assert code == 0
    result = json.loads(out)
    assert math.isfinite(result["wer"]) and math.isfinite(result["cer"])
    ckpt = load_checkpoint(result["checkpoint"])
    assert ckpt.extra["region"] == "Chittagong" and ckpt.epoch == 2

    sources = tmp_path / "src.txt"
    sources.write_text("আমি ভাত খাব\n\nতোমার নাম কি?\n", encoding="utf-8")
    code, out, _ = _run(
        capsys, "translate", "--model", result["checkpoint"], "--region", "Chittagong", "--input", sources,
        "--beam", "1",
    )
    records = [json.loads(line) for line in out.splitlines()]
    assert code == 0 and len(records) == 2
    assert set(records[0]["candidates"]) == {"transformer_Chittagong_e2"}

    code, _, err = _run(capsys, "translate", "--model", result["checkpoint"], "--region", "Sylhet", "--input", sources)
    assert code == 2 and "Chittagong" in json.loads(err)["message"]

    code, out, _ = _run(capsys, "report", "render", "--out", out_dir, "--format", "md", "--metric", "cer")
    assert code == 0 and "Chittagong 2" in out and "transformer" in out


# -- pipeline ------------------------------------------------------------------


def test_pipeline_is_reproducible(tmp_path, corpus_file, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")
    a = run_pipeline(_tiny(corpus_file, tmp_path / "a"), Region.CHITTAGONG)
    b = run_pipeline(_tiny(corpus_file, tmp_path / "b"), Region.CHITTAGONG)
    assert a.loss_csv.read_bytes() == b.loss_csv.read_bytes()
    assert a.report_path.read_bytes() == b.report_path.read_bytes()
    assert a.checkpoint.read_bytes() == b.checkpoint.read_bytes()
    assert a.predictions.read_bytes() == b.predictions.read_bytes()


def test_pipeline_report_entry(tmp_path, corpus_file):
    result = run_pipeline(_tiny(corpus_file, tmp_path), Region.CHITTAGONG)
    report = load_report(result.report_path)
    assert len(report) == 1
    entry = report.get("transformer", Region.CHITTAGONG, 2)
    assert (entry.wer, entry.cer) == (result.wer, result.cer)
    assert math.isfinite(entry.wer) and entry.cer >= 0
    assert set(report.metadata) == {"dataset", "timestamp", "config_digest"}
    # a rerun replaces its own cell and keeps others
    run_pipeline(_tiny(corpus_file, tmp_path, model_tag="other"), Region.CHITTAGONG)
    run_pipeline(_tiny(corpus_file, tmp_path), Region.CHITTAGONG)
    assert len(load_report(result.report_path)) == 2


def test_pipeline_empty_test_split(tmp_path, corpus_file):
    config = _tiny(corpus_file, tmp_path, split_ratios=(1.0, 0.0, 0.0))
    with pytest.raises(PipelineError) as info:
        run_pipeline(config, Region.CHITTAGONG)
    assert info.value.stage == "split"


def test_parse_grid_scale():
    assert parse_grid_scale(["epochs=2"]) == {"epochs": 2}
    assert parse_grid_scale(None) == {}
    for bad in (["lr=2"], ["epochs=x"], ["epochs=0"]):
        with pytest.raises(ValueError):
            parse_grid_scale(bad)


def test_scaled_grid_and_resume(tmp_path, corpus_file):
    config = _tiny(corpus_file, tmp_path, jobs=4)
    result = run_paper_grid(config, Region.CHITTAGONG, {"epochs": 1})
    assert len(result.rows) == 12
    assert {r["epochs"] for r in result.rows} == {"1"}
    assert {r["grid_epochs"] for r in result.rows} == {"30", "50"}
    assert result.best_checkpoint is not None and result.best_checkpoint.is_file()

    # drop two rows; only those are re-run and the rest stay byte-for-byte
    lines = result.sweep_csv.read_text(encoding="utf-8").splitlines(keepends=True)
    result.sweep_csv.write_text("".join(lines[:-2]), encoding="utf-8")
    entry0 = tmp_path / "checkpoints" / "sweep_Chittagong" / "entry_0.npz"
    stamp = entry0.stat().st_mtime_ns
    again = run_paper_grid(config, Region.CHITTAGONG, {"epochs": 1})
    assert again.sweep_csv.read_text(encoding="utf-8") == "".join(lines)
    assert entry0.stat().st_mtime_ns == stamp


def test_sweep_command(tmp_path, config_file, corpus_file, capsys):
    code, out, _ = _run(
        capsys, "sweep", "--config", config_file, "--corpus", corpus_file, "--region", "Chittagong",
        "--out", tmp_path, "--grid-scale", "epochs=1", "--jobs", "4",
    )
    record = json.loads(out)
    assert code == 0 and record["rows"] == 12 and record["failed"] == 0
    code, _, _ = _run(
        capsys, "sweep", "--config", config_file, "--corpus", corpus_file, "--region", "Chittagong",
        "--out", tmp_path, "--grid-scale", "lr=1",
    )
    assert code == 1
