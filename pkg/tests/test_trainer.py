import math
import random
from dataclasses import replace

import numpy as np
import pytest

from dialect_nmt.corpus import Region, SplitCorpus, split_corpus
from dialect_nmt.decoder import greedy_decode
from dialect_nmt.model import DivergenceError, ModelConfig, load_checkpoint
from dialect_nmt.report import export_loss_csv, read_loss_csv
from dialect_nmt.tokenizer import build_vocab, encode_text
from dialect_nmt.trainer import (
    Hyperparams,
    LossHistory,
    SweepRecord,
    TrainingError,
    encode_pairs,
    evaluate_epoch,
    export_sweep_csv,
    make_batch,
    paper_grid,
    rank_records,
    read_sweep_csv,
    sweep,
    train,
)

TINY = ModelConfig(d_model=16, n_heads=2, n_layers=1, d_ff=32, max_seq_len=64, dropout_rate=0.1)


def _hp(**kwargs):
    return Hyperparams(**{"model": TINY, "epochs": 3, **kwargs})


@pytest.fixture(scope="module")
def split(toy_pairs):
    return split_corpus(toy_pairs, (0.75, 0.125, 0.125), seed=0)


def test_history_has_one_record_per_epoch(split):
    _, history = train(split, Region.CHITTAGONG, _hp(epochs=30, batch_size=16))
    assert [r.epoch for r in history.records] == list(range(1, 31))
    for r in history.records:
        assert math.isfinite(r.train_loss) and r.train_loss >= 0
        assert math.isfinite(r.val_loss) and r.val_loss >= 0


def test_training_is_deterministic(split):
    _, a = train(split, Region.CHITTAGONG, _hp())
    _, b = train(split, Region.CHITTAGONG, _hp())
    assert a == b
    _, c = train(split, Region.CHITTAGONG, _hp(seed=1))
    assert c != a


def test_resume_is_bit_exact(split, tmp_path):
    full_params, full = train(split, Region.CHITTAGONG, _hp(epochs=5))
    ckpt = tmp_path / "run.npz"
    train(split, Region.CHITTAGONG, _hp(epochs=2), checkpoint_path=ckpt)
    assert load_checkpoint(ckpt).epoch == 2
    resumed_params, resumed = train(split, Region.CHITTAGONG, _hp(epochs=5), resume_from=ckpt)
    assert resumed == full
    for name in full_params:
        assert np.array_equal(resumed_params[name], full_params[name])


def test_resume_rejects_other_seed(split, tmp_path):
    ckpt = tmp_path / "run.npz"
    train(split, Region.CHITTAGONG, _hp(epochs=1), checkpoint_path=ckpt)
    with pytest.raises(TrainingError):
        train(split, Region.CHITTAGONG, _hp(epochs=2, seed=9), resume_from=ckpt)


def test_empty_training_split(split):
    with pytest.raises(TrainingError):
        train(split, Region.SYLHET, _hp())


def test_divergence_reports_epoch(split):
    with pytest.raises(DivergenceError) as info:
        train(split, Region.CHITTAGONG, _hp(learning_rate=1e20, epochs=5))
    assert info.value.epoch is not None and 1 <= info.value.epoch <= 5


def test_float64_precision(split):
    params, history = train(split, Region.CHITTAGONG, _hp(epochs=1, precision="float64"))
    assert params["embedding"].dtype == np.float64 and len(history) == 1


# -- evaluate_epoch ------------------------------------------------------------


def test_evaluate_epoch_is_pure_and_rejects_empty(split):
    vocab = build_vocab(split.train)
    config = replace(TINY, vocab_size=vocab.size)
    params, _ = train(split, Region.CHITTAGONG, _hp(epochs=1))
    pairs = encode_pairs(vocab, split.validation, config.max_seq_len)
    assert evaluate_epoch(params, config, pairs, 8) == evaluate_epoch(params, config, pairs, 8)
    with pytest.raises(TrainingError):
        evaluate_epoch(params, config, [], 8)


def test_evaluate_epoch_after_overfit(overfit):
    pairs = encode_pairs(overfit.vocab, overfit.pairs, overfit.config.max_seq_len)
    assert evaluate_epoch(overfit.params, overfit.config, pairs, 8) < 0.1


def test_make_batch_shifts_targets():
    src, tgt_in, tgt_out = make_batch([([1, 4, 2], [1, 5, 6, 2]), ([1, 2], [1, 2])])
    assert src.tolist() == [[1, 4, 2], [1, 2, 0]]
    assert tgt_in.tolist() == [[1, 5, 6], [1, 2, 0]]
    assert tgt_out.tolist() == [[5, 6, 2], [2, 0, 0]]


def test_overlong_pairs_skipped(toy_pairs, caplog):
    vocab = build_vocab(toy_pairs)
    pairs = encode_pairs(vocab, toy_pairs, max_seq_len=12)
    assert 0 < len(pairs) < len(toy_pairs)
    assert "skipped" in caplog.text


def test_trainer_overfit_example(overfit, toy_pairs):
    # the documented 200-epoch memorization run
    corpus = SplitCorpus(train=toy_pairs, validation=(), test=())
    _, history = train(corpus, Region.CHITTAGONG, Hyperparams(epochs=200), vocab=overfit.vocab)
    assert history.records[-1].train_loss < 0.1
    assert history.records[-1].train_loss < history.records[0].train_loss


def test_overfit_greedy_memorizes(overfit):
    hits = 0
    for ex in overfit.pairs:
        out = greedy_decode(overfit.params, overfit.config, encode_text(overfit.vocab, ex.standard))
        hits += out == encode_text(overfit.vocab, ex.dialect)
    assert hits >= 30


# -- grid and sweep ------------------------------------------------------------


def test_paper_grid():
    grid = paper_grid()
    assert len(grid) == 12
    assert {(hp.learning_rate, hp.batch_size, hp.epochs) for hp in grid} == {
        (lr, bs, ep) for lr in (1e-3, 1e-4, 1e-5) for bs in (8, 16) for ep in (30, 50)
    }


@pytest.mark.parametrize("kwargs", [dict(learning_rate=1e-2), dict(batch_size=4), dict(epochs=100)])
def test_paper_ranges_enforced(kwargs):
    with pytest.raises(TrainingError):
        Hyperparams(**kwargs).check_paper_ranges()
    Hyperparams(**kwargs)  # allowed outside preset mode


def test_single_entry_sweep(split):
    result = sweep(split, Region.CHITTAGONG, [_hp(epochs=1)])
    assert result.best_by_cer is result.records[0]
    record = result.records[0]
    assert not record.failed and record.val_cer is not None and len(record.history) == 1


def test_sweep_survives_divergence(split, tmp_path):
    grid = [_hp(epochs=2, learning_rate=1e20), _hp(epochs=2)]
    result = sweep(split, Region.CHITTAGONG, grid, checkpoint_dir=tmp_path)
    assert [r.failed for r in result.records] == [True, False]
    assert result.best_by_cer is result.records[1]
    assert "epoch" in result.records[0].error
    assert (tmp_path / "entry_1.npz").is_file()


def test_parallel_sweep_matches_serial(split):
    grid = [_hp(epochs=1, learning_rate=lr) for lr in (1e-3, 1e-4)]
    serial = sweep(split, Region.CHITTAGONG, grid)
    parallel = sweep(split, Region.CHITTAGONG, grid, jobs=2)
    assert [r.val_cer for r in serial.records] == [r.val_cer for r in parallel.records]
    assert [r.history for r in serial.records] == [r.history for r in parallel.records]


def _record(i, cer, wer, lr=1e-3, bs=8, failed=False):
    return SweepRecord(i, Hyperparams(learning_rate=lr, batch_size=bs), 1.0, cer, wer, failed)


def test_ranking_tie_breaks():
    records = [
        _record(0, 0.2, 0.5),
        _record(1, 0.1, 0.6, lr=1e-3),
        _record(2, 0.1, 0.6, lr=1e-4, bs=16),
        _record(3, 0.1, 0.6, lr=1e-4, bs=8),
        _record(4, 0.0, 0.0, failed=True),
    ]
    assert rank_records(records).index == 3
    assert rank_records([records[4]]) is None


def test_ranking_is_order_independent():
    rng = random.Random(3)
    records = [_record(i, rng.choice([0.1, 0.2]), rng.choice([0.3, 0.4]), rng.choice([1e-3, 1e-4]),
                       rng.choice([8, 16])) for i in range(12)]
    best = rank_records(records)
    for _ in range(20):
        rng.shuffle(records)
        assert rank_records(records) is best


def test_sweep_csv_round_trip(split, tmp_path):
    result = sweep(split, Region.CHITTAGONG, [_hp(epochs=1), _hp(epochs=1, learning_rate=1e20)])
    path = export_sweep_csv(result.records, tmp_path / "sweep.csv")
    rows = read_sweep_csv(path)
    assert [r["status"] for r in rows] == ["ok", "failed"]
    assert float(rows[0]["val_cer"]) == result.records[0].val_cer


def test_loss_history_round_trip(tmp_path):
    history = LossHistory()
    history.append(1.5, 2.0)
    history.append(0.1 + 0.2, None)
    path = export_loss_csv(history, tmp_path, "run")
    assert read_loss_csv(path) == history
    assert LossHistory.from_list(history.to_list()) == history
