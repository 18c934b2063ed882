import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from dialect_nmt.corpus import ParallelExample, Region
from dialect_nmt.tokenizer import (
    BOS,
    EOS,
    PAD,
    UNK,
    Vocabulary,
    VocabularyError,
    build_vocab,
    decode_ids,
    encode_text,
)

AB = Vocabulary(("a", "b"))


def _ex(standard, dialect):
    return ParallelExample(Region.SYLHET, standard, dialect)


def test_special_ids():
    assert (PAD, BOS, EOS, UNK) == (0, 1, 2, 3)


def test_build_vocab_example():
    vocab = build_vocab([_ex("ab", "bc")])
    assert vocab.token_to_id == {"a": 4, "b": 5, "c": 6}
    assert vocab.size == 7


def test_build_vocab_empty_corpus():
    with pytest.raises(VocabularyError):
        build_vocab([])


@given(st.lists(st.tuples(st.text(min_size=1, max_size=8), st.text(min_size=1, max_size=8)), min_size=1, max_size=8))
def test_build_vocab_ignores_example_order(rows):
    examples = [_ex(s, d) for s, d in rows]
    shuffled = examples[:]
    random.Random(0).shuffle(shuffled)
    assert build_vocab(shuffled) == build_vocab(examples)


@given(st.lists(st.text(min_size=1, max_size=10), min_size=1, max_size=6))
def test_vocabulary_is_a_bijection(texts):
    vocab = build_vocab([_ex(t, t) for t in texts])
    ids = sorted(vocab.token_to_id.values())
    assert ids == list(range(4, vocab.size))
    for tok, idx in vocab.token_to_id.items():
        assert vocab.id_to_token(idx) == tok
    assert [ord(t) for t in vocab.tokens] == sorted(ord(t) for t in vocab.tokens)


def test_encode_examples():
    assert encode_text(AB, "ab") == [1, 4, 5, 2]
    assert encode_text(AB, "") == [1, 2]
    assert encode_text(Vocabulary(("a",)), "az") == [1, 4, 3, 2]


def test_decode_examples():
    assert decode_ids(AB, [1, 4, 5, 2]) == "ab"
    assert decode_ids(AB, [1, 2]) == ""
    assert decode_ids(AB, [1, 4, 3, 2]) == "a\ufffd"
    assert decode_ids(AB, [1, 4, 2, 0, 0]) == "a"


def test_decode_out_of_range():
    with pytest.raises(VocabularyError):
        decode_ids(AB, [1, 6, 2])


@given(st.text(alphabet="abxyz", max_size=30))
def test_encode_shape(text):
    ids = encode_text(AB, text)
    assert len(ids) == len(text) + 2
    assert ids[0] == BOS and ids[-1] == EOS
    assert BOS not in ids[1:-1] and EOS not in ids[1:-1]
    assert all(0 <= i < AB.size for i in ids)


@given(st.text(min_size=1, max_size=30))
def test_round_trip(text):
    vocab = build_vocab([_ex(text, text)])
    assert decode_ids(vocab, encode_text(vocab, text)) == text


def test_save_load(tmp_path):
    vocab = build_vocab([_ex("আমি ভাত খাই", "আঁই ভাত খাই")])
    path = vocab.save(tmp_path / "vocab.txt")
    assert Vocabulary.load(path) == vocab
    assert path.read_text(encoding="utf-8").split("\n")[0] == vocab.id_to_token(4)


def test_save_refuses_line_feed(tmp_path):
    with pytest.raises(VocabularyError):
        Vocabulary(("a", "\n")).save(tmp_path / "v.txt")


def test_rejects_multi_character_tokens():
    with pytest.raises(VocabularyError):
        Vocabulary(("ab",))
