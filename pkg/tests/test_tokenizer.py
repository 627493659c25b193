import json
import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vocalign.synthetic import topic_corpus
from vocalign.tokenizer import (BPETrainingError, Tokenizer, TokenizerError, TokenStream,
                                bytes_to_unicode, compression_rate, load_tokenizer,
                                pretokenize, train_bpe)

BYTES = [bytes_to_unicode()[b] for b in range(256)]


@pytest.fixture(scope="module")
def trained():
    return train_bpe(topic_corpus(20_000, seed=1) + ["héllo wörld, 日本語!"] * 20, 300)


def byte_only():
    return Tokenizer(BYTES, [])


def test_first_merge_is_most_frequent_pair():
    tok = train_bpe(["aaab"], 258)
    assert tok.id_to_token[256] == "aa"
    assert tok.merges[0] == ("a", "a")


def test_single_merge():
    tok = train_bpe(["abab", "abab"], 257)
    assert tok.merges == (("a", "b"),)
    assert len(tok) == 257


def test_zero_merges():
    tok = train_bpe(["anything at all"], 256)
    assert tok.merges == ()
    assert list(tok.id_to_token) == BYTES


def test_too_small_corpus_reports_size():
    with pytest.raises(BPETrainingError, match=r"\d+"):
        train_bpe(["ab"], 300)


def test_bad_arguments():
    with pytest.raises(ValueError):
        train_bpe(["abc"], 100)
    with pytest.raises(ValueError):
        train_bpe([], 260)


def test_specials_come_last():
    tok = Tokenizer(BYTES + ["ab", "<|end|>"], [("a", "b")], ["<|end|>"])
    assert tok.token_to_id["<|end|>"] == 257
    assert 257 not in tok.encode_ids("<|end|> ab")


def test_vocab_inverse(trained):
    assert all(trained.token_to_id[t] == i for i, t in enumerate(trained.id_to_token))
    assert all(a + b in trained.token_to_id for a, b in trained.merges)


def test_encode_examples():
    tok = byte_only()
    assert len(tok.encode("")) == 0
    assert tok.encode_ids("ab") == [ord("a"), ord("b")]
    assert len(Tokenizer(BYTES + ["ab"], [("a", "b")]).encode("abab")) == 2


def test_pretokenizer_keeps_leading_space():
    assert pretokenize("hello world's  end") == ["hello", " world", "'s", " ", " end"]


def test_decode(trained):
    text = "héllo\nworld"
    assert trained.decode(trained.encode(text)) == text
    assert trained.decode([]) == ""
    with pytest.raises(IndexError, match=str(len(trained))):
        trained.decode([len(trained)])


@settings(max_examples=200, deadline=None)
@given(st.text())
def test_round_trip_property(trained, text):
    assert trained.decode(trained.encode(text)) == text


def test_encode_is_deterministic(trained):
    assert trained.encode_ids("the cat") == trained.encode_ids("the cat")


def test_more_merges_never_lengthen():
    lines = topic_corpus(10_000, seed=2)
    sizes = [len(train_bpe(lines, n).encode_lines(lines)) for n in (256, 270, 290, 300)]
    assert sizes == sorted(sizes, reverse=True)


def test_compression_examples():
    tok = byte_only()
    assert compression_rate(tok, ["plain ascii"]) == 1.0
    ab = Tokenizer(BYTES + ["ab"], [("a", "b")])
    assert compression_rate(ab, ["abab"] * 5) == 2.0
    assert compression_rate(Tokenizer(BYTES + ["ab", "cd"], [("a", "b"), ("c", "d")]), "abcd") == 2.0
    with pytest.raises(ValueError):
        compression_rate(tok, [])


def write_vocab(tmp_path, vocab, merges=""):
    (tmp_path / "vocab.json").write_text(json.dumps(vocab))
    (tmp_path / "merges.txt").write_text(merges)
    return tmp_path / "vocab.json", tmp_path / "merges.txt"


def test_load_save_round_trip(tmp_path, trained):
    trained.save(tmp_path / "v.json", tmp_path / "m.txt")
    again = load_tokenizer(tmp_path / "v.json", tmp_path / "m.txt")
    assert again.id_to_token == trained.id_to_token and again.merges == trained.merges


def test_load_byte_only(tmp_path):
    tok = load_tokenizer(*write_vocab(tmp_path, {t: i for i, t in enumerate(BYTES)}))
    assert len(tok.encode("hi")) == 2


def test_load_rejects_sparse_ids(tmp_path):
    with pytest.raises(TokenizerError, match="non-dense"):
        load_tokenizer(*write_vocab(tmp_path, {"a": 0, "b": 2}))


def test_load_rejects_duplicates(tmp_path):
    (tmp_path / "vocab.json").write_text('{"a": 0, "a": 1}')
    (tmp_path / "merges.txt").write_text("")
    with pytest.raises(TokenizerError, match="twice"):
        load_tokenizer(tmp_path / "vocab.json", tmp_path / "merges.txt")
    with pytest.raises(TokenizerError, match="duplicate id"):
        load_tokenizer(*write_vocab(tmp_path, {"a": 0, "b": 0}))


def test_load_rejects_dangling_merge(tmp_path):
    vocab = {t: i for i, t in enumerate(BYTES)}
    with pytest.raises(TokenizerError, match=r"merges.txt:2"):
        load_tokenizer(*write_vocab(tmp_path, vocab, "#version: 0.2\na b\n"))


def test_stream_invariants_and_io(tmp_path):
    s = TokenStream.from_segments([[1, 2], [], [3]])
    assert s.segment_bounds.tolist() == [2, 3]
    with pytest.raises(ValueError):
        TokenStream(np.array([1, 2, 3]), np.array([2, 2, 3]))
    s.save(tmp_path / "x.tks")
    again = TokenStream.load(tmp_path / "x.tks")
    assert again.ids.tolist() == [1, 2, 3] and again.segment_bounds.tolist() == [2, 3]
    assert (tmp_path / "x.tks").read_bytes()[:4] == b"TKS1"


PYTHIA = Path(os.environ.get("PYTHIA_TOKENIZER_DIR", "/nonexistent"))


@pytest.mark.skipif(not (PYTHIA / "vocab.json").exists(), reason="Pythia tokenizer files not present")
def test_pythia_vocab_size():
    tok = load_tokenizer(PYTHIA / "vocab.json", PYTHIA / "merges.txt")
    assert round(len(tok) / 1000, 1) == 50.3
