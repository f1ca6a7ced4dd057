import numpy as np
import pytest

from tokenizer_vocab import (
    BOS_ID, CLS_ID, EOS_ID, KPSEP, KPSEP_ID, PAD_ID, SPECIALS, UNK_ID, Vocab, VocabError, build_vocab, decode,
    encode, normalize, render, tokenize,
)


def test_reserved_ids_are_fixed():
    assert (PAD_ID, BOS_ID, EOS_ID, UNK_ID, CLS_ID, KPSEP_ID) == (0, 1, 2, 3, 4, 5)
    vocab = build_vocab(["x"])
    assert vocab.tokens[:6] == list(SPECIALS)


def test_frequency_order_with_lexicographic_ties():
    vocab = build_vocab(["b a", "a c"])
    assert vocab.tokens[6:] == ["a", "b", "c"]
    assert build_vocab(["b a", "a c"], min_freq=2).tokens[6:] == ["a"]


def test_build_is_deterministic_on_a_large_corpus():
    rng = np.random.default_rng(0)
    words = [f"w{i}" for i in range(300)]
    corpus = [" ".join(rng.choice(words, size=12)) for _ in range(1000)]
    first, second = build_vocab(corpus), build_vocab(list(corpus))
    assert first == second
    assert first.tokens == second.tokens


def test_empty_corpus_is_rejected():
    with pytest.raises(VocabError):
        build_vocab([])


def test_max_size_counts_reserved_tokens():
    vocab = build_vocab(["a a a b b c d"], max_size=8)
    assert len(vocab) == 8
    assert vocab.tokens[6:] == ["a", "b"]


def test_tokenize_lowercases_and_splits_punctuation():
    assert tokenize("Tom eats Bread, quickly!") == ["tom", "eats", "bread", ",", "quickly", "!"]
    assert tokenize(f"red {KPSEP} Blue") == ["red", KPSEP, "blue"]
    assert normalize("  What   IS it ? ") == "what is it ?"


def test_empty_text_encodes_to_bos_eos():
    vocab = build_vocab(["a"])
    assert encode("", vocab, add_bos_eos=True).ids == (BOS_ID, EOS_ID)
    assert encode("", vocab).ids == ()


def test_unknown_tokens_map_to_unk():
    vocab = build_vocab(["tom eats bread"])
    assert encode("Tom eats cake", vocab).ids == (vocab.id_of("tom"), vocab.id_of("eats"), UNK_ID)


def test_round_trip_in_vocabulary_text():
    vocab = build_vocab(["tom eats bread with butter ."])
    text = "Tom eats bread with butter."
    assert decode(encode(text, vocab, add_bos_eos=True), vocab) == normalize(text)


def test_decode_skips_pad_and_stops_at_eos():
    vocab = build_vocab(["a b"])
    a, b = vocab.id_of("a"), vocab.id_of("b")
    assert decode([BOS_ID, a, PAD_ID, b, EOS_ID, a], vocab) == "a b"
    assert render([BOS_ID, a, EOS_ID], vocab) == "[BOS] a [EOS]"


def test_encode_is_pure():
    vocab = build_vocab(["a b c"])
    before = vocab.tokens
    assert encode("c b a", vocab) == encode("c b a", vocab)
    assert vocab.tokens == before


def test_save_and_load(tmp_path):
    vocab = build_vocab(["the cat sat on the mat ."])
    path = str(tmp_path / "vocab.txt")
    vocab.save(path)
    assert Vocab.load(path) == vocab


def test_vocab_requires_reserved_prefix():
    with pytest.raises(VocabError):
        Vocab(["a", "b"])
    with pytest.raises(VocabError):
        Vocab(list(SPECIALS) + ["a", "a"])
