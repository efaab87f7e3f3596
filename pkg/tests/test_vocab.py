import pytest
from hypothesis import given, strategies as st

from groundedmt.vocab import (
    EOS,
    PAD,
    RESERVED_TOKENS,
    SOS,
    UNK,
    Vocabulary,
    build_vocabulary,
    decode_ids,
    encode_tokens,
)


def test_reserved_ids_occupy_fixed_positions():
    vocab = build_vocabulary([["a"]])
    assert (PAD, SOS, EOS, UNK) == (0, 1, 2, 3)
    assert vocab.tokens[:4] == RESERVED_TOKENS


def test_build_counts_direct():
    vocab = build_vocabulary([["a", "a", "b"]], min_count=1)
    assert vocab.counts == {"a": 2, "b": 1}
    assert len(vocab) == 4 + 2


def test_min_count_threshold_maps_to_unknown():
    vocab = build_vocabulary([["a", "b"], ["a"]], min_count=2)
    assert "a" in vocab
    assert vocab.id("b") == UNK


def test_empty_corpus_errors():
    with pytest.raises(ValueError, match="empty corpus"):
        build_vocabulary([])


def test_encode_basic_and_empty_and_unknown():
    vocab = build_vocabulary([["a", "b"]])
    assert encode_tokens("a b", vocab) == [vocab.id("a"), vocab.id("b")]
    assert encode_tokens("", vocab) == []
    assert encode_tokens("a zzz", vocab) == [vocab.id("a"), UNK]


def test_encode_lowercases_by_default():
    vocab = build_vocabulary([["a"]])
    assert encode_tokens("A", vocab) == [vocab.id("a")]


def test_frequency_floor():
    vocab = build_vocabulary([["a"]])
    assert vocab.frequency("a") == 1
    assert vocab.frequency("<eos>") == 1
    assert vocab.frequency("missing") == 1
    assert vocab.frequency(UNK) == 1


@given(
    st.lists(
        st.lists(st.sampled_from(["cat", "dog", "the", "sat", "mat"]), min_size=1, max_size=8),
        min_size=1,
        max_size=10,
    )
)
def test_round_trip_for_in_vocabulary_text(corpus):
    vocab = build_vocabulary(corpus, min_count=1)
    sentence = " ".join(corpus[0])
    ids = encode_tokens(sentence, vocab)
    assert " ".join(decode_ids(ids, vocab)) == sentence


def test_vocabulary_file_determinism(tmp_path):
    corpus = [["b", "a", "a"], ["c", "b", "a"]]
    paths = []
    for i in range(2):
        vocab = build_vocabulary(corpus)
        p = tmp_path / f"v{i}.tsv"
        vocab.save(p)
        paths.append(p)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    reloaded = Vocabulary.load(paths[0])
    assert reloaded.tokens == build_vocabulary(corpus).tokens
    assert reloaded.counts == {"a": 3, "b": 2, "c": 1}


def test_ids_are_bijective():
    vocab = build_vocabulary([["x", "y", "z", "x"]])
    ids = [vocab.id(t) for t in vocab.tokens]
    assert sorted(ids) == list(range(len(vocab)))
