import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semspeech.errors import ConfigError, LexiconError, TokenizationError
from semspeech.tokenizer import (BOUNDARY, SPECIAL_LITERAL, Lexicon, Vocabulary, build_vocab, decode, encode,
                                 frame_targets, surface, to_phonemes)


def test_merges_on_repeated_word():
    vocab = build_vocab(["aaaa aaaa"], budget=3)
    assert set(vocab.entries) == {"a", "aa", BOUNDARY}


def test_budget_of_alphabet_size_gives_characters():
    corpus = ["the cat sat", "a dog ran"]
    alphabet = {ch for t in corpus for ch in t if ch != " "} | {BOUNDARY}
    vocab = build_vocab(corpus, budget=len(alphabet))
    assert set(vocab.entries) == alphabet


def test_rebuild_is_identical():
    corpus = ["red cat sits", "blue dog runs", "red dog sits"]
    assert build_vocab(corpus, 30) == build_vocab(corpus, 30)


def test_telescope_segmentation():
    vocab = Vocabulary((BOUNDARY + "te", "le", "s", "c", "o", "pe"))
    pieces = [surface(vocab.piece(t)) for t in encode("telescope", vocab)]
    assert pieces == ["te", "le", "s", "c", "o", "pe"]


def test_empty_string():
    vocab = build_vocab(["a b"], 10)
    assert encode("", vocab) == []
    assert decode([], vocab) == ""


def test_special_token_id_and_literal(tmp_path):
    vocab = build_vocab(["ab ba"], 10)
    assert vocab.special_id == len(vocab.entries) == vocab.size - 1
    assert vocab.piece(vocab.special_id) == SPECIAL_LITERAL
    vocab.save(tmp_path / "v.txt")
    assert Vocabulary.load(tmp_path / "v.txt") == vocab
    (tmp_path / "bad.txt").write_text("a\nb\n")
    with pytest.raises(ConfigError):
        Vocabulary.load(tmp_path / "bad.txt")


def test_decode_skips_special():
    vocab = build_vocab(["red cat"], 20)
    ids = encode("red cat", vocab)
    assert decode([vocab.special_id, *ids, vocab.special_id], vocab) == "red cat"
    assert frame_targets(ids, vocab) == [vocab.special_id, *ids, vocab.special_id]


def test_uncovered_character_and_reserved_marker():
    vocab = build_vocab(["abc"], 10)
    with pytest.raises(TokenizationError):
        encode("abz", vocab)
    with pytest.raises(TokenizationError):
        encode("a" + BOUNDARY + "b", vocab)


def test_round_trip_on_random_corpus():
    rng = random.Random(0)
    letters = "abcdefghij'"
    words = ["".join(rng.choice(letters) for _ in range(rng.randint(1, 7))) for _ in range(200)]
    sentences = [" ".join(rng.choice(words) for _ in range(rng.randint(1, 8))) for _ in range(1000)]
    vocab = build_vocab(sentences, 150)
    for s in sentences:
        assert decode(encode(s, vocab), vocab) == s


@settings(max_examples=200, deadline=None)
@given(st.lists(st.text(alphabet="abcde", min_size=1, max_size=6), min_size=1, max_size=6))
def test_round_trip_property(words):
    vocab = build_vocab(["abcde ab cd eab"], 12)
    text = " ".join(words)
    assert decode(encode(text, vocab), vocab) == text


# lexicon -----------------------------------------------------------------------

def test_lexicon_lookup_and_fallback():
    lex = Lexicon({"cat": ["K", "AE", "T"]})
    assert lex.lookup("cat") == (["K", "AE", "T"], False)
    assert lex.lookup(BOUNDARY + "cat") == (["K", "AE", "T"], False)
    phones, fell_back = lex.lookup("dog")
    assert fell_back and phones == ["D", "AA", "G"]
    with pytest.raises(LexiconError):
        Lexicon({}, use_fallback=False).lookup("dog")


def test_cat_via_letter_lexicon():
    vocab = Vocabulary((BOUNDARY + "c", "a", "t"))
    lex = Lexicon({"c": ["K"], "a": ["AE"], "t": ["T"]}, use_fallback=False)
    seq = to_phonemes(encode("cat", vocab), vocab, lex)
    assert seq.phonemes == ["K", "AE", "T"]
    assert seq.boundaries == [(0, 1), (1, 2), (2, 3)]
    assert seq.fallback == [False, False, False]


def test_special_token_has_no_pronunciation():
    vocab = Vocabulary(("a",))
    with pytest.raises(LexiconError):
        to_phonemes([vocab.special_id], vocab, Lexicon({"a": ["AE"]}))


def test_lexicon_file_round_trip(tmp_path):
    lex = Lexicon({"red": ["ER", "EH", "N"], "cat": ["AE", "S"]}, use_fallback=False)
    lex.save(tmp_path / "lex.txt")
    assert Lexicon.load(tmp_path / "lex.txt", use_fallback=False) == lex
    (tmp_path / "bad.txt").write_text("red\n")
    with pytest.raises(LexiconError):
        Lexicon.load(tmp_path / "bad.txt")
