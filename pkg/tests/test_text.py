from reasonpath.text import (content_tokens, find_answer, fnv1a_32, hash_features,
                             is_power_of_two, ngrams, tokenize, tokenize_with_offsets)


def test_fnv1a_reference_vectors():
    assert fnv1a_32(b"") == 0x811C9DC5
    assert fnv1a_32(b"a") == 0xE40C292C
    assert fnv1a_32("foobar") == 0xBF9CF968


def test_tokenize_lowercases_and_splits_on_punctuation():
    assert tokenize("Hello, World! it's 2024_x") == ["hello", "world", "it", "s", "2024", "x"]


def test_content_tokens_drop_stopwords():
    assert content_tokens("The river of the North") == ["river", "north"]


def test_ngrams_orders_unigrams_before_bigrams():
    assert ngrams(["a", "b", "c"]) == ["a", "b", "c", "a b", "b c"]
    assert ngrams(["a"], 2) == ["a"]


def test_hash_features_stay_in_range():
    feats = hash_features(["alpha", "beta", "alpha beta"], 16)
    assert all(0 <= f < 16 for f in feats)
    assert feats[0] == fnv1a_32("alpha") & 15


def test_power_of_two():
    assert is_power_of_two(1) and is_power_of_two(1 << 24)
    assert not is_power_of_two(0) and not is_power_of_two(12) and not is_power_of_two(2.0)


def test_find_answer_first_whole_token_occurrence():
    text = "Taylor Swift met taylor swift; Swiftly."
    assert find_answer("taylor swift", text) == (0, 1)
    assert find_answer("Swift.", "Swiftly done") is None
    assert find_answer("", text) is None


def test_offsets_slice_back_to_tokens():
    text = "Café-au-lait, 42!"
    for tok, lo, hi in tokenize_with_offsets(text):
        assert text[lo:hi].lower() == tok
