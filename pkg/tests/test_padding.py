import random

import pytest

from helpers import fixed_length_tokenized, random_corpus
from seqpack.padding import make_padded_batches, pad_or_truncate_row
from seqpack.tokenizer import EOS_ID, LABEL_PAD, LABEL_SEPARATOR, PAD_ID


def corpus_with_lengths(lengths, rng=None):
    rng = rng or random.Random(0)
    return [
        fixed_length_tokenized(f"c{index}", length, rng)
        for index, length in enumerate(lengths)
    ]


def test_batch_target_is_longest_when_under_max():
    batches, stats = make_padded_batches(
        corpus_with_lengths([5, 7]), 2, 10, shuffle_seed=1, pad_id=PAD_ID, eos_id=EOS_ID
    )
    assert len(batches) == 1
    batch = batches[0]
    assert batch.target_length == 7
    assert sorted(batch.pad_counts) == [0, 2]
    assert stats.truncation_count == 0


def test_truncate_and_pad_in_one_batch():
    batches, stats = make_padded_batches(
        corpus_with_lengths([12, 3]), 2, 10, shuffle_seed=1, pad_id=PAD_ID, eos_id=EOS_ID
    )
    batch = batches[0]
    assert batch.target_length == 10
    assert sorted(batch.content_lengths) == [3, 10]
    assert sorted(batch.pad_counts) == [0, 7]
    assert stats.truncation_count == 1
    assert stats.truncated_tokens == 2
    long_row = batch.rows[batch.content_lengths.index(10)]
    assert long_row[-1] == EOS_ID


def test_empty_input():
    batches, stats = make_padded_batches(
        [], 4, 10, shuffle_seed=1, pad_id=PAD_ID, eos_id=EOS_ID
    )
    assert batches == []
    assert stats.truncation_count == 0


def test_row_unchanged_at_exact_length():
    tokens = list(range(2, 9))
    labels = ["instruction"] * 6 + [LABEL_SEPARATOR]
    out_tokens, out_labels, truncated = pad_or_truncate_row(
        tokens, labels, 7, pad_id=PAD_ID, eos_id=EOS_ID
    )
    assert out_tokens == tokens
    assert truncated == 0


def test_row_truncation_forces_eos():
    tokens = list(range(2, 11))  # length 9
    labels = ["answer"] * 9
    out_tokens, out_labels, truncated = pad_or_truncate_row(
        tokens, labels, 4, pad_id=PAD_ID, eos_id=EOS_ID
    )
    assert out_tokens == [2, 3, 4, EOS_ID]
    assert out_labels[-1] == LABEL_SEPARATOR
    assert truncated == 5


def test_row_padding():
    out_tokens, out_labels, truncated = pad_or_truncate_row(
        [7, 8], ["instruction", "answer"], 5, pad_id=PAD_ID, eos_id=EOS_ID
    )
    assert out_tokens == [7, 8, PAD_ID, PAD_ID, PAD_ID]
    assert out_labels[2:] == [LABEL_PAD] * 3
    assert truncated == 0


def test_pad_then_eos_places_eos_last():
    tokens = [5, 6, EOS_ID]
    labels = ["instruction", "answer", LABEL_SEPARATOR]
    out_tokens, out_labels, _ = pad_or_truncate_row(
        tokens, labels, 6, pad_id=PAD_ID, eos_id=EOS_ID, pad_then_eos=True
    )
    assert out_tokens == [5, 6, PAD_ID, PAD_ID, PAD_ID, EOS_ID]
    assert out_labels[-1] == LABEL_SEPARATOR


def test_tail_after_content_is_all_pad():
    rng = random.Random(3)
    corpus = random_corpus(rng)
    batches, _ = make_padded_batches(
        corpus, 3, 24, shuffle_seed=9, pad_id=PAD_ID, eos_id=EOS_ID
    )
    for batch in batches:
        for row, content in zip(batch.rows, batch.content_lengths):
            assert all(token == PAD_ID for token in row[content:])
            assert len(row) == batch.target_length


def test_token_conservation():
    for seed in range(50):
        rng = random.Random(seed)
        corpus = random_corpus(rng)
        batches, stats = make_padded_batches(
            corpus, 2, 20, shuffle_seed=seed, pad_id=PAD_ID, eos_id=EOS_ID
        )
        kept = sum(sum(batch.content_lengths) for batch in batches)
        assert kept + stats.truncated_tokens == sum(seq.length for seq in corpus)


def test_longest_row_has_zero_pad_when_under_max():
    batches, _ = make_padded_batches(
        corpus_with_lengths([4, 9, 6]), 3, 50, shuffle_seed=5, pad_id=PAD_ID, eos_id=EOS_ID
    )
    batch = batches[0]
    assert batch.pad_counts[batch.content_lengths.index(9)] == 0


def test_determinism_under_seed():
    corpus = corpus_with_lengths([5, 7, 9, 11, 13])
    first, _ = make_padded_batches(corpus, 2, 16, shuffle_seed=42, pad_id=PAD_ID, eos_id=EOS_ID)
    second, _ = make_padded_batches(corpus, 2, 16, shuffle_seed=42, pad_id=PAD_ID, eos_id=EOS_ID)
    assert [b.row_sources for b in first] == [b.row_sources for b in second]
    assert [b.rows for b in first] == [b.rows for b in second]


def test_drop_last():
    corpus = corpus_with_lengths([5, 7, 9, 11, 13])
    batches, stats = make_padded_batches(
        corpus, 2, 16, shuffle_seed=42, pad_id=PAD_ID, eos_id=EOS_ID, drop_last=True
    )
    assert len(batches) == 2
    assert all(len(batch.rows) == 2 for batch in batches)
    assert stats.dropped_rows == 1


def test_invalid_args():
    with pytest.raises(ValueError):
        make_padded_batches([], 0, 10, shuffle_seed=1, pad_id=PAD_ID, eos_id=EOS_ID)
    with pytest.raises(ValueError):
        pad_or_truncate_row([1], ["answer"], 0, pad_id=PAD_ID, eos_id=EOS_ID)
