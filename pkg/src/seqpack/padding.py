"""Dynamic padding: group sequences into batches, pad or truncate to a shared length.

The batch target length is the smaller of the model's maximum input length and
the longest sequence in the batch. Longer rows are truncated (with a forced
terminal EOS), shorter rows are filled with PAD.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Sequence

from .tokenizer import LABEL_PAD, LABEL_SEPARATOR, TokenizedConversation


@dataclass
class PaddedBatch:
    """A rectangular batch: every row has length ``target_length``."""

    rows: list[list[int]]
    label_rows: list[list[str]]
    row_sources: list[str]
    content_lengths: list[int]  # post-truncation, pre-pad
    target_length: int

    @property
    def pad_counts(self) -> list[int]:
        return [self.target_length - n for n in self.content_lengths]


@dataclass
class PadStats:
    truncation_count: int = 0
    truncated_tokens: int = 0
    dropped_rows: int = 0
    dropped_tokens: int = 0


def pad_or_truncate_row(
    tokens: Sequence[int],
    labels: Sequence[str],
    target_length: int,
    *,
    pad_id: int,
    eos_id: int,
    pad_then_eos: bool = False,
) -> tuple[list[int], list[str], int]:
    """Fit one row to ``target_length``; returns (tokens, labels, truncated count).

    Truncation keeps the first target_length - 1 tokens and forces a terminal
    EOS so every row still ends in a separator. In ``pad_then_eos`` mode a
    padded row moves its own final EOS after the PAD fill instead of before it.
    """
    if target_length < 1:
        raise ValueError("target_length must be >= 1")
    tokens = list(tokens)
    labels = list(labels)
    if len(tokens) > target_length:
        truncated = len(tokens) - target_length
        tokens = tokens[: target_length - 1] + [eos_id]
        labels = labels[: target_length - 1] + [LABEL_SEPARATOR]
        return tokens, labels, truncated
    if len(tokens) < target_length:
        fill = target_length - len(tokens)
        if pad_then_eos and tokens and tokens[-1] == eos_id:
            tokens = tokens[:-1] + [pad_id] * fill + [eos_id]
            labels = labels[:-1] + [LABEL_PAD] * fill + [LABEL_SEPARATOR]
        else:
            tokens = tokens + [pad_id] * fill
            labels = labels + [LABEL_PAD] * fill
    return tokens, labels, 0


def make_padded_batches(
    seqs: Sequence[TokenizedConversation],
    batch_size: int,
    model_max: int,
    shuffle_seed: int,
    *,
    pad_id: int,
    eos_id: int,
    drop_last: bool = False,
    pad_then_eos: bool = False,
    shuffle: bool = True,
) -> tuple[list[PaddedBatch], PadStats]:
    """Shuffle, group into batches of ``batch_size``, pad each batch rectangular.

    The final short batch is kept unless ``drop_last`` is set.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if model_max < 1:
        raise ValueError("model_max must be >= 1")

    order = list(seqs)
    if shuffle:
        random.Random(f"{shuffle_seed}/padding").shuffle(order)

    stats = PadStats()
    batches: list[PaddedBatch] = []
    for start in range(0, len(order), batch_size):
        group = order[start : start + batch_size]
        if len(group) < batch_size and drop_last:
            stats.dropped_rows += len(group)
            stats.dropped_tokens += sum(s.length for s in group)
            continue
        target = min(model_max, max(s.length for s in group))
        rows, label_rows, sources, content_lengths = [], [], [], []
        for seq in group:
            tokens, labels, truncated = pad_or_truncate_row(
                seq.tokens,
                seq.labels,
                target,
                pad_id=pad_id,
                eos_id=eos_id,
                pad_then_eos=pad_then_eos,
            )
            if truncated:
                stats.truncation_count += 1
                stats.truncated_tokens += truncated
            rows.append(tokens)
            label_rows.append(labels)
            sources.append(seq.conversation_id)
            content_lengths.append(min(seq.length, target))
        batches.append(
            PaddedBatch(
                rows=rows,
                label_rows=label_rows,
                row_sources=sources,
                content_lengths=content_lengths,
                target_length=target,
            )
        )
    return batches, stats
