"""Greedy packing: sort by length, pack whole conversations into bounded rows.

Conversations are never split. The default ``next_fit`` mode only considers
the currently open row, exactly as the length-sorted greedy loop dictates;
``first_fit`` scans every open row for the first that still has room, which
can only reduce the number of rows.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Sequence

from .tokenizer import LABEL_PAD, LABEL_SEPARATOR, TokenizedConversation

MODE_NEXT_FIT = "next_fit"
MODE_FIRST_FIT = "first_fit"


@dataclass(frozen=True)
class PackedMember:
    conversation_id: str
    start: int
    end: int


@dataclass
class PackedSequence:
    """One output row before padding: whole conversations back to back."""

    tokens: list[int]
    labels: list[str]
    members: list[PackedMember]

    @property
    def total_length(self) -> int:
        return len(self.tokens)


@dataclass
class PackPlan:
    """Bin assignment computed from lengths alone.

    ``bins`` holds input indices in packed order; ``truncated`` maps an input
    index to the token count dropped because it alone exceeded the limit.
    """

    bins: list[list[int]]
    truncated: dict[int, int] = field(default_factory=dict)


@dataclass
class GreedyStats:
    oversize_count: int = 0
    truncated_tokens: int = 0
    dropped_rows: int = 0
    dropped_tokens: int = 0


def sort_by_length(seqs: Sequence[TokenizedConversation]) -> list[int]:
    """Permutation of indices by non-increasing length, ties in input order."""
    return sorted(range(len(seqs)), key=lambda i: -seqs[i].length)


def plan_pack(
    lengths: Sequence[int], model_max: int, mode: str = MODE_NEXT_FIT
) -> PackPlan:
    """Assign items to bins by length, longest first.

    Items longer than ``model_max`` are clamped to it (the dropped token count
    is recorded) and then packed like any other item, so each fills a bin.
    """
    if model_max < 1:
        raise ValueError("model_max must be >= 1")
    if mode not in (MODE_NEXT_FIT, MODE_FIRST_FIT):
        raise ValueError(f"unknown packing mode {mode!r}")

    truncated: dict[int, int] = {}
    effective = []
    for index, length in enumerate(lengths):
        if length > model_max:
            truncated[index] = length - model_max
            length = model_max
        effective.append(length)

    order = sorted(range(len(effective)), key=lambda i: -effective[i])
    bins: list[list[int]] = []
    fills: list[int] = []
    if mode == MODE_NEXT_FIT:
        for index in order:
            length = effective[index]
            if bins and fills[-1] + length <= model_max:
                bins[-1].append(index)
                fills[-1] += length
            else:
                bins.append([index])
                fills.append(length)
    else:
        for index in order:
            length = effective[index]
            for j in range(len(bins)):
                if fills[j] + length <= model_max:
                    bins[j].append(index)
                    fills[j] += length
                    break
            else:
                bins.append([index])
                fills.append(length)
    return PackPlan(bins=bins, truncated=truncated)


def pack_greedy(
    seqs: Sequence[TokenizedConversation],
    model_max: int,
    mode: str = MODE_NEXT_FIT,
    *,
    eos_id: int,
) -> tuple[list[PackedSequence], GreedyStats]:
    """Pack whole conversations into rows of at most ``model_max`` tokens.

    An oversize conversation is truncated to ``model_max`` with a forced
    terminal EOS and counted; it still appears exactly once in the output.
    """
    plan = plan_pack([s.length for s in seqs], model_max, mode)
    stats = GreedyStats(
        oversize_count=len(plan.truncated),
        truncated_tokens=sum(plan.truncated.values()),
    )
    packed: list[PackedSequence] = []
    for bin_indices in plan.bins:
        tokens: list[int] = []
        labels: list[str] = []
        members: list[PackedMember] = []
        for index in bin_indices:
            seq = seqs[index]
            seq_tokens = list(seq.tokens)
            seq_labels = list(seq.labels)
            if index in plan.truncated:
                seq_tokens = seq_tokens[: model_max - 1] + [eos_id]
                seq_labels = seq_labels[: model_max - 1] + [LABEL_SEPARATOR]
            start = len(tokens)
            tokens.extend(seq_tokens)
            labels.extend(seq_labels)
            members.append(
                PackedMember(seq.conversation_id, start=start, end=len(tokens))
            )
        packed.append(PackedSequence(tokens=tokens, labels=labels, members=members))
    return packed, stats


@dataclass
class FinalizedBatch:
    """A batch of padded greedy rows, all ``target_length`` long."""

    rows: list[PackedSequence]
    content_lengths: list[int]
    target_length: int


def finalize_rows(
    packed: Sequence[PackedSequence],
    model_max: int,
    batch_size: int,
    seed: int,
    *,
    pad_id: int,
    dynamic: bool = False,
    drop_last: bool = False,
    stats: GreedyStats | None = None,
) -> list[FinalizedBatch]:
    """Pad packed rows and batch them with a seeded shuffle.

    The default pad target is ``model_max`` for every row; ``dynamic`` pads to
    the batch-local maximum instead, mirroring the padding batcher's rule.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = list(packed)
    random.Random(f"{seed}/greedy-batch").shuffle(order)
    batches: list[FinalizedBatch] = []
    for start in range(0, len(order), batch_size):
        group = order[start : start + batch_size]
        if len(group) < batch_size and drop_last:
            if stats is not None:
                stats.dropped_rows += len(group)
                stats.dropped_tokens += sum(p.total_length for p in group)
            continue
        target = (
            min(model_max, max(p.total_length for p in group)) if dynamic else model_max
        )
        rows = []
        content_lengths = []
        for seq in group:
            fill = target - seq.total_length
            rows.append(
                PackedSequence(
                    tokens=seq.tokens + [pad_id] * fill,
                    labels=seq.labels + [LABEL_PAD] * fill,
                    members=list(seq.members),
                )
            )
            content_lengths.append(seq.total_length)
        batches.append(
            FinalizedBatch(
                rows=rows, content_lengths=content_lengths, target_length=target
            )
        )
    return batches
