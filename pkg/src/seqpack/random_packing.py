"""Random packing: concatenate the corpus into one stream, cut into fixed chunks.

Chunks are exactly the model maximum length (the last one PAD-filled), so a
conversation can straddle a chunk boundary. Segment maps record every such
split so the cost of this strategy stays measurable.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Sequence

from .tokenizer import LABEL_PAD, TokenizedConversation


@dataclass(frozen=True)
class StreamOffset:
    conversation_id: str
    start: int
    end: int


@dataclass
class PackedStream:
    """The whole corpus as one token stream with per-conversation offsets."""

    tokens: list[int]
    labels: list[str]
    offsets: list[StreamOffset]

    @property
    def length(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class ChunkSegment:
    """One conversation's slice of a chunk, in chunk-local coordinates."""

    conversation_id: str
    start: int
    end: int
    is_partial_head: bool  # continues a conversation cut by the previous boundary
    is_partial_tail: bool  # conversation continues into the next chunk


@dataclass
class Chunk:
    tokens: list[int]  # always chunk_length long; tail PAD-filled if short
    labels: list[str]
    content_length: int
    segments: list[ChunkSegment]


def build_stream(
    seqs: Sequence[TokenizedConversation],
    shuffle_seed: int,
    *,
    shuffle: bool = True,
) -> PackedStream:
    """Concatenate conversations (seeded shuffle order) into one stream."""
    order = list(seqs)
    if shuffle:
        random.Random(f"{shuffle_seed}/stream").shuffle(order)
    tokens: list[int] = []
    labels: list[str] = []
    offsets: list[StreamOffset] = []
    cursor = 0
    for seq in order:
        tokens.extend(seq.tokens)
        labels.extend(seq.labels)
        offsets.append(
            StreamOffset(seq.conversation_id, start=cursor, end=cursor + seq.length)
        )
        cursor += seq.length
    return PackedStream(tokens=tokens, labels=labels, offsets=offsets)


def chunk_stream(stream: PackedStream, chunk_length: int, *, pad_id: int) -> list[Chunk]:
    """Cut the stream into ceil(length / chunk_length) chunks.

    All chunks carry exactly ``chunk_length`` tokens; only the last may have
    content shorter than that, with PAD appended.
    """
    if chunk_length < 1:
        raise ValueError("chunk_length must be >= 1")
    total = stream.length
    chunks: list[Chunk] = []
    offset_index = 0
    for chunk_start in range(0, total, chunk_length):
        chunk_end = min(chunk_start + chunk_length, total)
        tokens = stream.tokens[chunk_start:chunk_end]
        labels = stream.labels[chunk_start:chunk_end]
        content = len(tokens)
        if content < chunk_length:
            tokens = tokens + [pad_id] * (chunk_length - content)
            labels = labels + [LABEL_PAD] * (chunk_length - content)

        segments: list[ChunkSegment] = []
        # Offsets are sorted and tile the stream; advance a cursor instead of
        # scanning from the start for every chunk.
        i = offset_index
        while i < len(stream.offsets) and stream.offsets[i].end <= chunk_start:
            i += 1
        offset_index = i
        while i < len(stream.offsets) and stream.offsets[i].start < chunk_end:
            off = stream.offsets[i]
            segments.append(
                ChunkSegment(
                    conversation_id=off.conversation_id,
                    start=max(off.start, chunk_start) - chunk_start,
                    end=min(off.end, chunk_end) - chunk_start,
                    is_partial_head=off.start < chunk_start,
                    is_partial_tail=off.end > chunk_end,
                )
            )
            i += 1
        chunks.append(
            Chunk(tokens=tokens, labels=labels, content_length=content, segments=segments)
        )
    return chunks


def batch_chunks(
    chunks: Sequence[Chunk],
    batch_size: int,
    seed: int,
    *,
    drop_last: bool = False,
) -> list[list[Chunk]]:
    """Seeded shuffle, then consecutive groups of ``batch_size``."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = list(chunks)
    random.Random(f"{seed}/chunks").shuffle(order)
    batches = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    if drop_last and batches and len(batches[-1]) < batch_size:
        batches.pop()
    return batches


def split_report(chunks: Sequence[Chunk]) -> int:
    """Count boundary-straddle events: one per conversation slice that is cut
    at a chunk end and continues into the next chunk. A conversation spanning
    k boundaries contributes k."""
    return sum(
        1 for chunk in chunks for segment in chunk.segments if segment.is_partial_tail
    )
