"""Training-ready records: token rows with loss masks, segment ids, provenance.

Two on-disk formats:

* jsonl: one object per row with keys tokens, loss_mask, segment_ids,
  sources, pad_count (plus position_ids when enabled).
* binary: little-endian, magic "SPK1", u32 row length, u32 row count, then per
  row the tokens as u32, the loss mask as packed bits (LSB first), and the
  segment ids as u16. Rows must share one length; the writer tail-pads
  shorter rows to the file row length.
"""

from __future__ import annotations

import json
import struct
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Sequence

from .errors import IoFailure
from .greedy_packing import FinalizedBatch
from .padding import PaddedBatch
from .random_packing import Chunk
from .tokenizer import LABEL_ANSWER, LABEL_INSTRUCTION, LABEL_PAD, LABEL_SEPARATOR

BINARY_MAGIC = b"SPK1"


@dataclass
class Row:
    """One emitted training row."""

    tokens: list[int]
    loss_mask: list[int]
    segment_ids: list[int]
    sources: list[str]
    pad_count: int
    labels: list[str] = field(default_factory=list)  # internal, not serialized
    position_ids: list[int] | None = None

    def to_record(self) -> dict:
        record = {
            "tokens": self.tokens,
            "loss_mask": self.loss_mask,
            "segment_ids": self.segment_ids,
            "sources": self.sources,
            "pad_count": self.pad_count,
        }
        if self.position_ids is not None:
            record["position_ids"] = self.position_ids
        return record


@dataclass
class Batch:
    """A rectangular group of rows emitted together."""

    rows: list[Row]

    def __post_init__(self) -> None:
        lengths = {len(row.tokens) for row in self.rows}
        if len(lengths) > 1:
            raise ValueError(f"batch rows have mixed lengths: {sorted(lengths)}")


def build_loss_mask(tokens: Sequence[int], labels: Sequence[str]) -> list[int]:
    """Per-token 0/1 loss bits from role labels.

    Answer tokens carry loss, and so does a separator directly following an
    answer token (the answer's own stop flag). Everything else, including
    instructions, headers, PAD, and standalone EOS markers, is masked out.
    """
    if len(tokens) != len(labels):
        raise ValueError("tokens and labels must be parallel")
    mask = []
    previous = None
    for label in labels:
        if label == LABEL_ANSWER:
            mask.append(1)
        elif label == LABEL_SEPARATOR and previous == LABEL_ANSWER:
            mask.append(1)
        else:
            mask.append(0)
        previous = label
    return mask


def build_segment_ids(length: int, spans: Sequence[tuple[int, int]]) -> list[int]:
    """Per-token segment ids: span k (1-based) over its range, 0 elsewhere (PAD)."""
    ids = [0] * length
    for k, (start, end) in enumerate(spans, start=1):
        for position in range(start, end):
            ids[position] = k
    return ids


def build_position_ids(length: int, spans: Sequence[tuple[int, int]]) -> list[int]:
    """Positions restarting at 0 at each span start; PAD tail keeps counting
    from 0 as its own run."""
    ids = [0] * length
    cursor = 0
    for start, end in spans:
        for offset, position in enumerate(range(start, end)):
            ids[position] = offset
        cursor = end
    for offset, position in enumerate(range(cursor, length)):
        ids[position] = offset
    return ids


def _make_row(
    tokens: list[int],
    labels: list[str],
    sources: list[str],
    spans: list[tuple[int, int]],
    *,
    mask_overrides: Sequence[tuple[int, int]] = (),
    emit_position_ids: bool = False,
) -> Row:
    mask = build_loss_mask(tokens, labels)
    for start, end in mask_overrides:
        for position in range(start, end):
            mask[position] = 0
    return Row(
        tokens=tokens,
        loss_mask=mask,
        segment_ids=build_segment_ids(len(tokens), spans),
        sources=sources,
        pad_count=sum(1 for label in labels if label == LABEL_PAD),
        labels=labels,
        position_ids=build_position_ids(len(tokens), spans)
        if emit_position_ids
        else None,
    )


def rows_from_padded_batches(
    batches: Sequence[PaddedBatch], *, emit_position_ids: bool = False
) -> list[Batch]:
    out = []
    for batch in batches:
        rows = []
        for tokens, labels, source, content_length in zip(
            batch.rows, batch.label_rows, batch.row_sources, batch.content_lengths
        ):
            # In pad-then-eos mode the row's final EOS sits after the PAD
            # fill but still belongs to the row's single conversation.
            n = len(tokens)
            strict_tail = bool(
                labels and labels[-1] == LABEL_SEPARATOR and content_length < n
            )
            body = content_length - 1 if strict_tail else content_length
            segment_ids = [1 if position < body else 0 for position in range(n)]
            if strict_tail:
                segment_ids[-1] = 1
            position_ids = None
            if emit_position_ids:
                pad_end = n - 1 if strict_tail else n
                position_ids = list(range(body))
                position_ids += list(range(pad_end - body))
                if strict_tail:
                    position_ids.append(body)
            rows.append(
                Row(
                    tokens=list(tokens),
                    loss_mask=build_loss_mask(tokens, labels),
                    segment_ids=segment_ids,
                    sources=[source],
                    pad_count=sum(1 for label in labels if label == LABEL_PAD),
                    labels=list(labels),
                    position_ids=position_ids,
                )
            )
        out.append(Batch(rows=rows))
    return out


def rows_from_chunk_batches(
    batches: Sequence[Sequence[Chunk]],
    *,
    mask_orphan_answers: bool = False,
    emit_position_ids: bool = False,
) -> list[Batch]:
    out = []
    for batch in batches:
        rows = []
        for chunk in batch:
            spans = [(seg.start, seg.end) for seg in chunk.segments]
            sources = [seg.conversation_id for seg in chunk.segments]
            overrides: list[tuple[int, int]] = []
            if mask_orphan_answers:
                for seg in chunk.segments:
                    if not seg.is_partial_head:
                        continue
                    # Zero answer/separator tokens severed from their
                    # instruction, up to the segment's first instruction token.
                    cut = seg.start
                    while (
                        cut < seg.end and chunk.labels[cut] != LABEL_INSTRUCTION
                    ):
                        cut += 1
                    if cut > seg.start:
                        overrides.append((seg.start, cut))
            rows.append(
                _make_row(
                    list(chunk.tokens),
                    list(chunk.labels),
                    sources,
                    spans,
                    mask_overrides=overrides,
                    emit_position_ids=emit_position_ids,
                )
            )
        out.append(Batch(rows=rows))
    return out


def rows_from_greedy_batches(
    batches: Sequence[FinalizedBatch], *, emit_position_ids: bool = False
) -> list[Batch]:
    out = []
    for batch in batches:
        rows = []
        for seq in batch.rows:
            spans = [(member.start, member.end) for member in seq.members]
            sources = [member.conversation_id for member in seq.members]
            rows.append(
                _make_row(
                    list(seq.tokens),
                    list(seq.labels),
                    sources,
                    spans,
                    emit_position_ids=emit_position_ids,
                )
            )
        out.append(Batch(rows=rows))
    return out


def iter_rows(batches: Iterable[Batch]) -> Iterable[Row]:
    for batch in batches:
        yield from batch.rows


def write_jsonl(rows: Iterable[Row], destination: str | Path | IO[str]) -> None:
    """One canonical-JSON object per line, stable across runs."""
    own = False
    if destination == "-":
        handle: IO[str] = sys.stdout
    elif isinstance(destination, (str, Path)):
        try:
            handle = open(destination, "w", encoding="utf-8")
        except OSError as exc:
            raise IoFailure(f"cannot write {destination}: {exc}") from exc
        own = True
    else:
        handle = destination
    try:
        for row in rows:
            handle.write(json.dumps(row.to_record(), sort_keys=True))
            handle.write("\n")
    finally:
        if own:
            handle.close()


def read_jsonl(path: str | Path) -> list[Row]:
    rows = []
    try:
        with open(path, "r", encoding="utf-8") as handle:
            for line in handle:
                if not line.strip():
                    continue
                record = json.loads(line)
                rows.append(
                    Row(
                        tokens=record["tokens"],
                        loss_mask=record["loss_mask"],
                        segment_ids=record["segment_ids"],
                        sources=record["sources"],
                        pad_count=record["pad_count"],
                        position_ids=record.get("position_ids"),
                    )
                )
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return rows


def _pack_bits(bits: Sequence[int]) -> bytes:
    out = bytearray((len(bits) + 7) // 8)
    for position, bit in enumerate(bits):
        if bit:
            out[position >> 3] |= 1 << (position & 7)
    return bytes(out)


def _unpack_bits(blob: bytes, count: int) -> list[int]:
    return [(blob[position >> 3] >> (position & 7)) & 1 for position in range(count)]


def write_binary(rows: Sequence[Row], path: str | Path, *, pad_id: int = 0) -> None:
    """Fixed-layout binary file; see the module docstring for the wire format.

    Rows shorter than the longest row are tail-padded (PAD token, zero mask,
    segment 0) so the file stays rectangular.
    """
    row_length = max((len(row.tokens) for row in rows), default=0)
    try:
        with open(path, "wb") as handle:
            handle.write(BINARY_MAGIC)
            handle.write(struct.pack("<II", row_length, len(rows)))
            for row in rows:
                fill = row_length - len(row.tokens)
                tokens = row.tokens + [pad_id] * fill
                mask = row.loss_mask + [0] * fill
                segments = row.segment_ids + [0] * fill
                handle.write(struct.pack(f"<{row_length}I", *tokens))
                handle.write(_pack_bits(mask))
                handle.write(struct.pack(f"<{row_length}H", *segments))
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_binary(path: str | Path) -> list[Row]:
    """Reload a binary file. Sources are not stored in this format; pad_count
    is recovered from the segment ids."""
    try:
        with open(path, "rb") as handle:
            blob = handle.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(blob) < 12 or blob[:4] != BINARY_MAGIC:
        raise IoFailure(f"{path} is not a seqpack binary file")
    row_length, row_count = struct.unpack_from("<II", blob, 4)
    mask_bytes = (row_length + 7) // 8
    stride = row_length * 4 + mask_bytes + row_length * 2
    expected = 12 + stride * row_count
    if len(blob) != expected:
        raise IoFailure(
            f"{path}: expected {expected} bytes for {row_count} rows, got {len(blob)}"
        )
    rows = []
    cursor = 12
    for _ in range(row_count):
        tokens = list(struct.unpack_from(f"<{row_length}I", blob, cursor))
        cursor += row_length * 4
        mask = _unpack_bits(blob[cursor : cursor + mask_bytes], row_length)
        cursor += mask_bytes
        segments = list(struct.unpack_from(f"<{row_length}H", blob, cursor))
        cursor += row_length * 2
        rows.append(
            Row(
                tokens=tokens,
                loss_mask=mask,
                segment_ids=segments,
                sources=[],
                pad_count=sum(1 for s in segments if s == 0),
            )
        )
    return rows
