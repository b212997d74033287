"""Shared orchestration: ingest corpora and run one strategy end to end.

Used by both the CLI and the strategy comparison report so every caller gets
identical behavior for identical settings.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from . import emit
from .conversation import (
    IngestStats,
    TEMPLATE_PRESETS,
    iter_jsonl_records,
    validate_conversation,
)
from .errors import ConfigConflict, ParseError, SeqPackError
from .greedy_packing import (
    MODE_NEXT_FIT,
    finalize_rows,
    pack_greedy,
)
from .padding import make_padded_batches
from .random_packing import batch_chunks, build_stream, chunk_stream, split_report
from .tokenizer import (
    DEFAULT_VOCAB_SIZE,
    ReferenceTokenizer,
    SubprocessTokenizer,
    TokenizedConversation,
    encode_conversation,
    ingest_pretokenized,
)

STRATEGY_PADDING = "padding"
STRATEGY_RANDOM = "random_packing"
STRATEGY_GREEDY = "greedy_packing"
STRATEGIES = (STRATEGY_PADDING, STRATEGY_RANDOM, STRATEGY_GREEDY)
PACKING_STRATEGIES = (STRATEGY_RANDOM, STRATEGY_GREEDY)


@dataclass
class StrategyOptions:
    strategy: str
    model_max: int = 4096
    batch_size: int = 8
    seed: int = 42
    greedy_mode: str = MODE_NEXT_FIT
    drop_last: bool = False
    pad_then_eos: bool = False
    shuffle: bool = True
    mask_orphan_answers: bool = False
    dynamic_greedy_padding: bool = False
    emit_position_ids: bool = False
    pad_id: int = 0
    eos_id: int = 1

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ConfigConflict(f"unknown strategy {self.strategy!r}")
        if self.model_max < 1:
            raise ConfigConflict("model_max must be >= 1")
        if self.batch_size < 1:
            raise ConfigConflict("batch_size must be >= 1")


@dataclass
class StrategyEvents:
    """Counters accumulated while packing one corpus."""

    truncation_count: int = 0
    truncated_tokens: int = 0
    oversize_count: int = 0
    split_count: int = 0
    dropped_rows: int = 0
    dropped_tokens: int = 0


def pack_corpus(
    tokenized: Sequence[TokenizedConversation], options: StrategyOptions
) -> tuple[list[emit.Batch], StrategyEvents]:
    """Run one strategy over a tokenized corpus, returning emitted batches."""
    events = StrategyEvents()
    if options.strategy == STRATEGY_PADDING:
        batches, stats = make_padded_batches(
            tokenized,
            options.batch_size,
            options.model_max,
            options.seed,
            pad_id=options.pad_id,
            eos_id=options.eos_id,
            drop_last=options.drop_last,
            pad_then_eos=options.pad_then_eos,
            shuffle=options.shuffle,
        )
        events.truncation_count = stats.truncation_count
        events.truncated_tokens = stats.truncated_tokens
        events.dropped_rows = stats.dropped_rows
        events.dropped_tokens = stats.dropped_tokens
        return (
            emit.rows_from_padded_batches(
                batches, emit_position_ids=options.emit_position_ids
            ),
            events,
        )

    if options.strategy == STRATEGY_RANDOM:
        stream = build_stream(tokenized, options.seed, shuffle=options.shuffle)
        chunks = chunk_stream(stream, options.model_max, pad_id=options.pad_id)
        events.split_count = split_report(chunks)
        if (
            options.drop_last
            and chunks
            and chunks[-1].content_length < options.model_max
        ):
            dropped = chunks.pop()
            events.dropped_rows += 1
            events.dropped_tokens += dropped.content_length
        chunk_batches = batch_chunks(
            chunks, options.batch_size, options.seed, drop_last=options.drop_last
        )
        if options.drop_last:
            kept = sum(len(batch) for batch in chunk_batches)
            # Chunks lost to the short-batch drop are all full-length content;
            # the padded tail chunk was already removed above.
            events.dropped_rows += len(chunks) - kept
            events.dropped_tokens += (len(chunks) - kept) * options.model_max
        return (
            emit.rows_from_chunk_batches(
                chunk_batches,
                mask_orphan_answers=options.mask_orphan_answers,
                emit_position_ids=options.emit_position_ids,
            ),
            events,
        )

    packed, stats = pack_greedy(
        tokenized,
        options.model_max,
        options.greedy_mode,
        eos_id=options.eos_id,
    )
    events.oversize_count = stats.oversize_count
    events.truncation_count = stats.oversize_count
    events.truncated_tokens = stats.truncated_tokens
    finalized = finalize_rows(
        packed,
        options.model_max,
        options.batch_size,
        options.seed,
        pad_id=options.pad_id,
        dynamic=options.dynamic_greedy_padding,
        drop_last=options.drop_last,
        stats=stats,
    )
    events.dropped_rows = stats.dropped_rows
    events.dropped_tokens = stats.dropped_tokens
    return (
        emit.rows_from_greedy_batches(
            finalized, emit_position_ids=options.emit_position_ids
        ),
        events,
    )


def make_tokenizer(
    spec: str, vocab_size: int = DEFAULT_VOCAB_SIZE
) -> ReferenceTokenizer | SubprocessTokenizer:
    """``reference`` or ``cmd:<shell command>`` (line-protocol subprocess)."""
    if spec == "reference":
        return ReferenceTokenizer(vocab_size=vocab_size)
    if spec.startswith("cmd:"):
        return SubprocessTokenizer(spec[4:], vocab_size=vocab_size)
    raise ConfigConflict(f"unknown tokenizer {spec!r}")


def load_tokenized(
    paths: Iterable[str | Path],
    *,
    template_name: str = "llama3",
    tokenizer_spec: str = "reference",
    vocab_size: int = DEFAULT_VOCAB_SIZE,
    fold_system: bool = False,
    eos_per_pair: bool = False,
    stats: IngestStats | None = None,
) -> list[TokenizedConversation]:
    """Read JSON Lines corpora into tokenized conversations.

    Records carrying ``tokens``/``role_labels`` are ingested as pre-tokenized;
    everything else is validated and encoded through the chat template.
    """
    if template_name not in TEMPLATE_PRESETS:
        raise ConfigConflict(f"unknown template preset {template_name!r}")
    template = TEMPLATE_PRESETS[template_name]
    tokenizer = make_tokenizer(tokenizer_spec, vocab_size)

    out: list[TokenizedConversation] = []
    for path, line_no, conv_id, record in iter_jsonl_records(paths):
        try:
            if "tokens" in record:
                out.append(
                    ingest_pretokenized(
                        record,
                        conversation_id=conv_id,
                        vocab_size=vocab_size,
                        eos_id=tokenizer.eos_id,
                    )
                )
                if stats is not None:
                    stats.records += 1
            else:
                conversation = validate_conversation(
                    record,
                    conversation_id=conv_id,
                    fold_system=fold_system,
                    stats=stats,
                )
                out.append(
                    encode_conversation(
                        conversation, template, tokenizer, eos_per_pair=eos_per_pair
                    )
                )
        except ParseError:
            raise
        except SeqPackError as exc:
            raise ParseError(
                f"{path}:{line_no}: {type(exc).__name__}: {exc}",
                path=str(path),
                line=line_no,
            ) from exc
    if isinstance(tokenizer, SubprocessTokenizer):
        tokenizer.close()
    return out
