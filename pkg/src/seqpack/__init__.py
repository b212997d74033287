"""seqpack: pack chat SFT corpora into training-ready batches.

Three strategies over the same tokenized corpus: dynamic padding, random
packing (concatenate and chunk), and greedy packing (length-sorted whole
conversations). Every emitted row carries an exact loss mask, segment ids,
and provenance back to its source conversations.
"""

from .conversation import (
    ChatTemplate,
    Conversation,
    IngestStats,
    Message,
    RenderedMessage,
    TEMPLATE_PRESETS,
    read_conversations,
    render,
    validate_conversation,
)
from .emit import (
    Batch,
    Row,
    build_loss_mask,
    build_segment_ids,
    read_binary,
    read_jsonl,
    write_binary,
    write_jsonl,
)
from .errors import SeqPackError
from .greedy_packing import (
    MODE_FIRST_FIT,
    MODE_NEXT_FIT,
    PackedSequence,
    finalize_rows,
    pack_greedy,
    plan_pack,
    sort_by_length,
)
from .padding import PaddedBatch, make_padded_batches, pad_or_truncate_row
from .pipeline import (
    STRATEGIES,
    STRATEGY_GREEDY,
    STRATEGY_PADDING,
    STRATEGY_RANDOM,
    StrategyOptions,
    load_tokenized,
    pack_corpus,
)
from .random_packing import (
    Chunk,
    PackedStream,
    batch_chunks,
    build_stream,
    chunk_stream,
    split_report,
)
from .report import (
    HardwareProfile,
    PackingReport,
    compare_strategies,
    corpus_diagnostics,
    estimate_steps,
    estimate_time,
)
from .tokenizer import (
    LABEL_ANSWER,
    LABEL_INSTRUCTION,
    LABEL_PAD,
    LABEL_SEPARATOR,
    ReferenceTokenizer,
    SubprocessTokenizer,
    TokenizedConversation,
    encode_conversation,
    ingest_pretokenized,
)

__version__ = "0.1.0"
