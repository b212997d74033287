"""Shared synthetic-corpus builders for the test suite."""

from __future__ import annotations

import random

from seqpack.tokenizer import (
    EOS_ID,
    LABEL_ANSWER,
    LABEL_INSTRUCTION,
    LABEL_SEPARATOR,
    TokenizedConversation,
)

WORDS = (
    "alpha bravo charlie delta echo foxtrot golf hotel india juliet kilo lima "
    "mike november oscar papa quebec romeo sierra tango uniform victor whiskey "
    "xray yankee zulu"
).split()


def synth_tokenized(
    conv_id: str,
    turns: list[tuple[int, int]],
    rng: random.Random,
    vocab_size: int = 32000,
) -> TokenizedConversation:
    """A tokenized conversation with the given (instruction, answer) span sizes.

    Each pair becomes instruction tokens, answer tokens, then a separator; one
    EOS closes the sequence. Token ids are drawn from the content range.
    """
    tokens: list[int] = []
    labels: list[str] = []
    content = 0
    for instr_len, ans_len in turns:
        for _ in range(instr_len):
            tokens.append(rng.randrange(2, vocab_size))
            labels.append(LABEL_INSTRUCTION)
        for _ in range(ans_len):
            tokens.append(rng.randrange(2, vocab_size))
            labels.append(LABEL_ANSWER)
        content += instr_len + ans_len
        tokens.append(rng.randrange(2, vocab_size))
        labels.append(LABEL_SEPARATOR)
    tokens.append(EOS_ID)
    labels.append(LABEL_SEPARATOR)
    return TokenizedConversation(
        conversation_id=conv_id,
        tokens=tuple(tokens),
        labels=tuple(labels),
        turn_count=len(turns),
        content_token_count=content,
    )


def fixed_length_tokenized(
    conv_id: str, length: int, rng: random.Random, vocab_size: int = 32000
) -> TokenizedConversation:
    """A valid tokenized conversation of an exact total length (>= 1).

    Length 1 degenerates to a bare EOS; length 2 to instruction plus EOS.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    tokens = tuple(rng.randrange(2, vocab_size) for _ in range(length - 1)) + (EOS_ID,)
    if length == 1:
        labels: tuple[str, ...] = (LABEL_SEPARATOR,)
    else:
        labels = (
            (LABEL_INSTRUCTION,)
            + (LABEL_ANSWER,) * (length - 2)
            + (LABEL_SEPARATOR,)
        )
    return TokenizedConversation(
        conversation_id=conv_id,
        tokens=tokens,
        labels=labels,
        turn_count=1 if length >= 3 else 0,
        content_token_count=length - 1,
    )


def random_corpus(
    rng: random.Random,
    *,
    max_conversations: int = 12,
    max_turns: int = 3,
    max_span: int = 9,
) -> list[TokenizedConversation]:
    count = rng.randint(1, max_conversations)
    corpus = []
    for index in range(count):
        turns = [
            (rng.randint(1, max_span), rng.randint(1, max_span))
            for _ in range(rng.randint(1, max_turns))
        ]
        corpus.append(synth_tokenized(f"conv:{index}", turns, rng))
    return corpus


def raw_record(turns: int, rng: random.Random, conv_id: str | None = None) -> dict:
    """A raw ShareGPT-style record with ``turns`` user/assistant pairs."""
    messages = []
    for _ in range(turns):
        messages.append(
            {
                "role": "user",
                "content": " ".join(rng.choices(WORDS, k=rng.randint(1, 8))),
            }
        )
        messages.append(
            {
                "role": "assistant",
                "content": " ".join(rng.choices(WORDS, k=rng.randint(1, 12))),
            }
        )
    record: dict = {"conversations": messages}
    if conv_id is not None:
        record["id"] = conv_id
    return record
