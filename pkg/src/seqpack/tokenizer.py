"""Token-id sequences with per-token role labels.

Ships a deterministic whitespace reference tokenizer (stable hashed ids, no
training required) plus two other routes into token space: a subprocess line
protocol for external tokenizers and ingestion of pre-tokenized records.
"""

from __future__ import annotations

import hashlib
import subprocess
from dataclasses import dataclass

from .conversation import ChatTemplate, Conversation, ROLE_ASSISTANT
from .errors import (
    LengthMismatch,
    MissingFinalEos,
    OrphanAnswer,
    TokenIdOutOfRange,
    TokenizerFailure,
    UnknownLabel,
)

LABEL_INSTRUCTION = "instruction"
LABEL_ANSWER = "answer"
LABEL_SEPARATOR = "separator"
LABEL_PAD = "pad"

CONTENT_LABELS = frozenset({LABEL_INSTRUCTION, LABEL_ANSWER, LABEL_SEPARATOR})

DEFAULT_VOCAB_SIZE = 32000
PAD_ID = 0
EOS_ID = 1


@dataclass(frozen=True)
class TokenizedConversation:
    """One conversation as a token stream with parallel role labels.

    The final token is always the sequence-level EOS labeled as a separator.
    ``content_token_count`` counts message-content tokens only, excluding
    template headers, terminators, and EOS markers.
    """

    conversation_id: str
    tokens: tuple[int, ...]
    labels: tuple[str, ...]
    turn_count: int
    content_token_count: int

    @property
    def length(self) -> int:
        return len(self.tokens)


class ReferenceTokenizer:
    """Deterministic whitespace tokenizer.

    Each distinct word maps to a stable id from a seeded 64-bit blake2b hash
    folded into the vocabulary range, skipping the reserved PAD and EOS ids.
    Identical input gives identical output across runs and platforms.
    """

    def __init__(self, vocab_size: int = DEFAULT_VOCAB_SIZE, seed: int = 0):
        if vocab_size < 3:
            raise ValueError("vocab_size must leave room for PAD, EOS, and content")
        self.vocab_size = vocab_size
        self.pad_id = PAD_ID
        self.eos_id = EOS_ID
        self._key = seed.to_bytes(8, "little", signed=False)

    def word_id(self, word: str) -> int:
        digest = hashlib.blake2b(word.encode("utf-8"), digest_size=8, key=self._key)
        value = int.from_bytes(digest.digest(), "little")
        return 2 + value % (self.vocab_size - 2)

    def tokenize(self, text: str) -> list[int]:
        return [self.word_id(word) for word in text.split()]


class SubprocessTokenizer:
    """External tokenizer behind a line protocol.

    One text per input line, one space-separated id list per output line.
    Newlines inside a text are replaced by spaces before sending, a constraint
    of the protocol. PAD and EOS ids default to the reference convention.
    """

    def __init__(
        self,
        command: str,
        vocab_size: int = DEFAULT_VOCAB_SIZE,
        pad_id: int = PAD_ID,
        eos_id: int = EOS_ID,
    ):
        self.vocab_size = vocab_size
        self.pad_id = pad_id
        self.eos_id = eos_id
        try:
            self._proc = subprocess.Popen(
                command,
                shell=True,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise TokenizerFailure(f"failed to start tokenizer {command!r}: {exc}") from exc

    def tokenize(self, text: str) -> list[int]:
        if self._proc.poll() is not None:
            raise TokenizerFailure("external tokenizer exited prematurely")
        line = text.replace("\n", " ").replace("\r", " ")
        assert self._proc.stdin is not None and self._proc.stdout is not None
        try:
            self._proc.stdin.write(line + "\n")
            self._proc.stdin.flush()
            reply = self._proc.stdout.readline()
        except (BrokenPipeError, OSError) as exc:
            raise TokenizerFailure(f"tokenizer pipe failed: {exc}") from exc
        if reply == "":
            raise TokenizerFailure("external tokenizer closed its output stream")
        try:
            return [int(part) for part in reply.split()]
        except ValueError as exc:
            raise TokenizerFailure(f"unparseable tokenizer reply: {reply!r}") from exc

    def close(self) -> None:
        if self._proc.poll() is None:
            assert self._proc.stdin is not None
            self._proc.stdin.close()
            self._proc.wait(timeout=10)


def encode_conversation(
    conversation: Conversation,
    template: ChatTemplate,
    tokenizer: ReferenceTokenizer | SubprocessTokenizer,
    *,
    eos_per_pair: bool = False,
) -> TokenizedConversation:
    """Tokenize a conversation with per-token labels.

    Headers (both roles) are labeled instruction, assistant content is the
    answer, terminators and EOS markers are separators. By default exactly one
    sequence-level EOS closes the conversation; ``eos_per_pair`` adds one after
    every (instruction, answer) pair instead.
    """
    tokens: list[int] = []
    labels: list[str] = []
    content_tokens = 0
    for message in conversation.messages:
        header_ids = tokenizer.tokenize(template.header_for(message.role))
        content_ids = tokenizer.tokenize(message.content)
        terminator_ids = tokenizer.tokenize(template.turn_terminator)

        tokens.extend(header_ids)
        labels.extend([LABEL_INSTRUCTION] * len(header_ids))
        content_label = (
            LABEL_ANSWER if message.role == ROLE_ASSISTANT else LABEL_INSTRUCTION
        )
        tokens.extend(content_ids)
        labels.extend([content_label] * len(content_ids))
        content_tokens += len(content_ids)
        tokens.extend(terminator_ids)
        labels.extend([LABEL_SEPARATOR] * len(terminator_ids))

        if eos_per_pair and message.role == ROLE_ASSISTANT:
            tokens.append(tokenizer.eos_id)
            labels.append(LABEL_SEPARATOR)

    if not eos_per_pair:
        tokens.append(tokenizer.eos_id)
        labels.append(LABEL_SEPARATOR)

    return TokenizedConversation(
        conversation_id=conversation.id,
        tokens=tuple(tokens),
        labels=tuple(labels),
        turn_count=conversation.turn_count,
        content_token_count=content_tokens,
    )


def _turn_count_from_labels(labels: tuple[str, ...]) -> int:
    """Number of maximal answer runs, one per (instruction, answer) pair."""
    turns = 0
    previous_was_answer = False
    for label in labels:
        is_answer = label == LABEL_ANSWER
        if is_answer and not previous_was_answer:
            turns += 1
        previous_was_answer = is_answer
    return turns


def ingest_pretokenized(
    record: dict,
    *,
    conversation_id: str,
    vocab_size: int = DEFAULT_VOCAB_SIZE,
    eos_id: int = EOS_ID,
) -> TokenizedConversation:
    """Build a validated TokenizedConversation from a pre-tokenized record.

    The record supplies parallel ``tokens`` and ``role_labels`` lists. All
    invariants are enforced here: equal lengths, a final EOS separator, ids in
    vocabulary range, and every answer preceded by an instruction token.
    """
    tokens = record.get("tokens")
    labels = record.get("role_labels")
    if not isinstance(tokens, list) or not isinstance(labels, list):
        raise LengthMismatch(
            f"conversation {conversation_id}: 'tokens' and 'role_labels' lists required"
        )
    if len(tokens) != len(labels):
        raise LengthMismatch(
            f"conversation {conversation_id}: {len(tokens)} tokens vs {len(labels)} labels"
        )
    for position, label in enumerate(labels):
        if label not in CONTENT_LABELS:
            raise UnknownLabel(
                f"conversation {conversation_id}: unknown label {label!r} at position {position}"
            )
    for position, token in enumerate(tokens):
        if not isinstance(token, int) or not 0 <= token < vocab_size:
            raise TokenIdOutOfRange(
                f"conversation {conversation_id}: token {token!r} at position {position} "
                f"outside [0, {vocab_size})"
            )
    if not tokens or tokens[-1] != eos_id or labels[-1] != LABEL_SEPARATOR:
        raise MissingFinalEos(
            f"conversation {conversation_id}: sequence must end with EOS labeled separator"
        )
    seen_instruction = False
    for position, label in enumerate(labels):
        if label == LABEL_INSTRUCTION:
            seen_instruction = True
        elif label == LABEL_ANSWER and not seen_instruction:
            raise OrphanAnswer(
                f"conversation {conversation_id}: answer at position {position} "
                "with no preceding instruction"
            )

    label_tuple = tuple(labels)
    return TokenizedConversation(
        conversation_id=conversation_id,
        tokens=tuple(tokens),
        labels=label_tuple,
        turn_count=_turn_count_from_labels(label_tuple),
        content_token_count=sum(1 for lab in labels if lab != LABEL_SEPARATOR),
    )
