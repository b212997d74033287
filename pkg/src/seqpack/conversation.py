"""Conversation parsing, validation, and chat-template rendering.

A conversation is an ordered list of (user, assistant) message pairs. Records
arrive as ShareGPT-style JSON Lines and are normalized here before anything
downstream touches them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from .errors import (
    EmptyContent,
    EmptyConversation,
    InputNotFound,
    ParseError,
    RoleAlternationViolation,
    SystemMessageNotSupported,
    UnknownRole,
)

ROLE_USER = "user"
ROLE_ASSISTANT = "assistant"
ROLE_SYSTEM = "system"

# ShareGPT and friends spell roles in several ways.
_ROLE_ALIASES = {
    "user": ROLE_USER,
    "human": ROLE_USER,
    "assistant": ROLE_ASSISTANT,
    "gpt": ROLE_ASSISTANT,
    "system": ROLE_SYSTEM,
}


@dataclass(frozen=True)
class Message:
    role: str
    content: str


@dataclass(frozen=True)
class Conversation:
    """A validated conversation: user/assistant strictly alternating, user first."""

    id: str
    messages: tuple[Message, ...]

    @property
    def turn_count(self) -> int:
        return len(self.messages) // 2


@dataclass(frozen=True)
class ChatTemplate:
    """Per-role header strings plus the terminator appended to every message."""

    user_header: str
    assistant_header: str
    turn_terminator: str

    def __post_init__(self) -> None:
        parts = (self.user_header, self.assistant_header, self.turn_terminator)
        if any(not p for p in parts):
            raise ValueError("chat template fields must be non-empty")
        if len(set(parts)) != 3:
            raise ValueError("chat template fields must be mutually distinct")

    def header_for(self, role: str) -> str:
        return self.user_header if role == ROLE_USER else self.assistant_header


TEMPLATE_PRESETS = {
    "llama3": ChatTemplate(
        user_header="<|start_header_id|>user<|end_header_id|>",
        assistant_header="<|start_header_id|>assistant<|end_header_id|>",
        turn_terminator="<|eot_id|>",
    ),
}


@dataclass(frozen=True)
class RenderedMessage:
    text: str
    role: str
    source: tuple[str, int]  # (conversation id, message index)


@dataclass
class IngestStats:
    """Counters for lossy normalization events during ingestion."""

    records: int = 0
    dropped_trailing_user: int = 0
    folded_system: int = 0


def _normalize_role(raw_role: object, index: int) -> str:
    if not isinstance(raw_role, str) or raw_role.lower() not in _ROLE_ALIASES:
        raise UnknownRole(f"unknown role {raw_role!r} at message index {index}")
    return _ROLE_ALIASES[raw_role.lower()]


def _extract_messages(raw: dict) -> list[dict]:
    for key in ("conversations", "messages"):
        if key in raw:
            msgs = raw[key]
            if not isinstance(msgs, list):
                raise EmptyConversation(f"field {key!r} is not a list")
            return msgs
    raise EmptyConversation("record has no 'conversations' or 'messages' field")


def validate_conversation(
    raw: dict,
    *,
    conversation_id: str,
    fold_system: bool = False,
    stats: IngestStats | None = None,
) -> Conversation:
    """Validate one parsed record into a Conversation.

    Content is whitespace-trimmed. A leading system message is rejected unless
    ``fold_system`` is set, in which case its text is prepended to the first
    user message. A trailing unanswered user message is dropped (loss is only
    computed on answers, so it would contribute nothing).
    """
    raw_messages = _extract_messages(raw)
    if not raw_messages:
        raise EmptyConversation(f"conversation {conversation_id} has no messages")

    normalized: list[Message] = []
    system_prefix = ""
    for index, item in enumerate(raw_messages):
        if not isinstance(item, dict):
            raise EmptyContent(f"message at index {index} is not an object")
        role = _normalize_role(item.get("role", item.get("from")), index)
        content = item.get("content", item.get("value"))
        if not isinstance(content, str) or not content.strip():
            raise EmptyContent(
                f"empty content at message index {index} in conversation {conversation_id}"
            )
        content = content.strip()
        if role == ROLE_SYSTEM:
            if index != 0 or not fold_system:
                raise SystemMessageNotSupported(
                    f"system message at index {index} in conversation {conversation_id}; "
                    "rerun with --fold-system-into-first-user to merge it"
                )
            system_prefix = content
            if stats is not None:
                stats.folded_system += 1
            continue
        normalized.append(Message(role=role, content=content))

    if system_prefix:
        if not normalized or normalized[0].role != ROLE_USER:
            raise RoleAlternationViolation(
                f"conversation {conversation_id} has no user message to fold system text into",
                index=0,
            )
        normalized[0] = Message(
            role=ROLE_USER, content=f"{system_prefix}\n{normalized[0].content}"
        )

    for index, message in enumerate(normalized):
        expected = ROLE_USER if index % 2 == 0 else ROLE_ASSISTANT
        if message.role != expected:
            raise RoleAlternationViolation(
                f"expected role {expected!r} at message index {index} "
                f"in conversation {conversation_id}, got {message.role!r}",
                index=index,
            )

    # Odd length means a trailing unanswered user message; drop it.
    if len(normalized) % 2 != 0:
        normalized.pop()
        if stats is not None:
            stats.dropped_trailing_user += 1

    if not normalized:
        raise EmptyConversation(
            f"conversation {conversation_id} has no usable message pairs"
        )

    if stats is not None:
        stats.records += 1
    return Conversation(id=conversation_id, messages=tuple(normalized))


def render(conversation: Conversation, template: ChatTemplate) -> list[RenderedMessage]:
    """Render each message as header, content, terminator (newline-separated).

    The separators keep headers, content words, and terminator whitespace-apart
    so whitespace tokenizers see them as distinct tokens, and make the render
    reversible: strip the header and terminator to recover the content.
    """
    rendered = []
    for index, message in enumerate(conversation.messages):
        header = template.header_for(message.role)
        rendered.append(
            RenderedMessage(
                text=f"{header}\n{message.content}\n{template.turn_terminator}",
                role=message.role,
                source=(conversation.id, index),
            )
        )
    return rendered


def strip_rendered(rendered: RenderedMessage, template: ChatTemplate) -> str:
    """Inverse of render for one message: recover the original content."""
    header = (
        template.user_header if rendered.role == ROLE_USER else template.assistant_header
    )
    return rendered.text[len(header) + 1 : -(len(template.turn_terminator) + 1)]


def iter_jsonl_records(
    paths: Iterable[str | Path],
) -> Iterator[tuple[Path, int, str, dict]]:
    """Yield (path, line number, synthesized id, record) from JSON Lines files.

    The synthesized id is ``<file-stem>:<record-ordinal>`` and is used when a
    record carries no explicit ``id``, keeping provenance stable.
    """
    for path in paths:
        path = Path(path)
        if not path.is_file():
            raise InputNotFound(f"input file not found: {path}")
        with path.open("r", encoding="utf-8") as handle:
            for line_no, line in enumerate(handle, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ParseError(
                        f"{path}:{line_no}: invalid JSON: {exc.msg}",
                        path=str(path),
                        line=line_no,
                    ) from exc
                if not isinstance(record, dict):
                    raise ParseError(
                        f"{path}:{line_no}: record is not an object",
                        path=str(path),
                        line=line_no,
                    )
                conv_id = str(record.get("id") or f"{path.stem}:{line_no - 1}")
                yield path, line_no, conv_id, record


def read_conversations(
    paths: Iterable[str | Path],
    *,
    fold_system: bool = False,
    stats: IngestStats | None = None,
) -> Iterator[Conversation]:
    """Stream validated conversations from JSON Lines files."""
    for path, line_no, conv_id, record in iter_jsonl_records(paths):
        try:
            yield validate_conversation(
                record,
                conversation_id=conv_id,
                fold_system=fold_system,
                stats=stats,
            )
        except (
            EmptyConversation,
            EmptyContent,
            RoleAlternationViolation,
            UnknownRole,
            SystemMessageNotSupported,
        ) as exc:
            raise ParseError(
                f"{path}:{line_no}: {type(exc).__name__}: {exc}",
                path=str(path),
                line=line_no,
            ) from exc
