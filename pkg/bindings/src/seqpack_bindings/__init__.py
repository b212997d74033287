"""Bindings for consuming seqpack output in training pipelines.

This package never reimplements the packing logic. ``pack_in_memory`` and
``compare`` shell out to the seqpack CLI and read back its files, so results
are bit-identical to a direct CLI run; ``load_packed`` reads the documented
binary layout directly and yields rows lazily.
"""

from __future__ import annotations

import json
import struct
import subprocess
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

__version__ = "0.1.0"

_MAGIC_PREFIX = b"SPK"
_SUPPORTED_VERSION = b"1"


class BindingError(Exception):
    """Base class for binding-side failures."""


class BadMagic(BindingError):
    pass


class VersionMismatch(BindingError):
    pass


class PackFailed(BindingError):
    """The seqpack CLI exited nonzero; carries the mapped error name."""

    def __init__(self, message: str, error_name: str = "", exit_code: int = 1):
        super().__init__(message)
        self.error_name = error_name
        self.exit_code = exit_code


# Mirrors of the primary tool's error names so callers can catch natively.
class EmptyConversation(PackFailed):
    pass


class RoleAlternationViolation(PackFailed):
    pass


class EmptyContent(PackFailed):
    pass


class UnknownRole(PackFailed):
    pass


class SystemMessageNotSupported(PackFailed):
    pass


class ParseError(PackFailed):
    pass


class ConfigConflict(PackFailed):
    pass


class InputNotFound(PackFailed):
    pass


_ERROR_CLASSES = {
    cls.__name__: cls
    for cls in (
        EmptyConversation,
        RoleAlternationViolation,
        EmptyContent,
        UnknownRole,
        SystemMessageNotSupported,
        ParseError,
        ConfigConflict,
        InputNotFound,
    )
}


@dataclass(frozen=True)
class PackedRow:
    tokens: tuple[int, ...]
    loss_mask: tuple[int, ...]
    segment_ids: tuple[int, ...]


class BoundBatchIterator:
    """Lazy iterator over a seqpack binary file, in emission order.

    Each instance holds its own file handle, so several independent iterators
    over one file are safe.
    """

    def __init__(self, path: str | Path):
        self._path = Path(path)
        handle = open(self._path, "rb")
        header = handle.read(12)
        if len(header) < 12 or header[:3] != _MAGIC_PREFIX:
            handle.close()
            raise BadMagic(f"{self._path}: not a seqpack binary file")
        if header[3:4] != _SUPPORTED_VERSION:
            handle.close()
            raise VersionMismatch(
                f"{self._path}: unsupported format version {header[3:4]!r}"
            )
        self._handle = handle
        self.row_length, self.row_count = struct.unpack("<II", header[4:12])
        self._mask_bytes = (self.row_length + 7) // 8
        self._cursor = 0

    def __iter__(self) -> Iterator[PackedRow]:
        return self

    def __next__(self) -> PackedRow:
        if self._cursor >= self.row_count:
            self._handle.close()
            raise StopIteration
        self._cursor += 1
        length = self.row_length
        tokens = struct.unpack(f"<{length}I", self._handle.read(length * 4))
        mask_blob = self._handle.read(self._mask_bytes)
        mask = tuple(
            (mask_blob[position >> 3] >> (position & 7)) & 1 for position in range(length)
        )
        segments = struct.unpack(f"<{length}H", self._handle.read(length * 2))
        return PackedRow(tokens=tokens, loss_mask=mask, segment_ids=segments)

    def close(self) -> None:
        self._handle.close()


def load_packed(path: str | Path) -> BoundBatchIterator:
    path = Path(path)
    if not path.is_file():
        raise InputNotFound(f"packed file not found: {path}", "InputNotFound")
    return BoundBatchIterator(path)


def _seqpack_argv() -> list[str]:
    return [sys.executable, "-m", "seqpack.cli"]


def _raise_from_stderr(stderr: str, exit_code: int) -> None:
    for line in reversed(stderr.splitlines()):
        if line.startswith("error: "):
            rest = line[len("error: ") :]
            name, _, message = rest.partition(": ")
            # Line-numbered ParseError diagnostics carry the underlying
            # validation error by name; surface that one natively.
            for inner in _ERROR_CLASSES:
                if f"{inner}:" in message:
                    name = inner
                    break
            cls = _ERROR_CLASSES.get(name, PackFailed)
            raise cls(message or rest, name, exit_code)
    raise PackFailed(stderr.strip() or "seqpack failed", exit_code=exit_code)


def _config_args(config: dict) -> list[str]:
    args: list[str] = []
    flags = {
        "drop_last": "--drop-last",
        "fold_system_into_first_user": "--fold-system-into-first-user",
        "eos_per_pair": "--eos-per-pair",
        "pad_then_eos": "--pad-then-eos",
        "no_shuffle": "--no-shuffle",
        "mask_orphan_answers": "--mask-orphan-answers",
        "dynamic_padding": "--dynamic-padding",
        "emit_position_ids": "--emit-position-ids",
    }
    values = {
        "strategy": "--strategy",
        "greedy_mode": "--greedy-mode",
        "max_len": "--max-len",
        "batch_size": "--batch-size",
        "seed": "--seed",
        "template": "--template",
        "tokenizer": "--tokenizer",
        "vocab_size": "--vocab-size",
        "format": "--format",
    }
    for key, value in config.items():
        if key in flags:
            if value:
                args.append(flags[key])
        elif key in values:
            args.extend([values[key], str(value)])
        else:
            raise ConfigConflict(f"unknown config key {key!r}", "ConfigConflict")
    return args


def _write_conversations(conversations: Sequence, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for conversation in conversations:
            if isinstance(conversation, dict):
                record = conversation
            else:
                record = {
                    "conversations": [
                        {"role": role, "content": content}
                        for role, content in conversation
                    ]
                }
            handle.write(json.dumps(record) + "\n")


def pack_in_memory(conversations: Sequence, config: dict) -> list[dict]:
    """Pack native conversations; identical to a CLI run with this config.

    ``conversations`` holds either raw record dicts or lists of
    (role, content) pairs. Returns the emitted row records.
    """
    config = dict(config)
    fmt = config.get("format", "jsonl")
    with tempfile.TemporaryDirectory(prefix="seqpack-bind-") as workdir:
        workdir = Path(workdir)
        corpus = workdir / "in.jsonl"
        out = workdir / "out"
        _write_conversations(conversations, corpus)
        proc = subprocess.run(
            _seqpack_argv()
            + ["pack", str(corpus)]
            + _config_args(config)
            + ["-o", str(out)],
            capture_output=True,
            text=True,
        )
        if proc.returncode != 0:
            _raise_from_stderr(proc.stderr, proc.returncode)
        if fmt == "binary":
            rows = load_packed(out / "rows.bin")
            return [
                {
                    "tokens": list(row.tokens),
                    "loss_mask": list(row.loss_mask),
                    "segment_ids": list(row.segment_ids),
                }
                for row in rows
            ]
        records = []
        with open(out / "rows.jsonl", "r", encoding="utf-8") as handle:
            for line in handle:
                if line.strip():
                    records.append(json.loads(line))
        return records


def compare(conversations: Sequence, config: dict | None = None, profile: dict | None = None) -> dict:
    """Side-by-side strategy reports, identical to ``seqpack compare``."""
    config = dict(config or {})
    config.pop("strategy", None)
    config.pop("format", None)
    with tempfile.TemporaryDirectory(prefix="seqpack-bind-") as workdir:
        workdir = Path(workdir)
        corpus = workdir / "in.jsonl"
        out = workdir / "out"
        _write_conversations(conversations, corpus)
        argv = _seqpack_argv() + ["compare", str(corpus)] + _config_args(config)
        if profile is not None:
            profile_path = workdir / "profile.json"
            profile_path.write_text(json.dumps(profile), encoding="utf-8")
            argv += ["--profile", str(profile_path)]
        argv += ["-o", str(out)]
        proc = subprocess.run(argv, capture_output=True, text=True)
        if proc.returncode != 0:
            _raise_from_stderr(proc.stderr, proc.returncode)
        return json.loads((out / "report.json").read_text(encoding="utf-8"))
