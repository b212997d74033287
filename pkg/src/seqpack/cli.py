"""Command-line entry point: pack, compare, diagnose, inspect."""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from . import emit
from .conversation import IngestStats, TEMPLATE_PRESETS
from .errors import ConfigConflict, InputNotFound, ParseError, SeqPackError
from .greedy_packing import MODE_FIRST_FIT, MODE_NEXT_FIT
from .pipeline import (
    STRATEGIES,
    STRATEGY_GREEDY,
    STRATEGY_PADDING,
    STRATEGY_RANDOM,
    StrategyOptions,
    load_tokenized,
)
from .report import (
    HardwareProfile,
    PackingReport,
    canonical_json,
    compare_strategies,
    corpus_diagnostics,
    render_report_table,
    run_strategy_report,
)

DEFAULTS = {
    "strategy": None,
    "greedy_mode": None,
    "max_len": 4096,
    "batch_size": 8,
    "seed": 42,
    "template": "llama3",
    "tokenizer": "reference",
    "vocab_size": 32000,
    "format": "jsonl",
    "out": "out",
    "drop_last": False,
    "fold_system_into_first_user": False,
    "eos_per_pair": False,
    "pad_then_eos": False,
    "no_shuffle": False,
    "mask_orphan_answers": False,
    "dynamic_padding": False,
    "emit_position_ids": False,
}


@dataclass
class RunConfig:
    inputs: list[str]
    strategy: str | None
    greedy_mode: str | None
    max_len: int
    batch_size: int
    seed: int
    template: str
    tokenizer: str
    vocab_size: int
    format: str
    out: str
    drop_last: bool
    fold_system_into_first_user: bool
    eos_per_pair: bool
    pad_then_eos: bool
    no_shuffle: bool
    mask_orphan_answers: bool
    dynamic_padding: bool
    emit_position_ids: bool


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    if not Path(path).is_file():
        raise InputNotFound(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as handle:
        try:
            data = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON: {exc.msg}", path=path) from exc
    if not isinstance(data, dict):
        raise ParseError(f"{path}: config must be a JSON object", path=path)
    unknown = set(data) - set(DEFAULTS)
    if unknown:
        raise ConfigConflict(f"unknown config keys: {sorted(unknown)}")
    return data


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    """Merge CLI flags over config-file values over defaults.

    The seed additionally falls back to the SEQPACK_SEED environment variable
    before the built-in default.
    """
    file_data = _load_config_file(getattr(args, "config", None))

    def pick(key):
        value = getattr(args, key, None)
        if value is not None:
            return value
        if key in file_data:
            return file_data[key]
        if key == "seed" and "SEQPACK_SEED" in os.environ:
            raw = os.environ["SEQPACK_SEED"]
            try:
                return int(raw)
            except ValueError:
                raise ConfigConflict(f"SEQPACK_SEED is not an integer: {raw!r}")
        return DEFAULTS[key]

    return RunConfig(inputs=list(args.inputs), **{k: pick(k) for k in DEFAULTS})


def _check_conflicts(config: RunConfig) -> None:
    if config.strategy is None:
        raise ConfigConflict("--strategy is required (or set it in --config)")
    if config.strategy not in STRATEGIES:
        raise ConfigConflict(f"unknown strategy {config.strategy!r}")
    if config.greedy_mode is not None and config.strategy != STRATEGY_GREEDY:
        raise ConfigConflict("--greedy-mode only applies to greedy_packing")
    if config.dynamic_padding and config.strategy != STRATEGY_GREEDY:
        raise ConfigConflict("--dynamic-padding only applies to greedy_packing")
    if config.pad_then_eos and config.strategy != STRATEGY_PADDING:
        raise ConfigConflict("--pad-then-eos only applies to the padding strategy")
    if config.mask_orphan_answers and config.strategy != STRATEGY_RANDOM:
        raise ConfigConflict("--mask-orphan-answers only applies to random_packing")
    if config.no_shuffle and config.strategy != STRATEGY_RANDOM:
        raise ConfigConflict("--no-shuffle only applies to random_packing")
    if config.emit_position_ids and config.format == "binary":
        raise ConfigConflict("the binary layout has no position-id field")
    if config.out == "-" and config.format != "jsonl":
        raise ConfigConflict("streaming to stdout requires --format jsonl")
    if config.max_len < 1:
        raise ConfigConflict("--max-len must be >= 1")
    if config.batch_size < 1:
        raise ConfigConflict("--batch-size must be >= 1")


def _strategy_options(config: RunConfig) -> StrategyOptions:
    return StrategyOptions(
        strategy=config.strategy,
        model_max=config.max_len,
        batch_size=config.batch_size,
        seed=config.seed,
        greedy_mode=config.greedy_mode or MODE_NEXT_FIT,
        drop_last=config.drop_last,
        pad_then_eos=config.pad_then_eos,
        shuffle=not config.no_shuffle,
        mask_orphan_answers=config.mask_orphan_answers,
        dynamic_greedy_padding=config.dynamic_padding,
        emit_position_ids=config.emit_position_ids,
    )


def _load_profile(path: str | None) -> HardwareProfile:
    if path is None:
        return HardwareProfile()
    if not Path(path).is_file():
        raise InputNotFound(f"profile file not found: {path}")
    with open(path, "r", encoding="utf-8") as handle:
        try:
            data = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON: {exc.msg}", path=path) from exc
    try:
        return HardwareProfile.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise ConfigConflict(f"{path}: {exc}") from exc


def _ingest(config: RunConfig, stats: IngestStats):
    return load_tokenized(
        config.inputs,
        template_name=config.template,
        tokenizer_spec=config.tokenizer,
        vocab_size=config.vocab_size,
        fold_system=config.fold_system_into_first_user,
        eos_per_pair=config.eos_per_pair,
        stats=stats,
    )


def run_pack(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    _check_conflicts(config)
    profile = _load_profile(getattr(args, "profile", None))

    stats = IngestStats()
    tokenized = _ingest(config, stats)
    batches, report = run_strategy_report(tokenized, _strategy_options(config), profile)
    diagnostics = corpus_diagnostics(
        tokenized, model_max=config.max_len, strategy=config.strategy
    )
    for warning in diagnostics["warnings"]:
        print(f"{warning['level']}: {warning['message']}", file=sys.stderr)
    if stats.dropped_trailing_user:
        print(
            f"note: dropped {stats.dropped_trailing_user} trailing unanswered "
            "user message(s)",
            file=sys.stderr,
        )

    rows = list(emit.iter_rows(batches))
    if config.out == "-":
        emit.write_jsonl(rows, "-")
        print(f"emitted {len(rows)} rows to stdout", file=sys.stderr)
        return 0

    out_dir = Path(config.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if config.format == "jsonl":
        rows_path = out_dir / "rows.jsonl"
        emit.write_jsonl(rows, rows_path)
    else:
        rows_path = out_dir / "rows.bin"
        emit.write_binary(rows, rows_path)

    payload = {
        "config": {
            "inputs": config.inputs,
            "strategy": config.strategy,
            "greedy_mode": config.greedy_mode or MODE_NEXT_FIT,
            "max_len": config.max_len,
            "batch_size": config.batch_size,
            "seed": config.seed,
            "template": config.template,
            "tokenizer": config.tokenizer,
            "vocab_size": config.vocab_size,
            "format": config.format,
            "drop_last": config.drop_last,
        },
        "ingest": {
            "records": stats.records,
            "dropped_trailing_user": stats.dropped_trailing_user,
            "folded_system": stats.folded_system,
        },
        "report": report.to_dict(),
        "diagnostics": diagnostics,
    }
    (out_dir / "report.json").write_text(canonical_json(payload), encoding="utf-8")
    (out_dir / "report.txt").write_text(
        render_report_table([report]), encoding="utf-8"
    )
    print(
        f"wrote {len(rows)} rows to {rows_path} "
        f"(utilization {report.utilization:.3f})"
    )
    return 0


def run_compare(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    profile = _load_profile(getattr(args, "profile", None))
    stats = IngestStats()
    tokenized = _ingest(config, stats)
    result = compare_strategies(
        tokenized,
        profile,
        model_max=config.max_len,
        batch_size=config.batch_size,
        seed=config.seed,
        greedy_mode=config.greedy_mode or MODE_NEXT_FIT,
        drop_last=config.drop_last,
    )
    text = canonical_json(result)
    if getattr(args, "out", None):
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.json").write_text(text, encoding="utf-8")
        table = render_report_table(
            [PackingReport(**result["strategies"][name]) for name in STRATEGIES]
        )
        (out_dir / "report.txt").write_text(table, encoding="utf-8")
        print(f"wrote comparison report to {out_dir}")
    else:
        sys.stdout.write(text)
    return 0


def run_diagnose(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    strategy = config.strategy or STRATEGY_GREEDY
    if config.max_len < 1:
        raise ConfigConflict("--max-len must be >= 1")
    stats = IngestStats()
    tokenized = _ingest(config, stats)
    diagnostics = corpus_diagnostics(
        tokenized, model_max=config.max_len, strategy=strategy
    )
    for warning in diagnostics["warnings"]:
        print(f"{warning['level']}: {warning['message']}", file=sys.stderr)
    sys.stdout.write(canonical_json(diagnostics))
    return 0


def _segment_runs(segment_ids: list[int]) -> list[tuple[int, int, int]]:
    """(segment id, start, end) for each run of identical nonzero ids."""
    runs = []
    start = 0
    for position in range(1, len(segment_ids) + 1):
        if position == len(segment_ids) or segment_ids[position] != segment_ids[start]:
            if segment_ids[start] != 0:
                runs.append((segment_ids[start], start, position))
            start = position
    return runs


def run_inspect(args: argparse.Namespace) -> int:
    path = Path(args.rows_file)
    if not path.is_file():
        raise InputNotFound(f"rows file not found: {path}")
    with open(path, "rb") as handle:
        magic = handle.read(4)
    rows = emit.read_binary(path) if magic == emit.BINARY_MAGIC else emit.read_jsonl(path)
    if not rows:
        print(f"{path}: no rows")
        return 0
    if not 0 <= args.row < len(rows):
        raise ConfigConflict(f"--row {args.row} out of range (file has {len(rows)} rows)")
    row = rows[args.row]
    active = sum(row.loss_mask)
    print(f"row {args.row} of {path}")
    print(f"  length {len(row.tokens)}, pad {row.pad_count}, loss-active {active}")
    for segment_id, start, end in _segment_runs(row.segment_ids):
        source = (
            row.sources[segment_id - 1]
            if segment_id - 1 < len(row.sources)
            else "(not stored in binary)"
        )
        seg_active = sum(row.loss_mask[start:end])
        print(
            f"  segment {segment_id}: {source}  positions {start}..{end}"
            f"  loss-active {seg_active}"
        )
    preview = min(len(row.tokens), 24)
    print(f"  tokens[:{preview}]    {row.tokens[:preview]}")
    print(f"  loss_mask[:{preview}] {row.loss_mask[:preview]}")
    print(f"  segments[:{preview}]  {row.segment_ids[:preview]}")
    return 0


def _add_common_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("inputs", nargs="+", help="JSON Lines corpus file(s)")
    parser.add_argument("--config", help="JSON config file (CLI flags win)")
    parser.add_argument("--seed", type=int, help="shuffle seed (default 42)")
    parser.add_argument("--max-len", dest="max_len", type=int, help="model max input length (default 4096)")
    parser.add_argument("--batch-size", dest="batch_size", type=int, help="rows per batch (default 8)")
    parser.add_argument("--template", choices=sorted(TEMPLATE_PRESETS), help="chat template preset")
    parser.add_argument("--tokenizer", help="'reference' or 'cmd:<command>' line-protocol tokenizer")
    parser.add_argument("--vocab-size", dest="vocab_size", type=int, help="reference tokenizer vocabulary size")
    parser.add_argument(
        "--fold-system-into-first-user",
        dest="fold_system_into_first_user",
        action="store_true",
        default=None,
        help="prepend a leading system message to the first user message instead of rejecting it",
    )
    parser.add_argument(
        "--eos-per-pair",
        dest="eos_per_pair",
        action="store_true",
        default=None,
        help="append EOS after every instruction/answer pair instead of once per conversation",
    )
    parser.add_argument("--drop-last", dest="drop_last", action="store_true", default=None,
                        help="drop trailing partial batches (and the padded tail chunk)")
    parser.add_argument("--greedy-mode", dest="greedy_mode", choices=[MODE_NEXT_FIT, MODE_FIRST_FIT],
                        help="greedy bin placement rule (default next_fit)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seqpack",
        description="Convert chat SFT corpora into training-ready packed batches.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    pack = sub.add_parser("pack", help="run one strategy and write rows + report")
    _add_common_options(pack)
    pack.add_argument("--strategy", choices=STRATEGIES)
    pack.add_argument("--format", choices=["jsonl", "binary"], help="output format (default jsonl)")
    pack.add_argument("-o", "--out", help="output directory, or '-' for jsonl on stdout")
    pack.add_argument("--profile", help="hardware profile JSON for step/time projections")
    pack.add_argument("--pad-then-eos", dest="pad_then_eos", action="store_true", default=None,
                      help="padding strategy: place the row's final EOS after the PAD fill")
    pack.add_argument("--no-shuffle", dest="no_shuffle", action="store_true", default=None,
                      help="random packing: concatenate in corpus order")
    pack.add_argument("--mask-orphan-answers", dest="mask_orphan_answers", action="store_true", default=None,
                      help="random packing: zero the loss on answer tokens severed from their instruction")
    pack.add_argument("--dynamic-padding", dest="dynamic_padding", action="store_true", default=None,
                      help="greedy packing: pad rows to the batch-local maximum instead of max-len")
    pack.add_argument("--emit-position-ids", dest="emit_position_ids", action="store_true", default=None,
                      help="emit per-segment restarting position ids (jsonl only)")
    pack.set_defaults(func=run_pack)

    compare = sub.add_parser("compare", help="run all strategies and report side by side")
    _add_common_options(compare)
    compare.add_argument("--profile", help="hardware profile JSON")
    compare.add_argument("-o", "--out", help="output directory (default: print to stdout)")
    compare.set_defaults(func=run_compare)

    diagnose = sub.add_parser("diagnose", help="corpus lint: multi-turn share, lengths, oversize")
    _add_common_options(diagnose)
    diagnose.add_argument("--strategy", choices=STRATEGIES,
                          help="strategy you intend to use (default greedy_packing)")
    diagnose.set_defaults(func=run_diagnose)

    inspect = sub.add_parser("inspect", help="pretty-print one packed row with provenance")
    inspect.add_argument("rows_file", help="rows.jsonl or rows.bin produced by pack")
    inspect.add_argument("--row", type=int, default=0, help="row index (default 0)")
    inspect.set_defaults(func=run_inspect)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputNotFound as exc:
        print(f"error: InputNotFound: {exc}", file=sys.stderr)
        return 2
    except SeqPackError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
