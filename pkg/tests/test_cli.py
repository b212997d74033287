import json
import random
import subprocess
import sys

import pytest

from helpers import raw_record
from seqpack import emit
from seqpack.cli import main


def write_corpus(path, records):
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record) + "\n")


@pytest.fixture
def corpus(tmp_path):
    rng = random.Random(0)
    path = tmp_path / "in.jsonl"
    write_corpus(path, [raw_record(rng.randint(1, 3), rng) for _ in range(30)])
    return path


def test_pack_writes_rows_and_report(tmp_path, corpus, capsys):
    out = tmp_path / "out"
    code = main(
        ["pack", str(corpus), "--strategy", "greedy_packing", "--max-len", "64", "-o", str(out)]
    )
    assert code == 0
    assert (out / "rows.jsonl").is_file()
    assert (out / "report.json").is_file()
    assert (out / "report.txt").is_file()
    report = json.loads((out / "report.json").read_text())
    assert report["report"]["strategy"] == "greedy_packing"
    assert report["config"]["seed"] == 42


def test_missing_input_exit_2(tmp_path, capsys):
    code = main(["pack", str(tmp_path / "nope.jsonl"), "--strategy", "padding"])
    assert code == 2
    assert "nope.jsonl" in capsys.readouterr().err


def test_parse_error_line_numbered(tmp_path, capsys):
    path = tmp_path / "bad.jsonl"
    rng = random.Random(0)
    write_corpus(path, [raw_record(1, rng)])
    with open(path, "a") as handle:
        handle.write("{broken\n")
    code = main(["pack", str(path), "--strategy", "padding", "-o", str(tmp_path / "o")])
    assert code == 1
    err = capsys.readouterr().err
    assert "ParseError" in err and ":2:" in err


def test_config_conflict_before_work(tmp_path, corpus, capsys):
    out = tmp_path / "never"
    code = main(
        ["pack", str(corpus), "--strategy", "padding", "--greedy-mode", "first_fit", "-o", str(out)]
    )
    assert code == 1
    assert "ConfigConflict" in capsys.readouterr().err
    assert not out.exists()


def test_conflicting_binary_position_ids(corpus, tmp_path, capsys):
    code = main(
        ["pack", str(corpus), "--strategy", "greedy_packing", "--format", "binary",
         "--emit-position-ids", "-o", str(tmp_path / "o")]
    )
    assert code == 1
    assert "ConfigConflict" in capsys.readouterr().err


def test_determinism_same_seed(tmp_path, corpus):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(
            ["pack", str(corpus), "--strategy", "random_packing", "--max-len", "48",
             "--seed", "7", "-o", str(out)]
        ) == 0
        outs.append(out)
    assert (outs[0] / "rows.jsonl").read_bytes() == (outs[1] / "rows.jsonl").read_bytes()
    assert (outs[0] / "report.json").read_bytes() == (outs[1] / "report.json").read_bytes()


def test_compare_writes_aligned_reports(tmp_path, corpus):
    profile = tmp_path / "profile.json"
    profile.write_text(
        json.dumps(
            {
                "devices": 32,
                "per_device_batch": 2,
                "grad_accumulation": 2,
                "epochs": 4,
                "measured_steps_per_second": 0.165,
            }
        )
    )
    out = tmp_path / "cmp"
    code = main(
        ["compare", str(corpus), "--profile", str(profile), "--max-len", "64", "-o", str(out)]
    )
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert set(report["strategies"]) == {"padding", "random_packing", "greedy_packing"}
    assert report["effective_batch"] == 128
    for name in report["strategies"]:
        assert report["strategies"][name]["projected_seconds_steps_basis"] is not None


def test_compare_stdout_when_no_out(corpus, capsys):
    code = main(["compare", str(corpus), "--max-len", "64"])
    assert code == 0
    out = capsys.readouterr().out
    assert json.loads(out)["strategies"]["padding"]["row_count"] == 30


def test_config_file_and_cli_precedence(tmp_path, corpus):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"strategy": "greedy_packing", "max_len": 32, "seed": 5}))
    out = tmp_path / "o"
    code = main(
        ["pack", str(corpus), "--config", str(config), "--max-len", "64", "-o", str(out)]
    )
    assert code == 0
    written = json.loads((out / "report.json").read_text())["config"]
    assert written["strategy"] == "greedy_packing"  # from config file
    assert written["max_len"] == 64  # CLI wins
    assert written["seed"] == 5  # from config file


def test_unknown_config_key_rejected(tmp_path, corpus, capsys):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"strategy": "padding", "maxlen": 32}))
    code = main(["pack", str(corpus), "--config", str(config)])
    assert code == 1
    assert "ConfigConflict" in capsys.readouterr().err


def test_seed_env_fallback(tmp_path, corpus, monkeypatch):
    out_env = tmp_path / "env"
    monkeypatch.setenv("SEQPACK_SEED", "9")
    assert main(["pack", str(corpus), "--strategy", "padding", "-o", str(out_env)]) == 0
    report = json.loads((out_env / "report.json").read_text())
    assert report["config"]["seed"] == 9
    out_cli = tmp_path / "cli"
    assert main(
        ["pack", str(corpus), "--strategy", "padding", "--seed", "3", "-o", str(out_cli)]
    ) == 0
    report = json.loads((out_cli / "report.json").read_text())
    assert report["config"]["seed"] == 3


def test_stdout_streaming(corpus, capsys):
    code = main(["pack", str(corpus), "--strategy", "padding", "--max-len", "64", "-o", "-"])
    assert code == 0
    lines = [line for line in capsys.readouterr().out.splitlines() if line.strip()]
    assert len(lines) == 30
    assert all("tokens" in json.loads(line) for line in lines)


def test_pretokenized_ingestion(tmp_path):
    path = tmp_path / "pre.jsonl"
    records = [
        {"tokens": [5, 6, 7, 1], "role_labels": ["instruction", "answer", "answer", "separator"]},
        {"tokens": [9, 8, 1], "role_labels": ["instruction", "answer", "separator"]},
    ]
    write_corpus(path, records)
    out = tmp_path / "o"
    code = main(["pack", str(path), "--strategy", "greedy_packing", "--max-len", "8", "-o", str(out)])
    assert code == 0
    rows = emit.read_jsonl(out / "rows.jsonl")
    assert sum(1 for _ in rows) == 1  # both fit one row: 4 + 3 <= 8
    assert rows[0].sources == ["pre:0", "pre:1"]


def test_fold_system_flag(tmp_path, capsys):
    path = tmp_path / "sys.jsonl"
    write_corpus(
        path,
        [
            {
                "conversations": [
                    {"role": "system", "content": "be terse"},
                    {"role": "user", "content": "hi"},
                    {"role": "assistant", "content": "ok"},
                ]
            }
        ],
    )
    code = main(["pack", str(path), "--strategy", "padding", "-o", str(tmp_path / "a")])
    assert code == 1
    assert "SystemMessageNotSupported" in capsys.readouterr().err
    code = main(
        ["pack", str(path), "--strategy", "padding",
         "--fold-system-into-first-user", "-o", str(tmp_path / "b")]
    )
    assert code == 0


def test_diagnose_outputs_json(corpus, capsys):
    code = main(["diagnose", str(corpus), "--strategy", "padding", "--max-len", "64"])
    assert code == 0
    data = json.loads(capsys.readouterr().out)
    assert data["conversation_count"] == 30
    assert "multi_turn_fraction" in data


def test_inspect_row(tmp_path, corpus, capsys):
    out = tmp_path / "o"
    main(["pack", str(corpus), "--strategy", "greedy_packing", "--max-len", "64", "-o", str(out)])
    capsys.readouterr()
    code = main(["inspect", str(out / "rows.jsonl"), "--row", "0"])
    assert code == 0
    text = capsys.readouterr().out
    assert "row 0" in text and "segment 1" in text


def test_inspect_binary(tmp_path, corpus, capsys):
    out = tmp_path / "o"
    main(["pack", str(corpus), "--strategy", "greedy_packing", "--max-len", "64",
          "--format", "binary", "-o", str(out)])
    capsys.readouterr()
    code = main(["inspect", str(out / "rows.bin"), "--row", "1"])
    assert code == 0
    assert "row 1" in capsys.readouterr().out


def test_console_entry_point_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "seqpack.cli", "--help"], capture_output=True, text=True
    )
    assert proc.returncode == 0
    assert "pack" in proc.stdout


def test_external_tokenizer_via_cli(tmp_path, capsys):
    rng = random.Random(1)
    path = tmp_path / "in.jsonl"
    write_corpus(path, [raw_record(1, rng) for _ in range(4)])
    out = tmp_path / "o"
    command = (
        "cmd:python3 -u -c \"import sys\n"
        "for line in sys.stdin:\n"
        "    print(' '.join(str(100 + len(w)) for w in line.split()), flush=True)\""
    )
    code = main(
        ["pack", str(path), "--strategy", "padding", "--max-len", "64",
         "--tokenizer", command, "-o", str(out)]
    )
    assert code == 0
    rows = emit.read_jsonl(out / "rows.jsonl")
    assert len(rows) == 4
