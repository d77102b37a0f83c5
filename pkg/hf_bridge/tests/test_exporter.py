import json
import subprocess
import sys
from pathlib import Path

import pytest

from hf_bridge import ExportConfig, ExportConfigError, export_run
from hf_bridge.cli import main as cli_main
from hf_bridge.client import BridgeConnectionError

DATA = Path(__file__).parent / "data"


def load_log(path):
    sent, received = [], []
    for raw in Path(path).read_text().splitlines():
        entry = json.loads(raw)
        (sent if entry["dir"] == "send" else received).append(json.loads(entry["line"]))
    return sent, received


# ----------------------------------------------------------- live runs


def test_live_run_64_steps_tokens_within_candidates(tiny_model_dir, tmp_path):
    log = tmp_path / "log.jsonl"
    config = ExportConfig(model=tiny_model_dir, depth=2, k=6, temperature=0.6, max_new=64, seed=0)
    records = export_run(config, [[1, 2, 3]], message_log_path=log)
    assert records[0]["trace"]["steps"] >= 64
    sent, received = load_log(log)
    steps = [m for m in sent if m["type"] == "step"]
    tokens = [m for m in received if m["type"] == "token"]
    assert len(steps) == len(tokens) >= 64
    for step, token in zip(steps, tokens):
        assert token["id"] == step["id"]
        assert token["token"] in step["topk_ids"]


def test_step_ids_strictly_increase_across_prompts(tiny_model_dir, tmp_path):
    log = tmp_path / "log.jsonl"
    config = ExportConfig(model=tiny_model_dir, depth=2, k=4, max_new=6, seed=1)
    export_run(config, [[1, 2], [3, 4], [5]], message_log_path=log)
    sent, _ = load_log(log)
    ids = [m["id"] for m in sent if m["type"] == "step"]
    assert ids == sorted(ids)
    assert len(set(ids)) == len(ids)


def test_sliced_rows_are_valid_subdistributions(tiny_model_dir, tmp_path):
    log = tmp_path / "log.jsonl"
    config = ExportConfig(model=tiny_model_dir, depth=4, k=8, max_new=12, seed=2)
    export_run(config, [[7, 8, 9]], message_log_path=log)
    sent, _ = load_log(log)
    for msg in sent:
        if msg["type"] != "step":
            continue
        rows = msg["layer_probs"]
        assert len(rows) == 4 and all(len(r) == 8 for r in rows)
        flat = [v for row in rows for v in row]
        assert min(flat) >= 0.0 and max(flat) <= 1.0
        assert sum(rows[0]) <= 1.0 + 1e-4
        assert 0.0 <= msg["final_top1"] <= 1.0


def test_no_tags_means_every_branch_exploits(tiny_model_dir, tmp_path):
    log = tmp_path / "log.jsonl"
    config = ExportConfig(model=tiny_model_dir, depth=2, k=4, max_new=20, seed=3)
    records = export_run(config, [[1, 2, 3]], message_log_path=log)
    assert records[0]["trace"]["exploit"] == records[0]["trace"]["steps"]
    assert records[0]["trace"]["explore"] == 0
    sent, _ = load_log(log)
    assert all(m["think"] is False for m in sent if m["type"] == "step")


def test_think_tags_activate_inside_span(tiny_model_dir, tmp_path):
    log = tmp_path / "log.jsonl"
    config = ExportConfig(
        model=tiny_model_dir, depth=2, k=4, max_new=15, seed=4, think_begin=50, think_end=51
    )
    records = export_run(config, [[1, 50, 2]], message_log_path=log)
    sent, _ = load_log(log)
    flags = [m["think"] for m in sent if m["type"] == "step"]
    assert flags[0] is True  # begin tag already seen in the prompt
    assert records[0]["trace"]["think_steps"] >= 1


def test_rerun_with_same_seed_is_identical(tiny_model_dir):
    config = ExportConfig(model=tiny_model_dir, depth=3, k=6, max_new=24, seed=9)
    a = export_run(config, [[4, 5, 6]])
    b = export_run(config, [[4, 5, 6]])
    assert a[0]["tokens"] == b[0]["tokens"]


def test_full_mode_round_trip(tiny_model_dir, tmp_path):
    log = tmp_path / "log.jsonl"
    config = ExportConfig(model=tiny_model_dir, depth=2, k=5, max_new=16, seed=5, mode="full")
    records = export_run(config, [[2, 3]], message_log_path=log)
    assert records[0]["trace"]["steps"] == 16
    sent, received = load_log(log)
    assert all("logits_b64" in m for m in sent if m["type"] == "step")
    assert all(0 <= m["token"] < 96 for m in received if m["type"] == "token")


# ----------------------------------------------------------- replay fidelity


def replay_through_fresh_server(lines):
    proc = subprocess.run(
        [sys.executable, "-m", "led.cli", "serve", "--stdio"],
        input="\n".join(lines) + "\n",
        capture_output=True,
        text=True,
        timeout=300,
    )
    assert proc.returncode == 0, proc.stderr
    return proc.stdout.splitlines()


def test_golden_session_replay_reproduces_tokens():
    sent = (DATA / "session_input.jsonl").read_text().splitlines()
    expected = (DATA / "session_expected.jsonl").read_text().splitlines()
    got = replay_through_fresh_server(sent)
    assert got == expected


def test_live_log_replays_identically(tiny_model_dir, tmp_path):
    log = tmp_path / "log.jsonl"
    config = ExportConfig(model=tiny_model_dir, depth=2, k=6, max_new=20, seed=11)
    export_run(config, [[1, 2, 3]], message_log_path=log)
    sent_lines, recv_lines = [], []
    for raw in log.read_text().splitlines():
        entry = json.loads(raw)
        (sent_lines if entry["dir"] == "send" else recv_lines).append(entry["line"])
    assert replay_through_fresh_server(sent_lines) == recv_lines


# ----------------------------------------------------------- config errors


def test_depth_must_fit_model(tiny_model_dir):
    with pytest.raises(ExportConfigError):
        export_run(ExportConfig(model=tiny_model_dir, depth=5, max_new=2), [[1]])


def test_string_tags_need_tokenizer(tiny_model_dir):
    config = ExportConfig(model=tiny_model_dir, depth=2, max_new=2, think_begin="<think>", think_end="</think>")
    with pytest.raises(ExportConfigError):
        export_run(config, [[1]])


def test_text_prompt_needs_tokenizer(tiny_model_dir):
    with pytest.raises(ExportConfigError):
        export_run(ExportConfig(model=tiny_model_dir, depth=2, max_new=2), ["hello"])


def test_tags_must_come_in_pairs(tiny_model_dir):
    with pytest.raises(ExportConfigError):
        ExportConfig(model=tiny_model_dir, think_begin=5)


def test_prompt_ids_validated(tiny_model_dir):
    with pytest.raises(ExportConfigError):
        export_run(ExportConfig(model=tiny_model_dir, depth=2, max_new=2), [[96]])
    with pytest.raises(ExportConfigError):
        export_run(ExportConfig(model=tiny_model_dir, depth=2, max_new=2), [[]])


# ----------------------------------------------------------- connection loss


def test_connection_loss_flags_partial_output(tiny_model_dir, tmp_path):
    # a server that handshakes and then exits mid-session
    flaky = (
        "import sys, json\n"
        "sys.stdin.readline()\n"
        "print(json.dumps({'type': 'ready'}), flush=True)\n"
        "line = sys.stdin.readline()\n"
        "msg = json.loads(line)\n"
        "print(json.dumps({'type': 'token', 'id': msg['id'], 'token': msg['topk_ids'][0],"
        " 'branch': 'exploit', 'depth': 0}), flush=True)\n"
    )
    out = tmp_path / "gen.jsonl"
    config = ExportConfig(
        model=tiny_model_dir,
        depth=2,
        k=4,
        max_new=10,
        server_cmd=(sys.executable, "-c", flaky),
    )
    with pytest.raises(BridgeConnectionError):
        export_run(config, [[1, 2]], out_path=out)
    records = [json.loads(l) for l in out.read_text().splitlines()]
    assert records[-1]["aborted"] is True
    assert records[-1]["trace"]["steps"] == 1  # one token landed before the cut


# ----------------------------------------------------------- cli


def test_cli_export(tiny_model_dir, tmp_path):
    out = tmp_path / "gen.jsonl"
    rc = cli_main(
        [
            "--model", tiny_model_dir,
            "--prompt-ids", "1,2,3",
            "--out", str(out),
            "--depth", "2",
            "--k", "4",
            "--max-new", "8",
            "--seed", "0",
        ]
    )
    assert rc == 0
    record = json.loads(out.read_text().splitlines()[0])
    assert record["trace"]["steps"] == 8


def test_cli_requires_prompts(tiny_model_dir):
    assert cli_main(["--model", tiny_model_dir]) == 2


def test_cli_bad_depth_is_config_error(tiny_model_dir, tmp_path):
    rc = cli_main(["--model", tiny_model_dir, "--prompt-ids", "1", "--depth", "99",
                   "--out", str(tmp_path / "g.jsonl")])
    assert rc == 2
