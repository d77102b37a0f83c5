"""Command-line exporter: drive the led sampler with a pretrained model's layers.

Exit codes: 0 success, 1 runtime failure (including lost server), 2 config error.
"""

from __future__ import annotations

import argparse
import shlex
import sys

from .client import BridgeError
from .exporter import ExportConfig, ExportConfigError, default_server_cmd, export_run


def _parse_tag(text):
    if text is None:
        return None
    return int(text) if text.lstrip("-").isdigit() else text


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="led-hf-export", description=__doc__)
    p.add_argument("--model", required=True, help="model id or local path")
    p.add_argument("--prompt", action="append", default=[], help="text prompt (repeatable)")
    p.add_argument("--prompt-ids", action="append", default=[], help="comma-separated token ids (repeatable)")
    p.add_argument("--out", help="generations JSONL path")
    p.add_argument("--message-log", dest="message_log", help="record the wire exchange as JSONL")
    p.add_argument("--depth", type=int, default=8)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--temperature", type=float, default=0.6)
    p.add_argument("--max-new", dest="max_new", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=["sliced", "full"], default="sliced")
    p.add_argument("--think-begin", dest="think_begin", help="tag token id or string")
    p.add_argument("--think-end", dest="think_end", help="tag token id or string")
    p.add_argument("--no-stop-at-eos", dest="stop_at_eos", action="store_false")
    p.add_argument("--tcp", help="host:port of a running server (default: spawn one on stdio)")
    p.add_argument("--server-cmd", dest="server_cmd", help="override the spawned server command")
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2

    prompts: list = list(args.prompt)
    for chunk in args.prompt_ids:
        prompts.append([int(t) for t in chunk.replace(" ", "").split(",") if t])
    if not prompts:
        print("error: give at least one --prompt or --prompt-ids", file=sys.stderr)
        return 2

    endpoint, host, port = "stdio", "127.0.0.1", 0
    if args.tcp:
        host, _, port_text = args.tcp.partition(":")
        try:
            port = int(port_text)
        except ValueError:
            print(f"error: bad --tcp value {args.tcp!r}", file=sys.stderr)
            return 2
        endpoint = "tcp"

    try:
        config = ExportConfig(
            model=args.model,
            depth=args.depth,
            k=args.k,
            temperature=args.temperature,
            max_new=args.max_new,
            seed=args.seed,
            mode=args.mode,
            think_begin=_parse_tag(args.think_begin),
            think_end=_parse_tag(args.think_end),
            stop_at_eos=args.stop_at_eos,
            endpoint=endpoint,
            host=host,
            port=port,
            server_cmd=tuple(shlex.split(args.server_cmd)) if args.server_cmd else default_server_cmd(),
        )
        records = export_run(config, prompts, out_path=args.out, message_log_path=args.message_log)
    except ExportConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except BridgeError as exc:
        print(f"bridge failure: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1
    total = sum(r["trace"]["steps"] for r in records)
    print(f"generated {total} tokens over {len(records)} prompt(s)")
    return 0


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
