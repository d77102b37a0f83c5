"""Trace records, JSON-lines persistence, and CSV emission for the harness."""

from __future__ import annotations

import json
from dataclasses import dataclass

from .sampler import LedDecision


@dataclass(frozen=True)
class TraceRecord:
    """Externalized per-step decision; one JSON object per line."""

    step_id: int
    think_flag: bool
    branch: str
    selected_depth: int
    gate_prob: float
    entropies: tuple[float, ...]
    token_id: int
    topk_ids: tuple[int, ...]


def record_from_decision(decision: LedDecision) -> TraceRecord:
    return TraceRecord(
        step_id=int(decision.step_id),
        think_flag=bool(decision.think_flag),
        branch=decision.branch,
        selected_depth=int(decision.selected_depth),
        gate_prob=float(decision.gate_prob),
        entropies=tuple(float(h) for h in decision.entropies),
        token_id=int(decision.token_id),
        topk_ids=tuple(int(i) for i in decision.topk_ids),
    )


def record_to_json(record: TraceRecord) -> str:
    return json.dumps(
        {
            "step_id": record.step_id,
            "think": record.think_flag,
            "branch": record.branch,
            "selected_depth": record.selected_depth,
            "gate_prob": record.gate_prob,
            "entropies": list(record.entropies),
            "token_id": record.token_id,
            "topk_ids": list(record.topk_ids),
        }
    )


def record_from_json(line: str) -> TraceRecord:
    obj = json.loads(line)
    return TraceRecord(
        step_id=int(obj["step_id"]),
        think_flag=bool(obj["think"]),
        branch=str(obj["branch"]),
        selected_depth=int(obj["selected_depth"]),
        gate_prob=float(obj["gate_prob"]),
        entropies=tuple(float(h) for h in obj["entropies"]),
        token_id=int(obj["token_id"]),
        topk_ids=tuple(int(i) for i in obj["topk_ids"]),
    )


def write_trace(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(record_to_json(rec) + "\n")


def read_trace(path) -> list[TraceRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(record_from_json(line))
    return records


def fmt_float(x: float) -> str:
    """Six significant digits, the metrics-file convention."""
    return f"{x:.6g}"


def write_csv(path, header, rows) -> None:
    """Plain CSV with floats at six significant digits."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            cells = [fmt_float(c) if isinstance(c, float) else str(c) for c in row]
            fh.write(",".join(cells) + "\n")
