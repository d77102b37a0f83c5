"""JSON-lines sampling service over stdio or TCP.

One session per connection. The client opens with a hello naming the
protocol version, payload mode, shapes, temperature, and session seed; the
server answers ready and then turns every step message into a token reply:

    -> {"type":"hello","version":1,"mode":"sliced"|"full","vocab":V,
        "depth":d,"k":k,"temperature":t,"seed":s}
    <- {"type":"ready"}
    -> sliced: {"type":"step","id":i,"think":b,"topk_ids":[k ints],
                "layer_probs":[[d x k floats, final row first, already
                temperature-softmaxed and gathered]],"final_top1":f}
    -> full:   {"type":"step","id":i,"think":b,
                "logits_b64": base64 of d x V little-endian float32,
                final row first}
    <- {"type":"token","id":i,"token":int,"branch":"explore"|"exploit",
        "depth":int}
    -> {"type":"end"}   <- {"type":"bye","steps":n}
    <- {"type":"error","id":i,"code":str,"message":str}   on bad input

In sliced mode the exporter owns temperature scaling (it holds the
full-vocabulary rows); in full mode this side applies it. A version
mismatch refuses the session; any other malformed message earns an error
reply and the session continues. Step i draws from the child stream
``spawn(i)`` of the session seed, so replaying a recorded message log
reproduces the exact same replies.
"""

from __future__ import annotations

import base64
import json
import socketserver
import sys
from dataclasses import dataclass

import numpy as np

from .rng import RandomStream
from .sampler import FilteredStack, LedConfig, StepLogits, led_step, led_step_from_stack

PROTOCOL_VERSION = 1


@dataclass(frozen=True)
class ServerSettings:
    """Server-side sampler toggles not carried by the hello message."""

    think_only: bool = True
    exploit_gate: bool = True
    renorm_topk: bool = False
    eps: float = 1e-6
    entropy_clamp: float = 1e-9


class _Refused(Exception):
    pass


class _BadMessage(Exception):
    def __init__(self, code: str, message: str, msg_id=None):
        super().__init__(message)
        self.code = code
        self.message = message
        self.msg_id = msg_id


class BridgeSession:
    """Protocol state machine for one connection; feed lines, collect replies."""

    def __init__(self, settings: ServerSettings = ServerSettings()):
        self.settings = settings
        self.config: LedConfig | None = None
        self.mode = ""
        self.vocab = 0
        self.rng_base: RandomStream | None = None
        self.steps_served = 0
        self.closed = False

    def handle_line(self, line: str) -> list[str]:
        """Process one input line; returns reply lines. Sets `closed` when done."""
        try:
            replies = self._dispatch(line)
        except _Refused as exc:
            self.closed = True
            return [_err("version-mismatch", str(exc))]
        except _BadMessage as exc:
            return [_err(exc.code, exc.message, exc.msg_id)]
        return replies

    def _dispatch(self, line: str) -> list[str]:
        line = line.strip()
        if not line:
            return []
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as exc:
            raise _BadMessage("bad-json", f"unparseable line: {exc}")
        if not isinstance(msg, dict):
            raise _BadMessage("bad-json", "message must be a JSON object")
        kind = msg.get("type")
        if kind == "hello":
            return [self._hello(msg)]
        if kind == "step":
            return [self._step(msg)]
        if kind == "end":
            self.closed = True
            return [json.dumps({"type": "bye", "steps": self.steps_served})]
        raise _BadMessage("bad-type", f"unknown message type {kind!r}", msg.get("id"))

    def _hello(self, msg: dict) -> str:
        if msg.get("version") != PROTOCOL_VERSION:
            raise _Refused(f"server speaks version {PROTOCOL_VERSION}, got {msg.get('version')!r}")
        if self.config is not None:
            raise _BadMessage("bad-state", "session already started")
        mode = msg.get("mode")
        if mode not in ("sliced", "full"):
            raise _BadMessage("bad-value", f"mode must be 'sliced' or 'full', got {mode!r}")
        try:
            vocab = int(msg["vocab"])
            depth = int(msg["depth"])
            k = int(msg["k"])
            temperature = float(msg["temperature"])
            seed = int(msg["seed"])
        except (KeyError, TypeError, ValueError) as exc:
            raise _BadMessage("bad-value", f"hello is missing or mistypes a field: {exc}")
        if vocab < 1 or not 1 <= k <= vocab or depth < 1:
            raise _BadMessage("bad-value", "need vocab >= 1, depth >= 1, 1 <= k <= vocab")
        if not temperature > 0:
            raise _BadMessage("bad-value", "temperature must be positive")
        s = self.settings
        self.config = LedConfig(
            temperature=temperature,
            k=k,
            depth=depth,
            eps=s.eps,
            entropy_clamp=s.entropy_clamp,
            think_only=s.think_only,
            exploit_gate=s.exploit_gate,
            renorm_topk=s.renorm_topk,
        )
        self.mode = mode
        self.vocab = vocab
        self.rng_base = RandomStream(seed=seed, stream_id=0, counter=0)
        return json.dumps({"type": "ready"})

    def _step(self, msg: dict) -> str:
        if self.config is None:
            raise _BadMessage("bad-state", "step before hello", msg.get("id"))
        msg_id = msg.get("id")
        if not isinstance(msg_id, int):
            raise _BadMessage("bad-value", "step id must be an integer", msg_id)
        think = bool(msg.get("think", False))
        rng = self.rng_base.spawn(msg_id)
        if self.mode == "sliced":
            decision = self._sliced_step(msg, think, rng)
        else:
            decision = self._full_step(msg, think, rng)
        self.steps_served += 1
        return json.dumps(
            {
                "type": "token",
                "id": msg_id,
                "token": int(decision.token_id),
                "branch": decision.branch,
                "depth": int(decision.selected_depth),
            }
        )

    def _sliced_step(self, msg: dict, think: bool, rng: RandomStream):
        msg_id = msg.get("id")
        try:
            ids = np.asarray(msg["topk_ids"], dtype=np.int64)
            rows = np.asarray(msg["layer_probs"], dtype=np.float64)
            final_top1 = float(msg["final_top1"])
        except (KeyError, TypeError, ValueError) as exc:
            raise _BadMessage("bad-value", f"sliced step is malformed: {exc}", msg_id)
        if ids.ndim != 1 or ids.size != self.config.k:
            raise _BadMessage("bad-shape", f"topk_ids must have length {self.config.k}", msg_id)
        if rows.shape != (self.config.depth, self.config.k):
            raise _BadMessage(
                "bad-shape",
                f"layer_probs must be {self.config.depth}x{self.config.k}, got {rows.shape}",
                msg_id,
            )
        if rows.min() < 0 or rows.max() > 1 + 1e-4:
            raise _BadMessage("bad-value", "layer_probs entries must lie in [0, 1]", msg_id)
        if not 0 <= final_top1 <= 1:
            raise _BadMessage("bad-value", "final_top1 must lie in [0, 1]", msg_id)
        stack = FilteredStack(topk_ids=ids, probs=np.maximum(rows, self.config.eps))
        decision, _ = led_step_from_stack(stack, final_top1, think, self.config, rng, step_id=msg_id)
        return decision

    def _full_step(self, msg: dict, think: bool, rng: RandomStream):
        msg_id = msg.get("id")
        try:
            blob = base64.b64decode(msg["logits_b64"], validate=True)
        except (KeyError, TypeError, ValueError) as exc:
            raise _BadMessage("bad-value", f"full step is malformed: {exc}", msg_id)
        expected = self.config.depth * self.vocab * 4
        if len(blob) != expected:
            raise _BadMessage("bad-shape", f"expected {expected} logit bytes, got {len(blob)}", msg_id)
        logits = np.frombuffer(blob, dtype="<f4").reshape(self.config.depth, self.vocab)
        step = StepLogits(layers=logits.astype(np.float64), think_flag=think, step_id=msg_id)
        decision, _ = led_step(step, self.config, rng)
        return decision


def _err(code: str, message: str, msg_id=None) -> str:
    return json.dumps({"type": "error", "id": msg_id, "code": code, "message": message})


def serve_stdio(settings: ServerSettings = ServerSettings(), stdin=None, stdout=None) -> int:
    """Run one session over stdio; returns 0 when the client ends cleanly."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    session = BridgeSession(settings)
    for line in stdin:
        for reply in session.handle_line(line):
            stdout.write(reply + "\n")
        stdout.flush()
        if session.closed:
            break
    return 0


class _BridgeHandler(socketserver.StreamRequestHandler):
    def handle(self):
        session = BridgeSession(self.server.settings)
        for raw in self.rfile:
            for reply in session.handle_line(raw.decode("utf-8")):
                self.wfile.write(reply.encode("utf-8") + b"\n")
            self.wfile.flush()
            if session.closed:
                break


class BridgeTCPServer(socketserver.ThreadingTCPServer):
    """One concurrent session per connection; no shared mutable state."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address, settings: ServerSettings):
        super().__init__(address, _BridgeHandler)
        self.settings = settings


def serve_tcp(host: str, port: int, settings: ServerSettings = ServerSettings()) -> None:
    with BridgeTCPServer((host, port), settings) as server:
        server.serve_forever()
