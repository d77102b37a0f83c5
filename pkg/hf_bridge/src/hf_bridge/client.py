"""JSON-lines client for the led sampling service (stdio subprocess or TCP)."""

from __future__ import annotations

import base64
import json
import socket
import subprocess

PROTOCOL_VERSION = 1


class BridgeError(RuntimeError):
    pass


class BridgeConnectionError(BridgeError):
    """The server went away mid-session."""


class BridgeProtocolError(BridgeError):
    """The server answered, but not with what the protocol promises."""


class BridgeClient:
    """One session against a led server; records every line when asked."""

    def __init__(self, reader, writer, closer, record_log: bool = False):
        self._reader = reader
        self._writer = writer
        self._closer = closer
        self.message_log: list[tuple[str, str]] | None = [] if record_log else None

    # -- transports -------------------------------------------------------

    @classmethod
    def spawn_stdio(cls, cmd, record_log: bool = False) -> "BridgeClient":
        proc = subprocess.Popen(
            list(cmd), stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, bufsize=1
        )

        def closer():
            if proc.stdin:
                try:
                    proc.stdin.close()
                except OSError:
                    pass
            proc.wait(timeout=30)

        client = cls(proc.stdout, proc.stdin, closer, record_log)
        client._proc = proc
        return client

    @classmethod
    def connect_tcp(cls, host: str, port: int, record_log: bool = False) -> "BridgeClient":
        sock = socket.create_connection((host, port), timeout=60)
        fh = sock.makefile("rw", encoding="utf-8", newline="\n")

        def closer():
            fh.close()
            sock.close()

        return cls(fh, fh, closer, record_log)

    # -- wire -------------------------------------------------------------

    def _send(self, obj: dict) -> None:
        line = json.dumps(obj)
        if self.message_log is not None:
            self.message_log.append(("send", line))
        try:
            self._writer.write(line + "\n")
            self._writer.flush()
        except (BrokenPipeError, OSError, ValueError) as exc:
            raise BridgeConnectionError(f"server pipe closed while sending: {exc}") from exc

    def _recv(self) -> dict:
        line = self._reader.readline()
        if not line:
            raise BridgeConnectionError("server closed the connection")
        line = line.strip()
        if self.message_log is not None:
            self.message_log.append(("recv", line))
        try:
            return json.loads(line)
        except json.JSONDecodeError as exc:
            raise BridgeProtocolError(f"unparseable server reply: {line!r}") from exc

    def _call(self, obj: dict, expect: str) -> dict:
        self._send(obj)
        reply = self._recv()
        if reply.get("type") == "error":
            raise BridgeProtocolError(f"{reply.get('code')}: {reply.get('message')}")
        if reply.get("type") != expect:
            raise BridgeProtocolError(f"expected {expect!r} reply, got {reply!r}")
        return reply

    # -- protocol ---------------------------------------------------------

    def hello(self, *, mode: str, vocab: int, depth: int, k: int, temperature: float, seed: int) -> dict:
        return self._call(
            {
                "type": "hello",
                "version": PROTOCOL_VERSION,
                "mode": mode,
                "vocab": vocab,
                "depth": depth,
                "k": k,
                "temperature": temperature,
                "seed": seed,
            },
            expect="ready",
        )

    def step_sliced(self, step_id: int, think: bool, topk_ids, layer_probs, final_top1: float) -> dict:
        reply = self._call(
            {
                "type": "step",
                "id": step_id,
                "think": bool(think),
                "topk_ids": [int(i) for i in topk_ids],
                "layer_probs": [[float(v) for v in row] for row in layer_probs],
                "final_top1": float(final_top1),
            },
            expect="token",
        )
        if reply.get("id") != step_id:
            raise BridgeProtocolError(f"reply id {reply.get('id')} does not match step {step_id}")
        return reply

    def step_full(self, step_id: int, think: bool, logits_le_f32: bytes) -> dict:
        reply = self._call(
            {
                "type": "step",
                "id": step_id,
                "think": bool(think),
                "logits_b64": base64.b64encode(logits_le_f32).decode("ascii"),
            },
            expect="token",
        )
        if reply.get("id") != step_id:
            raise BridgeProtocolError(f"reply id {reply.get('id')} does not match step {step_id}")
        return reply

    def end(self) -> dict:
        return self._call({"type": "end"}, expect="bye")

    def close(self) -> None:
        try:
            self._closer()
        except Exception:
            pass
