"""Stream per-layer posteriors from a pretrained causal LM into the led sampler.

Per decode step the exporter runs the model with hidden states enabled,
takes the final-layer distribution from the model's own logits path (so it
passes through the model's final normalization exactly as in normal
decoding), projects the last d-1 block outputs through the output head
*without* the final norm, gathers everything at the final top-k token ids,
and ships one sliced step message. The returned token is appended and the
loop continues until the budget or an end-of-sequence token.

The default sliced mode keeps messages at d x k floats; full mode (whole
logit rows) is reserved for small vocabularies.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field

import numpy as np
import torch

from .client import BridgeClient, BridgeConnectionError

_FULL_MODE_MAX_VOCAB = 4096


class ExportConfigError(ValueError):
    pass


def default_server_cmd() -> tuple[str, ...]:
    return (sys.executable, "-m", "led.cli", "serve", "--stdio")


@dataclass
class ExportConfig:
    model: str
    depth: int = 8
    k: int = 8
    temperature: float = 0.6
    max_new: int = 64
    seed: int = 0
    mode: str = "sliced"
    think_begin: int | str | None = None
    think_end: int | str | None = None
    stop_at_eos: bool = True
    endpoint: str = "stdio"  # "stdio" spawns server_cmd; "tcp" dials host:port
    host: str = "127.0.0.1"
    port: int = 0
    server_cmd: tuple[str, ...] = field(default_factory=default_server_cmd)

    def __post_init__(self):
        if self.depth < 1 or self.k < 1:
            raise ExportConfigError("depth and k must be >= 1")
        if not self.temperature > 0:
            raise ExportConfigError("temperature must be positive")
        if self.mode not in ("sliced", "full"):
            raise ExportConfigError(f"mode must be 'sliced' or 'full', got {self.mode!r}")
        if self.endpoint not in ("stdio", "tcp"):
            raise ExportConfigError(f"endpoint must be 'stdio' or 'tcp', got {self.endpoint!r}")
        if (self.think_begin is None) != (self.think_end is None):
            raise ExportConfigError("think tags must be given together or not at all")


def _resolve_tag(tag, tokenizer, vocab: int, name: str) -> int | None:
    if tag is None:
        return None
    if isinstance(tag, int):
        if not 0 <= tag < vocab:
            raise ExportConfigError(f"{name} id {tag} outside vocabulary of size {vocab}")
        return tag
    if tokenizer is None:
        raise ExportConfigError(f"{name} {tag!r} needs a tokenizer to resolve, and none is available")
    ids = tokenizer.encode(tag, add_special_tokens=False)
    if len(ids) != 1:
        raise ExportConfigError(f"{name} {tag!r} does not map to a single token id (got {ids})")
    return int(ids[0])


def _load_model(config: ExportConfig):
    from transformers import AutoModelForCausalLM

    model = AutoModelForCausalLM.from_pretrained(config.model)
    model.eval()
    n_layers = int(getattr(model.config, "num_hidden_layers"))
    vocab = int(model.config.vocab_size)
    if config.depth > n_layers:
        raise ExportConfigError(f"depth {config.depth} exceeds the model's {n_layers} layers")
    if config.k > vocab:
        raise ExportConfigError(f"k {config.k} exceeds the vocabulary size {vocab}")
    if config.mode == "full" and vocab > _FULL_MODE_MAX_VOCAB:
        raise ExportConfigError(
            f"full mode ships whole logit rows and is reserved for vocab <= {_FULL_MODE_MAX_VOCAB}"
        )
    return model, n_layers, vocab


def _load_tokenizer(config: ExportConfig):
    from transformers import AutoTokenizer

    try:
        return AutoTokenizer.from_pretrained(config.model)
    except Exception:
        return None  # fine as long as prompts are token ids and tags are ints


def _connect(config: ExportConfig, record_log: bool) -> BridgeClient:
    if config.endpoint == "tcp":
        return BridgeClient.connect_tcp(config.host, config.port, record_log=record_log)
    return BridgeClient.spawn_stdio(config.server_cmd, record_log=record_log)


class _ThinkState:
    def __init__(self, begin: int | None, end: int | None):
        self.begin, self.end = begin, end
        self.active = False

    def update(self, token: int) -> None:
        if self.begin is None:
            return
        if token == self.begin:
            self.active = True
        elif token == self.end:
            self.active = False


@torch.no_grad()
def _step_payload(model, ids: list[int], config: ExportConfig):
    """Final top-k ids plus gathered per-layer rows for the current prefix."""
    out = model(
        input_ids=torch.tensor([ids], dtype=torch.long),
        output_hidden_states=True,
        use_cache=False,
    )
    head = model.get_output_embeddings()
    final_logits = out.logits[0, -1].double()
    if config.mode == "full":
        rows = [out.logits[0, -1]]
        for i in range(1, config.depth):
            rows.append(head(out.hidden_states[-1 - i][0, -1]))
        blob = torch.stack(rows).float().numpy().astype("<f4").tobytes()
        return None, None, None, blob

    final_probs = torch.softmax(final_logits / config.temperature, dim=-1)
    top = torch.topk(final_probs, config.k)
    rows = [top.values.numpy()]
    for i in range(1, config.depth):
        latent_logits = head(out.hidden_states[-1 - i][0, -1]).double()
        latent_probs = torch.softmax(latent_logits / config.temperature, dim=-1)
        rows.append(latent_probs[top.indices].numpy())
    topk_ids = [int(t) for t in top.indices]
    return topk_ids, np.stack(rows), float(final_probs.max()), None


def export_run(config: ExportConfig, prompts, out_path=None, message_log_path=None) -> list[dict]:
    """Generate one continuation per prompt, sampling through the bridge.

    Prompts may be strings (needs a loadable tokenizer) or token-id lists.
    Returns one record per prompt and, when `out_path` is given, writes them
    as JSON lines. On connection loss the partial record is flagged
    `aborted` and the error re-raised after flushing outputs.
    """
    model, _, vocab = _load_model(config)
    tokenizer = _load_tokenizer(config)
    begin = _resolve_tag(config.think_begin, tokenizer, vocab, "think_begin")
    end = _resolve_tag(config.think_end, tokenizer, vocab, "think_end")
    eos = getattr(model.config, "eos_token_id", None) if config.stop_at_eos else None

    client = _connect(config, record_log=message_log_path is not None)
    records: list[dict] = []
    step_id = 0  # session-wide, strictly increasing across prompts
    try:
        client.hello(
            mode=config.mode,
            vocab=vocab,
            depth=config.depth,
            k=config.k,
            temperature=config.temperature,
            seed=config.seed,
        )
        for prompt in prompts:
            if isinstance(prompt, str):
                if tokenizer is None:
                    raise ExportConfigError(
                        f"text prompt needs a tokenizer, and {config.model!r} has none"
                    )
                ids = [int(t) for t in tokenizer.encode(prompt)]
            else:
                ids = [int(t) for t in prompt]
            if not ids:
                raise ExportConfigError("empty prompt")
            if max(ids) >= vocab or min(ids) < 0:
                raise ExportConfigError("prompt token id outside vocabulary")

            think = _ThinkState(begin, end)
            for tok in ids:
                think.update(tok)

            record = {
                "prompt": prompt if isinstance(prompt, str) else list(prompt),
                "tokens": list(ids),
                "new_tokens": [],
                "text": None,
                "trace": {"steps": 0, "explore": 0, "exploit": 0, "think_steps": 0},
                "aborted": False,
            }
            records.append(record)
            try:
                for _ in range(config.max_new):
                    topk_ids, rows, final_top1, blob = _step_payload(model, ids, config)
                    if config.mode == "full":
                        reply = client.step_full(step_id, think.active, blob)
                    else:
                        reply = client.step_sliced(step_id, think.active, topk_ids, rows, final_top1)
                    token = int(reply["token"])
                    step_id += 1
                    ids.append(token)
                    record["tokens"].append(token)
                    record["new_tokens"].append(token)
                    record["trace"]["steps"] += 1
                    record["trace"][reply["branch"]] += 1
                    record["trace"]["think_steps"] += think.active
                    think.update(token)
                    if eos is not None and token == eos:
                        break
            except BridgeConnectionError:
                record["aborted"] = True
                _flush(records, out_path)
                _flush_log(client, message_log_path)
                raise
            if tokenizer is not None:
                record["text"] = tokenizer.decode(record["tokens"])
        client.end()
    finally:
        client.close()
    _flush(records, out_path)
    _flush_log(client, message_log_path)
    return records


def _flush(records, out_path) -> None:
    if out_path is None:
        return
    with open(out_path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def _flush_log(client: BridgeClient, path) -> None:
    if path is None or client.message_log is None:
        return
    with open(path, "w", encoding="utf-8") as fh:
        for direction, line in client.message_log:
            fh.write(json.dumps({"dir": direction, "line": line}) + "\n")
