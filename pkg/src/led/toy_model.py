"""Tiny seeded decoder-only transformer exposing every layer's residual stream.

Pre-norm blocks with RMS normalization and a head tied to the token
embeddings, so any layer's hidden state can be projected to vocabulary
logits. Weights are float32 (and round-trip bit-exactly through the weight
file); all forward arithmetic runs in float64.

Weight file layout (little-endian throughout):

    magic  b"LEDW"
    u32    format version (currently 1)
    u32x6  n_layers, hidden, heads, vocab, max_seq, norm_eps (float32 bits)
    f32[]  token_emb (V,h), pos_emb (max_seq,h),
           then per layer: attn_norm_g (h), wq, wk, wv, wo (each h,h),
                           mlp_norm_g (h), w_up (h,4h), w_down (4h,h),
           then final_norm_g (h)
    u32    CRC32 of all preceding bytes
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .prob import ConfigError
from .rng import RandomStream
from .sampler import StepLogits

_MAGIC = b"LEDW"
_VERSION = 1
_INIT_SCALE = 0.02


class WeightFileError(ValueError):
    """The weight file is missing, truncated, or corrupt."""


@dataclass(frozen=True)
class ToyConfig:
    n_layers: int = 8
    hidden: int = 64
    heads: int = 4
    vocab: int = 256
    max_seq: int = 256
    norm_eps: float = 1e-6

    def __post_init__(self):
        if self.n_layers < 2:
            raise ConfigError(f"n_layers must be >= 2, got {self.n_layers}")
        if self.hidden % self.heads != 0:
            raise ConfigError(f"hidden ({self.hidden}) must be divisible by heads ({self.heads})")
        if min(self.hidden, self.heads, self.vocab, self.max_seq) < 1:
            raise ConfigError("all size fields must be positive")
        # the weight file stores norm_eps as float32 bits; canonicalize now so
        # a save/load round trip leaves forward outputs bit-identical
        object.__setattr__(self, "norm_eps", float(np.float32(self.norm_eps)))


@dataclass(frozen=True)
class HiddenStack:
    """Post-block residual stream at the last position, one row per layer."""

    states: np.ndarray  # (n_layers, hidden)


@dataclass
class BlockWeights:
    attn_norm_g: np.ndarray
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    mlp_norm_g: np.ndarray
    w_up: np.ndarray
    w_down: np.ndarray


@dataclass
class ToyWeights:
    config: ToyConfig
    token_emb: np.ndarray  # (vocab, hidden); doubles as the output head
    pos_emb: np.ndarray  # (max_seq, hidden)
    blocks: list[BlockWeights]
    final_norm_g: np.ndarray  # (hidden,)


def init_weights(config: ToyConfig, seed: int = 0) -> ToyWeights:
    """Deterministic gaussian init; residual-facing projections are damped by sqrt(2L)."""
    rng = np.random.default_rng(seed)
    h, ffn = config.hidden, 4 * config.hidden
    out_scale = _INIT_SCALE / np.sqrt(2.0 * config.n_layers)

    def draw(shape, scale):
        return (rng.standard_normal(shape) * scale).astype(np.float32)

    token_emb = draw((config.vocab, h), _INIT_SCALE)
    pos_emb = draw((config.max_seq, h), _INIT_SCALE)
    blocks = []
    for _ in range(config.n_layers):
        blocks.append(
            BlockWeights(
                attn_norm_g=np.ones(h, dtype=np.float32),
                wq=draw((h, h), _INIT_SCALE),
                wk=draw((h, h), _INIT_SCALE),
                wv=draw((h, h), _INIT_SCALE),
                wo=draw((h, h), out_scale),
                mlp_norm_g=np.ones(h, dtype=np.float32),
                w_up=draw((h, ffn), _INIT_SCALE),
                w_down=draw((ffn, h), out_scale),
            )
        )
    return ToyWeights(config, token_emb, pos_emb, blocks, np.ones(h, dtype=np.float32))


def _rms_norm(x: np.ndarray, gain: np.ndarray, eps: float) -> np.ndarray:
    scale = np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + eps)
    return x / scale * gain.astype(np.float64)


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(0.7978845608028654 * (x + 0.044715 * x**3)))


def _project(weights: ToyWeights, state: np.ndarray, apply_final_norm: bool) -> np.ndarray:
    head = weights.token_emb.astype(np.float64)
    if apply_final_norm:
        state = _rms_norm(state, weights.final_norm_g, weights.config.norm_eps)
    return state @ head.T


def forward_step(weights: ToyWeights, token_prefix) -> tuple[HiddenStack, np.ndarray]:
    """Full forward pass over the prefix; returns per-layer last-position states and final logits."""
    cfg = weights.config
    ids = np.asarray(token_prefix, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise ConfigError("token prefix must be a non-empty 1-d sequence")
    if ids.size > cfg.max_seq:
        raise ConfigError(f"prefix length {ids.size} exceeds max_seq {cfg.max_seq}")
    if ids.min() < 0 or ids.max() >= cfg.vocab:
        raise ConfigError("token id outside vocabulary")

    t = ids.size
    head_dim = cfg.hidden // cfg.heads
    x = weights.token_emb[ids].astype(np.float64) + weights.pos_emb[:t].astype(np.float64)
    mask = np.triu(np.full((t, t), -np.inf), k=1)

    states = np.empty((cfg.n_layers, cfg.hidden), dtype=np.float64)
    for li, blk in enumerate(weights.blocks):
        a = _rms_norm(x, blk.attn_norm_g, cfg.norm_eps)
        q = (a @ blk.wq.astype(np.float64)).reshape(t, cfg.heads, head_dim).transpose(1, 0, 2)
        k = (a @ blk.wk.astype(np.float64)).reshape(t, cfg.heads, head_dim).transpose(1, 0, 2)
        v = (a @ blk.wv.astype(np.float64)).reshape(t, cfg.heads, head_dim).transpose(1, 0, 2)
        scores = q @ k.transpose(0, 2, 1) / np.sqrt(head_dim) + mask
        scores -= scores.max(axis=-1, keepdims=True)
        attn = np.exp(scores)
        attn /= attn.sum(axis=-1, keepdims=True)
        ctx = (attn @ v).transpose(1, 0, 2).reshape(t, cfg.hidden)
        x = x + ctx @ blk.wo.astype(np.float64)

        m = _rms_norm(x, blk.mlp_norm_g, cfg.norm_eps)
        x = x + _gelu(m @ blk.w_up.astype(np.float64)) @ blk.w_down.astype(np.float64)
        states[li] = x[-1]

    stack = HiddenStack(states=states)
    return stack, _project(weights, states[-1], apply_final_norm=True)


def early_exit_logits(
    weights: ToyWeights, stack: HiddenStack, depth: int, latent_layernorm: bool = False
) -> np.ndarray:
    """Project the newest `depth` residual states to logits, final row first.

    Row 0 goes through the final norm exactly like the standard forward output;
    deeper rows bypass it unless `latent_layernorm` is set.
    """
    n_layers = stack.states.shape[0]
    if not 1 <= depth <= n_layers:
        raise ConfigError(f"depth must be in [1, {n_layers}], got {depth}")
    rows = np.empty((depth, weights.config.vocab), dtype=np.float64)
    rows[0] = _project(weights, stack.states[-1], apply_final_norm=True)
    for i in range(1, depth):
        rows[i] = _project(weights, stack.states[-1 - i], apply_final_norm=latent_layernorm)
    return rows


def _think_tracker(think_span):
    if think_span is None:
        return lambda _tok: None, lambda: True
    begin_id, end_id = think_span
    state = {"in": False}

    def update(tok):
        if tok == begin_id:
            state["in"] = True
        elif tok == end_id:
            state["in"] = False

    return update, lambda: state["in"]


@dataclass
class GenerationResult:
    tokens: list[int]  # prompt + generated
    new_tokens: list[int]
    steps: list[StepLogits]
    infos: list  # per-step sampler info (e.g. a LedDecision), or None


def generate(
    weights: ToyWeights,
    prompt,
    sampler,
    max_new: int,
    think_span: tuple[int, int] | None = None,
    trace_depth: int = 8,
    latent_layernorm: bool = False,
    rng: RandomStream = RandomStream(0),
) -> GenerationResult:
    """Autoregressive loop handing each step's layerwise logits to `sampler`.

    `sampler` is any (StepLogits, RandomStream) -> (token, info, RandomStream)
    callable; step t draws from the child stream `rng.spawn(t)`, so samplers
    with different per-step draw counts see identical randomness at the same
    step. With no `think_span` every step is a think step; otherwise the flag
    is true exactly for tokens generated between the begin and end marker ids.
    """
    cfg = weights.config
    tokens = [int(t) for t in prompt]
    if len(tokens) + max_new > cfg.max_seq:
        raise ConfigError(f"prompt plus max_new exceeds max_seq {cfg.max_seq}")
    update_think, in_think = _think_tracker(think_span)
    for tok in tokens:
        update_think(tok)

    new_tokens: list[int] = []
    steps: list[StepLogits] = []
    infos: list = []
    for step_idx in range(max_new):
        stack, _ = forward_step(weights, tokens)
        depth = min(trace_depth, cfg.n_layers)
        rows = early_exit_logits(weights, stack, depth, latent_layernorm=latent_layernorm)
        step = StepLogits(layers=rows, think_flag=in_think(), step_id=step_idx)
        token, info, _ = sampler(step, rng.spawn(step_idx))
        tokens.append(int(token))
        new_tokens.append(int(token))
        steps.append(step)
        infos.append(info)
        update_think(int(token))
    return GenerationResult(tokens=tokens, new_tokens=new_tokens, steps=steps, infos=infos)


def _config_words(config: ToyConfig) -> bytes:
    eps_bits = struct.unpack("<I", struct.pack("<f", config.norm_eps))[0]
    return struct.pack(
        "<6I", config.n_layers, config.hidden, config.heads, config.vocab, config.max_seq, eps_bits
    )


def _param_arrays(weights: ToyWeights):
    yield weights.token_emb
    yield weights.pos_emb
    for blk in weights.blocks:
        yield blk.attn_norm_g
        yield blk.wq
        yield blk.wk
        yield blk.wv
        yield blk.wo
        yield blk.mlp_norm_g
        yield blk.w_up
        yield blk.w_down
    yield weights.final_norm_g


def serialize_weights(weights: ToyWeights) -> bytes:
    body = _MAGIC + struct.pack("<I", _VERSION) + _config_words(weights.config)
    body += b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in _param_arrays(weights))
    return body + struct.pack("<I", zlib.crc32(body))


def weights_checksum(weights: ToyWeights) -> str:
    """CRC32 (hex) of the weight file body; equals the file's stored trailer value."""
    return f"{zlib.crc32(serialize_weights(weights)[:-4]):08x}"


def save_weights(weights: ToyWeights, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_weights(weights))


def load_weights(path) -> ToyWeights:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise WeightFileError(f"cannot read weight file {path}: {exc}") from exc
    if len(blob) < 4 + 4 + 24 + 4 or blob[:4] != _MAGIC:
        raise WeightFileError("not a toy-model weight file")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != _VERSION:
        raise WeightFileError(f"unsupported weight file version {version}")
    (crc,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if zlib.crc32(blob[:-4]) != crc:
        raise WeightFileError("weight file checksum mismatch")

    n_layers, hidden, heads, vocab, max_seq, eps_bits = struct.unpack_from("<6I", blob, 8)
    norm_eps = struct.unpack("<f", struct.pack("<I", eps_bits))[0]
    config = ToyConfig(n_layers, hidden, heads, vocab, max_seq, norm_eps)

    offset = 8 + 24
    payload = blob[:-4]

    def take(shape):
        nonlocal offset
        count = int(np.prod(shape))
        end = offset + 4 * count
        if end > len(payload):
            raise WeightFileError("weight file truncated")
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset).reshape(shape)
        offset = end
        return arr.copy()

    h, ffn = hidden, 4 * hidden
    token_emb = take((vocab, h))
    pos_emb = take((max_seq, h))
    blocks = []
    for _ in range(n_layers):
        blocks.append(
            BlockWeights(
                attn_norm_g=take((h,)),
                wq=take((h, h)),
                wk=take((h, h)),
                wv=take((h, h)),
                wo=take((h, h)),
                mlp_norm_g=take((h,)),
                w_up=take((h, ffn)),
                w_down=take((ffn, h)),
            )
        )
    final_norm_g = take((h,))
    if offset != len(payload):
        raise WeightFileError("weight file has trailing bytes")
    return ToyWeights(config, token_emb, pos_emb, blocks, final_norm_g)
