"""Depth-conditioned exploration sampling over early-exit posterior stacks.

A decode step carries one logit row per retained layer, newest first
(row 0 is the final layer, row i the i-th layer below it). The step
pipeline:

1. softmax every row at the shared temperature,
2. keep the final row's top-k token ids and gather every row at those ids,
   flooring the gathered values at ``eps``,
3. form running newest-to-deepest sums of the gathered rows, renormalized
   per depth, so depth 0 is the plain final top-k law and depth i blends
   the i+1 newest layers,
4. pick the depth whose aggregate has maximum entropy as the exploration
   distribution; depth 0 is the exploitation distribution,
5. explore with probability one minus the final top-1 probability (never
   outside think spans while ``think_only`` is set) and draw the token from
   the chosen distribution.

Emitted tokens always come from the final layer's top-k candidates, whatever
the deeper rows contain.

Every step consumes exactly two uniforms from its stream — the token draw
first, then the gate draw — regardless of branch or think phase, so traces
produced under different gate settings stay aligned and any step can be
replayed from its stream triple.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .prob import (
    ConfigError,
    DegenerateInputError,
    categorical_from_uniform,
    entropy,
    nucleus_len,
    temperature_softmax,
    top_k_select,
)
from .rng import RandomStream

EXPLORE = "explore"
EXPLOIT = "exploit"


@dataclass(frozen=True)
class LedConfig:
    """All sampler tunables; defaults are the recommended operating point."""

    temperature: float = 0.6
    k: int = 8
    depth: int = 8
    eps: float = 1e-6
    entropy_clamp: float = 1e-9
    think_only: bool = True
    exploit_gate: bool = True
    renorm_topk: bool = False
    latent_layernorm: bool = False
    top_p: float | None = None

    def __post_init__(self):
        if not self.temperature > 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if not self.eps > 0:
            raise ConfigError(f"eps must be positive, got {self.eps}")
        if self.top_p is not None and not 0 < self.top_p <= 1:
            raise ConfigError(f"top_p must be in (0, 1], got {self.top_p}")


@dataclass(frozen=True)
class StepLogits:
    """One decode step: (available_depth, vocab) logits, final row first."""

    layers: np.ndarray
    think_flag: bool = True
    step_id: int = 0

    def __post_init__(self):
        arr = np.asarray(self.layers, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise ConfigError("layers must be a (depth, vocab) array with depth >= 1")
        object.__setattr__(self, "layers", arr)


@dataclass(frozen=True)
class FilteredStack:
    """Per-layer posteriors gathered at the final layer's top-k token ids."""

    topk_ids: np.ndarray  # (k,) final-layer candidate ids, descending probability
    probs: np.ndarray  # (depth, k) gathered values, floored at eps


@dataclass(frozen=True)
class LedDecision:
    """Full trace record for one sampled step."""

    token_id: int
    branch: str
    selected_depth: int
    gate_prob: float
    entropies: np.ndarray
    final_top1: float
    topk_ids: np.ndarray
    explore_dist: np.ndarray
    exploit_dist: np.ndarray
    think_flag: bool = True
    step_id: int = 0
    warning: str | None = None


def filter_topk(posteriors, k: int, eps: float = 1e-6) -> FilteredStack:
    """Gather a (depth, vocab) posterior stack at the final row's top-k ids.

    Candidate ids come from row 0 only; deeper rows contribute whatever mass
    they put on those ids, floored at ``eps`` so later sums stay positive.
    """
    post = np.asarray(posteriors, dtype=np.float64)
    if post.ndim != 2:
        raise ConfigError("posteriors must be a (depth, vocab) stack")
    if abs(post[0].sum() - 1.0) > 1e-6:
        raise DegenerateInputError("final-layer posterior must be normalized")
    ids, _ = top_k_select(post[0], k)
    return FilteredStack(topk_ids=ids, probs=np.maximum(post[:, ids], eps))


def aggregate_cumulative(stack: FilteredStack, renorm_topk: bool = False) -> np.ndarray:
    """Newest-to-deepest running sums of the gathered rows, renormalized per depth.

    Row i is proportional to the sum of gathered rows 0..i; row 0 is always
    the final row renormalized. With ``renorm_topk`` each gathered row is
    first forced to sum to one, discarding its absolute confidence scale.
    """
    rows = stack.probs
    if renorm_topk:
        rows = rows / rows.sum(axis=1, keepdims=True)
    agg = np.cumsum(rows, axis=0)
    return agg / agg.sum(axis=1, keepdims=True)


def _max_entropy_depth(aggregates: np.ndarray, entropy_clamp: float) -> tuple[int, np.ndarray]:
    ent = np.atleast_1d(entropy(aggregates, clamp=entropy_clamp))
    return int(np.argmax(ent)), ent


def select_exploration(aggregates, entropy_clamp: float = 1e-9) -> tuple[int, np.ndarray]:
    """Depth with maximum aggregate entropy; ties go to the smallest depth."""
    agg = np.asarray(aggregates, dtype=np.float64)
    depth, _ = _max_entropy_depth(agg, entropy_clamp)
    return depth, agg[depth]


def decide_branch(final_top1: float, rng: RandomStream, config: LedConfig) -> tuple[str, RandomStream]:
    """Gate draw: explore with probability 1 - final_top1.

    Always consumes exactly one uniform, even with the gate disabled, so
    streams stay aligned across configurations.
    """
    u, rng = rng.next_uniform()
    if not config.exploit_gate:
        return EXPLORE, rng
    return (EXPLORE if u < 1.0 - final_top1 else EXPLOIT), rng


def _step_parts(step: StepLogits, config: LedConfig):
    """Shared deterministic pipeline; returns everything up to the draws."""
    available = step.layers.shape[0]
    depth = min(config.depth, available)
    warning = None
    if depth < config.depth:
        warning = f"depth clamped from {config.depth} to {available} available layers"
    posteriors = temperature_softmax(step.layers[:depth], config.temperature)
    k = config.k
    if config.top_p is not None:
        # nucleus restriction on the final layer shrinks the candidate count
        desc = np.sort(posteriors[0])[::-1]
        k = min(k, nucleus_len(desc, config.top_p))
    stack = filter_topk(posteriors, k, eps=config.eps)
    final_top1 = float(posteriors[0].max())
    return stack, final_top1, warning


def _gate_prob(think_flag: bool, config: LedConfig, final_top1: float) -> float:
    if config.think_only and not think_flag:
        return 0.0
    if not config.exploit_gate:
        return 1.0
    return 1.0 - final_top1


def led_step_from_stack(
    stack: FilteredStack,
    final_top1: float,
    think_flag: bool,
    config: LedConfig,
    rng: RandomStream,
    step_id: int = 0,
    warning: str | None = None,
) -> tuple[LedDecision, RandomStream]:
    """Aggregate, select, gate and draw from an already-gathered stack.

    This is the entry point for callers that ship pre-gathered rows (the
    bridge's sliced mode); `led_step` funnels here after its own gather.
    """
    aggregates = aggregate_cumulative(stack, renorm_topk=config.renorm_topk)
    selected, entropies = _max_entropy_depth(aggregates, config.entropy_clamp)
    explore_dist = aggregates[selected]
    exploit_dist = aggregates[0]

    u_tok, rng = rng.next_uniform()
    branch, rng = decide_branch(final_top1, rng, config)
    if config.think_only and not think_flag:
        branch = EXPLOIT
    dist = explore_dist if branch == EXPLORE else exploit_dist
    token = int(stack.topk_ids[categorical_from_uniform(dist, u_tok)])

    decision = LedDecision(
        token_id=token,
        branch=branch,
        selected_depth=selected,
        gate_prob=_gate_prob(think_flag, config, final_top1),
        entropies=entropies,
        final_top1=final_top1,
        topk_ids=stack.topk_ids,
        explore_dist=explore_dist,
        exploit_dist=exploit_dist,
        think_flag=think_flag,
        step_id=step_id,
        warning=warning,
    )
    return decision, rng


def led_step(step: StepLogits, config: LedConfig, rng: RandomStream) -> tuple[LedDecision, RandomStream]:
    """Sample one token from a layerwise logit stack; consumes exactly two uniforms."""
    stack, final_top1, warning = _step_parts(step, config)
    return led_step_from_stack(
        stack, final_top1, step.think_flag, config, rng, step_id=step.step_id, warning=warning
    )


def step_token_distribution(step: StepLogits, config: LedConfig) -> tuple[np.ndarray, np.ndarray]:
    """Exact per-step token law: the gate-weighted mixture of the two branches.

    Returns (candidate ids, probabilities over those ids). This enumerates the
    branch choice analytically instead of sampling, so it serves as the exact
    law that empirical draws from `led_step` must follow.
    """
    stack, final_top1, _ = _step_parts(step, config)
    aggregates = aggregate_cumulative(stack, renorm_topk=config.renorm_topk)
    selected, _ = _max_entropy_depth(aggregates, config.entropy_clamp)
    g = _gate_prob(step.think_flag, config, final_top1)
    mixture = g * aggregates[selected] + (1.0 - g) * aggregates[0]
    return stack.topk_ids, mixture


def led_decode(
    steps, config: LedConfig, rng: RandomStream
) -> tuple[list[int], list[LedDecision], RandomStream]:
    """Run `led_step` over a step sequence, threading one stream through all draws."""
    tokens: list[int] = []
    decisions: list[LedDecision] = []
    for step in steps:
        decision, rng = led_step(step, config, rng)
        tokens.append(decision.token_id)
        decisions.append(decision)
    return tokens, decisions, rng


def led_generate_sampler(config: LedConfig):
    """Adapter with the (step, rng) -> (token, info, rng) shape used by generation loops."""

    def _sample(step: StepLogits, rng: RandomStream):
        decision, rng = led_step(step, config, rng)
        return decision.token_id, decision, rng

    return _sample
