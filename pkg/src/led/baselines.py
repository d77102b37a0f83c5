"""Reference samplers: standard temperature sampling and layer-contrastive decoding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .prob import (
    ConfigError,
    nucleus_len,
    sample_categorical,
    temperature_softmax,
    top_k_select,
)
from .rng import RandomStream


@dataclass(frozen=True)
class BaselineConfig:
    temperature: float = 0.6
    top_k: int = 20
    top_p: float = 0.95
    greedy: bool = False
    dola_alpha: float = 0.1
    dola_candidate_layers: tuple[int, ...] = ()

    def __post_init__(self):
        if not self.temperature > 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if self.top_k < 1:
            raise ConfigError(f"top_k must be >= 1, got {self.top_k}")
        if not 0 < self.top_p <= 1:
            raise ConfigError(f"top_p must be in (0, 1], got {self.top_p}")
        if not 0 < self.dola_alpha <= 1:
            raise ConfigError(f"dola_alpha must be in (0, 1], got {self.dola_alpha}")


def greedy(final_logits) -> int:
    """Argmax token, ties broken by ascending id."""
    return int(np.argmax(np.asarray(final_logits, dtype=np.float64)))


def _truncate(ids: np.ndarray, probs: np.ndarray, top_p: float) -> tuple[np.ndarray, np.ndarray]:
    # probs are descending; the nucleus prefix of the top-k gather equals the
    # intersection of the top-k and nucleus supports, both being prefixes of
    # the same ordering.
    m = nucleus_len(probs, top_p)
    kept = probs[:m]
    return ids[:m], kept / kept.sum()


def standard_distribution(final_logits, config: BaselineConfig) -> tuple[np.ndarray, np.ndarray]:
    """Exact token law of `standard_sample`: softmax, top-k, nucleus prefix, renormalize."""
    p = temperature_softmax(final_logits, config.temperature)
    if config.greedy:
        return np.array([greedy(final_logits)]), np.array([1.0])
    ids, probs = top_k_select(p, min(config.top_k, p.shape[-1]))
    return _truncate(ids, probs, config.top_p)


def standard_sample(final_logits, config: BaselineConfig, rng: RandomStream) -> tuple[int, RandomStream]:
    """One draw from the truncated temperature-scaled posterior."""
    ids, probs = standard_distribution(final_logits, config)
    if config.greedy:
        return int(ids[0]), rng
    j, rng = sample_categorical(probs, rng)
    return int(ids[j]), rng


def jensen_shannon(p, q, floor: float = 1e-12) -> float:
    """Base-e Jensen-Shannon divergence with probabilities floored inside logs."""
    a = np.asarray(p, dtype=np.float64)
    b = np.asarray(q, dtype=np.float64)
    m = 0.5 * (a + b)

    def _kl(x, y):
        return float(np.sum(x * (np.log(np.maximum(x, floor)) - np.log(np.maximum(y, floor)))))

    return 0.5 * _kl(a, m) + 0.5 * _kl(b, m)


def dola_distribution(posteriors, config: BaselineConfig) -> tuple[np.ndarray, np.ndarray]:
    """Contrast the final posterior against its most divergent premature layer.

    `posteriors` is a stack in natural depth order with the final layer last.
    The premature layer maximizing Jensen-Shannon divergence from the final
    row sets the contrast; log-ratio scores are kept on the head set
    {v : p_final(v) >= alpha * max p_final}, softmaxed, then truncated like
    the standard sampler.
    """
    post = np.asarray(posteriors, dtype=np.float64)
    if post.ndim != 2 or post.shape[0] < 2:
        raise ConfigError("need at least one premature layer plus the final layer")
    final = post[-1]
    candidates = config.dola_candidate_layers or tuple(range(post.shape[0] - 1))
    if any(not 0 <= j < post.shape[0] - 1 for j in candidates):
        raise ConfigError(f"candidate layers {candidates} outside premature range")

    divergences = [jensen_shannon(final, post[j]) for j in candidates]
    contrast = post[candidates[int(np.argmax(divergences))]]

    head = final >= config.dola_alpha * final.max()
    scores = np.full(final.shape, -np.inf)
    scores[head] = np.log(np.maximum(final[head], 1e-12)) - np.log(np.maximum(contrast[head], 1e-12))
    reshaped = temperature_softmax(scores, 1.0)

    ids, probs = top_k_select(reshaped, min(config.top_k, reshaped.shape[-1]))
    keep = probs > 0  # everything outside the head set carries exactly zero mass
    return _truncate(ids[keep], probs[keep], config.top_p)


def dola_step(posteriors, config: BaselineConfig, rng: RandomStream) -> tuple[int, RandomStream]:
    """One contrastive draw; the emitted token always lies in the head set."""
    ids, probs = dola_distribution(posteriors, config)
    j, rng = sample_categorical(probs, rng)
    return int(ids[j]), rng


def standard_generate_sampler(config: BaselineConfig):
    """Adapter sampling from the final row of a layerwise step."""

    def _sample(step, rng: RandomStream):
        token, rng = standard_sample(step.layers[0], config, rng)
        return token, None, rng

    return _sample


def greedy_generate_sampler():
    def _sample(step, rng: RandomStream):
        return greedy(step.layers[0]), None, rng

    return _sample


def dola_generate_sampler(config: BaselineConfig):
    """Adapter contrasting the final row against the step's deeper rows."""

    def _sample(step, rng: RandomStream):
        # step rows are newest-first; flip to natural order with final last
        posteriors = temperature_softmax(step.layers[::-1], config.temperature)
        token, rng = dola_step(posteriors, config, rng)
        return token, None, rng

    return _sample
