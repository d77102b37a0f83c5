"""Probability primitives shared by every sampler and analysis routine.

Everything is computed in float64 regardless of the input dtype so that
argmax/entropy comparisons never depend on the platform's float32 rounding.
"""

from __future__ import annotations

import numpy as np

from .rng import RandomStream


class ConfigError(ValueError):
    """A parameter is outside its documented domain."""


class DegenerateInputError(ValueError):
    """An input carries no usable probability mass."""


def temperature_softmax(logits, tau: float) -> np.ndarray:
    """Temperature-scaled softmax along the last axis.

    Accepts a single row or a stack of rows. ``-inf`` entries get zero mass;
    a row with no finite entry is rejected.
    """
    if not tau > 0 or not np.isfinite(tau):
        raise ConfigError(f"temperature must be a positive finite real, got {tau}")
    z = np.asarray(logits, dtype=np.float64)
    if np.isnan(z).any() or np.isposinf(z).any():
        raise DegenerateInputError("logits must not contain NaN or +inf")
    top = np.max(z, axis=-1, keepdims=True)
    if not np.isfinite(top).all():
        raise DegenerateInputError("logit row has no finite entry")
    p = np.exp((z - top) / tau)
    return p / p.sum(axis=-1, keepdims=True)


def entropy(p, clamp: float = 1e-9):
    """Shannon entropy in nats along the last axis.

    Entries below ``clamp`` are floored inside the logarithm only, so one-hot
    rows give exactly zero instead of NaN.
    """
    q = np.asarray(p, dtype=np.float64)
    if (q < 0).any():
        raise DegenerateInputError("probabilities must be non-negative")
    h = -(q * np.log(np.maximum(q, clamp))).sum(axis=-1)
    return float(h) if np.ndim(h) == 0 else h


def top_k_select(p, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices of the k largest entries plus their values.

    Sorted by descending value; ties broken by ascending index so the result
    is identical on every platform.
    """
    q = np.asarray(p, dtype=np.float64)
    if q.ndim != 1:
        raise ConfigError("top_k_select expects a single row")
    n = q.shape[0]
    if not 1 <= k <= n:
        raise ConfigError(f"k must be in [1, {n}], got {k}")
    order = np.argsort(-q, kind="stable")[:k]
    return order, q[order]


def nucleus_len(sorted_probs, top_p: float) -> int:
    """Length of the smallest descending-order prefix with cumulative mass >= top_p.

    The boundary entry that crosses the threshold is included; if the whole
    row never reaches ``top_p`` the full length is returned. A 1e-12 slack
    keeps the boundary decision stable against cumsum rounding.
    """
    if not 0 < top_p <= 1:
        raise ConfigError(f"top_p must be in (0, 1], got {top_p}")
    c = np.cumsum(np.asarray(sorted_probs, dtype=np.float64))
    return min(int(np.searchsorted(c, top_p - 1e-12, side="left")) + 1, c.size)


def categorical_from_uniform(weights, u: float) -> int:
    """Inverse-CDF lookup of one uniform against unnormalized non-negative weights."""
    w = np.asarray(weights, dtype=np.float64)
    if (w < 0).any():
        raise DegenerateInputError("weights must be non-negative")
    cdf = np.cumsum(w)
    total = cdf[-1] if cdf.size else 0.0
    if not total > 0:
        raise DegenerateInputError("weights must have positive total mass")
    idx = int(np.searchsorted(cdf, u * total, side="right"))
    return min(idx, w.size - 1)


def sample_categorical(weights, rng: RandomStream) -> tuple[int, RandomStream]:
    """Draw index i with probability weights[i]/sum(weights); consumes exactly one uniform."""
    u, rng = rng.next_uniform()
    return categorical_from_uniform(weights, u), rng
