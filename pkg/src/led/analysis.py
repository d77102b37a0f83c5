"""Layerwise statistics and experiment metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .prob import ConfigError, DegenerateInputError, entropy, temperature_softmax, top_k_select
from .sampler import EXPLORE


@dataclass(frozen=True)
class CoverageMatrix:
    """Mean mass each layer assigns to the final layer's top-k candidates."""

    k_values: tuple[int, ...]
    values: np.ndarray  # (len(k_values), n_layers)


@dataclass(frozen=True)
class AccuracyGrid:
    """Accuracy over a temperature-by-attempt-count grid."""

    values: np.ndarray  # (len(temperatures), len(n_values))
    temperatures: tuple[float, ...]
    n_values: tuple[int, ...]

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.shape != (len(self.temperatures), len(self.n_values)):
            raise ConfigError("grid shape must match temperature and n axes")
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True)
class DecisionStats:
    n_steps: int
    explore_rate: float
    mean_gate_prob: float
    depth_histogram: dict[int, int]
    think_steps: int
    think_explore_rate: float
    think_mean_gate_prob: float


def entropy_by_layer(stacks, normalize: bool = False) -> np.ndarray:
    """Mean entropy per layer row over a trace of (n_layers, vocab) posterior stacks.

    Output rows follow the input row order. With `normalize`, values are
    divided by ln(vocab) so a uniform layer reads 1.
    """
    stacks = [np.asarray(s, dtype=np.float64) for s in stacks]
    if not stacks:
        raise DegenerateInputError("need at least one posterior stack")
    per_step = np.stack([entropy(s) for s in stacks])
    mean = per_step.mean(axis=0)
    if normalize:
        mean = mean / math.log(stacks[0].shape[-1])
    return mean


def entropy_by_layer_from_logits(stacks, tau: float = 1.0, normalize: bool = False) -> np.ndarray:
    """Like `entropy_by_layer` but softmaxes raw logit stacks at `tau` first."""
    return entropy_by_layer(
        [temperature_softmax(np.asarray(s), tau) for s in stacks], normalize=normalize
    )


def topk_coverage(stacks, k_values, final_row: int = -1) -> CoverageMatrix:
    """Coverage ratios r[k][l]: mean mass layer l puts on the final row's top-k ids."""
    stacks = [np.asarray(s, dtype=np.float64) for s in stacks]
    if not stacks:
        raise DegenerateInputError("need at least one posterior stack")
    k_values = tuple(int(k) for k in k_values)
    vocab = stacks[0].shape[-1]
    if any(not 1 <= k <= vocab for k in k_values):
        raise ConfigError(f"k values must lie in [1, {vocab}]")

    totals = np.zeros((len(k_values), stacks[0].shape[0]))
    for stack in stacks:
        ids, _ = top_k_select(stack[final_row], max(k_values))
        for ki, k in enumerate(k_values):
            totals[ki] += stack[:, ids[:k]].sum(axis=1)
    return CoverageMatrix(k_values=k_values, values=totals / len(stacks))


def alpha_slope(grid: AccuracyGrid) -> float:
    """Temperature-direction slope of the least-squares plane over grid indices.

    The plane is fit to accuracy as a linear function of temperature index and
    n index (not the raw values); the returned coefficient is the temperature
    one.
    """
    vals = grid.values
    if vals.size < 3:
        raise ConfigError("need at least 3 grid points for a planar fit")
    t_idx, n_idx = np.meshgrid(
        np.arange(len(grid.temperatures)), np.arange(len(grid.n_values)), indexing="ij"
    )
    design = np.column_stack([t_idx.ravel(), n_idx.ravel(), np.ones(vals.size)])
    coef, *_ = np.linalg.lstsq(design, vals.ravel(), rcond=None)
    return float(coef[0])


def pass_at_n(matrix, n: int, estimator: str = "unbiased") -> float:
    """Fraction of questions solved at least once within n attempts.

    `prefix` looks at the first n attempts as recorded; `unbiased` averages
    1 - C(A-c, n)/C(A, n) over questions, which is order-free.
    """
    grid = np.asarray(matrix, dtype=bool)
    if grid.ndim == 1:
        grid = grid[:, None]
    attempts = grid.shape[0]
    if not 1 <= n <= attempts:
        raise ConfigError(f"n must be in [1, {attempts}], got {n}")
    if estimator == "prefix":
        return float(grid[:n].any(axis=0).mean())
    if estimator == "unbiased":
        vals = []
        for c in grid.sum(axis=0):
            vals.append(1.0 - math.comb(attempts - int(c), n) / math.comb(attempts, n))
        return float(np.mean(vals))
    raise ConfigError(f"unknown estimator {estimator!r}")


def decision_stats(decisions) -> DecisionStats:
    """Aggregate branch/depth/gate statistics over step decisions or trace records."""
    decisions = list(decisions)
    if not decisions:
        raise DegenerateInputError("need at least one decision")
    explored = np.array([d.branch == EXPLORE for d in decisions])
    gates = np.array([d.gate_prob for d in decisions], dtype=np.float64)
    thinking = np.array([d.think_flag for d in decisions])
    hist: dict[int, int] = {}
    for d in decisions:
        hist[int(d.selected_depth)] = hist.get(int(d.selected_depth), 0) + 1
    n_think = int(thinking.sum())
    return DecisionStats(
        n_steps=len(decisions),
        explore_rate=float(explored.mean()),
        mean_gate_prob=float(gates.mean()),
        depth_histogram=hist,
        think_steps=n_think,
        think_explore_rate=float(explored[thinking].mean()) if n_think else 0.0,
        think_mean_gate_prob=float(gates[thinking].mean()) if n_think else 0.0,
    )
