"""Constructive layerwise-posterior scenarios with exactly enumerable success laws.

Every step is memoryless: its per-layer posteriors are fixed up front and do
not depend on emitted history, so any sampler's chance of emitting the
step's required token is a closed-form number and an attempt's success
probability is the product across steps. An attempt succeeds when every
step emits its required token.

Two step kinds model the asymmetry between the final posterior and the
deeper ones:

* Branching steps are decision points the final layer gets wrong: it puts
  its bulk on a single distractor and only ``final_correct_mass`` on the
  required token, while the deeper rows keep ``latent_correct_mass`` on it.
  Depth aggregation therefore lifts the required token, so exploration wins
  here.
* Non-branching steps are routine tokens: the final posterior concentrates
  ``off_branch_confidence`` on the required token while the deeper rows
  stay diffuse across the candidate set. Exploring here injects noise, which
  is what the confidence gate is supposed to avoid paying for.

The distractor always sits inside the final top-k set, so top-k filtering
never hides the required token and the measured gaps isolate the
depth-aggregation effect.

Logit rows are stored as ``temperature * log(p)`` so a sampler running at the
scenario's temperature reproduces the designed posteriors exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .analysis import pass_at_n
from .baselines import BaselineConfig, standard_distribution, standard_sample
from .prob import ConfigError
from .rng import RandomStream
from .sampler import LedConfig, StepLogits, led_decode, step_token_distribution

_PASS_NS = (1, 2, 4, 8, 16)


@dataclass(frozen=True)
class ScenarioConfig:
    vocab: int = 64
    depth: int = 8
    steps: int = 20
    branching_positions: frozenset[int] = frozenset({4, 12})
    final_correct_mass: float = 0.05
    latent_correct_mass: float = 0.45
    off_branch_confidence: float = 0.99
    temperature: float = 0.6
    candidate_count: int = 8
    background_mass: float = 0.01
    correct_tokens: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "branching_positions", frozenset(self.branching_positions))
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if not 2 <= self.candidate_count <= self.vocab - 1:
            raise ConfigError("candidate_count must be in [2, vocab-1]")
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")
        if not all(0 <= t < self.steps for t in self.branching_positions):
            raise ConfigError("branching positions must lie inside [0, steps)")
        for name in ("final_correct_mass", "latent_correct_mass", "off_branch_confidence"):
            if not 0 < getattr(self, name) < 1:
                raise ConfigError(f"{name} must be in (0, 1)")
        if not 0 < self.background_mass < 1:
            raise ConfigError("background_mass must be in (0, 1)")
        bg = self.background_mass
        if self.final_correct_mass >= (1 - bg) / 2:
            raise ConfigError("final_correct_mass must leave the distractor dominant")
        if self.latent_correct_mass + bg >= 1:
            raise ConfigError("latent_correct_mass plus background must stay below 1")
        if self.final_correct_mass <= bg / (self.vocab - 2):
            raise ConfigError("final_correct_mass must exceed the background level")
        if not self.temperature > 0:
            raise ConfigError("temperature must be positive")
        if self.correct_tokens is not None:
            if len(self.correct_tokens) != self.steps:
                raise ConfigError("correct_tokens must list one token per step")
            if any(not 0 <= t < self.vocab for t in self.correct_tokens):
                raise ConfigError("correct token outside vocabulary")


@dataclass(frozen=True)
class ScenarioTrace:
    config: ScenarioConfig
    steps: list[StepLogits]
    correct_tokens: tuple[int, ...]
    distractors: dict[int, int]  # branching step -> distractor token


def _alt_candidates(vocab: int, correct: int, count: int) -> np.ndarray:
    ids = np.arange(vocab)
    return ids[ids != correct][:count]


def _branch_row(config: ScenarioConfig, correct: int, distractor: int, mass: float) -> np.ndarray:
    bg = config.background_mass
    row = np.full(config.vocab, bg / (config.vocab - 2))
    row[correct] = mass
    row[distractor] = 1.0 - mass - bg
    return row


def _offbranch_final_row(config: ScenarioConfig, correct: int) -> np.ndarray:
    conf = config.off_branch_confidence
    row = np.full(config.vocab, (1.0 - conf) / (config.vocab - 1))
    row[correct] = conf
    return row


def _offbranch_latent_row(config: ScenarioConfig, correct: int) -> np.ndarray:
    bg = config.background_mass
    alts = _alt_candidates(config.vocab, correct, config.candidate_count - 1)
    row = np.full(config.vocab, bg / (config.vocab - config.candidate_count))
    row[alts] = (1.0 - config.latent_correct_mass - bg) / alts.size
    row[correct] = config.latent_correct_mass
    return row


def step_posteriors(config: ScenarioConfig, correct: int, distractor: int | None) -> np.ndarray:
    """Designed (depth, vocab) posterior stack for one step, final row first."""
    rows = np.empty((config.depth, config.vocab))
    if distractor is None:
        rows[0] = _offbranch_final_row(config, correct)
        rows[1:] = _offbranch_latent_row(config, correct)
    else:
        rows[0] = _branch_row(config, correct, distractor, config.final_correct_mass)
        rows[1:] = _branch_row(config, correct, distractor, config.latent_correct_mass)
    return rows


def _build_steps(config: ScenarioConfig, correct: tuple[int, ...], distractors: dict[int, int]):
    steps = []
    for t in range(config.steps):
        post = step_posteriors(config, correct[t], distractors.get(t))
        steps.append(
            StepLogits(layers=config.temperature * np.log(post), think_flag=True, step_id=t)
        )
    return steps


def generate_scenario(config: ScenarioConfig, rng: RandomStream) -> ScenarioTrace:
    """Materialize a trace; required tokens and distractors are drawn from `rng`."""
    if config.correct_tokens is not None:
        correct = tuple(config.correct_tokens)
    else:
        drawn = []
        for _ in range(config.steps):
            u, rng = rng.next_uniform()
            drawn.append(min(int(u * config.vocab), config.vocab - 1))
        correct = tuple(drawn)
    distractors: dict[int, int] = {}
    for t in sorted(config.branching_positions):
        u, rng = rng.next_uniform()
        other = min(int(u * (config.vocab - 1)), config.vocab - 2)
        distractors[t] = other if other < correct[t] else other + 1
    return ScenarioTrace(
        config=config,
        steps=_build_steps(config, correct, distractors),
        correct_tokens=correct,
        distractors=distractors,
    )


def trace_to_json(trace: ScenarioTrace, explicit_rows: bool = False) -> dict:
    cfg = trace.config
    out = {
        "config": {
            "vocab": cfg.vocab,
            "depth": cfg.depth,
            "steps": cfg.steps,
            "branching_positions": sorted(cfg.branching_positions),
            "final_correct_mass": cfg.final_correct_mass,
            "latent_correct_mass": cfg.latent_correct_mass,
            "off_branch_confidence": cfg.off_branch_confidence,
            "temperature": cfg.temperature,
            "candidate_count": cfg.candidate_count,
            "background_mass": cfg.background_mass,
        },
        "correct_tokens": list(trace.correct_tokens),
        "distractors": {str(t): d for t, d in trace.distractors.items()},
    }
    if explicit_rows:
        out["steps"] = [
            {"layer_probs": np.exp(s.layers / cfg.temperature).tolist()} for s in trace.steps
        ]
    return out


def trace_from_json(data: dict) -> ScenarioTrace:
    raw = dict(data["config"])
    raw["branching_positions"] = frozenset(raw.get("branching_positions", ()))
    config = ScenarioConfig(**raw)
    correct = tuple(int(t) for t in data["correct_tokens"])
    if len(correct) != config.steps:
        raise ConfigError("correct_tokens must list one token per step")
    distractors = {int(t): int(d) for t, d in data.get("distractors", {}).items()}
    missing = config.branching_positions - set(distractors)
    if missing:
        raise ConfigError(f"missing distractors for branching steps {sorted(missing)}")
    if "steps" in data:
        steps = []
        for t, entry in enumerate(data["steps"]):
            rows = np.asarray(entry["layer_probs"], dtype=np.float64)
            steps.append(
                StepLogits(layers=config.temperature * np.log(rows), think_flag=True, step_id=t)
            )
        if len(steps) != config.steps:
            raise ConfigError("explicit steps must match the configured step count")
    else:
        steps = _build_steps(config, correct, distractors)
    return ScenarioTrace(config=config, steps=steps, correct_tokens=correct, distractors=distractors)


def _step_correct_prob(step: StepLogits, correct: int, sampler_spec) -> float:
    kind, cfg = sampler_spec
    if kind == "led":
        ids, probs = step_token_distribution(step, cfg)
    elif kind == "standard":
        ids, probs = standard_distribution(step.layers[0], cfg)
    else:
        raise ConfigError(f"unsupported sampler spec {kind!r}")
    hit = np.nonzero(ids == correct)[0]
    return float(probs[hit[0]]) if hit.size else 0.0


def exact_success_prob(trace: ScenarioTrace, sampler_spec) -> float:
    """Probability an attempt emits every step's required token; no sampling involved.

    Per-step laws are enumerated over the candidate support and gate branches,
    and multiplied across steps (valid because steps are memoryless).
    """
    prob = 1.0
    for step, correct in zip(trace.steps, trace.correct_tokens):
        prob *= _step_correct_prob(step, correct, sampler_spec)
    return prob


def pass_at_n_exact(p: float, n: int) -> float:
    """Closed-form pass@n for n independent attempts with success probability p."""
    if not 0 <= p <= 1:
        raise ConfigError(f"p must be in [0, 1], got {p}")
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    return 1.0 - (1.0 - p) ** n


@dataclass
class ExperimentResult:
    successes: np.ndarray  # (attempts,) bool; one correctness-matrix column
    pass_at_n: dict[int, float]
    decisions: list | None = None  # per-attempt decision lists when collected


def run_experiment(
    trace: ScenarioTrace,
    sampler_spec,
    attempts: int,
    rng: RandomStream,
    collect_decisions: bool = False,
) -> ExperimentResult:
    """Sample `attempts` independent runs, each on its own child stream."""
    if attempts < 1:
        raise ConfigError("attempts must be >= 1")
    kind, cfg = sampler_spec
    if kind not in ("led", "standard"):
        raise ConfigError(f"unsupported sampler spec {kind!r}")
    successes = np.zeros(attempts, dtype=bool)
    all_decisions = [] if collect_decisions else None
    for i in range(attempts):
        r = rng.spawn(i)
        if kind == "led":
            tokens, decisions, _ = led_decode(trace.steps, cfg, r)
            if collect_decisions:
                all_decisions.append(decisions)
        else:
            tokens = []
            for step in trace.steps:
                token, r = standard_sample(step.layers[0], cfg, r)
                tokens.append(token)
        successes[i] = all(t == c for t, c in zip(tokens, trace.correct_tokens))
    empirical = {
        n: pass_at_n(successes[:, None], n, estimator="unbiased")
        for n in _PASS_NS
        if n <= attempts
    }
    return ExperimentResult(successes=successes, pass_at_n=empirical, decisions=all_decisions)


def default_led_config(config: ScenarioConfig, **overrides) -> LedConfig:
    """Sampler settings aligned with a scenario: same temperature, depth, candidates."""
    base = dict(
        temperature=config.temperature,
        k=config.candidate_count,
        depth=config.depth,
    )
    base.update(overrides)
    return LedConfig(**base)


def default_baseline_config(config: ScenarioConfig, **overrides) -> BaselineConfig:
    base = dict(temperature=config.temperature)
    base.update(overrides)
    return BaselineConfig(**base)


def with_branching(config: ScenarioConfig, positions) -> ScenarioConfig:
    return replace(config, branching_positions=frozenset(positions))
