"""Depth-conditioned exploration decoding over early-exit posterior stacks."""

from .baselines import BaselineConfig, dola_step, greedy, standard_sample
from .prob import ConfigError, DegenerateInputError, entropy, sample_categorical, temperature_softmax, top_k_select
from .rng import RandomStream
from .sampler import (
    EXPLOIT,
    EXPLORE,
    FilteredStack,
    LedConfig,
    LedDecision,
    StepLogits,
    aggregate_cumulative,
    decide_branch,
    filter_topk,
    led_decode,
    led_step,
    select_exploration,
    step_token_distribution,
)
from .scenario import (
    ScenarioConfig,
    ScenarioTrace,
    exact_success_prob,
    generate_scenario,
    pass_at_n_exact,
    run_experiment,
)
from .toy_model import ToyConfig, ToyWeights, early_exit_logits, forward_step, generate, init_weights

__all__ = [name for name in dir() if not name.startswith("_")]
