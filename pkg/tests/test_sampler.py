import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from led.baselines import BaselineConfig, standard_distribution
from led.prob import ConfigError, DegenerateInputError, temperature_softmax
from led.rng import RandomStream
from led.sampler import (
    EXPLOIT,
    EXPLORE,
    FilteredStack,
    LedConfig,
    StepLogits,
    aggregate_cumulative,
    decide_branch,
    filter_topk,
    led_decode,
    led_step,
    select_exploration,
    step_token_distribution,
)


def probs_to_logits(rows, tau=1.0):
    """Logit stack whose softmax at `tau` reproduces the given probability rows."""
    return tau * np.log(np.asarray(rows, dtype=np.float64))


def worked_step(tau=1.0):
    # filtered stack [[0.9, 0.1], [0.3, 0.5]]: vocab 3, third token carries
    # the latent row's leftover 0.2 and is (almost) absent from the final row
    rows = np.array([[0.9, 0.1, 1e-300], [0.3, 0.5, 0.2]])
    return StepLogits(probs_to_logits(rows, tau), think_flag=True, step_id=0)


def random_stack(rng_np, depth, vocab):
    return StepLogits(rng_np.standard_normal((depth, vocab)), think_flag=True)


# ----------------------------------------------------------- filter_topk


def test_filter_single_row():
    stack = filter_topk(np.array([[0.7, 0.2, 0.1]]), k=2)
    assert stack.topk_ids.tolist() == [0, 1]
    assert stack.probs.tolist() == [[0.7, 0.2]]


def test_filter_discards_off_candidate_latent_mass():
    post = np.array([[0.7, 0.2, 0.05, 0.05], [0.1, 0.2, 0.6, 0.1]])
    stack = filter_topk(post, k=2)
    assert stack.topk_ids.tolist() == [0, 1]
    assert stack.probs.tolist() == [[0.7, 0.2], [0.1, 0.2]]


def test_filter_full_vocab_is_permutation():
    rng = np.random.default_rng(0)
    post = temperature_softmax(rng.standard_normal((3, 8)), 1.0)
    stack = filter_topk(post, k=8)
    for row, orig in zip(stack.probs, post):
        assert sorted(row.tolist()) == pytest.approx(sorted(orig.tolist()))


def test_filter_applies_eps_floor():
    post = np.array([[0.9999999, 1e-7 - 1e-14], [1.0 - 1e-12, 1e-12]])
    post = post / post.sum(axis=1, keepdims=True)
    stack = filter_topk(post, k=2, eps=1e-6)
    assert (stack.probs >= 1e-6).all()


def test_filter_requires_normalized_final_row():
    with pytest.raises(DegenerateInputError):
        filter_topk(np.array([[0.5, 0.1], [0.5, 0.5]]), k=2)


# ----------------------------------------------------------- aggregation


def test_aggregate_single_row_is_renormalized_final():
    stack = FilteredStack(np.array([0, 1]), np.array([[0.7, 0.2]]))
    agg = aggregate_cumulative(stack)
    assert np.allclose(agg, [[7 / 9, 2 / 9]])


def test_aggregate_worked_example():
    stack = FilteredStack(np.array([0, 1]), np.array([[0.9, 0.1], [0.3, 0.5]]))
    agg = aggregate_cumulative(stack)
    assert np.allclose(agg[0], [0.9, 0.1], atol=1e-15)
    assert np.allclose(agg[1], [2 / 3, 1 / 3], atol=1e-15)


def test_aggregate_identical_rows_idempotent():
    row = np.array([0.5, 0.3, 0.2])
    stack = FilteredStack(np.arange(3), np.tile(row, (5, 1)))
    agg = aggregate_cumulative(stack)
    assert np.allclose(agg, np.tile(row, (5, 1)), atol=1e-15)


def test_aggregate_renorm_variant():
    stack = FilteredStack(np.array([0, 1]), np.array([[0.8, 0.2], [0.1, 0.1]]))
    agg = aggregate_cumulative(stack, renorm_topk=True)
    # second row renormalizes to (0.5, 0.5) before the running sum
    assert np.allclose(agg[1], [(0.8 + 0.5) / 2, (0.2 + 0.5) / 2])
    assert np.allclose(agg[0], [0.8, 0.2])


def brute_force_prefix_aggregates(rows, renorm):
    rows = [list(map(float, r)) for r in rows]
    if renorm:
        rows = [[v / sum(r) for v in r] for r in rows]
    out = []
    for i in range(len(rows)):
        acc = [0.0] * len(rows[0])
        for j in range(i + 1):
            for c in range(len(acc)):
                acc[c] += rows[j][c]
        total = sum(acc)
        out.append([v / total for v in acc])
    return np.array(out)


@settings(max_examples=60)
@given(
    st.integers(min_value=1, max_value=16),
    st.integers(min_value=1, max_value=8),
    st.integers(min_value=0, max_value=2**31),
    st.booleans(),
)
def test_aggregate_matches_brute_force_oracle(depth, k, seed, renorm):
    rng = np.random.default_rng(seed)
    rows = np.maximum(rng.uniform(0.0, 1.0, size=(depth, k)), 1e-6)
    stack = FilteredStack(np.arange(k), rows)
    agg = aggregate_cumulative(stack, renorm_topk=renorm)
    oracle = brute_force_prefix_aggregates(rows, renorm)
    assert np.max(np.abs(agg - oracle)) <= 1e-12


# ----------------------------------------------------------- selection


def test_select_prefers_max_entropy_row():
    rows = np.array([[0.9, 0.1], [2 / 3, 1 / 3]])
    depth, dist = select_exploration(rows)
    # entropies 0.3251 < 0.6365, so the deeper row wins
    assert depth == 1
    assert np.allclose(dist, [2 / 3, 1 / 3])


def test_select_tie_goes_to_smallest_depth():
    rows = np.tile([0.5, 0.5], (4, 1))
    depth, _ = select_exploration(rows)
    assert depth == 0


def test_select_uniform_row_always_wins():
    rows = np.array([[0.7, 0.2, 0.1], [1 / 3, 1 / 3, 1 / 3], [0.5, 0.4, 0.1]])
    depth, _ = select_exploration(rows)
    assert depth == 1


# ----------------------------------------------------------- gate


def test_gate_certain_confidence_always_exploits():
    cfg = LedConfig()
    rng = RandomStream(0)
    for i in range(200):
        branch, _ = decide_branch(1.0, rng.spawn(i), cfg)
        assert branch == EXPLOIT


def test_gate_zero_confidence_always_explores():
    cfg = LedConfig()
    rng = RandomStream(1)
    for i in range(200):
        branch, _ = decide_branch(0.0, rng.spawn(i), cfg)
        assert branch == EXPLORE


def test_gate_frequency_matches_law():
    cfg = LedConfig()
    n, explored = 100_000, 0
    stream = RandomStream(7)
    for _ in range(n):
        branch, stream = decide_branch(0.7, stream, cfg)
        explored += branch == EXPLORE
    sigma = math.sqrt(0.3 * 0.7 / n)
    assert abs(explored / n - 0.3) <= 3 * sigma


def test_gate_disabled_always_explores_but_still_draws():
    cfg = LedConfig(exploit_gate=False)
    branch, rng = decide_branch(1.0, RandomStream(0), cfg)
    assert branch == EXPLORE
    assert rng.counter == 1


# ----------------------------------------------------------- led_step


def test_step_consumes_exactly_two_draws():
    step = worked_step()
    cfg = LedConfig(temperature=1.0, k=2, depth=2)
    for think_only in (True, False):
        for think in (True, False):
            c = LedConfig(temperature=1.0, k=2, depth=2, think_only=think_only)
            s = StepLogits(step.layers, think_flag=think)
            _, rng = led_step(s, c, RandomStream(3, 5, 11))
            assert rng.counter == 13


def test_step_worked_mixture_analytic():
    ids, law = step_token_distribution(worked_step(), LedConfig(temperature=1.0, k=2, depth=2))
    assert ids.tolist() == [0, 1]
    expected0 = 0.9 * 0.9 + 0.1 * (2 / 3)
    assert law[0] == pytest.approx(expected0, abs=1e-9)
    assert law[0] == pytest.approx(0.87667, abs=5e-6)


def test_step_worked_mixture_empirical():
    step = worked_step()
    cfg = LedConfig(temperature=1.0, k=2, depth=2)
    n = 10_000
    base = RandomStream(21)
    counts = np.zeros(2)
    for i in range(n):
        decision, _ = led_step(step, cfg, base.spawn(i))
        counts[decision.token_id] += 1
    _, law = step_token_distribution(step, cfg)
    sigma = np.sqrt(law * (1 - law) / n)
    assert (np.abs(counts / n - law) <= 3 * sigma).all()


def test_step_think_bypass_is_pure_exploitation():
    step = StepLogits(worked_step().layers, think_flag=False)
    cfg = LedConfig(temperature=1.0, k=2, depth=2, think_only=True)
    n, hits = 4000, 0
    base = RandomStream(5)
    for i in range(n):
        decision, _ = led_step(step, cfg, base.spawn(i))
        assert decision.branch == EXPLOIT
        assert decision.gate_prob == 0.0
        hits += decision.token_id == 0
    sigma = math.sqrt(0.9 * 0.1 / n)
    assert abs(hits / n - 0.9) <= 3 * sigma


def test_step_reduction_to_standard_at_depth_one():
    # analytic equality with plain top-k temperature sampling, no nucleus cut
    rng = np.random.default_rng(42)
    cfg = LedConfig(temperature=0.6, k=8, depth=1)
    std = BaselineConfig(temperature=0.6, top_k=8, top_p=1.0)
    for _ in range(200):
        step = random_stack(rng, depth=1, vocab=64)
        ids, law = step_token_distribution(step, cfg)
        sids, slaw = standard_distribution(step.layers[0], std)
        assert ids.tolist() == sids.tolist()
        assert 0.5 * np.abs(law - slaw).sum() <= 1e-9


def test_step_degenerate_stack_equalizes_branches():
    rng = np.random.default_rng(3)
    row = rng.standard_normal(32)
    step = StepLogits(np.tile(row, (6, 1)))
    decision, _ = led_step(step, LedConfig(k=8, depth=6), RandomStream(0))
    tv = 0.5 * np.abs(decision.explore_dist - decision.exploit_dist).sum()
    assert tv <= 1e-9


def test_step_exploit_dist_invariant_to_latents_and_renorm():
    rng = np.random.default_rng(9)
    final = rng.standard_normal(32)
    cfg = LedConfig(k=6, depth=4)
    base = StepLogits(np.vstack([final, rng.standard_normal((3, 32))]))
    alt = StepLogits(np.vstack([final, rng.standard_normal((3, 32))]))
    d_base, _ = led_step(base, cfg, RandomStream(0))
    d_alt, _ = led_step(alt, cfg, RandomStream(0))
    d_renorm, _ = led_step(base, LedConfig(k=6, depth=4, renorm_topk=True), RandomStream(0))
    assert np.allclose(d_base.exploit_dist, d_alt.exploit_dist, atol=1e-15)
    assert np.allclose(d_base.exploit_dist, d_renorm.exploit_dist, atol=1e-15)


def test_step_emits_only_final_topk_candidates():
    rng = np.random.default_rng(11)
    cfg = LedConfig(k=5, depth=4)
    base = RandomStream(17)
    for i in range(500):
        step = random_stack(rng, depth=4, vocab=40)
        decision, _ = led_step(step, cfg, base.spawn(i))
        assert decision.token_id in set(decision.topk_ids.tolist())
        ids, _ = step_token_distribution(step, cfg)
        assert set(decision.topk_ids.tolist()) == set(ids.tolist())


def test_step_depth_clamps_with_warning():
    rng = np.random.default_rng(1)
    step = random_stack(rng, depth=3, vocab=16)
    decision, _ = led_step(step, LedConfig(k=4, depth=8), RandomStream(0))
    assert decision.entropies.size == 3
    assert "clamped" in decision.warning


def test_step_selected_depth_matches_entropy_argmax():
    rng = np.random.default_rng(23)
    base = RandomStream(2)
    cfg = LedConfig(k=6, depth=5)
    for i in range(200):
        step = random_stack(rng, depth=5, vocab=48)
        decision, _ = led_step(step, cfg, base.spawn(i))
        assert decision.selected_depth == int(np.argmax(decision.entropies))


def test_step_top_p_shrinks_candidates():
    # final posterior (0.5, 0.3, 0.15, 0.05): nucleus at 0.8 keeps two tokens
    rows = np.array([[0.5, 0.3, 0.15, 0.05], [0.25, 0.25, 0.25, 0.25]])
    step = StepLogits(probs_to_logits(rows))
    cfg = LedConfig(temperature=1.0, k=4, depth=2, top_p=0.8)
    ids, law = step_token_distribution(step, cfg)
    assert ids.tolist() == [0, 1]
    assert law.size == 2


def test_step_invalid_depth_rejected():
    with pytest.raises(ConfigError):
        LedConfig(depth=0)


def test_step_gate_uses_temperature_scaled_top1():
    rows = np.array([[0.9, 0.1], [0.5, 0.5]])
    step = StepLogits(probs_to_logits(rows, tau=2.0))
    decision, _ = led_step(step, LedConfig(temperature=2.0, k=2, depth=2), RandomStream(0))
    assert decision.final_top1 == pytest.approx(0.9, abs=1e-12)


# ----------------------------------------------------------- led_decode


def test_decode_empty_sequence():
    tokens, decisions, rng = led_decode([], LedConfig(), RandomStream(0))
    assert tokens == [] and decisions == []
    assert rng.counter == 0


def test_decode_replay_determinism():
    rng_np = np.random.default_rng(5)
    steps = [random_stack(rng_np, depth=4, vocab=24) for _ in range(20)]
    cfg = LedConfig(k=6, depth=4)
    t1, d1, _ = led_decode(steps, cfg, RandomStream(8, 2))
    t2, d2, _ = led_decode(steps, cfg, RandomStream(8, 2))
    assert t1 == t2
    assert [d.branch for d in d1] == [d.branch for d in d2]


def test_decode_threads_two_draws_per_step():
    rng_np = np.random.default_rng(5)
    steps = [random_stack(rng_np, depth=2, vocab=8) for _ in range(7)]
    _, _, rng = led_decode(steps, LedConfig(k=3, depth=2), RandomStream(0))
    assert rng.counter == 14
