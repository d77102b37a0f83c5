#!/usr/bin/env python3
"""Profile per-layer entropy and top-k coverage of the toy model's residual stream.

Generates a short continuation, projects every layer of every step through
the shared head, and prints the layerwise mean entropy plus the mass each
layer puts on the final layer's top-k candidates.
"""

import argparse

import numpy as np

from led.analysis import entropy_by_layer_from_logits, topk_coverage
from led.prob import temperature_softmax
from led.rng import RandomStream
from led.sampler import LedConfig, led_generate_sampler
from led.toy_model import ToyConfig, generate, init_weights


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--prompt", default="1,2,3")
    ap.add_argument("--max-new", type=int, default=64)
    ap.add_argument("--tau", type=float, default=1.0)
    ap.add_argument("--k-values", default="1,2,4,8,16")
    args = ap.parse_args()

    config = ToyConfig()
    weights = init_weights(config, seed=args.seed)
    prompt = [int(t) for t in args.prompt.split(",")]
    result = generate(
        weights,
        prompt,
        led_generate_sampler(LedConfig(depth=config.n_layers)),
        max_new=args.max_new,
        trace_depth=config.n_layers,
        rng=RandomStream(args.seed),
    )

    stacks = [s.layers for s in result.steps]
    entropies = entropy_by_layer_from_logits(stacks, tau=args.tau, normalize=True)
    posteriors = [temperature_softmax(s, args.tau) for s in stacks]
    k_values = [int(k) for k in args.k_values.split(",")]
    coverage = topk_coverage(posteriors, k_values, final_row=0)

    print(f"{len(stacks)} steps, rows newest-first (offset 0 = final layer)")
    header = "offset  norm-entropy  " + "  ".join(f"r@{k:<4d}" for k in k_values)
    print(header)
    for offset in range(config.n_layers):
        cov = "  ".join(f"{coverage.values[ki, offset]:.3f}" for ki in range(len(k_values)))
        print(f"{offset:>6d}  {entropies[offset]:12.4f}  {cov}")


if __name__ == "__main__":
    main()
