"""Command-line harness: toy-model runs, the synthetic bench, analysis, ablations, serving.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
Values resolve flag > config file (--config, JSON object keyed by flag name
with dashes as underscores) > built-in default.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import analysis, baselines, scenario, toy_model, traceio
from .bridge import ServerSettings, serve_stdio, serve_tcp
from .prob import ConfigError, DegenerateInputError, temperature_softmax
from .rng import RandomStream
from .sampler import LedConfig, led_generate_sampler
from .toy_model import WeightFileError


class UsageError(Exception):
    """Bad flags, bad files, bad values: exit code 2."""


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError as exc:
        raise UsageError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError("config file must hold a JSON object")
    return data


class _Resolver:
    """Flag > config file > default."""

    def __init__(self, args):
        self.args = args
        self.file = _load_config_file(getattr(args, "config", None))

    def get(self, name, default=None):
        value = getattr(self.args, name, None)
        if value is not None:
            return value
        if name in self.file:
            return self.file[name]
        return default


def _parse_ids(text: str) -> list[int]:
    try:
        return [int(tok) for tok in str(text).replace(" ", "").split(",") if tok != ""]
    except ValueError as exc:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from exc


def _led_config(res: _Resolver) -> LedConfig:
    top_p = res.get("top_p")
    return LedConfig(
        temperature=float(res.get("temperature", 0.6)),
        k=int(res.get("k", 8)),
        depth=int(res.get("depth", 8)),
        eps=float(res.get("eps", 1e-6)),
        entropy_clamp=float(res.get("entropy_clamp", 1e-9)),
        think_only=bool(res.get("think_only", True)),
        exploit_gate=bool(res.get("exploit_gate", True)),
        renorm_topk=bool(res.get("renorm_topk", False)),
        latent_layernorm=bool(res.get("latent_layernorm", False)),
        top_p=None if top_p is None else float(top_p),
    )


def _baseline_config(res: _Resolver) -> baselines.BaselineConfig:
    return baselines.BaselineConfig(
        temperature=float(res.get("temperature", 0.6)),
        top_k=int(res.get("top_k", 20)),
        top_p=float(res.get("top_p", 0.95) or 0.95),
        greedy=bool(res.get("greedy", False)),
        dola_alpha=float(res.get("dola_alpha", 0.1)),
        dola_candidate_layers=tuple(_parse_ids(res.get("dola_layers", ""))),
    )


def _stats_dict(stats: analysis.DecisionStats) -> dict:
    out = asdict(stats)
    out["depth_histogram"] = {str(k): v for k, v in sorted(stats.depth_histogram.items())}
    return out


# ---------------------------------------------------------------- commands


def cmd_toy_init(args) -> int:
    res = _Resolver(args)
    config = toy_model.ToyConfig(
        n_layers=int(res.get("layers", 8)),
        hidden=int(res.get("hidden", 64)),
        heads=int(res.get("heads", 4)),
        vocab=int(res.get("vocab", 256)),
        max_seq=int(res.get("max_seq", 256)),
        norm_eps=float(res.get("norm_eps", 1e-6)),
    )
    weights = toy_model.init_weights(config, seed=int(res.get("seed", 0)))
    toy_model.save_weights(weights, args.out)
    print(f"wrote {args.out} checksum={toy_model.weights_checksum(weights)}")
    return 0


def cmd_toy_run(args) -> int:
    res = _Resolver(args)
    weights_path = res.get("weights")
    if not weights_path:
        raise UsageError("--weights is required")
    if not Path(weights_path).exists():
        raise UsageError(f"weight file not found: {weights_path}")
    weights = toy_model.load_weights(weights_path)

    prompt = _parse_ids(res.get("prompt", "1,2,3"))
    if not prompt:
        raise UsageError("prompt must contain at least one token id")
    max_new = int(res.get("max_new", 32))
    sampler_name = str(res.get("sampler", "led"))
    seed = int(res.get("seed", 0))
    stream = int(res.get("stream", 0))
    led_cfg = _led_config(res)

    if sampler_name == "led":
        sampler = led_generate_sampler(led_cfg)
    elif sampler_name == "standard":
        sampler = baselines.standard_generate_sampler(_baseline_config(res))
    elif sampler_name == "greedy":
        sampler = baselines.greedy_generate_sampler()
    elif sampler_name == "dola":
        sampler = baselines.dola_generate_sampler(_baseline_config(res))
    else:
        raise UsageError(f"unknown sampler {sampler_name!r}")

    begin, end = res.get("think_begin"), res.get("think_end")
    if (begin is None) != (end is None):
        raise UsageError("--think-begin and --think-end must be given together")
    think_span = None if begin is None else (int(begin), int(end))

    result = toy_model.generate(
        weights,
        prompt,
        sampler,
        max_new=max_new,
        think_span=think_span,
        trace_depth=led_cfg.depth,
        latent_layernorm=led_cfg.latent_layernorm,
        rng=RandomStream(seed=seed, stream_id=stream),
    )

    decisions = [info for info in result.infos if info is not None]
    trace_path = res.get("trace")
    if trace_path:
        if sampler_name != "led":
            raise UsageError("--trace requires the led sampler")
        traceio.write_trace(trace_path, [traceio.record_from_decision(d) for d in decisions])

    dump_path = res.get("dump_logits")
    if dump_path:
        stacks = np.stack([s.layers for s in result.steps]).astype(np.float32)
        think = np.array([s.think_flag for s in result.steps])
        np.savez(dump_path, logits=stacks, think=think, final_first=np.array(True))

    out_path = res.get("out")
    if out_path:
        payload = {
            "prompt": prompt,
            "tokens": result.tokens,
            "new_tokens": result.new_tokens,
            "sampler": sampler_name,
            "seed": seed,
            "stream": stream,
        }
        if decisions:
            payload["summary"] = _stats_dict(analysis.decision_stats(decisions))
        with open(out_path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True, indent=2)
            fh.write("\n")
    print(f"generated {len(result.new_tokens)} tokens with {sampler_name}")
    return 0


def _load_scenario(res: _Resolver, rng: RandomStream) -> scenario.ScenarioTrace:
    path = res.get("scenario")
    if path:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                return scenario.trace_from_json(json.load(fh))
        except FileNotFoundError as exc:
            raise UsageError(f"scenario file not found: {path}") from exc
        except (KeyError, json.JSONDecodeError) as exc:
            raise UsageError(f"scenario file is malformed: {exc}") from exc
    return scenario.generate_scenario(scenario.ScenarioConfig(), rng)


def cmd_synthetic(args) -> int:
    res = _Resolver(args)
    attempts = int(res.get("attempts", 10000))
    if attempts < 1:
        raise UsageError("attempts must be >= 1")
    seed = int(res.get("seed", 0))
    trace = _load_scenario(res, RandomStream(seed=seed, stream_id=1))

    scenario_out = res.get("scenario_out")
    if scenario_out:
        with open(scenario_out, "w", encoding="utf-8") as fh:
            json.dump(scenario.trace_to_json(trace), fh, sort_keys=True, indent=2)
            fh.write("\n")

    led_cfg = scenario.default_led_config(trace.config, **_led_overrides(res))
    std_cfg = scenario.default_baseline_config(trace.config)
    specs = {"led": ("led", led_cfg), "standard": ("standard", std_cfg)}
    names = [s for s in str(res.get("samplers", "led,standard")).split(",") if s]
    rows = []
    for name in names:
        if name not in specs:
            raise UsageError(f"unknown sampler {name!r}")
        spec = specs[name]
        exact = scenario.exact_success_prob(trace, spec)
        result = scenario.run_experiment(trace, spec, attempts, RandomStream(seed=seed, stream_id=2))
        empirical = float(result.successes.mean())
        for n in sorted(result.pass_at_n):
            rows.append(
                (name, exact, empirical, n, scenario.pass_at_n_exact(exact, n), result.pass_at_n[n])
            )
    out = res.get("out", "synthetic_metrics.csv")
    traceio.write_csv(
        out,
        ["sampler", "exact_success", "empirical_success", "n", "exact_pass_at_n", "empirical_pass_at_n"],
        rows,
    )
    print(f"wrote {out}")
    return 0


def _led_overrides(res: _Resolver) -> dict:
    out = {}
    for name, cast in (
        ("temperature", float),
        ("k", int),
        ("depth", int),
        ("eps", float),
        ("top_p", float),
    ):
        value = res.get(name)
        if value is not None:
            out[name] = cast(value)
    for name in ("think_only", "exploit_gate", "renorm_topk", "latent_layernorm"):
        value = res.get(name)
        if value is not None:
            out[name] = bool(value)
    return out


_ABLATION_DEPTHS = (1, 2, 4, 8, 12, 16)
_ABLATION_VARIANTS = (
    "default",
    "no-think-only",
    "latent-layernorm",
    "renorm-topk",
    "no-exploitation",
) + tuple(f"depth-{d}" for d in _ABLATION_DEPTHS)


def _variant_config(name: str, base: LedConfig) -> LedConfig:
    if name == "default":
        return base
    if name == "no-think-only":
        return replace(base, think_only=False)
    if name == "latent-layernorm":
        return replace(base, latent_layernorm=True)
    if name == "renorm-topk":
        return replace(base, renorm_topk=True)
    if name == "no-exploitation":
        return replace(base, exploit_gate=False)
    if name.startswith("depth-"):
        return replace(base, depth=int(name.split("-", 1)[1]))
    if name == "no-topk-filter":
        raise UsageError(
            "the no-topk-filter variant is refused: without the final layer's candidate "
            "set, exploration can emit arbitrary vocabulary tokens and generation "
            "degenerates into unbounded loops, so there is no meaningful number to report"
        )
    raise UsageError(f"unknown ablation variant {name!r}")


def cmd_ablate(args) -> int:
    res = _Resolver(args)
    seed = int(res.get("seed", 0))
    attempts = int(res.get("attempts", 0))
    trace = _load_scenario(res, RandomStream(seed=seed, stream_id=1))
    base = scenario.default_led_config(trace.config)
    names = res.get("variants")
    names = list(_ABLATION_VARIANTS) if not names else str(names).split(",")

    rows = []
    std_cfg = scenario.default_baseline_config(trace.config)
    exact_std = scenario.exact_success_prob(trace, ("standard", std_cfg))
    rows.append(("standard", "", exact_std, exact_std, scenario.pass_at_n_exact(exact_std, 16), ""))
    for name in names:
        cfg = _variant_config(name, base)
        depth_eff = min(cfg.depth, trace.config.depth)
        exact = scenario.exact_success_prob(trace, ("led", cfg))
        empirical = ""
        if attempts > 0:
            result = scenario.run_experiment(
                trace, ("led", cfg), attempts, RandomStream(seed=seed, stream_id=3)
            )
            empirical = float(result.successes.mean())
        rows.append(
            (name, depth_eff, exact, exact, scenario.pass_at_n_exact(exact, 16), empirical)
        )
    out = res.get("out", "ablation.csv")
    traceio.write_csv(
        out,
        ["variant", "effective_depth", "exact_success", "exact_pass_at_1", "exact_pass_at_16", "empirical_success"],
        rows,
    )
    print(f"wrote {out}")
    return 0


def _gather_trace_files(res: _Resolver) -> list[Path]:
    files = [Path(p) for p in (res.get("trace") or [])]
    trace_dir = res.get("trace_dir")
    if trace_dir:
        root = Path(trace_dir)
        if not root.is_dir():
            raise UsageError(f"trace dir not found: {trace_dir}")
        found = sorted(root.glob("*.jsonl"))
        if not found:
            raise UsageError(f"trace dir holds no .jsonl files: {trace_dir}")
        files.extend(found)
    return files


def cmd_analyze(args) -> int:
    res = _Resolver(args)
    out_dir = Path(res.get("out_dir", "."))
    out_dir.mkdir(parents=True, exist_ok=True)
    wrote = []

    trace_files = _gather_trace_files(res)
    if trace_files:
        records = []
        for path in trace_files:
            if not path.exists():
                raise UsageError(f"trace file not found: {path}")
            records.extend(traceio.read_trace(path))
        if not records:
            raise UsageError("trace files contain no records")
        stats = _stats_dict(analysis.decision_stats(records))
        path = out_dir / "decision_stats.json"
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(stats, fh, sort_keys=True, indent=2)
            fh.write("\n")
        wrote.append(path)

    logits_path = res.get("logits")
    if logits_path:
        if not Path(logits_path).exists():
            raise UsageError(f"logits file not found: {logits_path}")
        data = np.load(logits_path)
        stacks = [s for s in data["logits"].astype(np.float64)]
        tau = float(res.get("tau", 1.0))
        normalize = bool(res.get("normalize", False))
        ent = analysis.entropy_by_layer_from_logits(stacks, tau=tau, normalize=normalize)
        path = out_dir / "entropy_by_layer.csv"
        traceio.write_csv(path, ["layer_offset", "mean_entropy"], list(enumerate(ent.tolist())))
        wrote.append(path)

        k_values = _parse_ids(res.get("k_values", "1,2,4,8,16"))
        posteriors = [temperature_softmax(s, tau) for s in stacks]
        cov = analysis.topk_coverage(posteriors, k_values, final_row=0)
        cov_rows = []
        for ki, k in enumerate(cov.k_values):
            for layer, value in enumerate(cov.values[ki]):
                cov_rows.append((k, layer, float(value)))
        path = out_dir / "coverage.csv"
        traceio.write_csv(path, ["k", "layer_offset", "coverage"], cov_rows)
        wrote.append(path)

    grid_path = res.get("grid")
    if grid_path:
        try:
            with open(grid_path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
            grid = analysis.AccuracyGrid(
                values=np.asarray(raw["values"], dtype=np.float64),
                temperatures=tuple(raw["temperatures"]),
                n_values=tuple(raw["n_values"]),
            )
        except FileNotFoundError as exc:
            raise UsageError(f"grid file not found: {grid_path}") from exc
        except (KeyError, json.JSONDecodeError) as exc:
            raise UsageError(f"grid file is malformed: {exc}") from exc
        path = out_dir / "alpha.csv"
        traceio.write_csv(path, ["alpha"], [(analysis.alpha_slope(grid),)])
        wrote.append(path)

    if not wrote:
        raise UsageError("nothing to analyze: pass --trace/--trace-dir, --logits, or --grid")
    print("wrote " + " ".join(str(p) for p in wrote))
    return 0


def cmd_serve(args) -> int:
    res = _Resolver(args)
    settings = ServerSettings(
        think_only=bool(res.get("think_only", True)),
        exploit_gate=bool(res.get("exploit_gate", True)),
        renorm_topk=bool(res.get("renorm_topk", False)),
        eps=float(res.get("eps", 1e-6)),
        entropy_clamp=float(res.get("entropy_clamp", 1e-9)),
    )
    port = res.get("port")
    if port is None:
        return serve_stdio(settings)
    serve_tcp(str(res.get("host", "127.0.0.1")), int(port), settings)
    return 0


# ---------------------------------------------------------------- parser


def _add_led_flags(p: argparse.ArgumentParser):
    p.add_argument("--temperature", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--entropy-clamp", dest="entropy_clamp", type=float)
    p.add_argument("--top-p", dest="top_p", type=float)
    p.add_argument("--think-only", dest="think_only", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--exploit-gate", dest="exploit_gate", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--renorm-topk", dest="renorm_topk", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument(
        "--latent-layernorm", dest="latent_layernorm", action=argparse.BooleanOptionalAction, default=None
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="led", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("toy-init", help="create and save toy-model weights")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--vocab", type=int)
    p.add_argument("--max-seq", dest="max_seq", type=int)
    p.add_argument("--norm-eps", dest="norm_eps", type=float)
    p.set_defaults(func=cmd_toy_init)

    p = sub.add_parser("toy-run", help="generate from the toy model with a chosen sampler")
    p.add_argument("--config")
    p.add_argument("--weights")
    p.add_argument("--prompt")
    p.add_argument("--max-new", dest="max_new", type=int)
    p.add_argument("--sampler", choices=["led", "standard", "greedy", "dola"])
    p.add_argument("--seed", type=int)
    p.add_argument("--stream", type=int)
    p.add_argument("--top-k", dest="top_k", type=int)
    p.add_argument("--greedy", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--dola-alpha", dest="dola_alpha", type=float)
    p.add_argument("--dola-layers", dest="dola_layers")
    p.add_argument("--think-begin", dest="think_begin", type=int)
    p.add_argument("--think-end", dest="think_end", type=int)
    p.add_argument("--trace")
    p.add_argument("--out")
    p.add_argument("--dump-logits", dest="dump_logits")
    _add_led_flags(p)
    p.set_defaults(func=cmd_toy_run)

    p = sub.add_parser("synthetic", help="exact and empirical metrics on a synthetic scenario")
    p.add_argument("--config")
    p.add_argument("--scenario")
    p.add_argument("--scenario-out", dest="scenario_out")
    p.add_argument("--attempts", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--samplers")
    p.add_argument("--out")
    _add_led_flags(p)
    p.set_defaults(func=cmd_synthetic)

    p = sub.add_parser("ablate", help="sampler-variant table on a synthetic scenario")
    p.add_argument("--config")
    p.add_argument("--scenario")
    p.add_argument("--attempts", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--variants")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("analyze", help="statistics from traces, logit dumps, or accuracy grids")
    p.add_argument("--config")
    p.add_argument("--trace", nargs="*")
    p.add_argument("--trace-dir", dest="trace_dir")
    p.add_argument("--logits")
    p.add_argument("--tau", type=float)
    p.add_argument("--normalize", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--k-values", dest="k_values")
    p.add_argument("--grid")
    p.add_argument("--out-dir", dest="out_dir")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("serve", help="run the logit-stream bridge server")
    p.add_argument("--config")
    p.add_argument("--stdio", action="store_true", help="serve a single session on stdio (default)")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--entropy-clamp", dest="entropy_clamp", type=float)
    p.add_argument("--think-only", dest="think_only", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--exploit-gate", dest="exploit_gate", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--renorm-topk", dest="renorm_topk", action=argparse.BooleanOptionalAction, default=None)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    try:
        return args.func(args)
    except (UsageError, ConfigError, DegenerateInputError, WeightFileError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 1
    except Exception as exc:  # runtime failure
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
