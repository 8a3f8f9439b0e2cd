"""Command-line entry point: run experiments, compare representations,
and inspect a representation's view of a recorded trace.

Exit codes: 0 success, 2 input/validation error, 3 infeasible budget.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .budget import InfeasibleBudget
from .harness import (
    HarnessConfig,
    make_adapter,
    replay_trace,
    run_experiment,
    write_metrics_csv,
    write_metrics_json,
)
from .messages import LAYOUT_VERSION
from .representations import known_selectors
from .scenario import ScenarioError, load_scenario, parse_strategy

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_INFEASIBLE = 3


def _default_out() -> str:
    return os.environ.get("PERCEPT_LAB_OUT", "out")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="percept-lab",
        description="Perception-layer laboratory: simulate, encode, learn, compare.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train one representation and write metrics")
    run.add_argument("--scenario", required=True)
    run.add_argument("--representation", required=True)
    run.add_argument("--episodes", type=int, default=500)
    run.add_argument("--seed", type=int, default=1)
    run.add_argument("--out", default=None)
    run.add_argument("--slicing", default=None,
                     help="override, e.g. extend:4, multi:2+4, contextual:2x1")
    run.add_argument("--verbose", action="store_true")

    compare = sub.add_parser("compare", help="run all six representation configurations")
    compare.add_argument("--scenario", required=True)
    compare.add_argument("--episodes", type=int, default=500)
    compare.add_argument("--seed", type=int, default=1)
    compare.add_argument("--out", default=None)
    compare.add_argument("--verbose", action="store_true")

    inspect = sub.add_parser("inspect", help="dump a representation at a trace tick")
    inspect.add_argument("--scenario", required=True)
    inspect.add_argument("--trace", required=True)
    inspect.add_argument("--representation", required=True)
    inspect.add_argument("--tick", type=int, required=True)
    return parser


def _parse_slicing_flag(flag: str):
    kind, _, rest = flag.partition(":")
    if kind == "extend":
        return parse_strategy({"strategy": "extend", "window": int(rest or 1)})
    if kind == "multi":
        windows = [int(w) for w in rest.split("+")] if rest else [1, 2]
        return parse_strategy({"strategy": "multi", "windows": windows})
    if kind == "contextual":
        look, _, win = rest.partition("x")
        return parse_strategy(
            {"strategy": "contextual", "lookahead": int(look or 2), "window": int(win or 1)}
        )
    raise ScenarioError([f"unknown slicing spec {flag!r}"])


def _selectors_for_compare(scenario) -> list:
    return known_selectors(scenario.chains or None)


def _validate_selector(selector: str, scenario) -> None:
    valid = set(known_selectors(scenario.chains or None)) | {"restructured+history"}
    if selector not in valid:
        raise ScenarioError(
            [f"unknown representation selector {selector!r}; choose from "
             + ", ".join(sorted(valid))]
        )


def _make_sinks(out_dir: Path):
    traces_dir = out_dir / "traces"
    traces_dir.mkdir(parents=True, exist_ok=True)
    budget_path = out_dir / "budget_events.jsonl"
    budget_fh = open(budget_path, "w")

    def trace_sink(selector: str, episode: int, engine) -> None:
        safe = selector.replace(":", "_").replace("+", "_")
        engine.write_trace(traces_dir / f"{safe}_episode_{episode:04d}.jsonl")

    def budget_sink(selector: str, planner) -> None:
        for event in planner.events:
            record = dict(event)
            record["representation"] = selector
            budget_fh.write(json.dumps(record, sort_keys=True) + "\n")

    return trace_sink, budget_sink, budget_fh


def cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    _validate_selector(args.representation, scenario)
    if args.slicing:
        scenario.slicing = _parse_slicing_flag(args.slicing)
    out_dir = Path(args.out or _default_out())
    out_dir.mkdir(parents=True, exist_ok=True)
    config = HarnessConfig(episodes=args.episodes)
    trace_sink, budget_sink, budget_fh = _make_sinks(out_dir)
    try:
        metrics = run_experiment(
            scenario, [args.representation], config, args.seed,
            trace_sink=trace_sink, budget_sink=budget_sink,
        )
    finally:
        budget_fh.close()
    write_metrics_csv(out_dir / "metrics.csv", metrics)
    write_metrics_json(out_dir / "metrics.json", metrics, LAYOUT_VERSION)
    if args.verbose:
        for m in metrics:
            print(f"{m.representation}: goal at episode {m.episodes_to_goal}, "
                  f"{m.distinct_states} distinct states")
    return EXIT_OK


def cmd_compare(args) -> int:
    scenario = load_scenario(args.scenario)
    out_dir = Path(args.out or _default_out())
    out_dir.mkdir(parents=True, exist_ok=True)
    config = HarnessConfig(episodes=args.episodes)
    trace_sink, budget_sink, budget_fh = _make_sinks(out_dir)
    try:
        metrics = run_experiment(
            scenario, _selectors_for_compare(scenario), config, args.seed,
            trace_sink=trace_sink, budget_sink=budget_sink,
        )
    finally:
        budget_fh.close()
    write_metrics_csv(out_dir / "comparison.csv", metrics)
    write_metrics_csv(out_dir / "metrics.csv", metrics)
    write_metrics_json(out_dir / "metrics.json", metrics, LAYOUT_VERSION)
    if args.verbose:
        for m in metrics:
            width = m.encoded_width_bits if m.encoded_width_bits else "-"
            print(f"{m.representation}: width={width} states={m.distinct_states}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    scenario = load_scenario(args.scenario)
    _validate_selector(args.representation, scenario)
    trace_path = Path(args.trace)
    if not trace_path.exists():
        raise ScenarioError([f"trace file {trace_path} does not exist"])
    records = [json.loads(line) for line in trace_path.read_text().splitlines() if line]
    last_tick = max((r["tick"] for r in records), default=0)
    if args.tick < 0 or args.tick > last_tick:
        raise ScenarioError(
            [f"tick {args.tick} out of range; trace covers ticks 0..{last_tick}"]
        )
    adapter = make_adapter(args.representation, scenario)
    subset = [r for r in records if r["tick"] <= args.tick]
    replay_trace(subset, adapter, scenario)
    print(json.dumps(adapter.dump(), indent=2, sort_keys=True))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"run": cmd_run, "compare": cmd_compare, "inspect": cmd_inspect}
    try:
        return handlers[args.command](args)
    except ScenarioError as exc:
        print("validation error:", file=sys.stderr)
        for problem in exc.problems:
            print(f"  - {problem}", file=sys.stderr)
        return EXIT_INVALID
    except InfeasibleBudget as exc:
        print(f"infeasible budget: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
