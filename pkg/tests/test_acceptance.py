"""Acceptance suite: one test per criterion, each printing a pass line and
holding its stated runtime bound.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines as they pass.
"""

import csv
import random
import time
from dataclasses import replace

import pytest

from percept_lab.budget import BudgetEnvelope, BudgetPlanner, InfeasibleBudget, Mode, \
    SensorSpec, SensorState, priority_violations, total_power
from percept_lab.cli import main as cli_main
from percept_lab.harness import decile_means
from percept_lab.messages import NetAddress, default_layout
from percept_lab.pipeline import Contextual, Extend, SliceAligner, count_split_pairs
from percept_lab.representations import (
    IndexedCodec,
    IndexRegistry,
    RestructuredWorld,
    ServiceHistory,
    StaleIndexError,
    apply_to_history,
    apply_to_restructured,
    decode_verbatim,
    encode_static_elim,
    encode_verbatim,
    reconstruct_static,
    time_bucket,
)
from percept_lab.scenario import load_scenario
from percept_lab.trust import FaultConfig, FaultMode, inject, vote_streams

from conftest import TEST_PROFILE, random_in_profile_response, random_response, scenario_path
from test_interning import LruOracle
from test_pipeline import make_request, make_response as make_plain_response
from test_views import history_oracle, make_response, oracle_world, random_trace, worlds_equal


def report(number: int, description: str, elapsed: float, bound: float) -> None:
    print(f"[PASS] criterion {number}: {description} ({elapsed:.3f}s < {bound:g}s)")
    assert elapsed < bound, f"criterion {number} exceeded its {bound}s budget"


def test_criterion_1_verbatim_width():
    start = time.perf_counter()
    layout = default_layout()
    assert layout.total_width == sum(w for _, w in layout.entries) == 2070
    assert layout.total_width > 1500
    report(1, "verbatim layout totals 2070 bits (> 1500)",
           time.perf_counter() - start, 0.001)


def test_criterion_2_codec_roundtrips():
    start = time.perf_counter()
    rng = random.Random(2024)
    for _ in range(10_000):
        response = random_response(rng)
        assert decode_verbatim(encode_verbatim(response)) == response
    for _ in range(10_000):
        response = random_in_profile_response(rng)
        rebuilt = reconstruct_static(encode_static_elim(response, TEST_PROFILE), TEST_PROFILE)
        assert rebuilt == replace(response, id=0)
    report(2, "10k verbatim + 10k static-elim round-trips exact",
           time.perf_counter() - start, 5.0)


def test_criterion_3_width_ordering_in_compare_output(tmp_path):
    start = time.perf_counter()
    out = tmp_path / "cmp"
    code = cli_main([
        "compare", "--scenario", str(scenario_path("reference4")),
        "--seed", "1", "--episodes", "2", "--out", str(out),
    ])
    assert code == 0
    with open(out / "comparison.csv") as fh:
        rows = {r["representation"]: r for r in csv.DictReader(fh)}
    assert rows["indexed"]["encoded_width_bits"] == "68"
    assert rows["static-elim"]["encoded_width_bits"] == "1161"
    assert rows["verbatim"]["encoded_width_bits"] == "2070"
    assert 68 < 1161 < 2070
    report(3, "cmd_compare reports widths 68 < 1161 < 2070 byte-exact",
           time.perf_counter() - start, 30.0)


@pytest.mark.parametrize("capacity", [2, 4, 16])
def test_criterion_4_registry_vs_oracle(capacity):
    start = time.perf_counter()
    rng = random.Random(4000 + capacity)
    registry = IndexRegistry({"dom": capacity})
    oracle = LruOracle(capacity)
    values = [f"value-{i}" for i in range(capacity * 3)]
    for _ in range(10_000):
        if rng.random() < 0.7:
            value = rng.choice(values)
            assert registry.intern("dom", value) == oracle.intern(value)
        else:
            index = rng.randrange(capacity + 2)
            try:
                expected = oracle.resolve(index)
            except KeyError:
                with pytest.raises(StaleIndexError):
                    registry.resolve("dom", index)
            else:
                assert registry.resolve("dom", index) == expected
    report(4, f"registry matches LRU oracle over 10k ops (capacity {capacity})",
           time.perf_counter() - start, 5.0)


def test_criterion_5_restructured_oracle_equivalence():
    start = time.perf_counter()
    for seed in range(100):
        rng = random.Random(5000 + seed)
        trace = random_trace(rng, rng.randrange(50, 201), machine_count=8)
        capacity = rng.choice([2, 4, 8, 16])
        world = RestructuredWorld(capacity)
        for response in trace:
            apply_to_restructured(world, response)
        assert worlds_equal(world, oracle_world(trace, capacity))
    report(5, "incremental world equals from-scratch oracle on 100 traces",
           time.perf_counter() - start, 10.0)


def test_criterion_6_history_vs_scanning_oracle():
    from percept_lab.engine import Engine
    from percept_lab.messages import ServiceRef

    start = time.perf_counter()
    sc = load_scenario(scenario_path("reference4"))
    engine = Engine(sc.topology, sc.vulns, seed=sc.seed)
    history = ServiceHistory(sc.vulns)
    rng = random.Random(66)
    targets = [NetAddress.parse(a) for a in ("10.0.0.2", "10.0.1.2", "10.0.1.3")]

    def run(action, dst, service=""):
        request = engine.new_request(action, dst, ServiceRef(service))
        engine.submit_request(request)
        apply_to_history(history, request, now=engine.queue.current_tick + 1)
        response = engine.run_until_response(request.id)
        if response is not None:
            apply_to_history(history, response, now=engine.queue.current_tick)

    for dst in targets:
        run("list_services", dst)
    for _ in range(200):
        run("exploit", rng.choice(targets), rng.choice(["files", "mysql", "ssh", "http"]))

    now = engine.queue.current_tick
    counts, deltas = history_oracle(engine.trace, sc.vulns, now)
    observed = {
        (r.name, r.version): r.exploitation_attempts
        for r in history.records.values()
        if r.exploitation_attempts
    }
    assert observed == counts
    for key, delta in deltas.items():
        assert history.records[key].time_since(now) == delta
        assert history.records[key].time_since_bucket(now) == time_bucket(delta)
    report(6, "exploitation counts and tick arithmetic match the trace oracle",
           time.perf_counter() - start, 5.0)


def _paired_trace(rng, pairs):
    """(request tick, id, response tick) triples with latency <= 2."""
    schedule = []
    tick = 1
    for _ in range(pairs):
        mid = rng.getrandbits(24)
        schedule.append((tick, mid, tick + rng.choice([1, 2])))
        tick += rng.choice([1, 2])
    return schedule


def _run_slicing(schedule, strategy):
    from percept_lab.pipeline import TimestampedPercept

    horizon = max(response_tick for _, _, response_tick in schedule) + 8
    aligner = SliceAligner(strategy)
    snapshots = []
    by_tick = {}
    for request_tick, mid, response_tick in schedule:
        by_tick.setdefault(request_tick, []).append(("tap", make_request(mid)))
        by_tick.setdefault(response_tick, []).append(("feed", make_plain_response(mid)))
    for tick in range(1, horizon + 1):
        for source, payload in by_tick.get(tick, []):
            aligner.deliver(TimestampedPercept(tick, source, 0, payload))
        snapshots.extend(aligner.close(tick))
    return count_split_pairs(snapshots)


def test_criterion_7_slicing_properties():
    start = time.perf_counter()
    rng = random.Random(77)
    schedule = _paired_trace(rng, 250)  # 500 messages
    assert _run_slicing(schedule, Contextual(lookahead=2, window=1)) == 0
    split_counts = [_run_slicing(schedule, Extend(w)) for w in (1, 2, 4, 8)]
    assert split_counts == sorted(split_counts, reverse=True)
    report(7, f"contextual(2,1) splits 0; extend splits non-increasing {split_counts}",
           time.perf_counter() - start, 5.0)


def test_criterion_8_budget_safety_random_sequences():
    start = time.perf_counter()
    rng = random.Random(88)
    sequences = 500
    ops_per_sequence = 20
    for _ in range(sequences):
        count = rng.randrange(2, 7)
        specs = [
            SensorSpec(
                id=f"s{i}",
                mode=rng.choice([Mode.PULL, Mode.PUSH]),
                base_interval=rng.choice([1, 2, 4]),
                power_cost=rng.choice([1.0, 2.0, 3.0, 5.0]),
                importance=i + 1,
            )
            for i in range(count)
        ]
        envelope = BudgetEnvelope(rng.choice([2.0, 4.0, 8.0, 16.0]), 64)
        planner = BudgetPlanner(specs, envelope)
        try:
            planner.plan_base_set()
        except InfeasibleBudget:
            assert total_power(specs) <= envelope.power_limit
            continue
        for _ in range(ops_per_sequence):
            op = rng.choice(["plan", "degrade", "activate"])
            if op == "plan":
                try:
                    planner.plan_base_set()
                except InfeasibleBudget:
                    pass
            elif op == "degrade":
                planner.degrade()
            else:
                target = rng.choice(specs)
                if target.state is SensorState.OFF and not target.user_disabled:
                    planner.activate_on_demand(target.id)
            assert total_power(specs) <= envelope.power_limit + 1e-9
            assert priority_violations(specs) == []
    report(8, f"{sequences * ops_per_sequence} budget ops never broke the envelope",
           time.perf_counter() - start, 10.0)


def test_criterion_9_trust_voting():
    start = time.perf_counter()
    rng = random.Random(99)
    clean = []
    for i in range(1_000):
        clean.append(replace(random_response(rng), id=i))
    stuck = inject(FaultConfig(FaultMode.STUCK, stuck_percept=clean[0], seed=0), clean)
    voted = vote_streams([clean, stuck, clean])
    recovered = sum(1 for v, c in zip(voted, clean) if v.percept == c)
    assert recovered == 1_000  # 100% of positions

    # Upstream fault ahead of the replication point defeats voting.
    upstream = inject(FaultConfig(FaultMode.FLIP, fields=("status.value",), seed=5), clean)
    defeated = vote_streams([upstream, upstream, upstream])
    assert [v.percept for v in defeated] == upstream
    assert [v.percept for v in defeated] != clean
    report(9, "3-replica vote recovers 1000/1000 positions; upstream fault defeats it",
           time.perf_counter() - start, 5.0)


def test_criterion_10_end_to_end_reproducible_learning(tmp_path):
    start = time.perf_counter()
    outputs = []
    for name in ("first", "second"):
        out = tmp_path / name
        code = cli_main([
            "run", "--scenario", str(scenario_path("reference4")),
            "--representation", "restructured+history",
            "--seed", "1", "--episodes", "500", "--out", str(out),
        ])
        assert code == 0
        outputs.append(out)
    csv_bytes = [(p / "metrics.csv").read_bytes() for p in outputs]
    assert csv_bytes[0] == csv_bytes[1]  # byte-identical across invocations

    with open(outputs[0] / "metrics.csv") as fh:
        row = next(csv.DictReader(fh))
    assert int(row["episodes_to_goal"]) >= 1  # goal reached at least once
    steps = [int(s) for s in row["steps_per_episode"].split("|")]
    assert len(steps) == 500
    first, last = decile_means(steps)
    assert last < first  # strictly below
    report(
        10,
        f"500-episode run reproducible; deciles {first:.1f} -> {last:.1f}",
        time.perf_counter() - start, 60.0,
    )


def test_criterion_11_mapping_drift():
    start = time.perf_counter()
    rng = random.Random(111)
    a = random_in_profile_response(rng)
    b = random_in_profile_response(rng)
    while b.dst_ip == a.dst_ip:
        b = random_in_profile_response(rng)
    forward, reverse = IndexedCodec(), IndexedCodec()
    for response in (a, b, a):
        forward.encode(response)
    for response in (b, a, a):
        reverse.encode(response)
    index_forward = forward.registry.live_index_of("dst_ip", a.dst_ip)
    index_reverse = reverse.registry.live_index_of("dst_ip", a.dst_ip)
    assert index_forward != index_reverse
    report(11, "arrival order alone changes the index of a shared value",
           time.perf_counter() - start, 1.0)
