"""Fault injection determinism, redundancy voting, and baseline probes."""

import random

import pytest

from percept_lab.engine import Engine
from percept_lab.messages import NetAddress, ServiceRef
from percept_lab.scenario import load_scenario
from percept_lab.trust import (
    AlignmentError,
    Baseline,
    FaultConfig,
    FaultMode,
    inject,
    probe_baseline,
    record_baseline,
    vote,
    vote_streams,
)
from conftest import random_response, scenario_path


def make_stream(seed, length=100):
    rng = random.Random(seed)
    stream = []
    for i in range(length):
        response = random_response(rng)
        stream.append(response.__class__(**{
            **{f: getattr(response, f) for f in response.__dataclass_fields__},
            "id": i,
        }))
    return stream


def test_dropout_zero_keeps_stream():
    stream = make_stream(1, 50)
    fault = FaultConfig(FaultMode.DROPOUT, probability=0.0, seed=3)
    assert inject(fault, stream) == stream


def test_dropout_one_empties_stream():
    stream = make_stream(2, 50)
    fault = FaultConfig(FaultMode.DROPOUT, probability=1.0, seed=3)
    assert inject(fault, stream) == []


def test_dropout_deterministic_given_seed():
    stream = make_stream(3, 200)
    fault = lambda: FaultConfig(FaultMode.DROPOUT, probability=0.35, seed=11)
    assert inject(fault(), stream) == inject(fault(), stream)


def test_stuck_replays_recorded_percept():
    stream = make_stream(4, 20)
    fault = FaultConfig(FaultMode.STUCK, stuck_percept=stream[0], seed=0)
    out = inject(fault, stream)
    assert out == [stream[0]] * 20


def test_flip_deterministic_and_changes_field():
    stream = make_stream(5, 10)
    fault = lambda: FaultConfig(FaultMode.FLIP, fields=("status.value",), seed=7)
    first = inject(fault(), stream)
    second = inject(fault(), stream)
    assert first == second
    for original, flipped in zip(stream, first):
        assert flipped.status.value != original.status.value
        assert flipped.content == original.content


def test_flip_rejects_unknown_field():
    with pytest.raises(ValueError):
        FaultConfig(FaultMode.FLIP, fields=("no.such.field",))


def test_vote_all_agree_returns_input():
    stream = make_stream(6, 30)
    voted = vote_streams([stream, stream, stream])
    assert [v.percept for v in voted] == stream
    assert all(v.trusted for v in voted)


def test_vote_outvotes_one_stuck_replica():
    clean = make_stream(7, 50)
    stuck = inject(FaultConfig(FaultMode.STUCK, stuck_percept=clean[0], seed=0), clean)
    voted = vote_streams([clean, stuck, clean])
    assert [v.percept for v in voted] == clean


def test_vote_flags_three_way_disagreement():
    clean = make_stream(8, 10)
    flip_a = inject(FaultConfig(FaultMode.FLIP, fields=("content",), seed=1), clean)
    flip_b = inject(FaultConfig(FaultMode.FLIP, fields=("content",), seed=2), clean)
    voted = vote([clean, flip_a, flip_b], 0)
    assert "content" in voted.untrusted_fields


def test_vote_needs_odd_replicas():
    stream = make_stream(9, 5)
    with pytest.raises(ValueError):
        vote([stream, stream], 0)


def test_vote_alignment_error_on_diverging_lengths():
    stream = make_stream(10, 20)
    shorter = stream[:15]
    with pytest.raises(AlignmentError):
        vote_streams([stream, shorter, stream])


def test_vote_alignment_error_without_id_majority():
    from dataclasses import replace

    a = make_stream(11, 3)
    b = [replace(m, id=m.id + 100) for m in a]
    c = [replace(m, id=m.id + 200) for m in a]
    with pytest.raises(AlignmentError):
        vote([a, b, c], 0)


def test_upstream_fault_defeats_voting():
    # A fault ahead of the replication point reaches every replica; the
    # vote then confirms the faulted stream rather than recovering truth.
    clean = make_stream(14, 40)
    upstream = inject(FaultConfig(FaultMode.FLIP, fields=("status.value",), seed=5), clean)
    voted = vote_streams([upstream, upstream, upstream])
    assert [v.percept for v in voted] == upstream
    assert [v.percept for v in voted] != clean
    assert all(v.trusted for v in voted)


def make_engine():
    sc = load_scenario(scenario_path("minimal2"))
    return Engine(sc.topology, sc.vulns, seed=sc.seed)


def test_probe_baseline_clean_match():
    engine = make_engine()
    baseline = record_baseline(engine, "list_services", NetAddress.parse("10.0.0.2"))
    verdict = probe_baseline(engine, baseline)
    assert verdict.match


def test_probe_baseline_detects_flip():
    engine = make_engine()
    baseline = record_baseline(engine, "list_services", NetAddress.parse("10.0.0.2"))
    fault = FaultConfig(FaultMode.FLIP, fields=("status.value",), seed=7)
    verdict = probe_baseline(engine, baseline, fault=fault)
    assert not verdict.match
    assert verdict.deviating_fields == ("status.value",)


def test_probe_baseline_ignores_id_and_ttl():
    engine = make_engine()
    baseline = record_baseline(engine, "ping", NetAddress.parse("10.0.0.2"))
    # Re-probing assigns a new id; ttl is transport-variable. Still a match.
    assert probe_baseline(engine, baseline).match
    assert probe_baseline(engine, baseline).match


def test_probe_timeout_reports_all_fields():
    engine = make_engine()
    baseline = record_baseline(engine, "ping", NetAddress.parse("10.0.0.2"))
    dead = Baseline("ping", NetAddress.parse("10.0.0.9"), ServiceRef(""), baseline.recorded)
    verdict = probe_baseline(engine, dead, max_ticks=64)
    assert not verdict.match
    assert len(verdict.deviating_fields) > 1
