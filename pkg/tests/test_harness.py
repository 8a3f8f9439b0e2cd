"""Action grounding, the TD update rule, episodes, and experiments."""

import copy
import random

import pytest

from percept_lab.budget import BudgetPlanner
from percept_lab.harness import (
    ActionTemplate,
    EpsilonGreedyPolicy,
    HarnessConfig,
    QTable,
    ScriptedPolicy,
    _RunStats,
    decile_means,
    enumerate_actions,
    make_adapter,
    q_update,
    replay_trace,
    run_episode,
    run_experiment,
    scripted_probe_trace,
)
from percept_lab.messages import NetAddress, ServiceRef
from percept_lab.representations import RestructuredWorld
from percept_lab.scenario import build
from test_views import make_response


def test_q_update_direct_substitution():
    q = QTable()
    assert q_update(q, 1, "a", reward=1.0, next_state=2, alpha=0.5, gamma=0.9) == 0.5


def test_q_update_zero_reward_fixed_point():
    q = QTable()
    q_update(q, 1, "a", 0.0, 2, alpha=0.5, gamma=0.9, next_actions=["a", "b"])
    assert q.get(1, "a") == 0.0


def test_q_update_bootstraps_from_max():
    q = QTable()
    q.set(1, "a", 1.0)
    q.set(2, "x", 1.0)
    q.set(2, "y", 0.4)
    updated = q_update(q, 1, "a", 1.0, 2, alpha=0.1, gamma=0.9, next_actions=["x", "y"])
    assert abs(updated - 1.09) < 1e-12


def test_q_update_validates_hyperparameters():
    q = QTable()
    with pytest.raises(ValueError):
        q_update(q, 1, "a", 0.0, 2, alpha=0.0, gamma=0.9)
    with pytest.raises(ValueError):
        q_update(q, 1, "a", 0.0, 2, alpha=0.5, gamma=1.0)


def profile():
    from conftest import TEST_PROFILE
    from percept_lab.messages import Subnet
    from percept_lab.representations import AgentProfile

    return AgentProfile(
        own_addresses=TEST_PROFILE.own_addresses,
        own_service=TEST_PROFILE.own_service,
        operating_subnets=(Subnet("10.0.0.0/28", max_hosts=4),),
    )


def test_empty_world_grounds_bootstrap_sweep_only():
    world = RestructuredWorld(8)
    templates, stale = enumerate_actions(world, profile())
    assert stale == 0
    assert all(t.action == "ping" for t in templates)
    # .1 is the agent itself; the sweep covers .2 .3 .4
    assert [str(t.dst_ip) for t in templates] == ["10.0.0.2", "10.0.0.3", "10.0.0.4"]


def test_known_machine_grounds_per_service_templates():
    rng = random.Random(0)
    world = RestructuredWorld(8)
    ip = NetAddress.parse("10.0.0.2")
    world.apply_response(make_response(rng, [ip], list_content="http,ssh"))
    templates, _ = enumerate_actions(world, profile())
    mine = [t for t in templates if t.dst_ip == ip]
    by_action = sorted(t.action for t in mine)
    assert by_action == ["exploit", "exploit", "list_services", "ping"]
    # Sweep pings for the still-unknown addresses remain available.
    assert {str(t.dst_ip) for t in templates if t.action == "ping"} == {
        "10.0.0.2", "10.0.0.3", "10.0.0.4",
    }


def test_read_data_grounded_per_held_session():
    rng = random.Random(0)
    world = RestructuredWorld(8)
    ip = NetAddress.parse("10.0.0.2")
    world.apply_response(make_response(rng, [ip], session_end="files"))
    templates, _ = enumerate_actions(world, profile())
    reads = [t for t in templates if t.action == "read_data"]
    assert len(reads) == 1
    assert reads[0].session is not None
    assert reads[0].dst_service == ServiceRef("files")


def test_grounding_sorted_and_capped():
    rng = random.Random(0)
    world = RestructuredWorld(64)
    for host in range(2, 14):
        ip = NetAddress.parse(f"10.0.0.{host}")
        world.apply_response(
            make_response(rng, [ip], list_content="a,b,c,d,e,f,g,h")
        )
    wide = profile()
    from percept_lab.messages import Subnet
    from percept_lab.representations import AgentProfile

    wide = AgentProfile(wide.own_addresses, wide.own_service,
                        (Subnet("10.0.0.0/24", max_hosts=20),))
    templates, _ = enumerate_actions(world, wide, cap=64)
    assert len(templates) == 64
    keys = [(t.action, str(t.dst_ip)) for t in templates]
    ordered = sorted(keys, key=lambda k: (
        {"ping": 0, "list_services": 1, "exploit": 2, "read_data": 3}[k[0]], k[1]))
    assert keys == ordered
    # Newest machines keep their templates under the cap.
    newest = NetAddress.parse("10.0.0.13")
    assert any(t.dst_ip == newest and t.action == "exploit" for t in templates)


def test_stale_binding_omits_machine_templates():
    rng = random.Random(0)
    world = RestructuredWorld(8)
    ip = NetAddress.parse("10.0.0.2")
    world.apply_response(make_response(rng, [ip], list_content="http"))
    templates, stale = enumerate_actions(
        world, profile(), binding_check=lambda machine_ip: machine_ip != ip
    )
    assert stale == 1
    assert all(t.dst_ip != ip or t.action == "ping" for t in templates)
    # Only the sweep ping remains for that address.
    assert [t.action for t in templates if t.dst_ip == ip] == ["ping"]


def episode_harness(scenario, selector="restructured+history"):
    adapter = make_adapter(selector, scenario)
    planner = BudgetPlanner(scenario.fresh_sensors(), scenario.envelope)
    if planner.specs:
        planner.plan_base_set()
    return adapter, planner


def test_scripted_oracle_reaches_goal_in_four_steps(minimal2):
    adapter, planner = episode_harness(minimal2)
    plan = [
        ("ping", "10.0.0.2"),
        ("list_services", "10.0.0.2"),
        ("exploit", "10.0.0.2", "vault"),
        ("read_data", "10.0.0.2"),
    ]
    record = run_episode(
        minimal2, adapter, QTable(), planner, 0, 42, HarnessConfig(episodes=1),
        _RunStats(), policy=ScriptedPolicy(plan), learn=False,
    )
    assert record.steps == 4
    assert record.reached_goal
    assert record.total_reward == 96.0  # -4 steps + 100 goal


def test_step_cap_without_vulnerable_services(minimal2):
    doc = copy.deepcopy(minimal2.raw)
    doc["vulnerabilities"] = []
    scenario = build(doc)
    adapter, planner = episode_harness(scenario)
    config = HarnessConfig(episodes=1, step_cap=10)
    record = run_episode(scenario, adapter, QTable(), planner, 0, 42, config, _RunStats())
    assert record.steps == 10
    assert not record.reached_goal
    assert record.total_reward == -10.0


def test_same_seed_identical_episode_records(minimal2):
    records = []
    for _ in range(2):
        adapter, planner = episode_harness(minimal2)
        records.append(
            run_episode(minimal2, adapter, QTable(), planner, 0, 43,
                        HarnessConfig(episodes=1), _RunStats())
        )
    a, b = records
    assert (a.steps, a.reached_goal, a.total_reward) == (b.steps, b.reached_goal, b.total_reward)
    assert a.engine.trace == b.engine.trace


def test_grounding_soundness_against_trace(minimal2):
    # Every submitted request targets a real environment attribute: an
    # operating-subnet address, and services/sessions echoed by responses.
    adapter, planner = episode_harness(minimal2)
    record = run_episode(minimal2, adapter, QTable(), planner, 0, 44,
                         HarnessConfig(episodes=1, step_cap=40), _RunStats())
    sweep = {
        str(addr)
        for subnet in minimal2.profile.operating_subnets
        for addr in subnet.sweep_addresses()
    }
    seen_services = {""}
    seen_sessions = {None}
    for rec in record.engine.trace:
        if rec["direction"] == "response":
            if rec["content"] and rec["session"] is None and rec["status"]["value"] == "success":
                for token in rec["content"].split(","):
                    seen_services.add(token.split("/", 1)[0])
            if rec["session"]:
                seen_sessions.add(
                    (rec["session"]["end"]["ip"], rec["session"]["end"]["service"])
                )
        else:
            assert rec["dst_ip"] in sweep
            assert rec["dst_service"] in seen_services or rec["dst_service"] == "vault"
            if rec["action"] == "read_data":
                assert (rec["dst_ip"], rec["dst_service"]) in seen_sessions


def test_verbatim_distinct_states_equals_response_count(minimal2):
    trace = scripted_probe_trace(minimal2)
    responses = [r for r in trace if r["direction"] == "response"]
    assert len(responses) >= 2
    stats = replay_trace(trace, make_adapter("verbatim", minimal2), minimal2)
    assert stats["distinct_states"] == len(responses)


def test_verbatim_and_indexed_agree_without_eviction(minimal2):
    trace = scripted_probe_trace(minimal2)
    verbatim = replay_trace(trace, make_adapter("verbatim", minimal2), minimal2)
    indexed = replay_trace(trace, make_adapter("indexed", minimal2), minimal2)
    assert indexed["index_evictions"] == 0
    assert verbatim["distinct_states"] == indexed["distinct_states"]


def test_run_experiment_emits_row_per_selector(minimal2):
    selectors = ["verbatim", "static-elim", "indexed", "restructured", "history",
                 "chain:default"]
    metrics = run_experiment(minimal2, selectors, HarnessConfig(episodes=2), seed=3)
    assert [m.representation for m in metrics] == selectors
    widths = [m.encoded_width_bits for m in metrics]
    assert widths[:3] == [2070, 1161, 68]
    assert widths[3:] == [None, None, None]


def test_qtable_keyspace_bounded_by_observed_states(minimal2):
    adapter, planner = episode_harness(minimal2)
    qtable = QTable()
    stats = _RunStats()
    for episode in range(5):
        run_episode(minimal2, adapter, qtable, planner, episode, 50 + episode,
                    HarnessConfig(episodes=5, step_cap=20), stats)
    assert qtable.states() <= len(stats.state_keys)


def test_multi_slice_run_selects_one_window(minimal2):
    import copy as _copy
    doc = _copy.deepcopy(minimal2.raw)
    doc["slicing"] = {"strategy": "multi", "windows": [1, 2]}
    scenario = build(doc)
    adapter, planner = episode_harness(scenario)
    config = HarnessConfig(episodes=1, step_cap=10, multi_select=1, evaluation=False)
    record = run_episode(scenario, adapter, QTable(), planner, 0, 7, config, _RunStats())
    assert record.steps >= 1  # the loop runs to completion under Multi


def test_scenario_fault_blinds_the_agent(minimal2):
    # A total dropout fault on the response feed starves perception: the
    # agent keeps acting but never sees an answer, so no goal is reached.
    doc = copy.deepcopy(minimal2.raw)
    doc["trust"] = {
        "replicas": 1,
        "faults": [{"mode": "dropout", "sensor": "response_feed",
                    "probability": 1.0, "seed": 3}],
    }
    scenario = build(doc)
    adapter, planner = episode_harness(scenario)
    config = HarnessConfig(episodes=1, step_cap=5, tick_budget=6)
    record = run_episode(scenario, adapter, QTable(), planner, 0, 9, config, _RunStats())
    assert record.steps == 5
    assert not record.reached_goal
    assert adapter.world.machines == {}  # nothing was ever perceived


def test_decile_means():
    steps = [10] * 10 + [5] * 80 + [2] * 10
    first, last = decile_means(steps)
    assert (first, last) == (10.0, 2.0)


def test_epsilon_anneals_linearly():
    config = HarnessConfig(episodes=11, epsilon_start=0.3, epsilon_end=0.05)
    values = [config.epsilon(i) for i in range(11)]
    assert values[0] == pytest.approx(0.3)
    assert values[-1] == pytest.approx(0.05)
    deltas = {round(values[i + 1] - values[i], 9) for i in range(10)}
    assert len(deltas) == 1  # constant slope
