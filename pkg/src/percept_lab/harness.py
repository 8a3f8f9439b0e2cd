"""Learning harness: grounds actions from the agent's belief, runs a
tabular Q-learning attacker per representation, and collects comparative
cost/fidelity metrics.

Every run is fully determined by (scenario, seed, config); evaluation mode
replays one shared scripted trace through each representation so codec
metrics are comparable across them.
"""

from __future__ import annotations

import csv
import json
import random
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from .budget import BudgetPlanner, SensorState
from .engine import Engine
from .messages import (
    Message,
    NetAddress,
    Request,
    Response,
    ServiceRef,
    Session,
    StatusValue,
    message_from_dict,
)
from .pipeline import (
    HostState,
    Sensor,
    SliceAligner,
    Snapshot,
    TimestampedPercept,
    VulnEntry,
    count_split_pairs,
    Multi,
)
from .representations import (
    IndexedRep,
    Representation,
    RestructuredWorld,
    StaleIndexError,
    fnv1a64,
    make_representation,
)
from .scenario import Scenario
from .trust import AlignmentError, FaultInjector, vote_streams

ACTION_ORDER = {"ping": 0, "list_services": 1, "exploit": 2, "read_data": 3}


@dataclass(frozen=True)
class ActionTemplate:
    """A grounded action; every parameter slot holds a real observed value."""

    action: str
    dst_ip: NetAddress
    dst_service: ServiceRef = ServiceRef()
    session: Optional[Session] = None

    @property
    def key(self) -> str:
        session = ""
        if self.session is not None:
            session = (
                f"{self.session.start.ip}:{self.session.start.service.name}"
                f">{self.session.end.ip}:{self.session.end.service.name}"
            )
        return f"{self.action}|{self.dst_ip}|{self.dst_service.name}|{session}"


def _template_sort_key(template: ActionTemplate):
    return (ACTION_ORDER[template.action], str(template.dst_ip),
            template.dst_service.name, template.key)


def enumerate_actions(
    world: RestructuredWorld,
    profile,
    cap: int = 64,
    binding_check: Optional[Callable[[NetAddress], bool]] = None,
) -> Tuple[List[ActionTemplate], int]:
    """Grounded templates over the current belief, plus the count of
    machines omitted because their index binding went stale.

    Subnet-sweep pings remain available for undiscovered addresses; they
    are the only discovery mechanism.
    """
    own = set(profile.own_addresses)
    stale = 0
    machines = []
    for ip, record in world.machines.items():
        if binding_check is not None and not binding_check(ip):
            stale += 1
            continue
        machines.append((world._stamp[ip], ip, record))
    known = {ip for _, ip, _ in machines}

    entries: List[Tuple[float, ActionTemplate]] = []
    for subnet in profile.operating_subnets:
        for addr in subnet.sweep_addresses():
            if addr not in own and addr not in known:
                entries.append((float("inf"), ActionTemplate("ping", addr)))
    for stamp, ip, record in machines:
        recency = -float(stamp)  # newest machines first under the cap
        entries.append((recency, ActionTemplate("ping", ip)))
        entries.append((recency, ActionTemplate("list_services", ip)))
        for svc in sorted(record.services):
            entries.append((recency, ActionTemplate("exploit", ip, svc)))
        for session in sorted(record.sessions, key=lambda s: (str(s.end.ip), s.end.service.name)):
            entries.append(
                (recency, ActionTemplate("read_data", session.end.ip,
                                         session.end.service, session))
            )
    if len(entries) > cap:
        entries.sort(key=lambda e: (e[0],) + _template_sort_key(e[1]))
        entries = entries[:cap]
    templates = sorted((t for _, t in entries), key=_template_sort_key)
    return templates, stale


class QTable:
    """(state key, action key) -> value estimate, default 0."""

    def __init__(self):
        self.values: Dict[int, Dict[str, float]] = {}

    def get(self, state: int, action: str) -> float:
        return self.values.get(state, {}).get(action, 0.0)

    def set(self, state: int, action: str, value: float) -> None:
        self.values.setdefault(state, {})[action] = value

    def states(self) -> int:
        return len(self.values)

    def entries(self) -> int:
        return sum(len(v) for v in self.values.values())


def q_update(
    q: QTable,
    state: int,
    action: str,
    reward: float,
    next_state: int,
    alpha: float,
    gamma: float,
    next_actions: Sequence[str] = (),
) -> float:
    """Standard temporal-difference backup; untried next actions count as 0."""
    if not 0 < alpha <= 1:
        raise ValueError("alpha must be in (0, 1]")
    if not 0 <= gamma < 1:
        raise ValueError("gamma must be in [0, 1)")
    best_next = max((q.get(next_state, b) for b in next_actions), default=0.0)
    updated = q.get(state, action) + alpha * (reward + gamma * best_next - q.get(state, action))
    q.set(state, action, updated)
    return updated


@dataclass
class HarnessConfig:
    episodes: int = 500
    step_cap: int = 100
    alpha: float = 0.1
    gamma: float = 0.9
    epsilon_start: float = 0.3
    epsilon_end: float = 0.05
    action_cap: int = 64
    tick_budget: int = 32
    goal_reward: float = 100.0
    step_penalty: float = 1.0
    demand_sensor: str = "network_tap"
    demand_after_steps: int = 20
    evaluation: bool = True
    multi_select: Optional[int] = None

    def epsilon(self, episode: int) -> float:
        if self.episodes <= 1:
            return self.epsilon_end
        frac = episode / (self.episodes - 1)
        return self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac


@dataclass
class EpisodeRecord:
    index: int
    seed: int
    steps: int
    reached_goal: bool
    total_reward: float
    engine: Optional[Engine] = field(default=None, repr=False, compare=False)


@dataclass
class RunMetrics:
    representation: str
    encoded_width_bits: Optional[int]
    distinct_states: int
    index_evictions: int
    stale_index_events: int
    split_pairs: int
    dropped_percepts: int
    episodes_to_goal: int
    steps_per_episode: List[int]
    wall_time: float

    CSV_COLUMNS = (
        "representation",
        "encoded_width_bits",
        "distinct_states",
        "index_evictions",
        "stale_index_events",
        "split_pairs",
        "dropped_percepts",
        "episodes_to_goal",
        "steps_per_episode",
    )

    def csv_row(self) -> List[str]:
        # wall_time is deliberately not a CSV column: rows must be
        # byte-identical across identical invocations. It lives in the JSON.
        return [
            self.representation,
            str(self.encoded_width_bits) if self.encoded_width_bits else "-",
            str(self.distinct_states),
            str(self.index_evictions),
            str(self.stale_index_events),
            str(self.split_pairs),
            str(self.dropped_percepts),
            str(self.episodes_to_goal),
            "|".join(str(s) for s in self.steps_per_episode),
        ]

    def to_json_dict(self) -> Dict:
        return {
            "representation": self.representation,
            "encoded_width_bits": self.encoded_width_bits,
            "distinct_states": self.distinct_states,
            "index_evictions": self.index_evictions,
            "stale_index_events": self.stale_index_events,
            "split_pairs": self.split_pairs,
            "dropped_percepts": self.dropped_percepts,
            "episodes_to_goal": self.episodes_to_goal,
            "steps_per_episode": self.steps_per_episode,
            "wall_time": self.wall_time,
        }


def derive_seed(*parts) -> int:
    return fnv1a64("|".join(str(p) for p in parts).encode())


# -- policies -------------------------------------------------------------------


class EpsilonGreedyPolicy:
    def __init__(self, q: QTable):
        self.q = q

    def choose(
        self,
        state: int,
        templates: Sequence[ActionTemplate],
        rng: random.Random,
        epsilon: float,
    ) -> ActionTemplate:
        if rng.random() < epsilon:
            return templates[rng.randrange(len(templates))]
        best = templates[0]
        best_value = self.q.get(state, best.key)
        for template in templates[1:]:
            value = self.q.get(state, template.key)
            if value > best_value:
                best, best_value = template, value
        return best


class ScriptedPolicy:
    """Plays a fixed (action, target[, service]) plan; used for
    oracle-knowledge tests."""

    def __init__(self, plan: Sequence[Tuple]):
        self.plan = list(plan)
        self.cursor = 0

    def choose(self, state, templates, rng, epsilon) -> ActionTemplate:
        if self.cursor < len(self.plan):
            step = self.plan[self.cursor]
            action, target = step[0], step[1]
            service = step[2] if len(step) > 2 else None
            for template in templates:
                if template.action != action or str(template.dst_ip) != target:
                    continue
                if service is not None and template.dst_service.name != service:
                    continue
                self.cursor += 1
                return template
        return templates[0]


# -- episode loop ------------------------------------------------------------------


class _SensorRig:
    """Per-episode sensor wiring: feeds, taps, faults, and the aligner."""

    def __init__(self, scenario: Scenario, planner: BudgetPlanner):
        self.scenario = scenario
        self.planner = planner
        self.sensors: Dict[str, Sensor] = {}
        for spec in planner.specs:
            read_fn = None
            if spec.id == "vuln_feed":
                entries = sorted(scenario.vulns.entries)
                read_fn = lambda tick, e=tuple(entries): [VulnEntry(n, v) for n, v in e]
            elif spec.id == "host_probe":
                node = scenario.topology.agent()
                host = HostState(
                    tuple(str(a) for a in node.addresses),
                    tuple((s.name.name, s.version) for s in node.services),
                )
                read_fn = lambda tick, h=host: [h]
            self.sensors[spec.id] = Sensor(spec, read_fn)
        self.injectors = {
            f.sensor_id: FaultInjector(f) for f in scenario.trust.faults if f.sensor_id
        }
        self.replicas = scenario.trust.replicas
        self.alignment_failures = 0

    def deliver_request(self, request: Request, tick: int) -> None:
        tap = self.sensors.get("request_tap")
        if tap is not None:
            tap.deliver(request, tick)

    def deliver_response(self, response: Response, tick: int) -> None:
        if self.replicas >= 3:
            streams = []
            for k in range(self.replicas):
                injector = self.injectors.get(f"response_feed#{k}")
                streams.append(injector.apply([response]) if injector else [response])
            try:
                response = vote_streams(streams)[0].percept
            except AlignmentError:
                self.alignment_failures += 1
        feed = self.sensors.get("response_feed")
        if feed is not None:
            injector = self.injectors.get("response_feed")
            for payload in injector.apply([response]) if injector else [response]:
                feed.deliver(payload, tick)
        tap = self.sensors.get("network_tap")
        if tap is not None:
            tap.deliver(response, tick)

    def poll_and_drain(self, aligner: SliceAligner, tick: int) -> None:
        for name in sorted(self.sensors):
            sensor = self.sensors[name]
            for percept in sensor.poll(tick):
                sensor.deliver(percept.payload, tick)
        for name in sorted(self.sensors):
            sensor = self.sensors[name]
            for tick_seen, payload in sensor.drain():
                aligner.deliver(TimestampedPercept(tick_seen, name, 0, payload))

    def dropped(self) -> int:
        return sum(s.drops + s.disabled_drops for s in self.sensors.values())


@dataclass
class _RunStats:
    state_keys: set = field(default_factory=set)
    split_pairs: int = 0
    dropped: int = 0
    stale_events: int = 0


def run_episode(
    scenario: Scenario,
    adapter: Representation,
    qtable: QTable,
    planner: BudgetPlanner,
    episode_index: int,
    seed: int,
    config: HarnessConfig,
    stats: _RunStats,
    policy=None,
    learn: bool = True,
) -> EpisodeRecord:
    """One perceive-encode-act episode; fully reproducible from the seed."""
    engine = Engine(scenario.topology, scenario.vulns, seed=scenario.seed)
    rng = random.Random(seed)
    epsilon = config.epsilon(episode_index)
    if policy is None:
        policy = EpsilonGreedyPolicy(qtable)

    adapter.reset()
    view = RestructuredWorld(scenario.machine_capacity)
    rig = _SensorRig(scenario, planner)
    aligner = SliceAligner(scenario.slicing)
    snapshots: List[Snapshot] = []
    bindings: Dict[NetAddress, int] = {}
    registry = adapter.registry if isinstance(adapter, IndexedRep) else None

    pending_tap: List[Tuple[int, Request]] = []
    goal = scenario.topology.goal
    total_reward = 0.0
    steps = 0
    reached_goal = False
    demand_requested = False
    steps_since_discovery = 0
    known_before = 0

    def binding_check(ip: NetAddress) -> bool:
        if registry is None:
            return True
        index = bindings.get(ip)
        if index is None:
            return True
        try:
            resolved = registry.resolve("dst_ip", index)
        except StaleIndexError:
            del bindings[ip]
            return False
        if resolved != ip:
            del bindings[ip]
            return False
        return True

    # Multi-window slicing samples every percept once per window length;
    # exactly one length feeds the representation (the shortest by default)
    # so request-driven counters are not double-fed.
    selected_window = None
    if isinstance(scenario.slicing, Multi):
        selected_window = config.multi_select or min(scenario.slicing.windows)

    def observe(snapshot: Snapshot) -> None:
        if selected_window is not None and snapshot.window_ticks != selected_window:
            snapshots.append(snapshot)
            return
        snapshots.append(snapshot)
        adapter.observe_snapshot(snapshot)
        for percept in snapshot.percepts:
            if isinstance(percept.payload, Response):
                view.apply_response(percept.payload)
        if registry is not None:
            for ip in view.machines:
                if ip not in bindings:
                    index = registry.live_index_of("dst_ip", ip)
                    if index is not None:
                        bindings[ip] = index
        stats.state_keys.add(adapter.current_key())

    state = adapter.current_key()
    stats.state_keys.add(state)
    templates, stale = enumerate_actions(
        view, scenario.profile, config.action_cap, binding_check
    )
    stats.stale_events += stale

    while steps < config.step_cap and not reached_goal:
        if not templates:
            break
        template = policy.choose(state, templates, rng, epsilon)
        request = engine.new_request(
            template.action, template.dst_ip, template.dst_service, template.session
        )
        engine.submit_request(request)
        pending_tap.append((engine.queue.current_tick + 1, request))
        steps += 1

        response_seen: Optional[Response] = None
        for _ in range(config.tick_budget):
            responses = engine.step()
            tick = engine.queue.current_tick
            while pending_tap and pending_tap[0][0] <= tick:
                _, tapped = pending_tap.pop(0)
                rig.deliver_request(tapped, tick)
            for response in responses:
                rig.deliver_response(response, tick)
            rig.poll_and_drain(aligner, tick)
            for snapshot in aligner.close(tick):
                observe(snapshot)
                for resp in snapshot.responses():
                    if resp.id == request.id:
                        response_seen = resp
            if response_seen is not None:
                break

        if (
            response_seen is not None
            and template.action == "read_data"
            and response_seen.status.value is StatusValue.SUCCESS
            and response_seen.dst_ip == goal.ip
            and response_seen.dst_service == goal.service
        ):
            reached_goal = True

        reward = -config.step_penalty + (config.goal_reward if reached_goal else 0.0)
        total_reward += reward

        next_state = adapter.current_key()
        next_templates, stale = enumerate_actions(
            view, scenario.profile, config.action_cap, binding_check
        )
        stats.stale_events += stale
        if learn:
            next_keys = () if reached_goal else [t.key for t in next_templates]
            q_update(
                qtable, state, template.key, reward, next_state,
                config.alpha, config.gamma, next_keys,
            )
        state, templates = next_state, next_templates

        # On-demand sensing: ask for the tap when discovery stalls.
        if len(view.machines) > known_before:
            known_before = len(view.machines)
            steps_since_discovery = 0
        else:
            steps_since_discovery += 1
        if (
            not demand_requested
            and steps_since_discovery > config.demand_after_steps
            and config.demand_sensor in rig.sensors
            and rig.sensors[config.demand_sensor].spec.state is SensorState.OFF
        ):
            planner.activate_on_demand(config.demand_sensor, tick=engine.queue.current_tick)
            demand_requested = True

    stats.split_pairs += count_split_pairs(snapshots)
    stats.dropped += rig.dropped()
    return EpisodeRecord(episode_index, seed, steps, reached_goal, total_reward, engine)


# -- scripted evaluation trace --------------------------------------------------------


def scripted_probe_trace(scenario: Scenario) -> List[Dict]:
    """A systematic sweep (ping, enumerate, exploit, read) shared by all
    representations in evaluation mode. Returns the engine trace records."""
    engine = Engine(scenario.topology, scenario.vulns, seed=scenario.seed)
    own = set(scenario.profile.own_addresses)
    targets = []
    for subnet in scenario.profile.operating_subnets:
        for addr in subnet.sweep_addresses():
            if addr not in own:
                targets.append(addr)

    def exchange(action, dst_ip, dst_service=ServiceRef(), session=None):
        request = engine.new_request(action, dst_ip, dst_service, session)
        engine.submit_request(request)
        return engine.run_until_response(request.id)

    alive = [t for t in targets if (r := exchange("ping", t)) is not None
             and r.status.value is StatusValue.SUCCESS]
    services: Dict[NetAddress, List[ServiceRef]] = {}
    for target in alive:
        response = exchange("list_services", target)
        if response is None or not response.content:
            continue
        services[target] = [
            ServiceRef(token.split("/", 1)[0]) for token in response.content.split(",")
        ]
    sessions = []
    for target, refs in services.items():
        for ref in refs:
            response = exchange("exploit", target, ref)
            if response is not None and response.session is not None \
                    and response.status.value is StatusValue.SUCCESS:
                sessions.append(response.session)
    for session in sessions:
        exchange("read_data", session.end.ip, session.end.service, session)
    return engine.trace


def replay_trace(
    records: Sequence[Dict], adapter: Representation, scenario: Scenario
) -> Dict[str, int]:
    """Feed a recorded trace through a fresh adapter via the configured
    slicing; returns the codec-comparability metrics."""
    adapter.reset()
    aligner = SliceAligner(scenario.slicing)
    keys = {adapter.current_key()} if adapter.has_state() else set()
    snapshots: List[Snapshot] = []
    by_tick: Dict[int, List[Message]] = {}
    for record in records:
        by_tick.setdefault(record["tick"], []).append(message_from_dict(record))
    if not by_tick:
        return {"distinct_states": len(keys), "split_pairs": 0, "index_evictions": 0}
    last_tick = max(by_tick)
    strategy = scenario.slicing
    selected_window = None
    if isinstance(strategy, Multi):
        flush = max(strategy.windows)
        selected_window = min(strategy.windows)
    else:
        flush = strategy.window * (getattr(strategy, "lookahead", 0) + 1)
    for tick in range(1, last_tick + flush + 1):
        for message in by_tick.get(tick, []):
            source = "request_tap" if isinstance(message, Request) else "response_feed"
            aligner.deliver(TimestampedPercept(tick, source, 0, message))
        for snapshot in aligner.close(tick):
            snapshots.append(snapshot)
            if selected_window is not None and snapshot.window_ticks != selected_window:
                continue
            adapter.observe_snapshot(snapshot)
            if adapter.has_state():
                keys.add(adapter.current_key())
    return {
        "distinct_states": len(keys),
        "split_pairs": count_split_pairs(snapshots),
        "index_evictions": adapter.eviction_count(),
    }


# -- experiment driver -----------------------------------------------------------------


def make_adapter(selector: str, scenario: Scenario) -> Representation:
    return make_representation(
        selector,
        scenario.profile,
        scenario.vulns,
        scenario.machine_capacity,
        scenario.registry_capacities,
        scenario.chains or None,
    )


def run_experiment(
    scenario: Scenario,
    selectors: Sequence[str],
    config: HarnessConfig,
    seed: int,
    trace_sink: Optional[Callable[[str, int, Engine], None]] = None,
    budget_sink: Optional[Callable[[str, BudgetPlanner], None]] = None,
) -> List[RunMetrics]:
    """Train one learner per representation; shared seeds keep percept
    traces identical across representations wherever the policy permits."""
    if config.episodes < 1:
        raise ValueError("episodes must be at least 1")
    shared_trace = scripted_probe_trace(scenario) if config.evaluation else None
    metrics: List[RunMetrics] = []
    for selector in selectors:
        started = time.perf_counter()
        adapter = make_adapter(selector, scenario)
        planner = BudgetPlanner(scenario.fresh_sensors(), scenario.envelope)
        if planner.specs:
            planner.plan_base_set()
        qtable = QTable()
        stats = _RunStats()
        episodes: List[EpisodeRecord] = []
        for episode_index in range(config.episodes):
            episode_seed = derive_seed(seed, selector, episode_index)
            record = run_episode(
                scenario, adapter, qtable, planner,
                episode_index, episode_seed, config, stats,
            )
            episodes.append(record)
            if trace_sink is not None:
                trace_sink(selector, episode_index, record.engine)
        if budget_sink is not None:
            budget_sink(selector, planner)

        eval_stats = None
        if shared_trace is not None:
            eval_stats = replay_trace(shared_trace, make_adapter(selector, scenario), scenario)

        goal_episodes = [e.index + 1 for e in episodes if e.reached_goal]
        metrics.append(
            RunMetrics(
                representation=selector,
                encoded_width_bits=adapter.width_bits,
                distinct_states=(
                    eval_stats["distinct_states"] if eval_stats else len(stats.state_keys)
                ),
                index_evictions=(
                    eval_stats["index_evictions"] if eval_stats else adapter.eviction_count()
                ),
                stale_index_events=stats.stale_events,
                split_pairs=(
                    eval_stats["split_pairs"] if eval_stats else stats.split_pairs
                ),
                dropped_percepts=stats.dropped,
                episodes_to_goal=goal_episodes[0] if goal_episodes else 0,
                steps_per_episode=[e.steps for e in episodes],
                wall_time=time.perf_counter() - started,
            )
        )
    return metrics


def decile_means(steps: Sequence[int]) -> Tuple[float, float]:
    """Mean steps over the first and last 10% of episodes."""
    n = max(len(steps) // 10, 1)
    first = sum(steps[:n]) / n
    last = sum(steps[-n:]) / n
    return first, last


# -- output writers ---------------------------------------------------------------------


def write_metrics_csv(path, metrics: Sequence[RunMetrics]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RunMetrics.CSV_COLUMNS)
        for row in metrics:
            writer.writerow(row.csv_row())


def write_metrics_json(path, metrics: Sequence[RunMetrics], layout_version: str) -> None:
    doc = {
        "layout_version": layout_version,
        "runs": [m.to_json_dict() for m in metrics],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
