"""Scenario files: topology, services, vulnerability list, pipeline,
budget, trust, and agent configuration, all loaded from one JSON document.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .budget import BudgetEnvelope, Mode, SensorSpec
from .engine import Node, Router, ServiceInstance, Topology, VulnerabilityList
from .messages import (
    Endpoint,
    NetAddress,
    ServiceRef,
    Subnet,
    canonical_text,
)
from .pipeline import Contextual, Extend, Multi, SlicingStrategy
from .representations import AgentProfile
from .trust import FaultConfig, FaultMode


class ScenarioError(ValueError):
    """Validation failure; carries the full report."""

    def __init__(self, problems: List[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


@dataclass
class TrustConfig:
    replicas: int = 1
    faults: List[FaultConfig] = field(default_factory=list)
    baselines: List[Dict] = field(default_factory=list)


@dataclass
class Scenario:
    topology: Topology
    vulns: VulnerabilityList
    seed: int
    profile: AgentProfile
    sensors: List[SensorSpec]
    slicing: SlicingStrategy
    envelope: BudgetEnvelope
    trust: TrustConfig
    chains: Dict[str, Sequence[Tuple[str, Dict]]]
    machine_capacity: int = 16
    registry_capacities: Optional[Dict[str, int]] = None
    raw: Dict = field(default_factory=dict)

    def fresh_sensors(self) -> List[SensorSpec]:
        return [
            SensorSpec(
                id=s.id,
                mode=s.declared_mode,
                base_interval=s.base_interval,
                power_cost=s.power_cost,
                bandwidth_per_slice=s.bandwidth_per_slice,
                importance=s.importance,
            )
            for s in self.sensors
        ]


def parse_strategy(config: Dict) -> SlicingStrategy:
    kind = config.get("strategy", "extend")
    if kind == "extend":
        return Extend(int(config.get("window", 1)))
    if kind == "multi":
        return Multi(tuple(int(w) for w in config.get("windows", [1, 2])))
    if kind == "contextual":
        return Contextual(int(config.get("lookahead", 2)), int(config.get("window", 1)))
    raise ScenarioError([f"unknown slicing strategy {kind!r}"])


def validate(doc: Dict) -> List[str]:
    problems = []
    if not isinstance(doc.get("nodes"), list) or not doc.get("nodes"):
        problems.append("nodes: at least one node is required")
    if not isinstance(doc.get("routers"), list) or not doc.get("routers"):
        problems.append("routers: at least one router is required")
    if "agent_node" not in doc:
        problems.append("agent_node: missing")
    if "goal" not in doc:
        problems.append("goal: missing")
    if problems:
        return problems

    seen_addresses = set()
    for i, node in enumerate(doc["nodes"]):
        if not node.get("addresses"):
            problems.append(f"nodes[{i}]: needs at least one address")
            continue
        for addr in node["addresses"]:
            if addr in seen_addresses:
                problems.append(f"nodes[{i}]: duplicate address {addr}")
            seen_addresses.add(addr)
        names = [canonical_text(s["name"]) for s in node.get("services", [])]
        if len(set(names)) != len(names):
            problems.append(f"nodes[{i}]: service names must be unique per node")

    subnet_of_addr: Dict[str, str] = {}
    for r, router in enumerate(doc["routers"]):
        for sub in router.get("subnets", []):
            for member in sub.get("members", []):
                if member in subnet_of_addr and subnet_of_addr[member] != sub["prefix"]:
                    problems.append(
                        f"routers[{r}]: address {member} assigned to two subnets"
                    )
                subnet_of_addr[member] = sub["prefix"]
    for addr in seen_addresses:
        if addr not in subnet_of_addr:
            problems.append(f"address {addr} belongs to no attached subnet")

    if doc["agent_node"] not in seen_addresses:
        problems.append(f"agent_node {doc['agent_node']} is not a node address")

    goal = doc["goal"]
    goal_ok = False
    for node in doc["nodes"]:
        if goal.get("address") in node.get("addresses", []):
            names = [canonical_text(s["name"]) for s in node.get("services", [])]
            goal_ok = canonical_text(goal.get("service", "")) in names
    if not goal_ok:
        problems.append("goal: not resolvable to a node/service")

    ranks = [s["importance"] for s in doc.get("sensors", [])]
    if len(set(ranks)) != len(ranks):
        problems.append("sensors: importance ranks must be unique")

    budget = doc.get("budget", {})
    if budget and (budget.get("power_limit", 1) <= 0 or budget.get("bandwidth_limit", 1) <= 0):
        problems.append("budget: limits must be positive")
    return problems


def build(doc: Dict) -> Scenario:
    problems = validate(doc)
    if problems:
        raise ScenarioError(problems)

    nodes = []
    for node_doc in doc["nodes"]:
        services = [
            ServiceInstance(
                name=ServiceRef.of(s["name"]),
                version=canonical_text(s.get("version", ""), 16),
                data_token=s.get("data_token"),
            )
            for s in node_doc.get("services", [])
        ]
        nodes.append(
            Node([NetAddress.parse(a) for a in node_doc["addresses"]], services)
        )

    routers = []
    for router_doc in doc["routers"]:
        attached = []
        for sub in router_doc.get("subnets", []):
            subnet = Subnet(sub["prefix"], int(sub.get("max_hosts", 0)))
            members = [NetAddress.parse(a) for a in sub.get("members", [])]
            attached.append((subnet, members))
        routers.append(Router(attached))

    agent_addr = NetAddress.parse(doc["agent_node"])
    agent_index = next(i for i, n in enumerate(nodes) if agent_addr in n.addresses)
    goal = Endpoint(
        NetAddress.parse(doc["goal"]["address"]), ServiceRef.of(doc["goal"]["service"])
    )
    topology = Topology(nodes, routers, agent_index, goal)
    vulns = VulnerabilityList(
        (v["name"], v.get("version", "")) for v in doc.get("vulnerabilities", [])
    )

    agent_doc = doc.get("agent", {})
    operating = tuple(
        Subnet(s["prefix"], int(s.get("max_hosts", 0)))
        for s in agent_doc.get("operating_subnets", [])
    )
    profile_kwargs = {}
    if "drop_fields" in agent_doc:
        profile_kwargs["drop_fields"] = tuple(agent_doc["drop_fields"])
    profile = AgentProfile(
        own_addresses=tuple(nodes[agent_index].addresses),
        own_service=topology.agent_service(),
        operating_subnets=operating,
        **profile_kwargs,
    )

    sensors = [
        SensorSpec(
            id=s["id"],
            mode=Mode(s.get("mode", "push")),
            base_interval=int(s.get("interval", 1)),
            power_cost=float(s.get("power_cost", 1.0)),
            bandwidth_per_slice=int(s.get("bandwidth_per_slice", 64)),
            importance=int(s["importance"]),
        )
        for s in doc.get("sensors", [])
    ]

    budget_doc = doc.get("budget", {"power_limit": 100.0, "bandwidth_limit": 1024})
    envelope = BudgetEnvelope(
        float(budget_doc.get("power_limit", 100.0)),
        int(budget_doc.get("bandwidth_limit", 1024)),
    )

    trust_doc = doc.get("trust", {})
    faults = [
        FaultConfig(
            mode=FaultMode(f["mode"]),
            sensor_id=f.get("sensor", ""),
            seed=int(f.get("seed", 0)),
            probability=float(f.get("probability", 0.0)),
            fields=tuple(f.get("fields", [])),
        )
        for f in trust_doc.get("faults", [])
    ]
    trust = TrustConfig(
        replicas=int(trust_doc.get("replicas", 1)),
        faults=faults,
        baselines=list(trust_doc.get("baselines", [])),
    )

    chains = {
        name: [(stage["name"], {k: v for k, v in stage.items() if k != "name"})
               for stage in stages]
        for name, stages in doc.get("chains", {}).items()
    }
    if not chains and doc.get("transformers"):
        chains["default"] = [
            (stage["name"], {k: v for k, v in stage.items() if k != "name"})
            for stage in doc["transformers"]
        ]

    representation_doc = doc.get("representation", {})
    return Scenario(
        topology=topology,
        vulns=vulns,
        seed=int(doc.get("seed", 0)),
        profile=profile,
        sensors=sensors,
        slicing=parse_strategy(doc.get("slicing", {})),
        envelope=envelope,
        trust=trust,
        chains=chains,
        machine_capacity=int(representation_doc.get("machine_capacity", 16)),
        registry_capacities=representation_doc.get("capacities"),
        raw=doc,
    )


def load_scenario(path) -> Scenario:
    path = Path(path)
    if not path.exists():
        raise ScenarioError([f"scenario file {path} does not exist"])
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError([f"scenario file is not valid JSON: {exc}"]) from exc
    return build(doc)
