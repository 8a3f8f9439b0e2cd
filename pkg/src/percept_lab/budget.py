"""Power and bandwidth envelopes over the sensor set.

Sensors are ranked by importance (1 = most important). The planner
activates a base set greedily, degrades the least important sensors first
when over budget, and admits on-demand activations only when they fit.

The power model is linear and hand-checkable: prolonging the sampling
interval cuts power proportionally, and push mode costs half the declared
pull rate.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional

PUSH_DISCOUNT = 0.5
MAX_INTERVAL_FACTOR = 8


class Mode(str, Enum):
    PULL = "pull"
    PUSH = "push"


class SensorState(str, Enum):
    ACTIVE = "active"
    DEGRADED = "degraded"
    OFF = "off"


class InfeasibleBudget(Exception):
    pass


@dataclass
class SensorSpec:
    id: str
    mode: Mode = Mode.PULL
    base_interval: int = 1
    current_interval: int = 0  # filled from base_interval in __post_init__
    power_cost: float = 1.0
    bandwidth_per_slice: int = 64
    importance: int = 1
    state: SensorState = SensorState.ACTIVE
    declared_mode: Optional[Mode] = None
    cause: str = "planner"
    user_disabled: bool = False

    def __post_init__(self):
        if self.current_interval == 0:
            self.current_interval = self.base_interval
        if self.declared_mode is None:
            self.declared_mode = self.mode

    def is_degraded(self) -> bool:
        if self.state is SensorState.DEGRADED:
            return True
        return self.current_interval != self.base_interval or self.mode != self.declared_mode

    def reset(self) -> None:
        self.current_interval = self.base_interval
        self.mode = self.declared_mode
        self.state = SensorState.ACTIVE


@dataclass(frozen=True)
class BudgetEnvelope:
    power_limit: float
    bandwidth_limit: int

    def __post_init__(self):
        if self.power_limit <= 0 or self.bandwidth_limit <= 0:
            raise ValueError("budget limits must be positive")


def effective_power(spec: SensorSpec) -> float:
    if spec.state is SensorState.OFF:
        return 0.0
    power = spec.power_cost * spec.base_interval / spec.current_interval
    if spec.mode is Mode.PUSH:
        power *= PUSH_DISCOUNT
    return power


def total_power(specs: List[SensorSpec]) -> float:
    return sum(effective_power(s) for s in specs)


def _by_importance(specs: List[SensorSpec], worst_first: bool = False) -> List[SensorSpec]:
    return sorted(specs, key=lambda s: s.importance, reverse=worst_first)


class BudgetPlanner:
    """Single-writer planner; invoked between slices."""

    def __init__(self, specs: List[SensorSpec], envelope: BudgetEnvelope):
        ranks = [s.importance for s in specs]
        if len(set(ranks)) != len(ranks):
            raise ValueError("importance ranks must be unique")
        self.specs = specs
        self.envelope = envelope
        self.events: List[Dict] = []

    def _log(self, tick: int, op: str, spec: SensorSpec, before: str) -> None:
        self.events.append(
            {
                "tick": tick,
                "op": op,
                "sensor": spec.id,
                "before": before,
                "after": self._describe(spec),
            }
        )

    @staticmethod
    def _describe(spec: SensorSpec) -> str:
        return f"{spec.state.value}/{spec.mode.value}/interval={spec.current_interval}"

    def find(self, sensor_id: str) -> SensorSpec:
        for spec in self.specs:
            if spec.id == sensor_id:
                return spec
        raise KeyError(sensor_id)

    # -- operations -----------------------------------------------------------

    def plan_base_set(self, tick: int = 0) -> List[SensorSpec]:
        """Activate in ascending rank until the next sensor would not fit."""
        running = 0.0
        exceeded = False
        candidates = activated = 0
        for spec in _by_importance(self.specs):
            if spec.user_disabled:
                continue
            candidates += 1
            before = self._describe(spec)
            spec.reset()
            cost = effective_power(spec)
            if not exceeded and running + cost <= self.envelope.power_limit:
                running += cost
                activated += 1
            else:
                exceeded = True
                spec.state = SensorState.OFF
            spec.cause = "planner"
            self._log(tick, "plan", spec, before)
        if candidates and not activated:
            raise InfeasibleBudget(
                "the most important sensor alone exceeds the power envelope"
            )
        return self.specs

    def degrade(self, tick: int = 0) -> List[SensorSpec]:
        """Shed power starting from the least important active sensor.

        Ladder per sensor: double the interval (up to 8x base), switch
        pull to push, then turn off; stops as soon as the envelope holds.
        """
        if total_power(self.specs) <= self.envelope.power_limit:
            return self.specs
        for spec in _by_importance(self.specs, worst_first=True):
            if spec.state is SensorState.OFF:
                continue
            while total_power(self.specs) > self.envelope.power_limit:
                before = self._describe(spec)
                if (
                    spec.mode is Mode.PULL
                    and spec.current_interval < spec.base_interval * MAX_INTERVAL_FACTOR
                ):
                    spec.current_interval *= 2
                    spec.state = SensorState.DEGRADED
                elif spec.mode is Mode.PULL:
                    spec.mode = Mode.PUSH
                    spec.state = SensorState.DEGRADED
                else:
                    spec.state = SensorState.OFF
                spec.cause = "planner"
                self._log(tick, "degrade", spec, before)
                if spec.state is SensorState.OFF:
                    break
            if total_power(self.specs) <= self.envelope.power_limit:
                return self.specs
        if total_power(self.specs) > self.envelope.power_limit:
            raise InfeasibleBudget("envelope unreachable even with all sensors off")
        return self.specs

    def activate_on_demand(self, sensor_id: str, tick: int = 0):
        """Admit an on-demand sensor, shedding less important load if needed."""
        spec = self.find(sensor_id)
        if spec.state is not SensorState.OFF or spec.user_disabled:
            return ActivationResult(False, "not in the on-demand pool")
        trial = copy.deepcopy(self.specs)
        planner = BudgetPlanner(trial, self.envelope)
        target = planner.find(sensor_id)
        target.reset()
        target.cause = "demand"
        if total_power(trial) > self.envelope.power_limit:
            # One degrade pass over strictly less important sensors.
            for other in _by_importance(trial, worst_first=True):
                if other.importance <= target.importance or other.state is SensorState.OFF:
                    continue
                while total_power(trial) > self.envelope.power_limit:
                    if (
                        other.mode is Mode.PULL
                        and other.current_interval < other.base_interval * MAX_INTERVAL_FACTOR
                    ):
                        other.current_interval *= 2
                        other.state = SensorState.DEGRADED
                    elif other.mode is Mode.PULL:
                        other.mode = Mode.PUSH
                        other.state = SensorState.DEGRADED
                    else:
                        other.state = SensorState.OFF
                        break
                if total_power(trial) <= self.envelope.power_limit:
                    break
        if total_power(trial) > self.envelope.power_limit:
            return ActivationResult(False, "no headroom and nothing left to degrade")
        # Commit the trial state.
        for live, planned in zip(self.specs, trial):
            before = self._describe(live)
            live.state = planned.state
            live.mode = planned.mode
            live.current_interval = planned.current_interval
            live.cause = planned.cause
            if self._describe(live) != before:
                self._log(tick, "activate_on_demand", live, before)
        return ActivationResult(True, "activated")

    def user_disable(self, sensor_id: str, tick: int = 0) -> None:
        spec = self.find(sensor_id)
        before = self._describe(spec)
        spec.state = SensorState.OFF
        spec.user_disabled = True
        spec.cause = "user"
        self._log(tick, "user_disable", spec, before)


@dataclass(frozen=True)
class ActivationResult:
    activated: bool
    reason: str


def plan_base_set(specs: List[SensorSpec], envelope: BudgetEnvelope) -> List[SensorSpec]:
    return BudgetPlanner(specs, envelope).plan_base_set()


def degrade(specs: List[SensorSpec], envelope: BudgetEnvelope) -> List[SensorSpec]:
    return BudgetPlanner(specs, envelope).degrade()


def activate_on_demand(
    specs: List[SensorSpec], sensor_id: str, envelope: BudgetEnvelope
) -> ActivationResult:
    return BudgetPlanner(specs, envelope).activate_on_demand(sensor_id)


def priority_violations(specs: List[SensorSpec]) -> List[tuple]:
    """(better, worse) rank pairs where the planner preferred the worse sensor."""
    violations = []
    for s in specs:
        if s.state is SensorState.ACTIVE and not s.is_degraded():
            continue
        if s.cause != "planner" or s.user_disabled:
            continue
        for t in specs:
            if (
                t.importance > s.importance
                and t.state is SensorState.ACTIVE
                and not t.is_degraded()
                and t.cause == "planner"
            ):
                violations.append((s.id, t.id))
    return violations
