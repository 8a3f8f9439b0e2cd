"""Sensors, time-slice alignment, and percept transformers.

Percepts flow from sensors into a slice aligner that bundles them into
Snapshots according to a slicing strategy. Transformers then reduce or
enrich a snapshot (messages to flows, flows to events) before it reaches a
world representation. Time is the engine's integer tick clock, which makes
every slicing property exactly testable.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

from .budget import Mode, SensorSpec, SensorState
from .messages import Message, NetAddress, Request, Response, ServiceRef


@dataclass(frozen=True)
class VulnEntry:
    name: str
    version: str


@dataclass(frozen=True)
class HostState:
    addresses: Tuple[str, ...]
    services: Tuple[Tuple[str, str], ...]


@dataclass(frozen=True)
class FlowRecord:
    key: Tuple[NetAddress, NetAddress, ServiceRef]
    msg_count: int
    total_bytes: int
    window: Tuple[int, int]

    def __post_init__(self):
        if self.msg_count < 1:
            raise ValueError("a flow aggregates at least one message")


@dataclass(frozen=True)
class EventRecord:
    key: Tuple[NetAddress, NetAddress, ServiceRef]
    reason: str


Payload = Union[Request, Response, FlowRecord, EventRecord, VulnEntry, HostState]


@dataclass(frozen=True)
class TimestampedPercept:
    tick: int
    source: str
    seq: int
    payload: Payload


@dataclass(frozen=True)
class Snapshot:
    """An immutable time-slice bundle of percepts.

    completeness maps each request id seen in the window to whether its
    response made it into the same snapshot.
    """

    slice_index: int
    window: Tuple[int, int]  # (start, end], half-open below
    window_ticks: int
    percepts: Tuple[TimestampedPercept, ...]
    completeness: Dict[int, bool] = field(default_factory=dict)

    def messages(self) -> List[Message]:
        return [p.payload for p in self.percepts if isinstance(p.payload, Message)]

    def responses(self) -> List[Response]:
        return [p.payload for p in self.percepts if isinstance(p.payload, Response)]


# -- slicing strategies -------------------------------------------------------


@dataclass(frozen=True)
class Extend:
    window: int

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be at least one tick")


@dataclass(frozen=True)
class Multi:
    windows: Tuple[int, ...]

    def __post_init__(self):
        if not self.windows or min(self.windows) < 1:
            raise ValueError("window lengths must be at least one tick")
        if len(set(self.windows)) != len(self.windows):
            raise ValueError("window lengths must be distinct")


@dataclass(frozen=True)
class Contextual:
    lookahead: int
    window: int

    def __post_init__(self):
        if self.lookahead < 1 or self.window < 1:
            raise ValueError("lookahead and window must be at least one")


SlicingStrategy = Union[Extend, Multi, Contextual]


# -- sensors -------------------------------------------------------------------


class Sensor:
    """Runtime buffer around a SensorSpec.

    Pull sensors are polled at their current interval via read_fn; push
    sensors receive deliveries. A per-slice bandwidth cap drops (and
    counts) excess percepts rather than blocking.
    """

    def __init__(self, spec: SensorSpec, read_fn: Optional[Callable[[int], List[Payload]]] = None):
        self.spec = spec
        self.read_fn = read_fn
        self.buffer: List[Tuple[int, Payload]] = []
        self.accepted_in_slice = 0
        self.drops = 0
        self.disabled_drops = 0
        self.disabled_poll = False

    @property
    def id(self) -> str:
        return self.spec.id

    def poll(self, tick: int) -> List[TimestampedPercept]:
        if self.spec.state is SensorState.OFF:
            self.disabled_poll = True
            return []
        if self.spec.mode is not Mode.PULL or self.read_fn is None:
            return []
        if tick % self.spec.current_interval != 0:
            return []
        return [TimestampedPercept(tick, self.id, 0, p) for p in self.read_fn(tick)]

    def deliver(self, payload: Payload, tick: int) -> bool:
        if self.spec.state is SensorState.OFF:
            self.disabled_drops += 1
            return False
        if self.accepted_in_slice >= self.spec.bandwidth_per_slice:
            self.drops += 1
            return False
        self.accepted_in_slice += 1
        self.buffer.append((tick, payload))
        return True

    def drain(self) -> List[Tuple[int, Payload]]:
        out, self.buffer = self.buffer, []
        self.accepted_in_slice = 0
        return out


def sensor_poll(sensor: Sensor, tick: int) -> List[TimestampedPercept]:
    return sensor.poll(tick)


def sensor_deliver(sensor: Sensor, payload: Payload, tick: int) -> bool:
    return sensor.deliver(payload, tick)


# -- slice alignment -----------------------------------------------------------


class SliceAligner:
    """The single serialization point between sensors and representations.

    Deliveries may arrive from multiple execution contexts; a lock orders
    them, and emitted snapshots are immutable.
    """

    def __init__(self, strategy: SlicingStrategy):
        self.strategy = strategy
        self._lock = threading.Lock()
        self._seq = 0
        self._slice_index = 0
        self._buffer: List[TimestampedPercept] = []
        if isinstance(strategy, Multi):
            self._multi: Dict[int, List[TimestampedPercept]] = {w: [] for w in strategy.windows}
        # Contextual state: the open snapshot being withheld.
        self._open: List[TimestampedPercept] = []
        self._open_start = 0

    def deliver(self, percept: TimestampedPercept) -> None:
        with self._lock:
            stamped = replace(percept, seq=self._seq)
            self._seq += 1
            if isinstance(self.strategy, Multi):
                for window in self.strategy.windows:
                    self._multi[window].append(stamped)
            else:
                self._buffer.append(stamped)

    def _emit(self, window: Tuple[int, int], window_ticks: int,
              percepts: Sequence[TimestampedPercept],
              completeness: Optional[Dict[int, bool]] = None) -> Snapshot:
        ordered = tuple(sorted(percepts, key=lambda p: (p.tick, p.source, p.seq)))
        for p in ordered:
            if not window[0] < p.tick <= window[1]:
                raise ValueError(f"percept tick {p.tick} outside window {window}")
        if completeness is None:
            completeness = _pairing(ordered)
        snap = Snapshot(self._slice_index, window, window_ticks, ordered, completeness)
        self._slice_index += 1
        return snap

    def close(self, tick: int) -> List[Snapshot]:
        """Close any window ending at `tick`; off-boundary calls emit nothing."""
        with self._lock:
            return self._close(tick)

    def _close(self, tick: int) -> List[Snapshot]:
        strategy = self.strategy
        if isinstance(strategy, Extend):
            if tick % strategy.window != 0:
                return []
            percepts, self._buffer = self._buffer, []
            return [self._emit((tick - strategy.window, tick), strategy.window, percepts)]
        if isinstance(strategy, Multi):
            out = []
            for window in strategy.windows:
                if tick % window != 0:
                    continue
                percepts = self._multi[window]
                self._multi[window] = []
                out.append(self._emit((tick - window, tick), window, percepts))
            return out
        return self._close_contextual(tick, strategy)

    def _close_contextual(self, tick: int, strategy: Contextual) -> List[Snapshot]:
        """Withhold the open window while any request in it still has its
        own inspection budget: each unanswered request may delay release up
        to `lookahead` base windows past the window it arrived in."""
        if tick % strategy.window != 0:
            return []
        if not self._open:
            self._open_start = tick - strategy.window
        self._open.extend(self._buffer)
        self._buffer = []
        pairing = _pairing(self._open)
        width = strategy.window
        current_window = tick // width
        waited: Dict[int, int] = {}
        for p in self._open:
            if isinstance(p.payload, Request):
                entry_window = -(-p.tick // width)  # ceil: the window it landed in
                waited.setdefault(p.payload.id, current_window - entry_window)
        outstanding = [mid for mid, ok in pairing.items() if not ok]
        if any(waited.get(mid, strategy.lookahead) < strategy.lookahead
               for mid in outstanding):
            return []
        snap = self._emit((self._open_start, tick), tick - self._open_start,
                          self._open, pairing)
        self._open = []
        return [snap]


def close_slice(aligner: SliceAligner, tick: int) -> List[Snapshot]:
    """Close any windows of the aligner's strategy ending at `tick`."""
    return aligner.close(tick)


def _pairing(percepts: Sequence[TimestampedPercept]) -> Dict[int, bool]:
    requests = {p.payload.id for p in percepts if isinstance(p.payload, Request)}
    responses = {p.payload.id for p in percepts if isinstance(p.payload, Response)}
    return {mid: mid in responses for mid in sorted(requests)}


def count_split_pairs(snapshots: Sequence[Snapshot]) -> int:
    """Request/response pairs whose halves landed in different snapshots."""
    request_slice: Dict[int, int] = {}
    response_slice: Dict[int, int] = {}
    for snap in snapshots:
        for p in snap.percepts:
            if isinstance(p.payload, Request):
                request_slice.setdefault(p.payload.id, snap.slice_index)
            elif isinstance(p.payload, Response):
                response_slice.setdefault(p.payload.id, snap.slice_index)
    return sum(
        1
        for mid, rs in request_slice.items()
        if mid in response_slice and response_slice[mid] != rs
    )


# -- transformers ---------------------------------------------------------------


class ChainError(Exception):
    def __init__(self, stage: int, cause: Exception):
        super().__init__(f"transformer stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause


def aggregate_flows(snapshot: Snapshot) -> List[FlowRecord]:
    """One flow per distinct (src, dst, dst_service) among message percepts."""
    totals: Dict[Tuple[NetAddress, NetAddress, ServiceRef], List[int]] = {}
    for msg in snapshot.messages():
        key = (msg.src_ip, msg.dst_ip, msg.dst_service)
        bucket = totals.setdefault(key, [0, 0])
        bucket[0] += 1
        bucket[1] += msg.metadata.byte_count
    return [
        FlowRecord(key, totals[key][0], totals[key][1], snapshot.window)
        for key in sorted(totals, key=lambda k: (str(k[0]), str(k[1]), k[2].name))
    ]


def detect_events(flows: Sequence[FlowRecord], threshold: int) -> List[EventRecord]:
    """Strictly-above-threshold flows become events."""
    if threshold < 1:
        raise ValueError("threshold must be at least 1")
    return [
        EventRecord(flow.key, f"msg_count>{threshold}")
        for flow in flows
        if flow.msg_count > threshold
    ]


def _append(snapshot: Snapshot, payloads: Sequence[Payload], source: str,
            keep: Callable[[TimestampedPercept], bool]) -> Snapshot:
    kept = [p for p in snapshot.percepts if keep(p)]
    seq = max((p.seq for p in snapshot.percepts), default=-1) + 1
    tick = snapshot.window[1]
    extra = [TimestampedPercept(tick, source, seq + i, p) for i, p in enumerate(payloads)]
    return replace(snapshot, percepts=tuple(kept + extra))


def flow_transformer(consume: bool = True) -> Callable[[Snapshot], Snapshot]:
    def stage(snapshot: Snapshot) -> Snapshot:
        flows = aggregate_flows(snapshot)
        if consume:
            return _append(snapshot, flows, "transform:flows",
                           lambda p: not isinstance(p.payload, Message))
        return _append(snapshot, flows, "transform:flows", lambda p: True)

    return stage


def event_transformer(threshold: int) -> Callable[[Snapshot], Snapshot]:
    def stage(snapshot: Snapshot) -> Snapshot:
        flows = [p.payload for p in snapshot.percepts if isinstance(p.payload, FlowRecord)]
        events = detect_events(flows, threshold)
        return _append(snapshot, events, "transform:events", lambda p: True)

    return stage


def identity_transformer() -> Callable[[Snapshot], Snapshot]:
    return lambda snapshot: snapshot


def chain(transformers: Sequence[Callable[[Snapshot], Snapshot]], snapshot: Snapshot) -> Snapshot:
    """Apply transformers left to right; a failure names the stage index."""
    for index, transformer in enumerate(transformers):
        try:
            snapshot = transformer(snapshot)
        except Exception as exc:  # noqa: BLE001 - surfaced with stage index
            raise ChainError(index, exc) from exc
    return snapshot


_TRANSFORMER_FACTORIES = {
    "identity": lambda **kw: identity_transformer(),
    "flows": lambda consume=True, **kw: flow_transformer(consume=consume),
    "events": lambda threshold=4, **kw: event_transformer(threshold),
}


def make_transformer(name: str, **params) -> Callable[[Snapshot], Snapshot]:
    try:
        factory = _TRANSFORMER_FACTORIES[name]
    except KeyError:
        raise ValueError(f"unknown transformer {name!r}") from None
    return factory(**params)
