"""Uniform driver interface over the state approximations.

Each adapter consumes snapshots and exposes a 64-bit state key for the
learner, a dump for inspection, and its codec width when it has one.
"""

from __future__ import annotations

from typing import Callable, Dict, List, Optional, Sequence, Tuple

from ..engine import VulnerabilityList
from ..messages import Request, Response, default_layout
from ..pipeline import EventRecord, Snapshot, chain as run_chain, make_transformer
from .codecs import (
    AgentProfile,
    OutOfProfile,
    StateVector,
    decode_verbatim,
    encode_static_elim,
    encode_verbatim,
    reconstruct_static,
    static_elim_layout,
)
from .interning import IndexedCodec, IndexedCodecConfig, IndexRegistry
from .views import RestructuredWorld, ServiceHistory, fnv1a64


class Representation:
    """Base adapter; concrete classes fill in the observation hooks."""

    name = "base"
    width_bits: Optional[int] = None

    def __init__(self):
        self.now = 0

    def reset(self) -> None:
        self.now = 0

    def observe_snapshot(self, snapshot: Snapshot) -> None:
        self.now = max(self.now, snapshot.window[1])
        for percept in snapshot.percepts:
            if isinstance(percept.payload, Request):
                self.observe_request(percept.payload, percept.tick)
            elif isinstance(percept.payload, Response):
                self.observe_response(percept.payload, percept.tick)

    def observe_request(self, request: Request, tick: int) -> None:
        pass

    def observe_response(self, response: Response, tick: int) -> None:
        pass

    def current_key(self) -> int:
        raise NotImplementedError

    def has_state(self) -> bool:
        """Whether the representation has produced an output yet; codec
        adapters report False until the first response was encoded."""
        return True

    def dump(self) -> Dict:
        raise NotImplementedError

    def eviction_count(self) -> int:
        return 0


class _ResponseCodecRep(Representation):
    """State = the latest encoded response (the atomic representations)."""

    def __init__(self):
        super().__init__()
        self.vector: Optional[StateVector] = None

    def reset(self) -> None:
        super().reset()
        self.vector = None

    def encode(self, response: Response) -> StateVector:
        raise NotImplementedError

    def fields_of(self, vector: StateVector) -> Dict:
        raise NotImplementedError

    def observe_response(self, response: Response, tick: int) -> None:
        self.vector = self.encode(response)

    def current_key(self) -> int:
        if self.vector is None:
            return fnv1a64(f"{self.name}|empty".encode())
        data = self.vector.layout_id.encode() + b"\0" + self.vector.to_bytes()
        return fnv1a64(data)

    def has_state(self) -> bool:
        return self.vector is not None

    def side_channel_dump(self) -> Dict:
        return {}

    def dump(self) -> Dict:
        return {
            "layout_id": self.vector.layout_id if self.vector else None,
            "width_bits": self.width_bits,
            "state_key": self.current_key(),
            "fields": self.fields_of(self.vector) if self.vector else {},
            "side_channel": self.side_channel_dump(),
        }


class VerbatimRep(_ResponseCodecRep):
    name = "verbatim"

    def __init__(self):
        super().__init__()
        self.layout = default_layout()
        self.width_bits = self.layout.total_width

    def encode(self, response: Response) -> StateVector:
        return encode_verbatim(response, self.layout)

    def fields_of(self, vector: StateVector) -> Dict:
        from ..messages import message_to_dict

        return message_to_dict(decode_verbatim(vector, self.layout))


class StaticElimRep(_ResponseCodecRep):
    """Static elimination with a verbatim fallback for out-of-profile
    destinations."""

    name = "static-elim"

    def __init__(self, profile: AgentProfile):
        super().__init__()
        self.profile = profile
        self.layout = static_elim_layout(profile)
        self.width_bits = self.layout.total_width
        self.fallbacks = 0

    def reset(self) -> None:
        super().reset()
        self.fallbacks = 0

    def encode(self, response: Response) -> StateVector:
        try:
            return encode_static_elim(response, self.profile)
        except OutOfProfile:
            self.fallbacks += 1
            return encode_verbatim(response)

    def fields_of(self, vector: StateVector) -> Dict:
        from ..messages import message_to_dict

        if vector.layout_id == self.layout.layout_id:
            return message_to_dict(reconstruct_static(vector, self.profile))
        return message_to_dict(decode_verbatim(vector))


class IndexedRep(_ResponseCodecRep):
    name = "indexed"

    def __init__(
        self,
        registry: Optional[IndexRegistry] = None,
        config: IndexedCodecConfig = IndexedCodecConfig(),
    ):
        super().__init__()
        self.codec = IndexedCodec(registry, config)
        self.width_bits = self.codec.layout.total_width

    @property
    def registry(self) -> IndexRegistry:
        return self.codec.registry

    def reset(self) -> None:
        super().reset()
        self.codec = IndexedCodec(IndexRegistry(), self.codec.config)

    def encode(self, response: Response) -> StateVector:
        return self.codec.encode(response)

    def eviction_count(self) -> int:
        return self.registry.eviction_count()

    def fields_of(self, vector: StateVector) -> Dict:
        from .codecs import _unpack

        return dict(_unpack(self.codec.layout, vector))

    def side_channel_dump(self) -> Dict:
        record = self.codec.side_channel.latest
        if record is None:
            return {}
        out = {f: {"index": i, "value": v} for f, i, v in record.indexed}
        out.update({f: {"value": v} for f, v in record.raw.items()})
        return out


class RestructuredRep(Representation):
    name = "restructured"

    def __init__(self, machine_capacity: int = 16):
        super().__init__()
        self.machine_capacity = machine_capacity
        self.world = RestructuredWorld(machine_capacity)

    def reset(self) -> None:
        super().reset()
        self.world = RestructuredWorld(self.machine_capacity)

    def observe_response(self, response: Response, tick: int) -> None:
        self.world.apply_response(response)

    def current_key(self) -> int:
        return self.world.key()

    def eviction_count(self) -> int:
        return self.world.evictions

    def dump(self) -> Dict:
        return {
            "layout_id": "restructured-view",
            "width_bits": None,
            "state_key": self.current_key(),
            "fields": self.world.dump(),
            "side_channel": {},
        }


class HistoryRep(Representation):
    name = "history"

    def __init__(self, vulns: VulnerabilityList):
        super().__init__()
        self.vulns = vulns
        self.history = ServiceHistory(vulns)

    def reset(self) -> None:
        super().reset()
        self.history = ServiceHistory(self.vulns)

    def observe_request(self, request: Request, tick: int) -> None:
        self.history.apply(request, tick)

    def observe_response(self, response: Response, tick: int) -> None:
        self.history.apply(response, tick)

    def current_key(self) -> int:
        return self.history.key(self.now)

    def dump(self) -> Dict:
        return {
            "layout_id": "history-view",
            "width_bits": None,
            "state_key": self.current_key(),
            "fields": self.history.dump(self.now),
            "side_channel": {},
        }


class RestructuredHistoryRep(Representation):
    """The machine table and the activity history combined."""

    name = "restructured+history"

    def __init__(self, vulns: VulnerabilityList, machine_capacity: int = 16):
        super().__init__()
        self.vulns = vulns
        self.machine_capacity = machine_capacity
        self.world = RestructuredWorld(machine_capacity)
        self.history = ServiceHistory(vulns)

    def reset(self) -> None:
        super().reset()
        self.world = RestructuredWorld(self.machine_capacity)
        self.history = ServiceHistory(self.vulns)

    def observe_request(self, request: Request, tick: int) -> None:
        self.history.apply(request, tick)

    def observe_response(self, response: Response, tick: int) -> None:
        self.world.apply_response(response)
        self.history.apply(response, tick)

    def current_key(self) -> int:
        data = self.world.canonical_bytes() + b"\n" + self.history.canonical_bytes(self.now)
        return fnv1a64(data)

    def eviction_count(self) -> int:
        return self.world.evictions

    def dump(self) -> Dict:
        return {
            "layout_id": "restructured+history-view",
            "width_bits": None,
            "state_key": self.current_key(),
            "fields": {
                "machines": self.world.dump(),
                "services": self.history.dump(self.now),
            },
            "side_channel": {},
        }


class ChainRep(Representation):
    """Transformer chain ahead of the combined view; detected events become
    part of the state."""

    def __init__(
        self,
        chain_name: str,
        stages: Sequence[Callable[[Snapshot], Snapshot]],
        vulns: VulnerabilityList,
        machine_capacity: int = 16,
    ):
        super().__init__()
        self.name = f"chain:{chain_name}"
        self.stages = list(stages)
        self.base = RestructuredHistoryRep(vulns, machine_capacity)
        self.event_keys: List[str] = []

    def reset(self) -> None:
        super().reset()
        self.base.reset()
        self.event_keys = []

    def observe_snapshot(self, snapshot: Snapshot) -> None:
        self.now = max(self.now, snapshot.window[1])
        transformed = run_chain(self.stages, snapshot)
        self.base.observe_snapshot(transformed)
        for percept in transformed.percepts:
            if isinstance(percept.payload, EventRecord):
                ev = percept.payload
                rendered = f"{ev.key[0]}>{ev.key[1]}:{ev.key[2].name}|{ev.reason}"
                if rendered not in self.event_keys:
                    self.event_keys.append(rendered)

    def current_key(self) -> int:
        self.base.now = self.now
        data = (
            self.base.world.canonical_bytes()
            + b"\n"
            + self.base.history.canonical_bytes(self.now)
            + b"\nevents\n"
            + "\n".join(sorted(self.event_keys)).encode()
        )
        return fnv1a64(data)

    def eviction_count(self) -> int:
        return self.base.eviction_count()

    def dump(self) -> Dict:
        inner = self.base.dump()
        inner["layout_id"] = self.name + "-view"
        inner["state_key"] = self.current_key()
        inner["fields"]["events"] = sorted(self.event_keys)
        return inner


DEFAULT_CHAIN = (("flows", {"consume": False}), ("events", {"threshold": 4}))


def known_selectors(chains: Optional[Dict[str, Sequence[Tuple[str, Dict]]]] = None) -> List[str]:
    """The six comparable configurations; restructured+history is an extra
    run-only combination on top of these."""
    names = ["verbatim", "static-elim", "indexed", "restructured", "history"]
    for chain_name in sorted(chains or {"default": DEFAULT_CHAIN}):
        names.append(f"chain:{chain_name}")
    return names


def make_representation(
    selector: str,
    profile: AgentProfile,
    vulns: VulnerabilityList,
    machine_capacity: int = 16,
    registry_capacities: Optional[Dict[str, int]] = None,
    chains: Optional[Dict[str, Sequence[Tuple[str, Dict]]]] = None,
) -> Representation:
    if selector == "verbatim":
        return VerbatimRep()
    if selector == "static-elim":
        return StaticElimRep(profile)
    if selector == "indexed":
        return IndexedRep(IndexRegistry(registry_capacities))
    if selector == "restructured":
        return RestructuredRep(machine_capacity)
    if selector == "history":
        return HistoryRep(vulns)
    if selector == "restructured+history":
        return RestructuredHistoryRep(vulns, machine_capacity)
    if selector.startswith("chain:"):
        chain_name = selector.split(":", 1)[1]
        table = chains or {"default": DEFAULT_CHAIN}
        if chain_name not in table:
            raise ValueError(f"unknown chain {chain_name!r}")
        stages = [make_transformer(name, **params) for name, params in table[chain_name]]
        return ChainRep(chain_name, stages, vulns, machine_capacity)
    raise ValueError(f"unknown representation selector {selector!r}")
