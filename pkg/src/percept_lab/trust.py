"""Fallible perception: seeded fault injection on percept streams,
redundancy voting across sensor replicas, and baseline probing.

Faults are per-replica and independent. A fault applied upstream of the
replication point reaches every replica identically and defeats voting;
that limitation is deliberately observable.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

from .engine import Engine
from .messages import (
    Detail,
    Message,
    NetAddress,
    Origin,
    Request,
    Response,
    ServiceRef,
    Session,
    StatusValue,
    canonicalize,
    session_to_dict,
)


class FaultMode(str, Enum):
    DROPOUT = "dropout"
    STUCK = "stuck"
    FLIP = "flip"


class AlignmentError(Exception):
    pass


# Leaf fields of a message, with getter/setter/in-domain generator.


def _get_field(msg: Message, name: str):
    if name == "id":
        return msg.id
    if name == "kind":
        return msg.kind
    if name == "src_ip":
        return msg.src_ip
    if name == "dst_ip":
        return msg.dst_ip
    if name == "src_service":
        return msg.src_service
    if name == "dst_service":
        return msg.dst_service
    if name == "ttl":
        return msg.ttl
    if name == "auth_token":
        return msg.auth_token
    if name == "session":
        return msg.session
    if name.startswith("metadata."):
        return getattr(msg.metadata, name.split(".", 1)[1])
    if name.startswith("status."):
        return getattr(msg.status, name.split(".", 1)[1])
    if name == "content":
        return msg.content
    if name == "action":
        return msg.action
    raise KeyError(name)


def _set_field(msg: Message, name: str, value):
    if name.startswith("metadata."):
        meta = replace(msg.metadata, **{name.split(".", 1)[1]: value})
        return replace(msg, metadata=meta)
    if name.startswith("status."):
        status = replace(msg.status, **{name.split(".", 1)[1]: value})
        return replace(msg, status=status)
    return replace(msg, **{name: value})


def _flip_value(rng: random.Random, name: str, current):
    if name == "status.origin":
        return rng.choice([o for o in Origin if o is not current])
    if name == "status.value":
        return rng.choice([v for v in StatusValue if v is not current])
    if name == "status.detail":
        return rng.choice([d for d in Detail if d is not current])
    if name == "ttl":
        return rng.choice([t for t in range(256) if t != current])
    if name in ("metadata.packet_count", "metadata.byte_count", "metadata.duration_ticks"):
        value = rng.randrange(1 << 16)
        return value if value != current else value + 1
    if name == "auth_token":
        value = rng.getrandbits(128)
        return value if value != current else value ^ 1
    if name == "content":
        while True:
            token = "".join(rng.choice("abcdefghijklmnopqrstuvwxyz") for _ in range(8))
            if token != current:
                return token
    if name in ("dst_ip", "src_ip"):
        while True:
            addr = NetAddress.parse(
                f"10.{rng.randrange(256)}.{rng.randrange(256)}.{rng.randrange(1, 255)}"
            )
            if addr != current:
                return addr
    if name in ("dst_service", "src_service"):
        while True:
            ref = ServiceRef("".join(rng.choice("abcdefgh") for _ in range(6)))
            if ref != current:
                return ref
    raise KeyError(f"field {name!r} cannot be flipped")


FLIPPABLE_FIELDS = (
    "src_ip",
    "dst_ip",
    "src_service",
    "dst_service",
    "ttl",
    "metadata.packet_count",
    "metadata.byte_count",
    "metadata.duration_ticks",
    "auth_token",
    "status.origin",
    "status.value",
    "status.detail",
    "content",
)


@dataclass
class FaultConfig:
    mode: FaultMode
    sensor_id: str = ""
    seed: int = 0
    probability: float = 0.0
    fields: Tuple[str, ...] = ()
    stuck_percept: Optional[Message] = None

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError("dropout probability must be within [0, 1]")
        for name in self.fields:
            if name not in FLIPPABLE_FIELDS:
                raise ValueError(f"field {name!r} is not in the schema")


class FaultInjector:
    """Applies one FaultConfig to a percept stream; deterministic per seed."""

    def __init__(self, config: FaultConfig):
        self.config = config
        self.rng = random.Random(config.seed)
        self.recorded = config.stuck_percept

    def apply(self, stream: Sequence[Message]) -> List[Message]:
        mode = self.config.mode
        if mode is FaultMode.DROPOUT:
            return [m for m in stream if self.rng.random() >= self.config.probability]
        if mode is FaultMode.STUCK:
            out = []
            for msg in stream:
                if self.recorded is None:
                    self.recorded = msg
                out.append(self.recorded)
            return out
        out = []
        for msg in stream:
            for name in self.config.fields:
                msg = _set_field(msg, name, _flip_value(self.rng, name, _get_field(msg, name)))
            out.append(msg)
        return out


def inject(fault: FaultConfig, stream: Sequence[Message]) -> List[Message]:
    return FaultInjector(fault).apply(stream)


# -- redundancy voting -----------------------------------------------------------

VOTE_FIELDS = (
    "id",
    "kind",
    "src_ip",
    "dst_ip",
    "src_service",
    "dst_service",
    "ttl",
    "metadata.packet_count",
    "metadata.byte_count",
    "metadata.duration_ticks",
    "auth_token",
    "session",
    "status.origin",
    "status.value",
    "status.detail",
    "content",
)


@dataclass(frozen=True)
class VotedPercept:
    percept: Message
    untrusted_fields: Tuple[str, ...]

    @property
    def trusted(self) -> bool:
        return not self.untrusted_fields


def _render(value) -> str:
    if isinstance(value, Session):
        return str(session_to_dict(value))
    return repr(value)


def vote(replicas: Sequence[Sequence[Message]], position: int) -> VotedPercept:
    """Field-wise majority across replicas at one aligned position."""
    r = len(replicas)
    if r < 3 or r % 2 == 0:
        raise ValueError("voting needs an odd replica count of at least 3")
    percepts = [stream[position] for stream in replicas]
    ids = [p.id for p in percepts]
    majority_id = _majority(ids)
    if majority_id is None:
        raise AlignmentError(f"no id majority at position {position}")
    base = percepts[ids.index(majority_id)]
    if isinstance(base, Request):
        fields = tuple(
            f for f in VOTE_FIELDS if not f.startswith("status.") and f != "content"
        ) + ("action",)
    else:
        fields = VOTE_FIELDS
    untrusted = []
    for name in fields:
        rendered, values = [], []
        for p in percepts:
            try:
                value = _get_field(p, name)
            except (KeyError, AttributeError):
                rendered.append("<absent>")
                values.append(None)
                continue
            rendered.append(_render(value))
            values.append(value)
        winner = _majority(rendered)
        if winner is None or winner == "<absent>":
            untrusted.append(name)
            continue
        base = _set_field(base, name, values[rendered.index(winner)])
    return VotedPercept(base, tuple(untrusted))


def _majority(rendered: Sequence) -> Optional[object]:
    counts: Dict[object, int] = {}
    for value in rendered:
        counts[value] = counts.get(value, 0) + 1
    best = max(counts.values())
    if best <= len(rendered) // 2:
        return None
    for value, count in counts.items():
        if count == best:
            return value
    return None


def vote_streams(replicas: Sequence[Sequence[Message]]) -> List[VotedPercept]:
    lengths = {len(stream) for stream in replicas}
    if len(lengths) != 1:
        raise AlignmentError("replica streams have diverging lengths")
    return [vote(replicas, i) for i in range(lengths.pop())]


# -- baseline probing --------------------------------------------------------------

BASELINE_IGNORED = ("id", "ttl")
BASELINE_FIELDS = tuple(f for f in VOTE_FIELDS if f not in BASELINE_IGNORED)


@dataclass
class Baseline:
    action: str
    dst_ip: NetAddress
    dst_service: ServiceRef
    recorded: Response


@dataclass(frozen=True)
class ProbeVerdict:
    match: bool
    deviating_fields: Tuple[str, ...] = ()


def record_baseline(
    engine: Engine, action: str, dst_ip: NetAddress, dst_service: ServiceRef = ServiceRef()
) -> Baseline:
    """Record the probe response during a declared-clean phase."""
    request = engine.new_request(action, dst_ip, dst_service)
    engine.submit_request(request)
    response = engine.run_until_response(request.id)
    if response is None:
        raise RuntimeError("baseline probe produced no response")
    return Baseline(action, dst_ip, dst_service, canonicalize(response))


def probe_baseline(
    engine: Engine,
    baseline: Baseline,
    fault: Optional[FaultConfig] = None,
    max_ticks: int = 64,
) -> ProbeVerdict:
    """Re-issue the probe and compare field-wise, ignoring id and ttl."""
    request = engine.new_request(baseline.action, baseline.dst_ip, baseline.dst_service)
    engine.submit_request(request)
    response = engine.run_until_response(request.id, max_ticks)
    if response is None:
        return ProbeVerdict(False, BASELINE_FIELDS)
    if fault is not None:
        faulted = inject(fault, [response])
        if not faulted:
            return ProbeVerdict(False, BASELINE_FIELDS)
        response = faulted[0]
    response = canonicalize(response)
    deviating = tuple(
        name
        for name in BASELINE_FIELDS
        if _render(_get_field(response, name)) != _render(_get_field(baseline.recorded, name))
    )
    if deviating:
        return ProbeVerdict(False, deviating)
    return ProbeVerdict(True)
