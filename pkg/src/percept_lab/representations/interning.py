"""Interning of large-domain attributes behind small fixed indices.

Each attribute domain keeps a live value-to-index table with LRU eviction;
the supplementary side channel records, for every emitted state, the full
value behind each compressed field so the decision layer can reconstruct
exact action parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from ..messages import (
    BitLayout,
    Endpoint,
    Kind,
    LAYOUT_VERSION,
    Metadata,
    NetAddress,
    Response,
    ServiceRef,
    Session,
    is_canonical,
)
from .codecs import (
    AgentProfile,
    DecodeError,
    EncodeError,
    StateVector,
    _decode_status,
    _field_value,
    _pack,
    _unpack,
)


class StaleIndexError(KeyError):
    """An index that is not live in its domain; the observable overflow hazard."""

    def __init__(self, domain: str, index: int):
        super().__init__(f"{domain}[{index}]")
        self.domain = domain
        self.index = index


DEFAULT_CAPACITIES = {
    "dst_ip": 256,      # 2^8
    "service": 64,      # 2^6
    "session": 64,      # 2^6, shared by both session endpoints
    "auth": 16,         # 2^4
    "content": 256,     # 2^8
}


class _Domain:
    """One value<->index table. Recency is a monotone access stamp per slot;
    the eviction victim is the slot with the smallest stamp."""

    def __init__(self, capacity: int):
        if capacity < 1 or capacity & (capacity - 1):
            raise ValueError("capacity must be a power of two")
        self.capacity = capacity
        self.slots: List[Optional[object]] = [None] * capacity
        self.value_to_slot: Dict[object, int] = {}
        self.stamp = [0] * capacity
        self.clock = 0
        self.evictions = 0

    def intern(self, value) -> Tuple[int, Optional[object]]:
        self.clock += 1
        slot = self.value_to_slot.get(value)
        if slot is not None:
            self.stamp[slot] = self.clock
            return slot, None
        if len(self.value_to_slot) < self.capacity:
            slot = self.slots.index(None)
            evicted = None
        else:
            slot = min(range(self.capacity), key=lambda i: self.stamp[i])
            evicted = self.slots[slot]
            del self.value_to_slot[evicted]
            self.evictions += 1
        self.slots[slot] = value
        self.value_to_slot[value] = slot
        self.stamp[slot] = self.clock
        return slot, evicted

    def resolve(self, index: int):
        if not 0 <= index < self.capacity or self.slots[index] is None:
            raise StaleIndexError("", index)
        return self.slots[index]


class IndexRegistry:
    """Per-domain interning tables with eviction counters."""

    def __init__(self, capacities: Optional[Dict[str, int]] = None):
        caps = dict(DEFAULT_CAPACITIES)
        if capacities:
            caps.update(capacities)
        self.domains: Dict[str, _Domain] = {name: _Domain(cap) for name, cap in caps.items()}

    def domain(self, name: str) -> _Domain:
        try:
            return self.domains[name]
        except KeyError:
            raise KeyError(f"domain {name!r} is not registered") from None

    def intern(self, domain: str, value) -> Tuple[int, Optional[object]]:
        return self.domain(domain).intern(value)

    def resolve(self, domain: str, index: int):
        try:
            return self.domain(domain).resolve(index)
        except StaleIndexError:
            raise StaleIndexError(domain, index) from None

    def index_width(self, domain: str) -> int:
        return (self.domain(domain).capacity - 1).bit_length() or 1

    def eviction_count(self) -> int:
        return sum(d.evictions for d in self.domains.values())

    def live_index_of(self, domain: str, value) -> Optional[int]:
        return self.domain(domain).value_to_slot.get(value)


def intern(registry: IndexRegistry, domain: str, value):
    return registry.intern(domain, value)


def resolve(registry: IndexRegistry, domain: str, index: int):
    return registry.resolve(domain, index)


# -- quantization ------------------------------------------------------------------


def log2_bucket(value: int, bits: int = 4) -> int:
    """0 stays 0; otherwise 1 + floor(log2(value)), saturating."""
    if value <= 0:
        return 0
    return min((1 << bits) - 1, value.bit_length())


INDEXED_LAYOUT_ID = LAYOUT_VERSION + "-indexed"


@dataclass(frozen=True)
class IndexedCodecConfig:
    """Default field schedule totalling 68 bits.

    The unique id and the agent-static source fields are dropped (any
    compressing representation must shed the id; the source fields would
    each intern a single constant). The ttl and metadata counts are
    quantized to 4-bit log2 buckets unless quantization is disabled.
    """

    quantize: bool = True

    def layout(self, registry: IndexRegistry) -> BitLayout:
        entries = [
            ("kind", 1),
            ("dst_ip_index", registry.index_width("dst_ip")),
            ("dst_service_index", registry.index_width("service")),
            ("ttl", 4 if self.quantize else 8),
            ("packet_bucket", 4 if self.quantize else 32),
            ("byte_bucket", 4 if self.quantize else 32),
            ("duration_bucket", 4 if self.quantize else 32),
            ("auth_index", registry.index_width("auth")),
            ("session_present", 1),
            ("session_start_index", registry.index_width("session")),
            ("session_end_index", registry.index_width("session")),
            ("status.origin", 2),
            ("status.value", 2),
            ("status.detail", 8),
            ("content_index", registry.index_width("content")),
        ]
        return BitLayout(INDEXED_LAYOUT_ID, tuple(entries))


@dataclass(frozen=True)
class SideChannelRecord:
    """Exact values behind one emitted state's compressed fields."""

    indexed: Tuple[Tuple[str, int, str], ...]  # (field, index, rendered value)
    raw: Dict[str, object] = field(default_factory=dict)


class SupplementarySideChannel:
    """Reverse mappings per emitted state, keyed by the packed value."""

    def __init__(self):
        self.records: Dict[int, SideChannelRecord] = {}
        self.latest: Optional[SideChannelRecord] = None

    def remember(self, vector: StateVector, record: SideChannelRecord) -> None:
        self.records[vector.value] = record
        self.latest = record

    def lookup(self, vector: StateVector) -> SideChannelRecord:
        return self.records[vector.value]


class IndexedCodec:
    """Approximation that swaps large-domain fields for interned indices."""

    def __init__(
        self,
        registry: Optional[IndexRegistry] = None,
        config: IndexedCodecConfig = IndexedCodecConfig(),
    ):
        self.registry = registry or IndexRegistry()
        self.config = config
        self.layout = config.layout(self.registry)
        self.side_channel = SupplementarySideChannel()

    def encode(self, response: Response) -> StateVector:
        if not is_canonical(response):
            raise EncodeError("response is not canonical")
        reg = self.registry
        session = response.session
        dst_ip_idx, _ = reg.intern("dst_ip", response.dst_ip)
        dst_service_idx, _ = reg.intern("service", response.dst_service)
        auth_idx, _ = reg.intern("auth", response.auth_token)
        content_idx, _ = reg.intern("content", response.content)
        if session is not None:
            start_idx, _ = reg.intern("session", session.start)
            end_idx, _ = reg.intern("session", session.end)
        else:
            start_idx = end_idx = 0

        quantize = self.config.quantize
        meta = response.metadata
        values = {
            "kind": 1,
            "dst_ip_index": dst_ip_idx,
            "dst_service_index": dst_service_idx,
            "ttl": log2_bucket(response.ttl) if quantize else response.ttl,
            "packet_bucket": log2_bucket(meta.packet_count) if quantize else meta.packet_count,
            "byte_bucket": log2_bucket(meta.byte_count) if quantize else meta.byte_count,
            "duration_bucket": log2_bucket(meta.duration_ticks) if quantize else meta.duration_ticks,
            "auth_index": auth_idx,
            "session_present": 0 if session is None else 1,
            "session_start_index": start_idx,
            "session_end_index": end_idx,
            "status.origin": _field_value(response, "status.origin"),
            "status.value": _field_value(response, "status.value"),
            "status.detail": _field_value(response, "status.detail"),
            "content_index": content_idx,
        }
        vector = _pack(self.layout, values)

        indexed = [
            ("dst_ip", dst_ip_idx, str(response.dst_ip)),
            ("dst_service", dst_service_idx, response.dst_service.name),
            ("auth_token", auth_idx, f"{response.auth_token:032x}"),
            ("content", content_idx, response.content),
        ]
        if session is not None:
            indexed.append(("session.start", start_idx, _render_endpoint(session.start)))
            indexed.append(("session.end", end_idx, _render_endpoint(session.end)))
        raw = {
            "ttl": response.ttl,
            "packet_count": meta.packet_count,
            "byte_count": meta.byte_count,
            "duration_ticks": meta.duration_ticks,
        }
        self.side_channel.remember(vector, SideChannelRecord(tuple(indexed), raw))
        return vector

    def reconstruct(
        self, vector: StateVector, record: SideChannelRecord, profile: AgentProfile
    ) -> Response:
        """Rebuild the exact response (id restored as 0, source fields from
        the profile) from a state and its side-channel record."""
        values = _unpack(self.layout, vector)
        if values["kind"] != 1:
            raise DecodeError("kind", "not a response")
        by_field = {name: rendered for name, _idx, rendered in record.indexed}
        session = None
        if values["session_present"]:
            session = Session(
                _parse_endpoint(by_field["session.start"]),
                _parse_endpoint(by_field["session.end"]),
            )
        return Response(
            id=0,
            kind=Kind.RESPONSE,
            src_ip=profile.own_addresses[0],
            dst_ip=NetAddress.parse(by_field["dst_ip"]),
            src_service=profile.own_service,
            dst_service=ServiceRef(by_field["dst_service"]),
            ttl=record.raw["ttl"],
            metadata=Metadata(
                packet_count=record.raw["packet_count"],
                byte_count=record.raw["byte_count"],
                duration_ticks=record.raw["duration_ticks"],
            ),
            auth_token=int(by_field["auth_token"], 16),
            session=session,
            status=_decode_status(values),
            content=by_field["content"],
        )


def _render_endpoint(endpoint: Endpoint) -> str:
    return f"{endpoint.ip}|{endpoint.service.name}"


def _parse_endpoint(rendered: str) -> Endpoint:
    ip, service = rendered.split("|", 1)
    return Endpoint(NetAddress.parse(ip), ServiceRef(service))


def encode_indexed(
    response: Response, registry: IndexRegistry, config: IndexedCodecConfig = IndexedCodecConfig()
) -> StateVector:
    """One-shot form; persistent callers hold an IndexedCodec."""
    codec = IndexedCodec(registry, config)
    return codec.encode(response)
