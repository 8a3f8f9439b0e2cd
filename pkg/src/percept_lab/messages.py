"""Percept schema: addresses, sessions, messages, status codes, and the
fixed bit layout that every state codec builds on.

All types here are immutable values; they can be copied or shared between
threads freely.
"""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass, replace
from enum import Enum, IntEnum
from typing import Dict, List, Optional, Tuple

LAYOUT_VERSION = "percept-lab-layout-v1"

MAX_TEXT_BYTES = 32
MAX_VERSION_BYTES = 16

_V4_MAPPED_PREFIX = 0xFFFF << 32


def canonical_text(raw: str, limit: int = MAX_TEXT_BYTES) -> str:
    """Trim, lowercase, and clip to `limit` UTF-8 bytes.

    Clipping can cut a multi-byte character or expose trailing whitespace,
    so the result is stripped again; the whole pipeline is idempotent.
    """
    s = raw.strip().lower()
    clipped = s.encode("utf-8")[:limit]
    return clipped.decode("utf-8", "ignore").strip()


@dataclass(frozen=True, order=True)
class NetAddress:
    """A 128-bit network address; IPv4 is stored IPv4-mapped.

    Ordering is the lexicographic order of the 128 bits, which is total.
    """

    bits: int

    def __post_init__(self):
        if not 0 <= self.bits < 1 << 128:
            raise ValueError("address out of 128-bit range")

    @staticmethod
    def parse(text: str) -> "NetAddress":
        addr = ipaddress.ip_address(text.strip())
        if isinstance(addr, ipaddress.IPv4Address):
            return NetAddress(_V4_MAPPED_PREFIX | int(addr))
        return NetAddress(int(addr))

    def is_ipv4_mapped(self) -> bool:
        return self.bits >> 32 == 0xFFFF

    def as_v4_int(self) -> int:
        if not self.is_ipv4_mapped():
            raise ValueError("not an IPv4-mapped address")
        return self.bits & 0xFFFFFFFF

    def __str__(self) -> str:
        if self.is_ipv4_mapped():
            return str(ipaddress.IPv4Address(self.bits & 0xFFFFFFFF))
        return str(ipaddress.IPv6Address(self.bits))


@dataclass(frozen=True, order=True)
class ServiceRef:
    """Canonical service name, at most 32 UTF-8 bytes, lowercased."""

    name: str = ""

    @staticmethod
    def of(raw: str) -> "ServiceRef":
        return ServiceRef(canonical_text(raw))

    def is_canonical(self) -> bool:
        return canonical_text(self.name) == self.name


@dataclass(frozen=True)
class Subnet:
    """A CIDR prefix plus the number of host slots the agent operates over."""

    prefix: str
    max_hosts: int = 0

    def network(self):
        return ipaddress.ip_network(self.prefix)

    def base_address(self) -> NetAddress:
        return NetAddress.parse(str(self.network().network_address))

    def contains(self, addr: NetAddress) -> bool:
        net = self.network()
        if net.version == 4:
            if not addr.is_ipv4_mapped():
                return False
            return ipaddress.IPv4Address(addr.as_v4_int()) in net
        return ipaddress.IPv6Address(addr.bits) in net

    def offset_of(self, addr: NetAddress) -> int:
        if not self.contains(addr):
            raise ValueError(f"{addr} not in {self.prefix}")
        return addr.bits - self.base_address().bits

    def address_at(self, offset: int) -> NetAddress:
        return NetAddress(self.base_address().bits + offset)

    def sweep_addresses(self) -> List[NetAddress]:
        """Host addresses .1 .. .max_hosts, the agent's probing range."""
        base = self.base_address().bits
        return [NetAddress(base + i) for i in range(1, self.max_hosts + 1)]


@dataclass(frozen=True, order=True)
class Endpoint:
    ip: NetAddress
    service: ServiceRef


@dataclass(frozen=True, order=True)
class Session:
    """A persistent connection between two (address, service) endpoints."""

    start: Endpoint
    end: Endpoint

    def __post_init__(self):
        if self.start == self.end:
            raise ValueError("session start and end must differ")


@dataclass(frozen=True)
class Metadata:
    packet_count: int = 0
    byte_count: int = 0
    duration_ticks: int = 0

    def __post_init__(self):
        if min(self.packet_count, self.byte_count, self.duration_ticks) < 0:
            raise ValueError("metadata fields must be non-negative")


class Kind(str, Enum):
    REQUEST = "request"
    RESPONSE = "response"


class Origin(str, Enum):
    NETWORK = "network"
    NODE = "node"
    SERVICE = "service"
    SYSTEM = "system"


class StatusValue(str, Enum):
    SUCCESS = "success"
    FAILURE = "failure"
    ERROR = "error"


class Detail(IntEnum):
    OK = 0
    HOST_UNREACHABLE = 1
    NO_SUCH_SERVICE = 2
    NOT_VULNERABLE = 3
    NO_SESSION = 4
    TTL_EXPIRED = 5
    UNKNOWN_ACTION = 6


# Wire codes for the 2-bit enum fields, in declaration order.
ORIGIN_CODES = [Origin.NETWORK, Origin.NODE, Origin.SERVICE, Origin.SYSTEM]
VALUE_CODES = [StatusValue.SUCCESS, StatusValue.FAILURE, StatusValue.ERROR]


@dataclass(frozen=True)
class Status:
    origin: Origin
    value: StatusValue
    detail: Detail = Detail.OK


@dataclass(frozen=True)
class Message:
    """One message of the request/response exchange.

    src is the originating (agent) endpoint and dst the probed target for
    both halves of a pair; the pair shares its id.
    """

    id: int
    kind: Kind
    src_ip: NetAddress
    dst_ip: NetAddress
    src_service: ServiceRef
    dst_service: ServiceRef
    ttl: int
    metadata: Metadata
    auth_token: int
    session: Optional[Session] = None

    def __post_init__(self):
        if not 0 <= self.id < 1 << 32:
            raise ValueError("id out of 32-bit range")
        if not 0 <= self.ttl <= 255:
            raise ValueError("ttl out of range")
        if not 0 <= self.auth_token < 1 << 128:
            raise ValueError("auth_token out of 128-bit range")


@dataclass(frozen=True)
class Request(Message):
    action: str = ""

    def __post_init__(self):
        super().__post_init__()
        if self.kind is not Kind.REQUEST:
            raise ValueError("request must have kind=request")


@dataclass(frozen=True)
class Response(Message):
    status: Status = Status(Origin.NETWORK, StatusValue.SUCCESS)
    content: str = ""

    def __post_init__(self):
        super().__post_init__()
        if self.kind is not Kind.RESPONSE:
            raise ValueError("response must have kind=response")


def canonicalize(response: Response) -> Response:
    """Canonical form of a response: all text fields trimmed, lowercased,
    and clipped to 32 bytes. Idempotent and deterministic."""
    session = response.session
    if session is not None:
        session = Session(
            Endpoint(session.start.ip, ServiceRef.of(session.start.service.name)),
            Endpoint(session.end.ip, ServiceRef.of(session.end.service.name)),
        )
    return replace(
        response,
        src_service=ServiceRef.of(response.src_service.name),
        dst_service=ServiceRef.of(response.dst_service.name),
        content=canonical_text(response.content),
        session=session,
    )


def is_canonical(response: Response) -> bool:
    return canonicalize(response) == response


@dataclass(frozen=True)
class BitLayout:
    """Ordered (field, bit width) schedule; immutable within a run."""

    layout_id: str
    entries: Tuple[Tuple[str, int], ...]

    @property
    def total_width(self) -> int:
        return sum(w for _, w in self.entries)

    def width(self, field: str) -> int:
        for name, w in self.entries:
            if name == field:
                return w
        raise KeyError(field)


_DEFAULT_ENTRIES = (
    ("id", 32),
    ("kind", 1),
    ("src_ip", 128),
    ("dst_ip", 128),
    ("src_service", 256),
    ("dst_service", 256),
    ("ttl", 8),
    ("metadata", 96),
    ("auth_token", 128),
    ("session_present", 1),
    ("session.start", 384),
    ("session.end", 384),
    ("status.origin", 2),
    ("status.value", 2),
    ("status.detail", 8),
    ("content", 256),
)


def default_layout() -> BitLayout:
    """The canonical full-width response layout (2070 bits)."""
    return BitLayout(LAYOUT_VERSION, _DEFAULT_ENTRIES)


# --- JSON serialization (trace logs, inspect replay) -----------------------


def session_to_dict(session: Optional[Session]):
    if session is None:
        return None
    return {
        "start": {"ip": str(session.start.ip), "service": session.start.service.name},
        "end": {"ip": str(session.end.ip), "service": session.end.service.name},
    }


def session_from_dict(d) -> Optional[Session]:
    if d is None:
        return None
    return Session(
        Endpoint(NetAddress.parse(d["start"]["ip"]), ServiceRef(d["start"]["service"])),
        Endpoint(NetAddress.parse(d["end"]["ip"]), ServiceRef(d["end"]["service"])),
    )


def message_to_dict(msg: Message) -> Dict:
    d = {
        "id": msg.id,
        "kind": msg.kind.value,
        "src_ip": str(msg.src_ip),
        "dst_ip": str(msg.dst_ip),
        "src_service": msg.src_service.name,
        "dst_service": msg.dst_service.name,
        "ttl": msg.ttl,
        "metadata": {
            "packet_count": msg.metadata.packet_count,
            "byte_count": msg.metadata.byte_count,
            "duration_ticks": msg.metadata.duration_ticks,
        },
        "auth_token": f"{msg.auth_token:032x}",
        "session": session_to_dict(msg.session),
    }
    if isinstance(msg, Request):
        d["action"] = msg.action
    if isinstance(msg, Response):
        d["status"] = {
            "origin": msg.status.origin.value,
            "value": msg.status.value.value,
            "detail": msg.status.detail.name.lower(),
        }
        d["content"] = msg.content
    return d


def message_from_dict(d: Dict) -> Message:
    common = dict(
        id=d["id"],
        kind=Kind(d["kind"]),
        src_ip=NetAddress.parse(d["src_ip"]),
        dst_ip=NetAddress.parse(d["dst_ip"]),
        src_service=ServiceRef(d["src_service"]),
        dst_service=ServiceRef(d["dst_service"]),
        ttl=d["ttl"],
        metadata=Metadata(**d["metadata"]),
        auth_token=int(d["auth_token"], 16),
        session=session_from_dict(d.get("session")),
    )
    if d["kind"] == Kind.REQUEST.value:
        return Request(action=d["action"], **common)
    status = Status(
        Origin(d["status"]["origin"]),
        StatusValue(d["status"]["value"]),
        Detail[d["status"]["detail"].upper()],
    )
    return Response(status=status, content=d["content"], **common)
