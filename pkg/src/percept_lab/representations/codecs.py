"""Fixed-width response codecs: the verbatim encoding and the
static-field elimination encoding, plus their exact inverses.

Fields are packed in layout order, big-endian within each field; text
occupies the most significant bytes of its slot, zero-padded.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

from ..messages import (
    BitLayout,
    Detail,
    Endpoint,
    Kind,
    LAYOUT_VERSION,
    MAX_TEXT_BYTES,
    Metadata,
    NetAddress,
    ORIGIN_CODES,
    Response,
    ServiceRef,
    Session,
    Status,
    Subnet,
    VALUE_CODES,
    default_layout,
    is_canonical,
)


class EncodeError(ValueError):
    pass


class DecodeError(ValueError):
    def __init__(self, field: str, message: str = ""):
        super().__init__(f"cannot decode field {field!r}" + (f": {message}" if message else ""))
        self.field = field


class OutOfProfile(Exception):
    """The destination lies outside the agent's operating subnets; callers
    fall back to the verbatim codec."""


class ProfileViolation(ValueError):
    """A field the profile declares static does not match the profile."""


@dataclass(frozen=True)
class StateVector:
    layout_id: str
    width: int
    value: int

    def __post_init__(self):
        if not 0 <= self.value < 1 << self.width:
            raise ValueError("value exceeds the declared width")

    def bits01(self) -> str:
        return format(self.value, f"0{self.width}b")

    def to_bytes(self) -> bytes:
        return self.value.to_bytes((self.width + 7) // 8, "big")


@dataclass(frozen=True)
class AgentProfile:
    """What is fixed for the agent and may be dropped or compressed."""

    own_addresses: Tuple[NetAddress, ...]
    own_service: ServiceRef
    operating_subnets: Tuple[Subnet, ...] = ()
    drop_fields: Tuple[str, ...] = (
        "kind",
        "id",
        "src_ip",
        "src_service",
        "session.start",
    )

    def subnet_index_of(self, addr: NetAddress) -> Tuple[int, int]:
        for index, subnet in enumerate(self.operating_subnets):
            if subnet.contains(addr):
                offset = subnet.offset_of(addr)
                if offset < 1 << 16:
                    return index, offset
        raise OutOfProfile(str(addr))


def _text_to_int(text: str, width_bits: int) -> int:
    raw = text.encode("utf-8")
    size = width_bits // 8
    if len(raw) > size:
        raise EncodeError(f"text longer than {size} bytes")
    return int.from_bytes(raw.ljust(size, b"\0"), "big")


def _int_to_text(value: int, width_bits: int, field: str) -> str:
    raw = value.to_bytes(width_bits // 8, "big").rstrip(b"\0")
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DecodeError(field, str(exc)) from exc


def _endpoint_to_int(endpoint: Endpoint) -> int:
    return (endpoint.ip.bits << 256) | _text_to_int(endpoint.service.name, 256)


def _int_to_endpoint(value: int, field: str) -> Endpoint:
    ip = NetAddress(value >> 256)
    service = ServiceRef(_int_to_text(value & ((1 << 256) - 1), 256, field))
    return Endpoint(ip, service)


def _metadata_to_int(meta: Metadata) -> int:
    for part in (meta.packet_count, meta.byte_count, meta.duration_ticks):
        if part >= 1 << 32:
            raise EncodeError("metadata field exceeds 32 bits")
    return (meta.packet_count << 64) | (meta.byte_count << 32) | meta.duration_ticks


def _int_to_metadata(value: int) -> Metadata:
    mask = (1 << 32) - 1
    return Metadata(
        packet_count=(value >> 64) & mask,
        byte_count=(value >> 32) & mask,
        duration_ticks=value & mask,
    )


def _field_value(response: Response, name: str) -> int:
    session = response.session
    if name == "id":
        return response.id
    if name == "kind":
        return 1
    if name == "src_ip":
        return response.src_ip.bits
    if name == "dst_ip":
        return response.dst_ip.bits
    if name == "src_service":
        return _text_to_int(response.src_service.name, 256)
    if name == "dst_service":
        return _text_to_int(response.dst_service.name, 256)
    if name == "ttl":
        return response.ttl
    if name == "metadata":
        return _metadata_to_int(response.metadata)
    if name == "auth_token":
        return response.auth_token
    if name == "session_present":
        return 0 if session is None else 1
    if name == "session.start":
        return 0 if session is None else _endpoint_to_int(session.start)
    if name == "session.end":
        return 0 if session is None else _endpoint_to_int(session.end)
    if name == "status.origin":
        return ORIGIN_CODES.index(response.status.origin)
    if name == "status.value":
        return VALUE_CODES.index(response.status.value)
    if name == "status.detail":
        return int(response.status.detail)
    if name == "content":
        return _text_to_int(response.content, 256)
    raise EncodeError(f"unknown field {name!r}")


def _pack(layout: BitLayout, values: Dict[str, int]) -> StateVector:
    acc = 0
    for name, width in layout.entries:
        value = values[name]
        if not 0 <= value < 1 << width:
            raise EncodeError(f"field {name!r} exceeds {width} bits")
        acc = (acc << width) | value
    return StateVector(layout.layout_id, layout.total_width, acc)


def _unpack(layout: BitLayout, vector: StateVector) -> Dict[str, int]:
    if vector.width != layout.total_width:
        raise DecodeError("<vector>", f"expected {layout.total_width} bits, got {vector.width}")
    values: Dict[str, int] = {}
    remaining = vector.value
    for name, width in reversed(layout.entries):
        values[name] = remaining & ((1 << width) - 1)
        remaining >>= width
    return values


def encode_verbatim(response: Response, layout: Optional[BitLayout] = None) -> StateVector:
    """Pack a canonical response into the full-width layout."""
    layout = layout or default_layout()
    if not is_canonical(response):
        raise EncodeError("response is not canonical")
    values = {name: _field_value(response, name) for name, _ in layout.entries}
    return _pack(layout, values)


def decode_verbatim(vector: StateVector, layout: Optional[BitLayout] = None) -> Response:
    """Exact inverse of encode_verbatim on canonical responses."""
    layout = layout or default_layout()
    values = _unpack(layout, vector)
    if values["kind"] != 1:
        raise DecodeError("kind", "not a response")
    status = _decode_status(values)
    session = None
    if values["session_present"]:
        session = Session(
            _int_to_endpoint(values["session.start"], "session.start"),
            _int_to_endpoint(values["session.end"], "session.end"),
        )
    return Response(
        id=values["id"],
        kind=Kind.RESPONSE,
        src_ip=NetAddress(values["src_ip"]),
        dst_ip=NetAddress(values["dst_ip"]),
        src_service=ServiceRef(_int_to_text(values["src_service"], 256, "src_service")),
        dst_service=ServiceRef(_int_to_text(values["dst_service"], 256, "dst_service")),
        ttl=values["ttl"],
        metadata=_int_to_metadata(values["metadata"]),
        auth_token=values["auth_token"],
        session=session,
        status=status,
        content=_int_to_text(values["content"], 256, "content"),
    )


def _decode_status(values: Dict[str, int]) -> Status:
    if values["status.value"] >= len(VALUE_CODES):
        raise DecodeError("status.value", f"code {values['status.value']} undefined")
    if values["status.detail"] >= len(Detail):
        raise DecodeError("status.detail", f"code {values['status.detail']} undefined")
    return Status(
        ORIGIN_CODES[values["status.origin"]],
        VALUE_CODES[values["status.value"]],
        Detail(values["status.detail"]),
    )


# -- static elimination ----------------------------------------------------------

STATIC_LAYOUT_ID = LAYOUT_VERSION + "-static"


def static_elim_layout(
    profile: AgentProfile, layout: Optional[BitLayout] = None
) -> BitLayout:
    """The full layout minus the profile's static fields, with the
    destination recoded as (subnet index, host offset)."""
    layout = layout or default_layout()
    entries = []
    for name, width in layout.entries:
        if name in profile.drop_fields:
            continue
        if name == "dst_ip":
            entries.append(("dst_subnet", 4))
            entries.append(("dst_host", 16))
        else:
            entries.append((name, width))
    return BitLayout(STATIC_LAYOUT_ID, tuple(entries))


def encode_static_elim(
    response: Response, profile: AgentProfile, layout: Optional[BitLayout] = None
) -> StateVector:
    full = layout or default_layout()
    if not is_canonical(response):
        raise EncodeError("response is not canonical")
    if response.src_ip not in profile.own_addresses:
        raise ProfileViolation("src_ip is not one of the agent's addresses")
    if response.src_service != profile.own_service:
        raise ProfileViolation("src_service is not the agent's service")
    session = response.session
    if session is not None and (
        session.start.ip not in profile.own_addresses
        or session.start.service != profile.own_service
    ):
        raise ProfileViolation("session.start is not the agent endpoint")
    if not profile.operating_subnets:
        raise ProfileViolation("profile declares no operating subnets")
    subnet_index, host_offset = profile.subnet_index_of(response.dst_ip)

    slim = static_elim_layout(profile, full)
    values: Dict[str, int] = {}
    for name, _width in slim.entries:
        if name == "dst_subnet":
            values[name] = subnet_index
        elif name == "dst_host":
            values[name] = host_offset
        else:
            values[name] = _field_value(response, name)
    return _pack(slim, values)


def reconstruct_static(
    vector: StateVector, profile: AgentProfile, layout: Optional[BitLayout] = None
) -> Response:
    """Inverse of encode_static_elim; the dropped id is restored as 0."""
    slim = static_elim_layout(profile, layout or default_layout())
    values = _unpack(slim, vector)
    if values["dst_subnet"] >= len(profile.operating_subnets):
        raise ProfileViolation("subnet index outside the profile")
    subnet = profile.operating_subnets[values["dst_subnet"]]
    dst_ip = subnet.address_at(values["dst_host"])
    status = _decode_status(values)
    agent = Endpoint(profile.own_addresses[0], profile.own_service)
    session = None
    if values["session_present"]:
        session = Session(agent, _int_to_endpoint(values["session.end"], "session.end"))
    return Response(
        id=0,
        kind=Kind.RESPONSE,
        src_ip=agent.ip,
        dst_ip=dst_ip,
        src_service=agent.service,
        dst_service=ServiceRef(_int_to_text(values["dst_service"], 256, "dst_service")),
        ttl=values["ttl"],
        metadata=_int_to_metadata(values["metadata"]),
        auth_token=values["auth_token"],
        session=session,
        status=status,
        content=_int_to_text(values["content"], 256, "content"),
    )
