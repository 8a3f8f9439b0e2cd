"""Deterministic message-passing network simulation.

Machines run services, routers join subnets, and the agent interrogates the
world exclusively through request/response exchanges. Timing model: a
message enters the network one tick after submission, each link traversal
costs one tick, routers decrement the ttl, the destination spends one tick
resolving the action, and the finished response then surfaces to the
submitting agent (the return path is abstracted away). This keeps every
trace hand-checkable: a same-subnet exchange completes two ticks after
submission.
"""

from __future__ import annotations

import hashlib
import heapq
import json
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Set, Tuple

from .messages import (
    Detail,
    Endpoint,
    Kind,
    Message,
    Metadata,
    NetAddress,
    Origin,
    Request,
    Response,
    ServiceRef,
    Session,
    Status,
    StatusValue,
    Subnet,
    canonical_text,
    message_to_dict,
)

ACTIONS = ("ping", "list_services", "exploit", "read_data")

DEFAULT_TTL = 16


class EngineError(Exception):
    """A malformed submission; never represents a simulated failure."""


@dataclass(frozen=True)
class ServiceInstance:
    name: ServiceRef
    version: str = ""
    data_token: Optional[str] = None


@dataclass
class Node:
    addresses: List[NetAddress]
    services: List[ServiceInstance]

    def find_service(self, ref: ServiceRef) -> Optional[ServiceInstance]:
        for inst in self.services:
            if inst.name == ref:
                return inst
        return None


@dataclass
class Router:
    attached_subnets: List[Tuple[Subnet, List[NetAddress]]]


@dataclass
class Topology:
    nodes: List[Node]
    routers: List[Router]
    agent_node: int
    goal: Endpoint

    def agent(self) -> Node:
        return self.nodes[self.agent_node]

    def agent_address(self) -> NetAddress:
        return self.agent().addresses[0]

    def agent_service(self) -> ServiceRef:
        return self.agent().services[0].name

    def node_by_address(self, addr: NetAddress) -> Optional[Node]:
        for node in self.nodes:
            if addr in node.addresses:
                return node
        return None


class VulnerabilityList:
    """Canonical (service name, version) pairs known to be exploitable."""

    def __init__(self, pairs: Iterable[Tuple[str, str]] = ()):
        self.entries: Set[Tuple[str, str]] = {
            (canonical_text(n), canonical_text(v, 16)) for n, v in pairs
        }

    def contains(self, name: ServiceRef, version: str) -> bool:
        return (name.name, canonical_text(version, 16)) in self.entries


@dataclass
class EventQueue:
    """Pending (tick, sequence, kind, payload) entries, popped in order."""

    current_tick: int = 0
    _seq: int = 0
    _heap: list = field(default_factory=list)

    def push(self, tick: int, kind: str, payload) -> None:
        heapq.heappush(self._heap, (tick, self._seq, kind, payload))
        self._seq += 1

    def pop_due(self, tick: int):
        due = []
        while self._heap and self._heap[0][0] <= tick:
            due.append(heapq.heappop(self._heap))
        return due

    def __len__(self) -> int:
        return len(self._heap)


@dataclass(frozen=True)
class ActionOutcome:
    status: Status
    content: str = ""
    new_session: Optional[Session] = None
    grant_token: bool = False


def resolve_action(
    topology: Topology,
    vulns: VulnerabilityList,
    established: Set[Session],
    request: Request,
) -> ActionOutcome:
    """Fixed semantics of the four actions, applied at the delivered target."""
    node = topology.node_by_address(request.dst_ip)
    if node is None:
        # Callers route before delivery; this is a guard for direct use.
        return ActionOutcome(
            Status(Origin.NETWORK, StatusValue.FAILURE, Detail.HOST_UNREACHABLE)
        )
    if request.action == "ping":
        return ActionOutcome(Status(Origin.NODE, StatusValue.SUCCESS, Detail.OK))
    if request.action == "list_services":
        tokens = sorted(
            inst.name.name + ("/" + inst.version if inst.version else "")
            for inst in node.services
        )
        return ActionOutcome(
            Status(Origin.SERVICE, StatusValue.SUCCESS, Detail.OK),
            content=",".join(tokens),
        )
    if request.action == "exploit":
        inst = node.find_service(request.dst_service)
        if inst is None:
            return ActionOutcome(
                Status(Origin.SERVICE, StatusValue.FAILURE, Detail.NO_SUCH_SERVICE)
            )
        if not vulns.contains(inst.name, inst.version):
            return ActionOutcome(
                Status(Origin.SERVICE, StatusValue.FAILURE, Detail.NOT_VULNERABLE)
            )
        session = Session(
            Endpoint(request.src_ip, request.src_service),
            Endpoint(request.dst_ip, request.dst_service),
        )
        return ActionOutcome(
            Status(Origin.SERVICE, StatusValue.SUCCESS, Detail.OK),
            new_session=session,
            grant_token=True,
        )
    if request.action == "read_data":
        inst = node.find_service(request.dst_service)
        if inst is None:
            return ActionOutcome(
                Status(Origin.SERVICE, StatusValue.FAILURE, Detail.NO_SUCH_SERVICE)
            )
        session = request.session
        if (
            session is None
            or session.end != Endpoint(request.dst_ip, request.dst_service)
            or session not in established
        ):
            return ActionOutcome(
                Status(Origin.SERVICE, StatusValue.FAILURE, Detail.NO_SESSION)
            )
        return ActionOutcome(
            Status(Origin.SERVICE, StatusValue.SUCCESS, Detail.OK),
            content=inst.data_token or "",
        )
    return ActionOutcome(Status(Origin.SYSTEM, StatusValue.ERROR, Detail.UNKNOWN_ACTION))


class Engine:
    """Single-threaded deterministic event loop owning the topology state."""

    def __init__(self, topology: Topology, vulns: VulnerabilityList, seed: int = 0):
        self.topology = topology
        self.vulns = vulns
        self.seed = seed
        self.queue = EventQueue()
        self.established: Set[Session] = set()
        self.trace: List[Dict] = []
        self._next_id = 1
        self._addr_to_node: Dict[int, Node] = {}
        for node in topology.nodes:
            for addr in node.addresses:
                self._addr_to_node[addr.bits] = node
        self._subnets, self._subnet_routers = self._index_subnets()
        self._hops_cache: Dict[Tuple[str, str], Optional[int]] = {}

    # -- routing ------------------------------------------------------------

    def _index_subnets(self):
        subnets: Dict[str, Subnet] = {}
        subnet_routers: Dict[str, List[int]] = {}
        for ridx, router in enumerate(self.topology.routers):
            for subnet, _members in router.attached_subnets:
                subnets.setdefault(subnet.prefix, subnet)
                subnet_routers.setdefault(subnet.prefix, []).append(ridx)
        return subnets, subnet_routers

    def subnet_of(self, addr: NetAddress) -> Optional[str]:
        for prefix in sorted(self._subnets):
            if self._subnets[prefix].contains(addr):
                return prefix
        return None

    def _router_hops(self, src_prefix: str, dst_prefix: str) -> Optional[int]:
        """Number of routers a message traverses between the two subnets."""
        if src_prefix == dst_prefix:
            return 0
        key = (src_prefix, dst_prefix)
        if key in self._hops_cache:
            return self._hops_cache[key]
        # BFS over subnets; moving to an adjacent subnet passes one router.
        frontier = [src_prefix]
        dist = {src_prefix: 0}
        while frontier:
            nxt = []
            for prefix in frontier:
                for ridx in self._subnet_routers.get(prefix, []):
                    router = self.topology.routers[ridx]
                    for subnet, _ in router.attached_subnets:
                        if subnet.prefix not in dist:
                            dist[subnet.prefix] = dist[prefix] + 1
                            nxt.append(subnet.prefix)
            frontier = nxt
        result = dist.get(dst_prefix)
        self._hops_cache[key] = result
        return result

    # -- derived per-message values ------------------------------------------

    def _digest(self, tag: str, *parts) -> int:
        data = ":".join([str(self.seed), tag, *map(str, parts)]).encode()
        return int.from_bytes(hashlib.sha256(data).digest()[:16], "big")

    def _derive_metadata(self, request: Request, transit: int) -> Metadata:
        # Keyed on the exchange, not the message id: repeating a probe
        # observes the same statistics, so only id and ttl vary per repeat.
        h = self._digest("meta", request.dst_ip, request.dst_service.name, request.action)
        return Metadata(
            packet_count=1 + (h & 0x3F),
            byte_count=64 + ((h >> 8) & 0x1FFF),
            duration_ticks=transit,
        )

    def _derive_token(self, request: Request) -> int:
        return self._digest("auth", request.dst_ip, request.dst_service.name)

    # -- request construction and submission ----------------------------------

    def next_id(self) -> int:
        value = self._next_id
        self._next_id = (self._next_id + 1) & 0xFFFFFFFF
        return value

    def new_request(
        self,
        action: str,
        dst_ip: NetAddress,
        dst_service: ServiceRef = ServiceRef(),
        session: Optional[Session] = None,
        ttl: int = DEFAULT_TTL,
    ) -> Request:
        return Request(
            id=self.next_id(),
            kind=Kind.REQUEST,
            src_ip=self.topology.agent_address(),
            dst_ip=dst_ip,
            src_service=self.topology.agent_service(),
            dst_service=dst_service,
            ttl=ttl,
            metadata=Metadata(),
            auth_token=0,
            session=session,
            action=action,
        )

    def submit_request(self, request: Request) -> None:
        """Plan the request's whole journey; the route is static."""
        if request.kind is not Kind.REQUEST:
            raise EngineError("kind must be request")
        if request.ttl <= 0:
            raise EngineError("ttl must be positive")
        now = self.queue.current_tick
        self._log(now + 1, request)

        src_prefix = self.subnet_of(request.src_ip)
        dst_prefix = self.subnet_of(request.dst_ip)
        hops = (
            self._router_hops(src_prefix, dst_prefix)
            if src_prefix is not None and dst_prefix is not None
            else None
        )
        dst_known = request.dst_ip.bits in self._addr_to_node

        if dst_prefix is None or hops is None:
            # Nothing routes there; the network gives up after one tick.
            self._schedule_failure(request, now + 1, request.ttl, Detail.HOST_UNREACHABLE)
        elif not dst_known:
            # Travels to the destination subnet's router before failing.
            self._schedule_failure(
                request, now + max(1, hops), max(request.ttl - hops, 0), Detail.HOST_UNREACHABLE
            )
        elif request.ttl <= hops:
            # The ttl-th router decrements to zero with travel remaining.
            self._schedule_failure(request, now + request.ttl, 0, Detail.TTL_EXPIRED)
        else:
            transit = hops + 1
            self.queue.push(now + transit, "deliver", (request, request.ttl - hops, transit))

    def _schedule_failure(self, request: Request, tick: int, ttl: int, detail: Detail) -> None:
        value = StatusValue.FAILURE if detail is Detail.HOST_UNREACHABLE else StatusValue.ERROR
        response = self._build_response(
            request,
            ttl=ttl,
            transit=max(tick - self.queue.current_tick, 1),
            outcome=ActionOutcome(Status(Origin.NETWORK, value, detail)),
        )
        self.queue.push(tick, "respond", response)

    def _build_response(
        self, request: Request, ttl: int, transit: int, outcome: ActionOutcome
    ) -> Response:
        session = outcome.new_session if outcome.new_session is not None else request.session
        token = self._derive_token(request) if outcome.grant_token else request.auth_token
        return Response(
            id=request.id,
            kind=Kind.RESPONSE,
            src_ip=request.src_ip,
            dst_ip=request.dst_ip,
            src_service=request.src_service,
            dst_service=request.dst_service,
            ttl=ttl,
            metadata=self._derive_metadata(request, transit),
            auth_token=token,
            session=session,
            status=outcome.status,
            content=canonical_text(outcome.content),
        )

    # -- simulation loop -------------------------------------------------------

    def step(self) -> List[Response]:
        """Advance one tick; deliver due messages and surface finished responses."""
        self.queue.current_tick += 1
        tick = self.queue.current_tick
        responses: List[Response] = []
        for _tick, _seq, kind, payload in self.queue.pop_due(tick):
            if kind == "deliver":
                request, ttl_left, transit = payload
                outcome = resolve_action(self.topology, self.vulns, self.established, request)
                if outcome.new_session is not None:
                    self.established.add(outcome.new_session)
                response = self._build_response(request, ttl_left, transit, outcome)
                self.queue.push(tick + 1, "respond", response)
            else:
                self._log(tick, payload)
                responses.append(payload)
        return responses

    def run_until_response(self, request_id: int, max_ticks: int = 64) -> Optional[Response]:
        for _ in range(max_ticks):
            for response in self.step():
                if response.id == request_id:
                    return response
        return None

    # -- trace log ---------------------------------------------------------------

    def _log(self, tick: int, msg: Message) -> None:
        record = {"tick": tick, "direction": msg.kind.value}
        record.update(message_to_dict(msg))
        self.trace.append(record)

    def write_trace(self, path) -> None:
        with open(path, "w") as fh:
            for record in self.trace:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
