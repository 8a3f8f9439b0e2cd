"""Machine-centric and service-history belief states, plus the 64-bit
state digest the tabular learner keys on.

The restructured world keeps, per probed target, its address, the services
seen there, and the live sessions, under an LRU machine budget. The service
history adds explicit memory: per (name, version), whether it is on the
vulnerability list, how many exploit attempts were made, and how long ago
the last one happened (bucketed into doubling ranges).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set, Tuple, Union

from ..engine import VulnerabilityList
from ..messages import (
    NetAddress,
    Origin,
    Request,
    Response,
    ServiceRef,
    Session,
    StatusValue,
)

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a64(data: bytes) -> int:
    """FNV-1a, 64-bit."""
    digest = FNV_OFFSET
    for byte in data:
        digest ^= byte
        digest = (digest * FNV_PRIME) & _MASK64
    return digest


def state_key(canonical: bytes) -> int:
    return fnv1a64(canonical)


# -- restructured world ------------------------------------------------------------


@dataclass
class MachineRecord:
    ip: NetAddress
    services: Set[ServiceRef] = field(default_factory=set)
    sessions: Set[Session] = field(default_factory=set)


class RestructuredWorld:
    """Ordered map target address -> MachineRecord, LRU-capped."""

    def __init__(self, capacity: int = 16):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.machines: Dict[NetAddress, MachineRecord] = {}
        self._stamp: Dict[NetAddress, int] = {}
        self._clock = 0
        self.evictions = 0

    def _touch(self, ip: NetAddress) -> MachineRecord:
        self._clock += 1
        record = self.machines.get(ip)
        if record is None:
            if len(self.machines) >= self.capacity:
                victim = min(self._stamp, key=lambda k: self._stamp[k])
                del self.machines[victim]
                del self._stamp[victim]
                self.evictions += 1
            record = MachineRecord(ip)
            self.machines[ip] = record
        self._stamp[ip] = self._clock
        return record

    def apply_response(self, response: Response) -> "RestructuredWorld":
        """Fold one response into the machine table.

        Only node- and service-origin responses are evidence that a machine
        answered; network/system failures create no record. A success that
        carries a session records the session; a sessionless service
        success with content is an enumeration and is parsed into service
        names. Repeated identical responses are no-ops (set semantics).
        """
        origin = response.status.origin
        if origin not in (Origin.NODE, Origin.SERVICE):
            return self
        record = self._touch(response.dst_ip)
        if origin is Origin.SERVICE and response.status.value is StatusValue.SUCCESS:
            if response.session is not None:
                record.sessions.add(response.session)
            elif response.content:
                for token in response.content.split(","):
                    name = token.split("/", 1)[0].strip()
                    if name:
                        record.services.add(ServiceRef(name))
        return self

    def canonical_bytes(self) -> bytes:
        lines = []
        for ip in sorted(self.machines, key=str):
            record = self.machines[ip]
            services = ",".join(sorted(s.name for s in record.services))
            sessions = ",".join(
                sorted(
                    f"{s.start.ip}:{s.start.service.name}>{s.end.ip}:{s.end.service.name}"
                    for s in record.sessions
                )
            )
            lines.append(f"{ip}|{services}|{sessions}")
        return ("restructured\n" + "\n".join(lines)).encode("utf-8")

    def key(self) -> int:
        return state_key(self.canonical_bytes())

    def dump(self) -> Dict:
        return {
            str(ip): {
                "services": sorted(s.name for s in rec.services),
                "sessions": [
                    {
                        "start": f"{s.start.ip}:{s.start.service.name}",
                        "end": f"{s.end.ip}:{s.end.service.name}",
                    }
                    for s in sorted(
                        rec.sessions, key=lambda s: (str(s.start.ip), str(s.end.ip))
                    )
                ],
            }
            for ip, rec in sorted(self.machines.items(), key=lambda kv: str(kv[0]))
        }


def apply_to_restructured(world: RestructuredWorld, response: Response) -> RestructuredWorld:
    return world.apply_response(response)


# -- explicit activity history -------------------------------------------------------

TIME_BUCKET_LIMIT = 8  # index 8 covers >= 128 ticks


def time_bucket(delta: int) -> int:
    """Doubling ranges {0},{1},{2-3},{4-7},...,{64-127},{>=128} -> 0..8."""
    if delta <= 0:
        return 0
    return min(TIME_BUCKET_LIMIT, delta.bit_length())


ATTEMPTS_BUCKET_MAX = 7  # attempts clamp here in the encoded state


@dataclass
class ServiceHistoryRecord:
    name: str
    version: str
    vulnerable: bool = False
    exploitation_attempts: int = 0
    last_attempt_tick: Optional[int] = None

    def time_since(self, now: int) -> Optional[int]:
        if self.last_attempt_tick is None:
            return None
        return max(now - self.last_attempt_tick, 0)

    def time_since_bucket(self, now: int) -> int:
        since = self.time_since(now)
        if since is None:
            return TIME_BUCKET_LIMIT
        return time_bucket(since)


class ServiceHistory:
    """Explicit memory over (service name, version) records."""

    def __init__(self, vulns: VulnerabilityList):
        self.vulns = vulns
        self.records: Dict[Tuple[str, str], ServiceHistoryRecord] = {}
        # Versions learned from enumeration responses, per target address;
        # exploit requests carry only the service name.
        self.target_versions: Dict[NetAddress, Dict[str, str]] = {}

    def _ensure(self, name: str, version: str) -> ServiceHistoryRecord:
        key = (name, version)
        record = self.records.get(key)
        if record is None:
            record = ServiceHistoryRecord(
                name, version, vulnerable=self.vulns.contains(ServiceRef(name), version)
            )
            self.records[key] = record
        return record

    def apply(self, message: Union[Request, Response], now: int) -> "ServiceHistory":
        if isinstance(message, Request):
            if message.action == "exploit":
                name = message.dst_service.name
                version = self.target_versions.get(message.dst_ip, {}).get(name, "")
                record = self._ensure(name, version)
                record.exploitation_attempts += 1
                record.last_attempt_tick = now
            return self
        if isinstance(message, Response):
            if (
                message.status.origin is Origin.SERVICE
                and message.status.value is StatusValue.SUCCESS
                and message.session is None
                and message.content
            ):
                versions = self.target_versions.setdefault(message.dst_ip, {})
                for token in message.content.split(","):
                    token = token.strip()
                    if not token:
                        continue
                    name, _, version = token.partition("/")
                    self._ensure(name, version)
                    versions[name] = version
        return self

    def canonical_bytes(self, now: int) -> bytes:
        lines = []
        for name, version in sorted(self.records):
            rec = self.records[(name, version)]
            attempts = min(rec.exploitation_attempts, ATTEMPTS_BUCKET_MAX)
            lines.append(
                f"{name}|{version}|{int(rec.vulnerable)}|{attempts}|{rec.time_since_bucket(now)}"
            )
        return ("history\n" + "\n".join(lines)).encode("utf-8")

    def key(self, now: int) -> int:
        return state_key(self.canonical_bytes(now))

    def dump(self, now: int) -> List[Dict]:
        return [
            {
                "name": rec.name,
                "version": rec.version,
                "vulnerable": rec.vulnerable,
                "exploitation_attempts": rec.exploitation_attempts,
                "time_since_last_exploitation": rec.time_since(now),
                "time_bucket": rec.time_since_bucket(now),
            }
            for (_, _), rec in sorted(self.records.items())
        ]


def apply_to_history(
    history: ServiceHistory, message: Union[Request, Response], now: int
) -> ServiceHistory:
    return history.apply(message, now)
