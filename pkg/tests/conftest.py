"""Shared fixtures and seeded generators for the test suite."""

import random
from importlib import resources
from pathlib import Path

import pytest

from percept_lab.messages import (
    Detail,
    Endpoint,
    Kind,
    Metadata,
    NetAddress,
    Origin,
    Response,
    ServiceRef,
    Session,
    Status,
    StatusValue,
    Subnet,
    canonicalize,
)
from percept_lab.representations import AgentProfile
from percept_lab.scenario import load_scenario


def scenario_path(name: str) -> Path:
    return Path(str(resources.files("percept_lab") / "scenarios" / f"{name}.json"))


@pytest.fixture
def minimal2():
    return load_scenario(scenario_path("minimal2"))


@pytest.fixture
def reference4():
    return load_scenario(scenario_path("reference4"))


WORDS = ["http", "ssh", "vault", "mysql", "files", "dns", "smtp", "ftp", "ldap", "ntp"]


def random_address(rng: random.Random) -> NetAddress:
    if rng.random() < 0.9:
        return NetAddress.parse(
            f"{rng.randrange(1, 224)}.{rng.randrange(256)}"
            f".{rng.randrange(256)}.{rng.randrange(1, 255)}"
        )
    return NetAddress(rng.getrandbits(128))


def random_service(rng: random.Random) -> ServiceRef:
    return ServiceRef.of(rng.choice(WORDS) + str(rng.randrange(100)))


def random_status(rng: random.Random) -> Status:
    return Status(
        rng.choice(list(Origin)),
        rng.choice(list(StatusValue)),
        rng.choice(list(Detail)),
    )


def random_response(rng: random.Random) -> Response:
    """A canonical response with every field drawn at random."""
    src = random_address(rng)
    session = None
    if rng.random() < 0.5:
        start = Endpoint(src, random_service(rng))
        end = Endpoint(random_address(rng), random_service(rng))
        while end == start:
            end = Endpoint(random_address(rng), random_service(rng))
        session = Session(start, end)
    response = Response(
        id=rng.getrandbits(32),
        kind=Kind.RESPONSE,
        src_ip=src,
        dst_ip=random_address(rng),
        src_service=random_service(rng),
        dst_service=random_service(rng),
        ttl=rng.randrange(256),
        metadata=Metadata(
            rng.randrange(1 << 32), rng.randrange(1 << 32), rng.randrange(1 << 32)
        ),
        auth_token=rng.getrandbits(128),
        session=session,
        status=random_status(rng),
        content="".join(rng.choice("abcdefghij .,-") for _ in range(rng.randrange(24))),
    )
    return canonicalize(response)


TEST_PROFILE = AgentProfile(
    own_addresses=(NetAddress.parse("10.0.0.1"),),
    own_service=ServiceRef("agent"),
    operating_subnets=(
        Subnet("10.0.0.0/24", max_hosts=200),
        Subnet("10.0.1.0/24", max_hosts=200),
    ),
)


def random_in_profile_response(rng: random.Random, profile: AgentProfile = TEST_PROFILE) -> Response:
    """A canonical response whose static fields match the profile and whose
    destination lies inside one of the operating subnets."""
    agent = Endpoint(profile.own_addresses[0], profile.own_service)
    subnet = rng.choice(profile.operating_subnets)
    dst_ip = subnet.address_at(rng.randrange(1, subnet.max_hosts + 1))
    session = None
    if rng.random() < 0.5:
        end = Endpoint(dst_ip, random_service(rng))
        session = Session(agent, end)
    response = Response(
        id=rng.getrandbits(32),
        kind=Kind.RESPONSE,
        src_ip=agent.ip,
        dst_ip=dst_ip,
        src_service=agent.service,
        dst_service=random_service(rng),
        ttl=rng.randrange(256),
        metadata=Metadata(
            rng.randrange(1 << 32), rng.randrange(1 << 32), rng.randrange(1 << 32)
        ),
        auth_token=rng.getrandbits(128),
        session=session,
        status=random_status(rng),
        content="".join(rng.choice("abcdefghij") for _ in range(rng.randrange(24))),
    )
    return canonicalize(response)
