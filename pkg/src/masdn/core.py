"""Shared vocabulary for the whole framework.

Everything that moves between modules is defined here: the four-level
decision hierarchy, the catalog of function kinds, agent identity, the
message envelope, and service descriptors. All types are immutable values;
the only shared mutable state is the message-id counter, which is guarded
by a lock.
"""

from __future__ import annotations

import re
import threading
from dataclasses import dataclass
from enum import Enum, IntEnum


class MasdnError(Exception):
    """Base class for all framework errors."""


class PayloadTooLarge(MasdnError):
    """Message payload exceeds the active stack profile's max_payload."""


class DecisionLevel(IntEnum):
    """Decision-hierarchy levels, ascending authority."""

    PROTOCOL = 0
    FUNCTION = 1
    NODE = 2
    NETWORK = 3


class FunctionKind(Enum):
    """Catalog of atomic function kinds an agent can embody.

    Function-level kinds cover the decomposed controller functions,
    node-level kinds cover per-element management, and network-level kinds
    are system plumbing (orchestration, registry, event brokers).
    """

    # function level
    ROUTING = "routing"
    FORWARDING = "forwarding"
    QOS = "qos"
    MOBILITY = "mobility"
    MONITORING = "monitoring"
    SERVICE_APP = "service-app"
    TOPOLOGY = "topology"
    CLASSIFIER = "classifier"
    SESSION = "session"
    # node level
    SECURITY = "security"
    FAULT = "fault"
    AUTOCONF_DISCOVERY = "autoconf-discovery"
    RESILIENCE = "resilience"
    SWITCH_ADAPTER = "switch-adapter"
    # network level
    ORCHESTRATION = "orchestration"
    EVENT_DISTRIBUTION = "event-distribution"
    REGISTRY = "registry"
    KNOWLEDGE_PLANE = "knowledge-plane"


_KIND_LEVEL: dict[FunctionKind, DecisionLevel] = {
    FunctionKind.ROUTING: DecisionLevel.FUNCTION,
    FunctionKind.FORWARDING: DecisionLevel.FUNCTION,
    FunctionKind.QOS: DecisionLevel.FUNCTION,
    FunctionKind.MOBILITY: DecisionLevel.FUNCTION,
    FunctionKind.MONITORING: DecisionLevel.FUNCTION,
    FunctionKind.SERVICE_APP: DecisionLevel.FUNCTION,
    FunctionKind.TOPOLOGY: DecisionLevel.FUNCTION,
    FunctionKind.CLASSIFIER: DecisionLevel.FUNCTION,
    FunctionKind.SESSION: DecisionLevel.FUNCTION,
    FunctionKind.SECURITY: DecisionLevel.NODE,
    FunctionKind.FAULT: DecisionLevel.NODE,
    FunctionKind.AUTOCONF_DISCOVERY: DecisionLevel.NODE,
    FunctionKind.RESILIENCE: DecisionLevel.NODE,
    FunctionKind.SWITCH_ADAPTER: DecisionLevel.NODE,
    FunctionKind.ORCHESTRATION: DecisionLevel.NETWORK,
    FunctionKind.EVENT_DISTRIBUTION: DecisionLevel.NETWORK,
    FunctionKind.REGISTRY: DecisionLevel.NETWORK,
    FunctionKind.KNOWLEDGE_PLANE: DecisionLevel.NETWORK,
}


def level_of(kind: FunctionKind) -> DecisionLevel:
    """Canonical hierarchy level of a function kind. Total and pure."""
    return _KIND_LEVEL[kind]


_AGENT_ID_RE = re.compile(r"^([a-z-]+)#(\d+)$")


@dataclass(frozen=True)
class AgentId:
    """Identity of one agent instance: what it does plus an instance number."""

    kind: FunctionKind
    instance: int

    def __post_init__(self) -> None:
        if self.instance < 0:
            raise ValueError(f"instance must be non-negative, got {self.instance}")

    def __lt__(self, other: AgentId) -> bool:
        if not isinstance(other, AgentId):
            return NotImplemented
        return (self.kind.value, self.instance) < (other.kind.value, other.instance)

    @property
    def level(self) -> DecisionLevel:
        return level_of(self.kind)

    def __str__(self) -> str:
        return f"{self.kind.value}#{self.instance}"

    @classmethod
    def parse(cls, text: str) -> AgentId:
        m = _AGENT_ID_RE.match(text)
        if m is None:
            raise ValueError(f"not an agent id: {text!r}")
        return cls(FunctionKind(m.group(1)), int(m.group(2)))


class MessageKind(Enum):
    REQUEST = "request"
    RESPONSE = "response"
    EVENT = "event"
    POLICY = "policy"


# dst is either an AgentId or a dot-separated topic / endpoint name
Destination = AgentId | str


@dataclass(frozen=True)
class Message:
    """The sole inter-agent interaction unit.

    The payload is an opaque byte sequence produced by the active stack
    profile's codec; the envelope itself is what the wire codecs frame.
    """

    msg_id: int
    src: AgentId
    dst: AgentId | str
    kind: MessageKind
    payload: bytes
    sim_time: int
    correlation_id: int | None = None

    def __post_init__(self) -> None:
        if self.kind is MessageKind.RESPONSE and self.correlation_id is None:
            raise ValueError("Response messages must carry a correlation_id")


@dataclass(frozen=True)
class ServiceDescriptor:
    """What an agent offers and where to reach it."""

    agent: AgentId
    capabilities: frozenset[FunctionKind]
    endpoint: str
    lease_ttl: int

    def __post_init__(self) -> None:
        if self.lease_ttl <= 0:
            raise ValueError(f"lease_ttl must be > 0, got {self.lease_ttl}")


DEFAULT_MAX_PAYLOAD = 65536


class MessageFactory:
    """Allocates strictly increasing message ids.

    One factory per running system keeps run logs reproducible; the
    module-level default serves ad-hoc construction. The counter is the
    only shared mutable state in this module and is lock-protected.
    """

    def __init__(self, max_payload: int = DEFAULT_MAX_PAYLOAD):
        self._next = 1
        self._lock = threading.Lock()
        self.max_payload = max_payload

    def new_message(
        self,
        src: AgentId,
        dst: AgentId | str,
        kind: MessageKind,
        payload: bytes,
        now: int,
        correlation_id: int | None = None,
    ) -> Message:
        if len(payload) > self.max_payload:
            raise PayloadTooLarge(
                f"payload of {len(payload)} bytes exceeds max_payload {self.max_payload}"
            )
        with self._lock:
            msg_id = self._next
            self._next += 1
        return Message(
            msg_id=msg_id,
            src=src,
            dst=dst,
            kind=kind,
            payload=payload,
            sim_time=now,
            correlation_id=correlation_id,
        )


_default_factory = MessageFactory()


def new_message(
    src: AgentId,
    dst: AgentId | str,
    kind: MessageKind,
    payload: bytes,
    now: int,
    correlation_id: int | None = None,
    factory: MessageFactory | None = None,
) -> Message:
    """Construct a message with a fresh process-unique id."""
    f = factory if factory is not None else _default_factory
    return f.new_message(src, dst, kind, payload, now, correlation_id)
