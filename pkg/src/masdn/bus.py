"""Deterministic in-process message fabric.

One global FIFO carries every control-plane message. Each hop is really
encoded and decoded with the stack profile negotiated for the (src, dst)
pair, so the wire codecs are always on the path, not just in codec tests.
Under an at-least-once profile the fabric deduplicates deliveries by
(destination, sender, msg_id); a duplicate-injection knob exercises that
path on demand.

Destinations resolve in order: a live agent, an exact endpoint, a prefix
endpoint (e.g. "switch." for the data-plane bridge), and otherwise a topic
handed to the configured topic router (which names the broker agent that
owns the event). Unresolvable messages land in dead_letters rather than
raising: losing a destination mid-run is a legal system state.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable, Iterable

from .core import AgentId, Message
from .pps import DEFAULT_PROFILES, Reliability, StackProfile, decode, encode, negotiate
from .runtime import AgentHost

EndpointHandler = Callable[[Message], list[Message]]


@dataclass(frozen=True)
class DeadLetter:
    message: Message
    reason: str


class Bus:
    def __init__(
        self,
        host: AgentHost,
        default_profiles: tuple[StackProfile, ...] = DEFAULT_PROFILES,
    ) -> None:
        self.host = host
        self.default_profiles = default_profiles
        self.queue: deque[Message] = deque()
        self.endpoints: dict[str, EndpointHandler] = {}
        self.prefix_endpoints: dict[str, EndpointHandler] = {}
        self.topic_router: Callable[[Message], AgentId | None] | None = None
        self.dead_letters: list[DeadLetter] = []
        self.frames = 0
        self.duplicate_every = 0  # inject a duplicate frame every Nth hop
        self.duplicates_injected = 0
        self.duplicates_suppressed = 0
        self._negotiated: dict[tuple[str, str], StackProfile] = {}
        self._seen: set[tuple[str, str, int]] = set()

    # -- wiring -------------------------------------------------------------

    def bind_endpoint(self, name: str, handler: EndpointHandler) -> None:
        self.endpoints[name] = handler

    def bind_prefix(self, prefix: str, handler: EndpointHandler) -> None:
        self.prefix_endpoints[prefix] = handler

    # -- sending ------------------------------------------------------------

    def send(self, messages: Message | Iterable[Message]) -> None:
        if isinstance(messages, Message):
            self.queue.append(messages)
        else:
            self.queue.extend(messages)

    def run_to_quiescence(self, max_steps: int = 500_000) -> int:
        """Deliver until nothing is in flight; returns hops taken."""
        steps = 0
        while self.queue:
            steps += 1
            if steps > max_steps:
                raise RuntimeError(f"no quiescence after {max_steps} hops")
            msg = self.queue.popleft()
            decoded, profile = self._hop(msg)
            copies = 1
            if self.duplicate_every and self.frames % self.duplicate_every == 0:
                copies = 2
                self.duplicates_injected += 1
            for _ in range(copies):
                self._deliver(decoded, profile)
        return steps

    # -- internals ------------------------------------------------------------

    def _profiles_of(self, key: AgentId | str) -> tuple[StackProfile, ...]:
        if isinstance(key, AgentId):
            agent = self.host.agents.get(key)
            if agent is not None:
                return agent.spec.profiles
        return self.default_profiles

    def _profile_for(self, msg: Message) -> StackProfile:
        pair = (str(msg.src), str(msg.dst))
        hit = self._negotiated.get(pair)
        if hit is None:
            hit = negotiate(self._profiles_of(msg.src), self._profiles_of(msg.dst))
            self._negotiated[pair] = hit
        return hit

    def _hop(self, msg: Message) -> tuple[Message, StackProfile]:
        profile = self._profile_for(msg)
        self.frames += 1
        return decode(encode(msg, profile), profile), profile

    def _deliver(self, msg: Message, profile: StackProfile) -> None:
        if profile.reliability is Reliability.AT_LEAST_ONCE:
            key = (str(msg.dst), str(msg.src), msg.msg_id)
            if key in self._seen:
                self.duplicates_suppressed += 1
                return
            self._seen.add(key)
        dst = msg.dst
        if isinstance(dst, AgentId):
            if dst in self.host.agents:
                self.queue.extend(self.host.process_input(dst, msg))
            else:
                self.dead_letters.append(DeadLetter(msg, f"agent {dst} not live"))
            return
        handler = self.endpoints.get(dst)
        if handler is None:
            for prefix, h in self.prefix_endpoints.items():
                if dst.startswith(prefix):
                    handler = h
                    break
        if handler is not None:
            self.queue.extend(handler(msg))
            return
        if self.topic_router is not None:
            broker = self.topic_router(msg)
            if broker is not None and broker in self.host.agents:
                self.queue.extend(self.host.process_input(broker, msg))
                return
            self.dead_letters.append(DeadLetter(msg, f"no live broker for topic {dst!r}"))
            return
        self.dead_letters.append(DeadLetter(msg, f"unresolvable destination {dst!r}"))
