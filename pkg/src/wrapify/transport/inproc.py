"""In-process bus: thread-safe pub/sub fan-out and direct request/reply."""

from __future__ import annotations

import queue
import threading
import time
from typing import Any, Mapping

from wrapify.codec import MessageEnvelope
from wrapify.errors import AddressInUse, ClosedEndpoint, PeerUnreachable, TimedOut
from wrapify.transport.base import (
    DEFAULT_QUEUE_SIZE,
    Handler,
    Publisher,
    Replier,
    Requester,
    Subscriber,
    Transport,
    time_left,
)

_PEER_POLL_S = 0.01


class InprocBus:
    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._subscribers: dict[str, list[InprocSubscriber]] = {}
        self._repliers: dict[str, InprocReplier] = {}

    def attach(self, sub: InprocSubscriber) -> None:
        with self._lock:
            self._subscribers.setdefault(sub.topic, []).append(sub)

    def detach(self, sub: InprocSubscriber) -> None:
        with self._lock:
            subs = self._subscribers.get(sub.topic, [])
            if sub in subs:
                subs.remove(sub)

    def fan_out(self, env: MessageEnvelope) -> int:
        with self._lock:
            targets = list(self._subscribers.get(env.topic, ()))
        for sub in targets:
            sub._deliver(env)
        return len(targets)

    def bind(self, rep: InprocReplier) -> None:
        with self._lock:
            if rep.topic in self._repliers:
                raise AddressInUse(f"an inproc replier already serves {rep.topic}")
            self._repliers[rep.topic] = rep

    def unbind(self, rep: InprocReplier) -> None:
        with self._lock:
            if self._repliers.get(rep.topic) is rep:
                del self._repliers[rep.topic]

    def replier_for(self, topic: str) -> InprocReplier | None:
        with self._lock:
            return self._repliers.get(topic)


_buses: dict[str, InprocBus] = {}
_buses_lock = threading.Lock()


def default_bus(name: str = "inproc") -> InprocBus:
    """The process-wide bus for carrier ``name``; distinct names never share traffic."""
    with _buses_lock:
        return _buses.setdefault(name, InprocBus())


class InprocPublisher(Publisher):
    def __init__(self, topic: str, bus: InprocBus, carrier: str = "inproc") -> None:
        super().__init__(topic, carrier)
        self._bus = bus

    def _send(self, env: MessageEnvelope) -> None:
        self._bus.fan_out(env)


class InprocSubscriber(Subscriber):
    def __init__(self, topic: str, bus: InprocBus, queue_size: int, carrier: str = "inproc") -> None:
        super().__init__(topic, carrier, queue_size)
        self._bus = bus
        bus.attach(self)

    def close(self) -> None:
        if not self.closed:
            self._bus.detach(self)
        super().close()


class InprocReplier(Replier):
    def __init__(self, topic: str, bus: InprocBus, carrier: str = "inproc") -> None:
        super().__init__(topic, carrier)
        self._bus = bus
        self._inbox: queue.Queue[tuple[MessageEnvelope, queue.Queue]] = queue.Queue()
        bus.bind(self)

    def submit(self, env: MessageEnvelope) -> queue.Queue:
        if self.closed:
            raise PeerUnreachable(f"inproc replier on {self.topic} is closed")
        slot: queue.Queue = queue.Queue(maxsize=1)
        self._inbox.put((env, slot))
        return slot

    def _serve_one(self, handler: Handler, deadline: float | None) -> bool:
        try:
            env, slot = self._inbox.get(timeout=time_left(deadline))
        except queue.Empty:
            return False
        slot.put(self._handle(handler, env))
        return True

    def close(self) -> None:
        if not self.closed:
            self._bus.unbind(self)
        super().close()
        # fail anything still waiting rather than leave requesters hanging
        while True:
            try:
                _, slot = self._inbox.get_nowait()
            except queue.Empty:
                break
            slot.put(ClosedEndpoint("replier closed before answering"))


class InprocRequester(Requester):
    def __init__(self, topic: str, bus: InprocBus, carrier: str = "inproc") -> None:
        super().__init__(topic, carrier)
        self._bus = bus

    def _roundtrip(self, env: MessageEnvelope, deadline: float | None, should_wait: bool) -> MessageEnvelope:
        rep = self._bus.replier_for(self.topic)
        while rep is None:
            if not should_wait:
                raise PeerUnreachable(f"no inproc replier serves {self.topic}")
            if time_left(deadline) == 0.0:
                raise TimedOut(f"no inproc replier appeared on {self.topic}")
            time.sleep(_PEER_POLL_S)
            rep = self._bus.replier_for(self.topic)
        slot = rep.submit(env)
        try:
            reply = slot.get(timeout=time_left(deadline))
        except queue.Empty:
            raise TimedOut(f"no reply on {self.topic} in time") from None
        if isinstance(reply, Exception):
            raise PeerUnreachable(str(reply))
        return reply


class InprocTransport(Transport):
    name = "inproc"

    def __init__(self, bus: InprocBus | None = None, name: str = "inproc") -> None:
        self.bus = bus or default_bus(name)
        self.name = name

    def open_publisher(self, topic: str, opts: Mapping[str, Any]) -> InprocPublisher:
        return InprocPublisher(topic, self.bus, self.name)

    def open_subscriber(self, topic: str, opts: Mapping[str, Any]) -> InprocSubscriber:
        return InprocSubscriber(topic, self.bus, int(opts.get("queue_size", DEFAULT_QUEUE_SIZE)), self.name)

    def open_replier(self, topic: str, opts: Mapping[str, Any]) -> InprocReplier:
        return InprocReplier(topic, self.bus, self.name)

    def open_requester(self, topic: str, opts: Mapping[str, Any]) -> InprocRequester:
        return InprocRequester(topic, self.bus, self.name)
