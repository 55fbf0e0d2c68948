"""Endpoint handles and the adapter interface every transport implements."""

from __future__ import annotations

import collections
import enum
import threading
import time
from dataclasses import dataclass
from typing import Any, Callable, Mapping

from wrapify.codec import MessageEnvelope, make_envelope
from wrapify.errors import ClosedEndpoint, RemoteError, TimedOut, TopicMismatch, UnsupportedCarrier
from wrapify.topic import check_topic

DEFAULT_QUEUE_SIZE = 5
SERVE_POLL_S = 0.02

Handler = Callable[[MessageEnvelope], MessageEnvelope]


class Role(enum.Enum):
    PUBLISHER = "publisher"
    SUBSCRIBER = "subscriber"
    REQUESTER = "requester"
    REPLIER = "replier"


@dataclass(frozen=True)
class TransportCapability:
    carrier: str
    supports_pubsub: bool
    supports_reqrep: bool
    available: bool


def deadline_after(timeout_ms: float | None) -> float | None:
    return None if timeout_ms is None else time.monotonic() + timeout_ms / 1000.0


def time_left(deadline: float | None) -> float | None:
    return None if deadline is None else max(0.0, deadline - time.monotonic())


class Endpoint:
    role: Role

    def __init__(self, topic: str, carrier: str) -> None:
        self.topic = check_topic(topic)
        self.carrier = carrier
        self._closed = False

    @property
    def closed(self) -> bool:
        return self._closed

    def _check_open(self) -> None:
        if self._closed:
            raise ClosedEndpoint(f"{self.role.value} on {self.topic} ({self.carrier}) is closed")

    def close(self) -> None:
        self._closed = True

    def __enter__(self):
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def __repr__(self) -> str:
        state = "closed" if self._closed else "open"
        return f"<{type(self).__name__} {self.topic} via {self.carrier} ({state})>"


class Publisher(Endpoint):
    role = Role.PUBLISHER

    def publish(self, env: MessageEnvelope) -> None:
        self._check_open()
        if env.topic != self.topic:
            raise TopicMismatch(f"envelope topic {env.topic!r} != publisher topic {self.topic!r}")
        self._send(env)

    def _send(self, env: MessageEnvelope) -> None:
        raise NotImplementedError


class Subscriber(Endpoint):
    """Bounded drop-oldest queue fed by the transport."""

    role = Role.SUBSCRIBER

    def __init__(self, topic: str, carrier: str, queue_size: int = DEFAULT_QUEUE_SIZE) -> None:
        super().__init__(topic, carrier)
        if queue_size < 1:
            raise ValueError(f"queue_size must be >= 1, got {queue_size}")
        self.queue_size = queue_size
        self._queue: collections.deque[MessageEnvelope] = collections.deque(maxlen=queue_size)
        self._cond = threading.Condition()
        self.delivered = 0  # envelopes handed to this subscriber, including dropped ones

    def _deliver(self, env: MessageEnvelope) -> None:
        with self._cond:
            self._queue.append(env)
            self.delivered += 1
            self._cond.notify()

    def try_receive(self, should_wait: bool = False, timeout_ms: float | None = None) -> MessageEnvelope | None:
        self._check_open()
        with self._cond:
            if not should_wait:
                return self._queue.popleft() if self._queue else None
            deadline = deadline_after(timeout_ms)
            while not self._queue:
                self._check_open()
                remaining = time_left(deadline)
                if remaining == 0.0:
                    raise TimedOut(f"nothing on {self.topic} within {timeout_ms} ms")
                self._cond.wait(remaining)
            return self._queue.popleft()

    def pending(self) -> int:
        with self._cond:
            return len(self._queue)

    def close(self) -> None:
        super().close()
        with self._cond:
            self._cond.notify_all()


class Requester(Endpoint):
    role = Role.REQUESTER

    def __init__(self, topic: str, carrier: str) -> None:
        super().__init__(topic, carrier)
        self._lock = threading.Lock()  # one outstanding request per handle

    def request(
        self, env: MessageEnvelope, timeout_ms: float | None = None, should_wait: bool = True
    ) -> MessageEnvelope:
        """Send ``env`` and block for the reply.

        ``should_wait=False`` fails fast with PeerUnreachable when no replier is
        listening; otherwise the call waits (up to ``timeout_ms``) for one.
        """
        self._check_open()
        if env.topic != self.topic:
            raise TopicMismatch(f"envelope topic {env.topic!r} != requester topic {self.topic!r}")
        with self._lock:
            reply = self._roundtrip(env, deadline_after(timeout_ms), should_wait)
        error = reply.meta.get("error") if isinstance(reply.meta, Mapping) else None
        if error is not None:
            raise RemoteError(str(error))
        return reply

    def _roundtrip(self, env: MessageEnvelope, deadline: float | None, should_wait: bool) -> MessageEnvelope:
        raise NotImplementedError


def error_reply(request: MessageEnvelope, exc: BaseException) -> MessageEnvelope:
    return make_envelope(request.topic, "native", {"error": f"{type(exc).__name__}: {exc}"}, [b"null"])


class Replier(Endpoint):
    role = Role.REPLIER

    def serve_one(self, handler: Handler, timeout_ms: float | None = None) -> bool:
        """Answer at most one request; returns False if none arrived in time."""
        self._check_open()
        return self._serve_one(handler, deadline_after(timeout_ms))

    def serve(self, handler: Handler, stop_signal: threading.Event) -> None:
        """Answer requests one at a time until ``stop_signal`` is set."""
        while not stop_signal.is_set():
            self._check_open()
            self._serve_one(handler, deadline_after(SERVE_POLL_S * 1000))

    @staticmethod
    def _handle(handler: Handler, request: MessageEnvelope) -> MessageEnvelope:
        try:
            return handler(request)
        except Exception as exc:
            return error_reply(request, exc)

    def _serve_one(self, handler: Handler, deadline: float | None) -> bool:
        raise NotImplementedError


class Transport:
    """Adapter interface: a carrier plugs in by implementing these opens.

    The seven endpoint operations (open x4, publish, try_receive, request,
    serve) are split between the adapter (opens) and the handle classes.
    """

    name = "abstract"
    supports_pubsub = True
    supports_reqrep = True

    def open_publisher(self, topic: str, opts: Mapping[str, Any]) -> Publisher:
        raise UnsupportedCarrier(f"{self.name} has no publish/subscribe support")

    def open_subscriber(self, topic: str, opts: Mapping[str, Any]) -> Subscriber:
        raise UnsupportedCarrier(f"{self.name} has no publish/subscribe support")

    def open_replier(self, topic: str, opts: Mapping[str, Any]) -> Replier:
        raise UnsupportedCarrier(f"{self.name} has no request/reply support")

    def open_requester(self, topic: str, opts: Mapping[str, Any]) -> Requester:
        raise UnsupportedCarrier(f"{self.name} has no request/reply support")

    def available(self) -> bool:
        return True

    def close(self) -> None:
        pass


class UnsupportedTransport(Transport):
    """A named slot with no implementation in this build (mcast, ros, yarp, ...)."""

    supports_pubsub = False
    supports_reqrep = False

    def __init__(self, name: str, reason: str = "not implemented in this build") -> None:
        self.name = name
        self.reason = reason

    def _refuse(self, topic: str, opts: Mapping[str, Any]):
        raise UnsupportedCarrier(f"carrier {self.name!r}: {self.reason}")

    open_publisher = open_subscriber = open_replier = open_requester = _refuse

    def available(self) -> bool:
        return False
