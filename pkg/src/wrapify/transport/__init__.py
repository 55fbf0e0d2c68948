"""Publish/subscribe and request/reply over pluggable carriers.

The functions here operate on the process-wide default :class:`Runtime`
unless one is passed explicitly.
"""

from __future__ import annotations

import threading
from typing import Any, Mapping

from wrapify.codec import MessageEnvelope
from wrapify.errors import WrongRole
from wrapify.transport.base import (
    DEFAULT_QUEUE_SIZE,
    Endpoint,
    Handler,
    Publisher,
    Replier,
    Requester,
    Role,
    Subscriber,
    Transport,
    TransportCapability,
    UnsupportedTransport,
)
from wrapify.transport.bridge import HOPS_KEY, Bridge, forward_envelope
from wrapify.transport.inproc import InprocBus, InprocTransport
from wrapify.transport.runtime import EXTENSION_SLOTS, Runtime, default_runtime, set_default_runtime
from wrapify.transport.tcp import Broker, TcpTransport

__all__ = [
    "Bridge",
    "HOPS_KEY",
    "forward_envelope",
    "Broker",
    "DEFAULT_QUEUE_SIZE",
    "EXTENSION_SLOTS",
    "Endpoint",
    "InprocBus",
    "InprocTransport",
    "Publisher",
    "Replier",
    "Requester",
    "Role",
    "Runtime",
    "Subscriber",
    "TcpTransport",
    "Transport",
    "TransportCapability",
    "UnsupportedTransport",
    "default_runtime",
    "list_transports",
    "open_publisher",
    "open_replier",
    "open_requester",
    "open_subscriber",
    "publish",
    "request",
    "serve",
    "set_default_runtime",
    "try_receive",
]


def _rt(runtime: Runtime | None) -> Runtime:
    return runtime or default_runtime()


def open_publisher(topic: str, carrier: str = "inproc", opts: Mapping[str, Any] | None = None, runtime: Runtime | None = None) -> Publisher:
    return _rt(runtime).open_publisher(topic, carrier, opts)


def open_subscriber(topic: str, carrier: str = "inproc", opts: Mapping[str, Any] | None = None, runtime: Runtime | None = None) -> Subscriber:
    return _rt(runtime).open_subscriber(topic, carrier, opts)


def open_replier(topic: str, carrier: str = "inproc", opts: Mapping[str, Any] | None = None, runtime: Runtime | None = None) -> Replier:
    return _rt(runtime).open_replier(topic, carrier, opts)


def open_requester(topic: str, carrier: str = "inproc", opts: Mapping[str, Any] | None = None, runtime: Runtime | None = None) -> Requester:
    return _rt(runtime).open_requester(topic, carrier, opts)


def _expect(h: Endpoint, cls: type) -> None:
    if not isinstance(h, cls):
        raise WrongRole(f"{h!r} is not a {cls.role.value}")


def publish(h: Publisher, env: MessageEnvelope) -> None:
    _expect(h, Publisher)
    h.publish(env)


def try_receive(h: Subscriber, should_wait: bool = False, timeout_ms: float | None = None) -> MessageEnvelope | None:
    _expect(h, Subscriber)
    return h.try_receive(should_wait, timeout_ms)


def request(h: Requester, env: MessageEnvelope, timeout_ms: float | None = None, should_wait: bool = True) -> MessageEnvelope:
    _expect(h, Requester)
    return h.request(env, timeout_ms, should_wait)


def serve(h: Replier, handler: Handler, stop_signal: threading.Event) -> None:
    _expect(h, Replier)
    h.serve(handler, stop_signal)


def list_transports(runtime: Runtime | None = None) -> list[TransportCapability]:
    return _rt(runtime).list_transports()
