from __future__ import annotations

import threading
import weakref
from typing import Any, Mapping

from wrapify.errors import UnsupportedCarrier
from wrapify.transport.base import (
    Endpoint,
    Publisher,
    Replier,
    Requester,
    Subscriber,
    Transport,
    TransportCapability,
    UnsupportedTransport,
)
from wrapify.transport.inproc import InprocBus, InprocTransport
from wrapify.transport.tcp import TcpTransport

# middleware the original bindings targeted; present as named slots only
EXTENSION_SLOTS = ("ros", "ros2", "yarp", "zeromq")


class Runtime:
    """Carrier name -> transport adapter, plus the handles opened through it.

    ``view(disabled=...)`` returns a runtime sharing the same adapters but
    reporting some carriers as unavailable, which is how a process that
    "lacks" a middleware is modelled.
    """

    def __init__(
        self,
        broker: str | None = None,
        registry: str | None = None,
        direct: bool = False,
        bus: InprocBus | None = None,
    ) -> None:
        self._transports: dict[str, Transport] = {
            "inproc": InprocTransport(bus),
            "tcp": TcpTransport(broker, registry, direct),
            "mcast": UnsupportedTransport("mcast", "multicast is not supported"),
        }
        for slot in EXTENSION_SLOTS:
            self._transports[slot] = UnsupportedTransport(slot, "no adapter installed for this middleware")
        self._disabled: frozenset[str] = frozenset()
        self._handles: weakref.WeakSet[Endpoint] = weakref.WeakSet()
        self._lock = threading.Lock()
        self._closed = False

    # -- configuration --------------------------------------------------------

    def add_transport(self, name: str, transport: Transport) -> None:
        """Install an adapter under ``name`` (replacing an extension slot is allowed)."""
        self._transports[name] = transport

    def view(self, disabled: set[str] | frozenset[str] = frozenset()) -> Runtime:
        clone = object.__new__(Runtime)
        clone._transports = self._transports
        clone._disabled = self._disabled | frozenset(disabled)
        clone._handles = weakref.WeakSet()
        clone._lock = threading.Lock()
        clone._closed = False
        return clone

    def disable(self, *names: str) -> None:
        self._disabled = self._disabled | frozenset(names)

    def enable(self, *names: str) -> None:
        self._disabled = self._disabled - frozenset(names)

    @property
    def names(self) -> list[str]:
        return list(self._transports)

    def transport(self, name: str) -> Transport:
        if self._closed:
            raise UnsupportedCarrier("runtime is closed")
        if name in self._disabled:
            raise UnsupportedCarrier(f"carrier {name!r} is disabled in this process")
        try:
            return self._transports[name]
        except KeyError:
            raise UnsupportedCarrier(f"unknown carrier {name!r}") from None

    def is_enabled(self, name: str) -> bool:
        """Cheap availability check: known, implemented, not disabled. No network probe."""
        if self._closed or name in self._disabled or name not in self._transports:
            return False
        return not isinstance(self._transports[name], UnsupportedTransport)

    def list_transports(self) -> list[TransportCapability]:
        caps = []
        for name, t in self._transports.items():
            available = not self._closed and name not in self._disabled and t.available()
            caps.append(TransportCapability(name, t.supports_pubsub, t.supports_reqrep, available))
        return caps

    # -- endpoints ------------------------------------------------------------

    def _track(self, handle: Endpoint) -> Endpoint:
        with self._lock:
            self._handles.add(handle)
        return handle

    def open_publisher(self, topic: str, carrier: str = "inproc", opts: Mapping[str, Any] | None = None) -> Publisher:
        return self._track(self.transport(carrier).open_publisher(topic, opts or {}))

    def open_subscriber(self, topic: str, carrier: str = "inproc", opts: Mapping[str, Any] | None = None) -> Subscriber:
        return self._track(self.transport(carrier).open_subscriber(topic, opts or {}))

    def open_replier(self, topic: str, carrier: str = "inproc", opts: Mapping[str, Any] | None = None) -> Replier:
        return self._track(self.transport(carrier).open_replier(topic, opts or {}))

    def open_requester(self, topic: str, carrier: str = "inproc", opts: Mapping[str, Any] | None = None) -> Requester:
        return self._track(self.transport(carrier).open_requester(topic, opts or {}))

    def close(self) -> None:
        """Close every handle opened here; afterwards nothing is available."""
        self._closed = True
        with self._lock:
            handles = list(self._handles)
        for h in handles:
            h.close()

    @property
    def closed(self) -> bool:
        return self._closed


_default: Runtime | None = None
_default_lock = threading.Lock()


def default_runtime() -> Runtime:
    global _default
    with _default_lock:
        if _default is None or _default.closed:
            _default = Runtime()
        return _default


def set_default_runtime(runtime: Runtime | None) -> None:
    global _default
    with _default_lock:
        _default = runtime
