"""Republish everything from one (topic, carrier) onto another."""

from __future__ import annotations

import logging
import threading

from wrapify.codec import MessageEnvelope
from wrapify.errors import ClosedEndpoint, TransportError
from wrapify.transport.runtime import Runtime

log = logging.getLogger(__name__)

HOPS_KEY = "fwd_hops"
BRIDGE_QUEUE = 1000


def forward_envelope(env: MessageEnvelope, topic: str) -> MessageEnvelope:
    """Retarget ``env`` at ``topic`` and bump its hop count; payload parts are untouched."""
    hops = env.meta.get(HOPS_KEY, 0)
    return env.with_topic(topic).with_meta(**{HOPS_KEY: int(hops) + 1})


class Bridge:
    def __init__(
        self,
        runtime: Runtime,
        source: tuple[str, str],
        target: tuple[str, str],
        opts: dict | None = None,
    ) -> None:
        opts = dict(opts or {})
        opts.setdefault("queue_size", BRIDGE_QUEUE)
        (self.src_topic, self.src_carrier), (self.dst_topic, self.dst_carrier) = source, target
        self._sub = runtime.open_subscriber(self.src_topic, self.src_carrier, opts)
        try:
            self._pub = runtime.open_publisher(self.dst_topic, self.dst_carrier, opts)
        except TransportError:
            self._sub.close()
            raise
        self.forwarded = 0
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    def pump(self, timeout_ms: float = 50) -> int:
        """Forward whatever is queued, waiting up to ``timeout_ms`` for the first envelope."""
        n = 0
        try:
            env = self._sub.try_receive(True, timeout_ms)
        except TimeoutError:
            return 0
        while env is not None:
            self._pub.publish(forward_envelope(env, self.dst_topic))
            n += 1
            env = self._sub.try_receive(False)
        self.forwarded += n
        return n

    def run(self, stop_signal: threading.Event | None = None) -> None:
        stop_signal = stop_signal or self._stop
        try:
            while not stop_signal.is_set() and not self._stop.is_set():
                self.pump()
        except ClosedEndpoint:
            pass

    def start(self) -> Bridge:
        self._thread = threading.Thread(
            target=self.run, name=f"bridge{self.src_topic}->{self.dst_topic}", daemon=True
        )
        self._thread.start()
        return self

    def close(self) -> None:
        self._stop.set()
        if self._thread is not None and self._thread is not threading.current_thread():
            self._thread.join(timeout=1.0)
        self._sub.close()
        self._pub.close()

    def __enter__(self) -> Bridge:
        return self

    def __exit__(self, *exc) -> None:
        self.close()
