"""TCP carrier: broker-mediated publish/subscribe and direct request/reply.

Publishers connect to the broker's publisher port and send ``["PUB", topic]``
followed by message frames; subscribers connect to its subscriber port and
send ``["SUB", topic]``, after which the broker answers ``["ACK", topic]`` and
streams matching messages. Repliers bind their own socket and advertise it in
a JSON name-registry file ``{topic: "host:port"}``.
"""

from __future__ import annotations

import collections
import contextlib
import fcntl
import json
import logging
import os
import selectors
import socket
import threading
import time
from pathlib import Path
from typing import Any, Mapping

from wrapify.codec import MessageEnvelope
from wrapify.errors import AddressInUse, BrokerUnreachable, ClosedEndpoint, MalformedEnvelope, PeerUnreachable, TimedOut
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
from wrapify.transport.framing import FrameError, encode_frame, read_frame, write_frame

log = logging.getLogger(__name__)

DEFAULT_BROKER = "127.0.0.1:5555"
DEFAULT_REGISTRY = ".bus_registry.json"
CONNECT_TIMEOUT_S = 2.0
BROKER_QUEUE = 10_000  # per-subscriber backlog inside the broker, drop-oldest
_ACCEPT_POLL_S = 0.2
_PEER_POLL_S = 0.05


def parse_address(addr: str) -> tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep or not host or not port.isdigit():
        raise ValueError(f"expected host:port, got {addr!r}")
    return host, int(port)


def broker_address(opts: Mapping[str, Any] | None = None, default: str | None = None) -> str:
    """Subscriber-side broker address; the publisher side is the next port up."""
    opts = opts or {}
    return opts.get("broker") or default or os.environ.get("WRAPIFY_BROKER") or DEFAULT_BROKER


def broker_ports(addr: str) -> tuple[tuple[str, int], tuple[str, int]]:
    host, port = parse_address(addr)
    return (host, port), (host, port + 1)


def registry_path(opts: Mapping[str, Any] | None = None, default: str | os.PathLike | None = None) -> Path:
    opts = opts or {}
    return Path(opts.get("registry") or default or os.environ.get("WRAPIFY_REGISTRY") or DEFAULT_REGISTRY)


def _tune(sock: socket.socket) -> socket.socket:
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return sock


def _shutdown(sock: socket.socket) -> None:
    with contextlib.suppress(OSError):
        sock.shutdown(socket.SHUT_RDWR)
    with contextlib.suppress(OSError):
        sock.close()


def _listen(addr: tuple[str, int]) -> socket.socket:
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        sock.bind(addr)
    except OSError as exc:
        sock.close()
        raise AddressInUse(f"cannot bind {addr[0]}:{addr[1]}: {exc.strerror}") from exc
    sock.listen(64)
    return sock


# -- name registry ------------------------------------------------------------


@contextlib.contextmanager
def _locked(path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(f"{path}.lock", "a") as lock:
        fcntl.flock(lock, fcntl.LOCK_EX)
        try:
            yield
        finally:
            fcntl.flock(lock, fcntl.LOCK_UN)


def _read_registry(path: Path) -> dict[str, str]:
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        return {}
    except json.JSONDecodeError:
        log.warning("ignoring unreadable name registry %s", path)
        return {}
    return data if isinstance(data, dict) else {}


def _write_registry(path: Path, data: dict[str, str]) -> None:
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    tmp.write_text(json.dumps(data, indent=1, sort_keys=True))
    os.replace(tmp, path)


def registry_put(path: Path, topic: str, addr: str) -> None:
    with _locked(path):
        data = _read_registry(path)
        data[topic] = addr
        _write_registry(path, data)


def registry_remove(path: Path, topic: str, addr: str) -> None:
    with _locked(path):
        data = _read_registry(path)
        if data.get(topic) == addr:
            del data[topic]
            _write_registry(path, data)


def registry_lookup(path: Path, topic: str) -> str | None:
    return _read_registry(path).get(topic)


# -- broker -------------------------------------------------------------------


class _SubscriberLink:
    """Broker-side outbound queue and writer thread for one subscriber."""

    def __init__(self, sock: socket.socket, topic: str) -> None:
        self.sock = sock
        self.topic = topic
        self._queue: collections.deque[bytes] = collections.deque(maxlen=BROKER_QUEUE)
        self._cond = threading.Condition()
        self._alive = True
        self._thread = threading.Thread(target=self._write_loop, name=f"broker-sub{topic}", daemon=True)

    def start(self) -> None:
        self._thread.start()

    def push(self, frame: bytes) -> None:
        with self._cond:
            self._queue.append(frame)
            self._cond.notify()

    def stop(self) -> None:
        with self._cond:
            self._alive = False
            self._cond.notify()
        _shutdown(self.sock)

    def _write_loop(self) -> None:
        while True:
            with self._cond:
                while self._alive and not self._queue:
                    self._cond.wait()
                if not self._alive:
                    return
                frame = self._queue.popleft()
            try:
                self.sock.sendall(frame)
            except OSError:
                self.stop()
                return


class Broker:
    """Fan-in/fan-out relay for TCP publish/subscribe.

    Subscribers connect to ``sub_port``; publishers to ``pub_port`` (default
    ``sub_port + 1``). Port 0 picks free ports; read them back from
    :attr:`address` after :meth:`start`.
    """

    def __init__(self, host: str = "127.0.0.1", sub_port: int = 5555, pub_port: int | None = None) -> None:
        self.host = host
        self._sub_req = sub_port
        self._pub_req = pub_port if pub_port is not None else (sub_port + 1 if sub_port else 0)
        self._links: dict[str, list[_SubscriberLink]] = {}
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self._conns: set[socket.socket] = set()
        self._sub_sock: socket.socket | None = None
        self._pub_sock: socket.socket | None = None
        self.messages_routed = 0

    @property
    def sub_port(self) -> int:
        return self._sub_sock.getsockname()[1]

    @property
    def pub_port(self) -> int:
        return self._pub_sock.getsockname()[1]

    @property
    def address(self) -> str:
        """Address clients pass as ``broker``; only valid when pub_port == sub_port + 1."""
        return f"{self.host}:{self.sub_port}"

    def start(self) -> Broker:
        if self._sub_req == 0 and self._pub_req == 0:
            self._bind_adjacent()
        else:
            self._sub_sock = _listen((self.host, self._sub_req))
            try:
                self._pub_sock = _listen((self.host, self._pub_req))
            except AddressInUse:
                self._sub_sock.close()
                raise
        for sock, role in ((self._sub_sock, "SUB"), (self._pub_sock, "PUB")):
            sock.settimeout(_ACCEPT_POLL_S)
            t = threading.Thread(target=self._accept_loop, args=(sock, role), name=f"broker-accept-{role}", daemon=True)
            t.start()
            self._threads.append(t)
        log.info("broker up: subscribers on %s:%d, publishers on %s:%d", self.host, self.sub_port, self.host, self.pub_port)
        return self

    def _bind_adjacent(self) -> None:
        # clients derive the publisher port as sub_port + 1, so ephemeral ports must be adjacent
        for _ in range(50):
            sub = _listen((self.host, 0))
            try:
                pub = _listen((self.host, sub.getsockname()[1] + 1))
            except AddressInUse:
                sub.close()
                continue
            self._sub_sock, self._pub_sock = sub, pub
            return
        raise AddressInUse("could not find two adjacent free ports")

    def stop(self) -> None:
        self._stop.set()
        for sock in (self._sub_sock, self._pub_sock):
            if sock is not None:
                _shutdown(sock)
        with self._lock:
            links = [link for group in self._links.values() for link in group]
            conns = list(self._conns)
            self._links.clear()
        for link in links:
            link.stop()
        for conn in conns:
            _shutdown(conn)
        for t in self._threads:
            t.join(timeout=1.0)

    def serve_forever(self, stop_signal: threading.Event | None = None) -> None:
        stop_signal = stop_signal or threading.Event()
        try:
            while not stop_signal.wait(0.1) and not self._stop.is_set():
                pass
        finally:
            self.stop()

    def __enter__(self) -> Broker:
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    def _accept_loop(self, listener: socket.socket, role: str) -> None:
        while not self._stop.is_set():
            try:
                conn, _ = listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            conn.settimeout(None)
            _tune(conn)
            with self._lock:
                self._conns.add(conn)
            target = self._serve_subscriber if role == "SUB" else self._serve_publisher
            threading.Thread(target=target, args=(conn,), daemon=True).start()

    def _handshake(self, conn: socket.socket, expect: str) -> str | None:
        try:
            parts = read_frame(conn)
        except (EOFError, OSError, FrameError):
            return None
        if len(parts) != 2 or parts[0] != expect.encode():
            log.warning("dropping connection with bad handshake %r", parts[:1])
            return None
        return parts[1].decode("utf-8", "replace")

    def _forget(self, conn: socket.socket) -> None:
        with self._lock:
            self._conns.discard(conn)
        _shutdown(conn)

    def _serve_subscriber(self, conn: socket.socket) -> None:
        topic = self._handshake(conn, "SUB")
        if topic is None:
            self._forget(conn)
            return
        link = _SubscriberLink(conn, topic)
        # queued ahead of any message, so the client sees ACK first
        link.push(encode_frame([b"ACK", topic.encode()]))
        with self._lock:
            self._links.setdefault(topic, []).append(link)
        link.start()
        try:
            # subscribers never send after the handshake; wait for EOF
            while conn.recv(4096):
                pass
        except OSError:
            pass
        with self._lock:
            group = self._links.get(topic, [])
            if link in group:
                group.remove(link)
            self._conns.discard(conn)
        link.stop()

    def _serve_publisher(self, conn: socket.socket) -> None:
        if self._handshake(conn, "PUB") is None:
            self._forget(conn)
            return
        while not self._stop.is_set():
            try:
                parts = read_frame(conn)
            except (EOFError, OSError, FrameError):
                break
            if not parts:
                continue
            topic = parts[0].decode("utf-8", "replace")
            frame = encode_frame(parts)
            with self._lock:
                targets = list(self._links.get(topic, ()))
                self.messages_routed += 1
            for link in targets:
                link.push(frame)
        self._forget(conn)


def broker_reachable(addr: str, timeout: float = 0.2) -> bool:
    try:
        with socket.create_connection(broker_ports(addr)[0], timeout=timeout):
            return True
    except OSError:
        return False


# -- client endpoints ---------------------------------------------------------


def _connect(addr: tuple[str, int], timeout: float) -> socket.socket:
    sock = socket.create_connection(addr, timeout=timeout)
    return _tune(sock)


class TcpPublisher(Publisher):
    def __init__(self, topic: str, broker: str, carrier: str = "tcp") -> None:
        super().__init__(topic, carrier)
        _, pub_addr = broker_ports(broker)
        try:
            self._sock = _connect(pub_addr, CONNECT_TIMEOUT_S)
            self._sock.settimeout(None)
            write_frame(self._sock, [b"PUB", topic.encode()])
        except OSError as exc:
            raise BrokerUnreachable(f"no broker at {pub_addr[0]}:{pub_addr[1]}: {exc}") from exc
        self._lock = threading.Lock()

    def _send(self, env: MessageEnvelope) -> None:
        try:
            with self._lock:
                write_frame(self._sock, env.parts)
        except OSError as exc:
            raise BrokerUnreachable(f"lost broker connection: {exc}") from exc

    def close(self) -> None:
        if not self.closed:
            _shutdown(self._sock)
        super().close()


class TcpSubscriber(Subscriber):
    def __init__(self, topic: str, broker: str, queue_size: int, carrier: str = "tcp") -> None:
        super().__init__(topic, carrier, queue_size)
        sub_addr, _ = broker_ports(broker)
        try:
            self._sock = _connect(sub_addr, CONNECT_TIMEOUT_S)
            write_frame(self._sock, [b"SUB", topic.encode()])
            ack = read_frame(self._sock)
        except (OSError, EOFError, FrameError) as exc:
            raise BrokerUnreachable(f"no broker at {sub_addr[0]}:{sub_addr[1]}: {exc}") from exc
        if ack != [b"ACK", topic.encode()]:
            _shutdown(self._sock)
            raise BrokerUnreachable(f"unexpected broker handshake reply {ack!r}")
        self._sock.settimeout(None)
        self.connected = True
        self._reader = threading.Thread(target=self._read_loop, name=f"tcp-sub{topic}", daemon=True)
        self._reader.start()

    def _read_loop(self) -> None:
        while True:
            try:
                parts = read_frame(self._sock)
                env = MessageEnvelope.from_parts(parts)
            except MalformedEnvelope as exc:
                log.warning("dropping malformed envelope on %s: %s", self.topic, exc)
                continue
            except (EOFError, OSError, FrameError):
                break
            self._deliver(env)
        self.connected = False

    def close(self) -> None:
        if not self.closed:
            _shutdown(self._sock)
        super().close()


class TcpReplier(Replier):
    def __init__(self, topic: str, address: str, registry: Path, carrier: str = "tcp") -> None:
        super().__init__(topic, carrier)
        self._listener = _listen(parse_address(address))
        host, port = self._listener.getsockname()[:2]
        self.address = f"{host}:{port}"
        self._registry = registry
        self._sel = selectors.DefaultSelector()
        self._sel.register(self._listener, selectors.EVENT_READ, None)
        registry_put(registry, topic, self.address)

    def _serve_one(self, handler: Handler, deadline: float | None) -> bool:
        while True:
            timeout = time_left(deadline)
            try:
                events = self._sel.select(timeout)
            except (OSError, ValueError, KeyError, RuntimeError):
                if self.closed:
                    raise ClosedEndpoint(f"replier on {self.topic} closed") from None
                raise
            for key, _ in events:
                if key.fileobj is self._listener:
                    try:
                        conn, _ = self._listener.accept()
                    except OSError:
                        continue
                    conn.settimeout(5.0)
                    self._sel.register(_tune(conn), selectors.EVENT_READ, "peer")
                    continue
                conn = key.fileobj
                try:
                    request = MessageEnvelope.from_parts(read_frame(conn))
                except (EOFError, OSError, FrameError, MalformedEnvelope):
                    self._drop(conn)
                    continue
                reply = self._handle(handler, request)
                try:
                    write_frame(conn, reply.parts)
                except OSError:
                    self._drop(conn)
                return True
            if self.closed:
                raise ClosedEndpoint(f"replier on {self.topic} closed")
            if timeout is not None and time_left(deadline) == 0.0:
                return False

    def _drop(self, conn: socket.socket) -> None:
        with contextlib.suppress(KeyError, ValueError):
            self._sel.unregister(conn)
        _shutdown(conn)

    def close(self) -> None:
        if not self.closed:
            registry_remove(self._registry, self.topic, self.address)
            for key in list(self._sel.get_map().values()):
                _shutdown(key.fileobj)
            self._sel.close()
        super().close()


class TcpRequester(Requester):
    def __init__(self, topic: str, registry: Path, address: str | None = None, carrier: str = "tcp") -> None:
        super().__init__(topic, carrier)
        self._registry = registry
        self._fixed = address
        self._sock: socket.socket | None = None

    def _resolve(self) -> str | None:
        return self._fixed or registry_lookup(self._registry, self.topic)

    def _ensure_connected(self, deadline: float | None, should_wait: bool) -> socket.socket:
        if self._sock is not None:
            return self._sock
        while True:
            addr = self._resolve()
            err: Exception | None = None
            if addr is not None:
                try:
                    self._sock = _connect(parse_address(addr), CONNECT_TIMEOUT_S)
                    return self._sock
                except OSError as exc:
                    err = exc
            if not should_wait:
                where = addr or "no registry entry"
                raise PeerUnreachable(f"no replier for {self.topic} ({where}): {err}")
            if time_left(deadline) == 0.0:
                raise TimedOut(f"no replier for {self.topic} appeared in time")
            time.sleep(_PEER_POLL_S)

    def _disconnect(self) -> None:
        if self._sock is not None:
            _shutdown(self._sock)
            self._sock = None

    def _roundtrip(self, env: MessageEnvelope, deadline: float | None, should_wait: bool) -> MessageEnvelope:
        for attempt in (0, 1):
            sock = self._ensure_connected(deadline, should_wait)
            try:
                sock.settimeout(None)
                write_frame(sock, env.parts)
            except OSError as exc:
                # a cached connection to a replier that went away; retry once on a fresh one
                self._disconnect()
                if attempt:
                    raise PeerUnreachable(f"send to replier failed: {exc}") from exc
                continue
            try:
                sock.settimeout(time_left(deadline))
                return MessageEnvelope.from_parts(read_frame(sock))
            except socket.timeout:
                self._disconnect()
                raise TimedOut(f"no reply on {self.topic} in time") from None
            except (EOFError, OSError, FrameError) as exc:
                self._disconnect()
                raise PeerUnreachable(f"replier hung up: {exc}") from exc
        raise AssertionError("unreachable")

    def close(self) -> None:
        self._disconnect()
        super().close()


class TcpTransport(Transport):
    name = "tcp"

    def __init__(self, broker: str | None = None, registry: str | os.PathLike | None = None, direct: bool = False) -> None:
        self.broker = broker
        self.registry = registry
        self.direct = direct

    def broker_for(self, opts: Mapping[str, Any]) -> str:
        return broker_address(opts, self.broker)

    def registry_for(self, opts: Mapping[str, Any]) -> Path:
        return registry_path(opts, self.registry)

    def open_publisher(self, topic: str, opts: Mapping[str, Any]) -> TcpPublisher:
        return TcpPublisher(topic, self.broker_for(opts), self.name)

    def open_subscriber(self, topic: str, opts: Mapping[str, Any]) -> TcpSubscriber:
        return TcpSubscriber(topic, self.broker_for(opts), int(opts.get("queue_size", DEFAULT_QUEUE_SIZE)), self.name)

    def open_replier(self, topic: str, opts: Mapping[str, Any]) -> TcpReplier:
        return TcpReplier(topic, opts.get("address", "127.0.0.1:0"), self.registry_for(opts), self.name)

    def open_requester(self, topic: str, opts: Mapping[str, Any]) -> TcpRequester:
        return TcpRequester(topic, self.registry_for(opts), opts.get("address"), self.name)

    def available(self) -> bool:
        return self.direct or broker_reachable(self.broker_for({}))
