"""Mirroring, forwarding and channeling as runnable scenarios.

Each runner wires real endpoints together (threads for inproc, OS processes
when a tcp hop separates roles), drives one exchange and returns a
:class:`ScenarioReport` saying whether every role saw the expected values.
"""

from __future__ import annotations

import hashlib
import json
import multiprocessing as mp
import queue
import tempfile
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from wrapify.codec import AudioChunk, ImageFrame, encode_native
from wrapify.errors import ScenarioTimeout
from wrapify.registry import MiddlewareCommunicator
from wrapify.transport import HOPS_KEY, Bridge, Broker, InprocTransport, Runtime
from wrapify.transport.tcp import broker_reachable, parse_address

DEFAULT_TIMEOUT_S = 30.0


@dataclass
class ScenarioReport:
    scenario: str
    roles: list[tuple[str, str, str]]
    transcript: list[tuple[str, str, str]]
    passed: bool
    details: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def to_json(self, **kwargs: Any) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def payload_digest(value: Any) -> str:
    """Order-insensitive digest of a native value (plugin payloads included)."""
    canonical = json.dumps(json.loads(encode_native(value)), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


# -- scenario classes -------------------------------------------------------------


class MirrorCls(MiddlewareCommunicator):
    def __init__(self, runtime: Runtime | None = None, input_fn: Callable[[str], str] = input, **kwargs: Any) -> None:
        self.input_fn = input_fn
        super().__init__(runtime, **kwargs)

    @MiddlewareCommunicator.register(
        "NativeObject", "$0", "MirrorCls", "/example/read_msg", carrier="tcp", should_wait="$blocking"
    )
    def read_msg(self, mware, msg="", blocking=True):
        msg_ip = self.input_fn("type message:")
        obj = {"msg": msg, "msg_ip": msg_ip}
        return (obj,)

    @MiddlewareCommunicator.register(
        "NativeObject", "$0", "MirrorCls", "/example/mirror_value", carrier="tcp", should_wait="$blocking"
    )
    def mirror_value(self, mware, value=None, blocking=True):
        return (value,)


class ForwardCls(MiddlewareCommunicator):
    @MiddlewareCommunicator.register("NativeObject", "$mware", "ForwardCls", "$topic", carrier="tcp", should_wait=True)
    def forward(self, msg, mware="tcp", topic="/example/native_first"):
        return (msg,)


CHANNEL_MIDDLEWARE = ("tcp", "inproc", "audio_bus")


class ChannelCls(MiddlewareCommunicator):
    """Three returns, three payload kinds, three transports."""

    @MiddlewareCommunicator.register(
        "NativeObject", "$native_mware", "ChannelCls", "/example/native_chan_msg", carrier="tcp", should_wait=True
    )
    @MiddlewareCommunicator.register(
        "Image", "$image_mware", "ChannelCls", "/example/image_chan_msg",
        carrier="tcp", width="$img_width", height="$img_height", rgb=True, queue_size=10,
    )
    @MiddlewareCommunicator.register(
        "AudioChunk", "$audio_mware", "ChannelCls", "/example/audio_chan_msg",
        carrier="tcp", rate="$aud_rate", chunk="$aud_chunk", channels="$aud_chann",
    )
    def read_mulret_mulmware(
        self, img_width=200, img_height=200, aud_rate=44100, aud_chunk=8820, aud_chann=1,
        native_mware="tcp", image_mware="inproc", audio_mware="audio_bus", seed=0,
    ):
        rng = np.random.default_rng(seed)
        img = ImageFrame.from_array(rng.integers(0, 256, size=(img_height, img_width, 3), dtype=np.uint8))
        aud = AudioChunk(aud_rate, aud_chunk, aud_chann, rng.uniform(-1, 1, aud_chunk * aud_chann).astype(np.float32))
        native = [img, aud]
        return native, img, aud


# -- role plumbing --------------------------------------------------------------


def _runtime(spec: Runtime | dict) -> Runtime:
    return spec if isinstance(spec, Runtime) else Runtime(**spec)


def _report_error(out, name: str, exc: BaseException) -> None:
    out.put((name, "error", f"{type(exc).__name__}: {exc}"))


def _mirror_role(name, mode, transport, payload, input_text, rt_spec, out, go, done, timeout_s) -> None:
    comm = None
    try:
        rt = _runtime(rt_spec)
        comm = MirrorCls(rt, input_fn=lambda prompt="": input_text, timeout_ms=timeout_s * 1000)
        if input_text is not None:
            method, kwargs = "read_msg", {"msg": payload, "blocking": True}
        else:
            method, kwargs = "mirror_value", {"value": payload, "blocking": True}
        comm.activate_communication(method, mode)
        comm.establish(method, transport, **kwargs)
        out.put((name, "ready", None))
        if mode == "publish":
            go.wait(timeout_s)
        result = getattr(comm, method)(transport, **kwargs)
        out.put((name, "result", result))
        done.wait(timeout_s)
    except Exception as exc:
        _report_error(out, name, exc)
    finally:
        if comm is not None:
            comm.close()


def _forward_group(name, roles, hops, payload, rt_spec, out, go, done, timeout_s) -> None:
    """Run a set of forwarding roles that share one process.

    ``roles`` items are ("source", 0), ("bridge", i) for hop i -> i+1, or
    ("sink", last_hop_index).
    """
    bridges: list[Bridge] = []
    comms: list[MiddlewareCommunicator] = []
    try:
        rt = _runtime(rt_spec)
        source = sink = None
        for kind, i in roles:
            if kind == "bridge":
                bridges.append(Bridge(rt, tuple(hops[i]), tuple(hops[i + 1])).start())
            elif kind == "sink":
                sink = ForwardCls(rt, timeout_ms=timeout_s * 1000)
                comms.append(sink)
                sink.activate_communication("forward", "listen")
                topic, carrier = hops[i]
                sink.establish("forward", None, mware=carrier, topic=topic)
            else:
                source = ForwardCls(rt)
                comms.append(source)
                source.activate_communication("forward", "publish")
                topic, carrier = hops[0]
                source.establish("forward", payload, mware=carrier, topic=topic)
        out.put((name, "ready", None))
        if source is not None:
            go.wait(timeout_s)
            topic, carrier = hops[0]
            out.put((name, "sent", source.forward(payload, mware=carrier, topic=topic)))
        if sink is not None:
            topic, carrier = hops[-1]
            value = sink.forward(None, mware=carrier, topic=topic)
            env = sink.last_received("forward")[0]
            out.put((name, "result", {"value": value, HOPS_KEY: env.meta.get(HOPS_KEY, 0), "parts": env.payload}))
        done.wait(timeout_s)
    except Exception as exc:
        _report_error(out, name, exc)
    finally:
        for b in bridges:
            b.close()
        for c in comms:
            c.close()


@dataclass
class _Role:
    name: str
    target: Callable
    args: tuple
    in_process: bool  # True: thread in this process; False: child OS process


def _orchestrate(
    roles: list[_Role], timeout_s: float, terminal: set[str] | None = None
) -> tuple[dict[str, Any], list[tuple[str, str, Any]]]:
    """Start every role, release them once all are ready, collect results.

    Roles report ``(name, event, value)`` tuples; ``result`` and ``error``
    are terminal. The exchange ends when every role named in ``terminal``
    (default: all) has reported one, or any role errors.
    """
    ctx = mp.get_context("spawn")
    use_procs = any(not r.in_process for r in roles)
    out = ctx.Queue() if use_procs else queue.Queue()
    go = ctx.Event() if use_procs else threading.Event()
    done = ctx.Event() if use_procs else threading.Event()
    workers = []
    for r in roles:
        args = (*r.args, out, go, done, timeout_s)
        if r.in_process:
            w = threading.Thread(target=r.target, args=(r.name, *args), daemon=True)
        else:
            w = ctx.Process(target=r.target, args=(r.name, *args), daemon=True)
        w.start()
        workers.append(w)

    deadline = time.monotonic() + timeout_s
    ready: set[str] = set()
    results: dict[str, Any] = {}
    events: list[tuple[str, str, Any]] = []
    expecting = {r.name for r in roles} if terminal is None else set(terminal)
    try:
        while not expecting <= results.keys():
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise ScenarioTimeout(f"roles {sorted(expecting - results.keys())} did not finish in {timeout_s}s")
            try:
                name, event, value = out.get(timeout=min(remaining, 0.5))
            except queue.Empty:
                dead = [r.name for r, w in zip(roles, workers) if not r.in_process and not w.is_alive()]
                missing = [n for n in dead if n not in results]
                if missing:
                    raise ScenarioTimeout(f"role process(es) {missing} exited without reporting")
                continue
            events.append((name, event, value))
            if event == "ready":
                ready.add(name)
                if len(ready) == len(roles):
                    go.set()
            elif event in ("result", "error"):
                results[name] = (event, value)
                if event == "error":
                    # an error anywhere ends the exchange; release everyone
                    go.set()
                    break
    finally:
        go.set()
        done.set()
        for w in workers:
            w.join(timeout=2.0)
            if isinstance(w, mp.process.BaseProcess) and w.is_alive():
                w.terminate()
                w.join(timeout=1.0)
    return results, events


def _start_broker(broker: str | None) -> tuple[Broker | None, str | None]:
    """Use the broker at ``broker`` if one answers there, otherwise start one (ephemeral ports if None)."""
    if broker is not None:
        if broker_reachable(broker):
            return None, broker
        host, port = parse_address(broker)
        b = Broker(host, port).start()
        return b, b.address
    b = Broker(sub_port=0).start()
    return b, b.address


def _transcript(events: list[tuple[str, str, Any]]) -> list[tuple[str, str, str]]:
    rows = []
    for name, event, value in events:
        if event in ("result", "sent"):
            digestible = value["value"] if isinstance(value, dict) and "value" in value else value
            rows.append((name, event, payload_digest(list(digestible))))
        else:
            rows.append((name, event, "" if value is None else str(value)))
    return rows


# -- mirroring --------------------------------------------------------------------


def run_mirror_scenario(
    n_listeners: int,
    transport: str = "inproc",
    payload: Any = None,
    input_text: str | None = None,
    broker: str | None = None,
    timeout_s: float = DEFAULT_TIMEOUT_S,
) -> ScenarioReport:
    """One publisher and ``n_listeners`` listeners invoke the same method.

    With ``input_text`` the Listing-style ``read_msg`` is mirrored: the
    publisher builds ``{"msg": payload, "msg_ip": <typed input>}``; otherwise
    ``payload`` itself is the return value.
    """
    if n_listeners < 1:
        raise ValueError("mirroring needs at least one listener")
    in_process = transport != "tcp"
    owned_broker, addr = _start_broker(broker) if transport == "tcp" else (None, None)
    tmp = tempfile.TemporaryDirectory(prefix="wrapify-mirror-")
    try:
        if in_process:
            rt_spec: Runtime | dict = Runtime(broker=addr, registry=str(Path(tmp.name) / "registry.json"))
        else:
            rt_spec = {"broker": addr, "registry": str(Path(tmp.name) / "registry.json")}
        names = ["publisher"] + [f"listener{i}" for i in range(1, n_listeners + 1)]
        roles = [
            _Role(n, _mirror_role, ("publish" if n == "publisher" else "listen", transport, payload, input_text, rt_spec), in_process)
            for n in names
        ]
        t0 = time.monotonic()
        results, events = _orchestrate(roles, timeout_s)
        elapsed = time.monotonic() - t0
    finally:
        if owned_broker is not None:
            owned_broker.stop()
        tmp.cleanup()

    errors = {n: v for n, (e, v) in results.items() if e == "error"}
    published = results.get("publisher", ("error", None))[1]
    received = {n: v for n, (e, v) in results.items() if e == "result" and n != "publisher"}
    passed = not errors and len(received) == n_listeners and all(
        tuple(v) == tuple(published) for v in received.values()
    )
    return ScenarioReport(
        "mirror",
        [(n, "publish" if n == "publisher" else "listen", transport) for n in names],
        _transcript(events),
        passed,
        {"elapsed_s": round(elapsed, 3), "errors": errors, "processes": not in_process,
         "published_digest": payload_digest(list(published)) if not errors and published is not None else None,
         "value": list(published) if not errors and published is not None else None},
    )


# -- forwarding -------------------------------------------------------------------


def _group_forward_roles(hops: Sequence[tuple[str, str]]) -> list[list[tuple[str, int]]]:
    """Split the chain into processes; only a non-inproc hop may cross a process boundary."""
    chain = [("source", 0)] + [("bridge", i) for i in range(len(hops) - 1)] + [("sink", len(hops) - 1)]
    groups = [[chain[0]]]
    for k in range(1, len(chain)):
        hop_carrier = hops[k - 1][1]
        if hop_carrier == "inproc":
            groups[-1].append(chain[k])
        else:
            groups.append([chain[k]])
    return groups


def run_forward_scenario(
    hops: Sequence[tuple[str, str]],
    payload: Any,
    broker: str | None = None,
    processes: bool | None = None,
    timeout_s: float = DEFAULT_TIMEOUT_S,
) -> ScenarioReport:
    """Source publishes on hop 0, intermediaries bridge hop i to hop i+1, a sink listens on the last hop.

    By default roles separated by a tcp hop run in separate OS processes;
    ``processes=False`` keeps everything in threads.
    """
    hops = [(str(t), str(c)) for t, c in hops]
    if len(hops) < 2:
        raise ValueError("forwarding needs at least two hops")
    groups = _group_forward_roles(hops)
    use_tcp = any(c == "tcp" for _, c in hops)
    if processes is None:
        processes = len(groups) > 1
    if not processes:
        groups = [[r for g in groups for r in g]]
    owned_broker, addr = _start_broker(broker) if use_tcp else (None, None)
    tmp = tempfile.TemporaryDirectory(prefix="wrapify-forward-")
    try:
        reg = str(Path(tmp.name) / "registry.json")
        rt_spec: Runtime | dict = {"broker": addr, "registry": reg} if processes else Runtime(broker=addr, registry=reg)
        roles, terminal = [], set()
        for group in groups:
            name = "+".join(f"{k}{i}" if k == "bridge" else k for k, i in group)
            if any(k == "sink" for k, _ in group):
                terminal.add(name)
            roles.append(_Role(name, _forward_group, (group, hops, payload, rt_spec), not processes))
        t0 = time.monotonic()
        results, events = _orchestrate(roles, timeout_s, terminal)
        elapsed = time.monotonic() - t0
    finally:
        if owned_broker is not None:
            owned_broker.stop()
        tmp.cleanup()

    errors = {n: v for n, (e, v) in results.items() if e == "error"}
    sink = next((v for n, (e, v) in results.items() if e == "result"), None)
    hop_count = sink[HOPS_KEY] if sink else None
    equal = sink is not None and tuple(sink["value"]) == (payload,)
    byte_equal = sink is not None and sink["parts"] == (encode_native(payload),)
    passed = not errors and equal and byte_equal and hop_count == len(hops) - 1
    role_rows = []
    for role in roles:
        for kind, i in role.args[0]:
            mode = {"source": "publish", "sink": "listen", "bridge": "bridge"}[kind]
            carrier = hops[i][1] if kind != "bridge" else f"{hops[i][1]}->{hops[i + 1][1]}"
            role_rows.append((role.name if len(role.args[0]) == 1 else f"{role.name}:{kind}{i}", mode, carrier))
    return ScenarioReport(
        "forward",
        role_rows,
        _transcript(events),
        passed,
        {"elapsed_s": round(elapsed, 3), "errors": errors, HOPS_KEY: hop_count, "processes": len(roles) if processes else 1,
         "payload_digest": payload_digest(payload), "byte_equal": byte_equal},
    )


# -- channeling -------------------------------------------------------------------


def run_channel_scenario(
    disable_slot: int | Sequence[int] | None = None,
    broker: str | None = None,
    seed: int = 0,
    timeout_s: float = DEFAULT_TIMEOUT_S,
) -> ScenarioReport:
    """Publish (native composite, 200x200 RGB image, 44.1 kHz audio chunk) on three transports.

    The listener's process lacks the middleware of every slot in
    ``disable_slot``; those positions must come back as None while the
    others arrive intact.
    """
    if disable_slot is None:
        disabled_slots: set[int] = set()
    elif isinstance(disable_slot, int):
        disabled_slots = {disable_slot}
    else:
        disabled_slots = set(disable_slot)
    if not disabled_slots <= {0, 1, 2}:
        raise ValueError(f"channel slots are 0, 1, 2; got {sorted(disabled_slots)}")

    owned_broker, addr = _start_broker(broker)
    tmp = tempfile.TemporaryDirectory(prefix="wrapify-channel-")
    publisher = listener = None
    t0 = time.monotonic()
    try:
        rt = Runtime(broker=addr, registry=str(Path(tmp.name) / "registry.json"))
        rt.add_transport("audio_bus", InprocTransport(name="audio_bus"))
        listener_rt = rt.view(disabled={CHANNEL_MIDDLEWARE[i] for i in disabled_slots})
        publisher = ChannelCls(rt)
        listener = ChannelCls(listener_rt, timeout_ms=timeout_s * 1000)
        publisher.activate_communication("read_mulret_mulmware", "publish")
        listener.activate_communication("read_mulret_mulmware", "listen")
        listener.establish("read_mulret_mulmware", seed=seed)
        transcript = [("listener", "ready", "")]
        sent = publisher.read_mulret_mulmware(seed=seed)
        transcript.append(("publisher", "sent", payload_digest(list(sent))))
        got = listener.read_mulret_mulmware(seed=seed)
        transcript.append(("listener", "result", payload_digest(list(got))))
    except TimeoutError as exc:
        raise ScenarioTimeout(f"channel listener waited more than {timeout_s}s: {exc}") from exc
    finally:
        for comm in (publisher, listener):
            if comm is not None:
                comm.close()
        if owned_broker is not None:
            owned_broker.stop()
        tmp.cleanup()

    slots = []
    for i, (want, have) in enumerate(zip(sent, got)):
        if i in disabled_slots:
            ok = have is None
        else:
            ok = have is not None and payload_digest(have) == payload_digest(want)
        slots.append({"slot": i, "middleware": CHANNEL_MIDDLEWARE[i], "disabled": i in disabled_slots,
                      "present": have is not None, "ok": ok})
    return ScenarioReport(
        "channel",
        [("publisher", "publish", "+".join(CHANNEL_MIDDLEWARE)), ("listener", "listen", "+".join(
            m for i, m in enumerate(CHANNEL_MIDDLEWARE) if i not in disabled_slots) or "none")],
        transcript,
        all(s["ok"] for s in slots),
        {"elapsed_s": round(time.monotonic() - t0, 3), "slots": slots, "seed": seed},
    )
