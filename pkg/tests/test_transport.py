from __future__ import annotations

import socket
import threading
import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wrapify import transport
from wrapify.codec import MessageEnvelope, decode_native_envelope, encode_native_envelope, make_envelope
from wrapify.errors import (
    AddressInUse,
    BrokerUnreachable,
    ClosedEndpoint,
    InvalidTopic,
    PeerUnreachable,
    RemoteError,
    TimedOut,
    TopicMismatch,
    UnsupportedCarrier,
    WrongRole,
)
from wrapify.topic import check_topic
from wrapify.transport import HOPS_KEY, Bridge, Broker, Runtime
from wrapify.transport.framing import FrameError, decode_frame, encode_frame

CARRIERS = ["inproc", "tcp"]


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def wait_for(pred, timeout=2.0):
    end = time.monotonic() + timeout
    while not pred():
        if time.monotonic() > end:
            raise AssertionError("condition not reached")
        time.sleep(0.001)


def random_envelope(rng: np.random.Generator, topic: str) -> MessageEnvelope:
    n_parts = int(rng.integers(1, 4))
    payload = [rng.bytes(int(rng.integers(0, 300))) for _ in range(n_parts)]
    meta = {"seq": int(rng.integers(0, 2**31)), "tag": rng.bytes(4).hex()}
    return make_envelope(topic, "native", meta, payload, ts=float(rng.uniform(0, 2e9)))


@pytest.fixture(params=CARRIERS)
def carrier(request):
    return request.param


def env(topic: str, value) -> MessageEnvelope:
    return encode_native_envelope(value, topic)


# -- topics and framing -----------------------------------------------------------


@pytest.mark.parametrize("good", ["/a", "/example/read_msg", "/A-1/b_2"])
def test_valid_topics(good):
    assert check_topic(good) == good


@pytest.mark.parametrize("bad", ["", "a", "/", "/a/", "//a", "/a b", "/a.b"])
def test_invalid_topics(bad):
    with pytest.raises(InvalidTopic):
        check_topic(bad)


@given(st.lists(st.binary(max_size=64), min_size=1, max_size=6))
def test_frame_round_trip(parts):
    frame = encode_frame(parts)
    assert frame[:4] == len(parts).to_bytes(4, "big")
    assert decode_frame(frame) == parts


def test_truncated_frame():
    with pytest.raises(FrameError):
        decode_frame(encode_frame([b"abc"])[:-1])


# -- transport equivalence suite --------------------------------------------------


def test_basic_delivery(runtime, carrier):
    sub = runtime.open_subscriber("/eq/basic", carrier)
    pub = runtime.open_publisher("/eq/basic", carrier)
    pub.publish(env("/eq/basic", {"msg": "hi"}))
    got = sub.try_receive(True, 2000)
    assert decode_native_envelope(got) == {"msg": "hi"}


def test_delivery_fidelity(runtime, carrier):
    rng = np.random.default_rng(1234)
    sub = runtime.open_subscriber("/eq/fidelity", carrier, {"queue_size": 1000})
    pub = runtime.open_publisher("/eq/fidelity", carrier)
    sent = [random_envelope(rng, "/eq/fidelity") for _ in range(1000)]
    for e in sent:
        pub.publish(e)
    for e in sent:
        got = sub.try_receive(True, 2000)
        assert got.parts == e.parts


def test_topic_isolation(runtime, carrier):
    sub = runtime.open_subscriber("/eq/x", carrier)
    for topic in ("/eq/y", "/eq/x/child", "/eq"):
        runtime.open_publisher(topic, carrier).publish(env(topic, 1))
    marker = runtime.open_publisher("/eq/x", carrier)
    marker.publish(env("/eq/x", "mine"))
    got = sub.try_receive(True, 2000)
    assert got.topic == "/eq/x" and decode_native_envelope(got) == "mine"
    time.sleep(0.05)
    assert sub.try_receive(False) is None


def test_per_publisher_ordering(runtime, carrier):
    sub = runtime.open_subscriber("/eq/order", carrier, {"queue_size": 500})
    pub = runtime.open_publisher("/eq/order", carrier)
    for i in range(300):
        pub.publish(env("/eq/order", i))
    assert [decode_native_envelope(sub.try_receive(True, 2000)) for _ in range(300)] == list(range(300))


@pytest.mark.parametrize("k,n", [(10, 11), (5, 5), (5, 20), (1, 3)])
def test_queue_bound(runtime, carrier, k, n):
    sub = runtime.open_subscriber("/eq/bound", carrier, {"queue_size": k})
    pub = runtime.open_publisher("/eq/bound", carrier)
    for i in range(n):
        pub.publish(env("/eq/bound", i))
    wait_for(lambda: sub.delivered == n)
    got = []
    while (e := sub.try_receive(False)) is not None:
        got.append(decode_native_envelope(e))
    assert got == list(range(max(0, n - k), n))


def test_default_queue_size_is_five(runtime, carrier):
    sub = runtime.open_subscriber("/eq/default", carrier)
    assert sub.queue_size == 5


def test_fan_out(runtime, carrier):
    subs = [runtime.open_subscriber("/eq/fan", carrier) for _ in range(2)]
    e = env("/eq/fan", {"a": [1, 2]})
    runtime.open_publisher("/eq/fan", carrier).publish(e)
    assert [s.try_receive(True, 2000).parts for s in subs] == [e.parts, e.parts]


def test_publish_without_subscribers(runtime, carrier):
    runtime.open_publisher("/eq/nobody", carrier).publish(env("/eq/nobody", 1))


def test_non_blocking_receive_is_fast(runtime, carrier):
    sub = runtime.open_subscriber("/eq/fast", carrier, {"queue_size": 100})
    t0 = time.perf_counter()
    assert sub.try_receive(False) is None
    assert time.perf_counter() - t0 < 0.010
    pub = runtime.open_publisher("/eq/fast", carrier)
    for i in range(50):
        pub.publish(env("/eq/fast", i))
    wait_for(lambda: sub.delivered == 50)
    t0 = time.perf_counter()
    assert sub.try_receive(False) is not None
    assert time.perf_counter() - t0 < 0.010


def test_blocking_receive_gets_delayed_message(runtime, carrier):
    sub = runtime.open_subscriber("/eq/delayed", carrier)
    pub = runtime.open_publisher("/eq/delayed", carrier)
    timer = threading.Timer(0.05, lambda: pub.publish(env("/eq/delayed", "late")))
    timer.start()
    t0 = time.perf_counter()
    got = sub.try_receive(True)
    assert decode_native_envelope(got) == "late"
    assert time.perf_counter() - t0 >= 0.04
    timer.join()


def test_blocking_receive_times_out(runtime, carrier):
    sub = runtime.open_subscriber("/eq/silent", carrier)
    t0 = time.perf_counter()
    with pytest.raises(TimedOut):
        sub.try_receive(True, 100)
    assert 0.05 <= time.perf_counter() - t0 <= 0.15


def test_topic_mismatch_and_closed(runtime, carrier):
    pub = runtime.open_publisher("/eq/a", carrier)
    with pytest.raises(TopicMismatch):
        pub.publish(env("/eq/b", 1))
    pub.close()
    with pytest.raises(ClosedEndpoint):
        pub.publish(env("/eq/a", 1))
    sub = runtime.open_subscriber("/eq/a", carrier)
    sub.close()
    with pytest.raises(ClosedEndpoint):
        sub.try_receive(False)


def test_close_wakes_blocked_receiver(runtime, carrier):
    sub = runtime.open_subscriber("/eq/wake", carrier)
    threading.Timer(0.05, sub.close).start()
    with pytest.raises(ClosedEndpoint):
        sub.try_receive(True, 2000)


def test_role_checks(runtime):
    sub = transport.open_subscriber("/r/a", "inproc", runtime=runtime)
    pub = transport.open_publisher("/r/a", "inproc", runtime=runtime)
    with pytest.raises(WrongRole):
        transport.publish(sub, env("/r/a", 1))
    with pytest.raises(WrongRole):
        transport.try_receive(pub)
    transport.publish(pub, env("/r/a", 1))
    assert decode_native_envelope(transport.try_receive(sub, True, 1000)) == 1


# -- request / reply ---------------------------------------------------------------


def serve_in_background(rep, handler):
    stop = threading.Event()

    def loop():
        try:
            rep.serve(handler, stop)
        except ClosedEndpoint:
            pass

    t = threading.Thread(target=loop, daemon=True)
    t.start()
    return stop, t


def test_echo_request(runtime, carrier):
    rep = runtime.open_replier("/rr/echo", carrier)
    stop, t = serve_in_background(rep, lambda e: e)
    req = runtime.open_requester("/rr/echo", carrier)
    e = env("/rr/echo", {"x": [1, 2, 3]})
    assert req.request(e, 2000).payload == e.payload
    stop.set()
    t.join(1)


def test_upper_case_and_sequence(runtime, carrier):
    rep = runtime.open_replier("/rr/upper", carrier)
    upper = lambda e: env("/rr/upper", decode_native_envelope(e).upper())
    stop, t = serve_in_background(rep, upper)
    req = runtime.open_requester("/rr/upper", carrier)
    assert decode_native_envelope(req.request(env("/rr/upper", "abc"), 2000)) == "ABC"
    replies = [decode_native_envelope(req.request(env("/rr/upper", f"s{i}"), 2000)) for i in range(3)]
    assert replies == ["S0", "S1", "S2"]
    stop.set()
    t.join(1)


def test_increment_handler(runtime, carrier):
    rep = runtime.open_replier("/rr/inc", carrier)
    stop, t = serve_in_background(rep, lambda e: env("/rr/inc", decode_native_envelope(e) + 1))
    req = runtime.open_requester("/rr/inc", carrier)
    assert decode_native_envelope(transport.request(req, env("/rr/inc", 41), 2000)) == 42
    stop.set()
    t.join(1)


def test_handler_failure_becomes_remote_error(runtime, carrier):
    def boom(e):
        raise RuntimeError("kaput")

    rep = runtime.open_replier("/rr/boom", carrier)
    stop, t = serve_in_background(rep, boom)
    req = runtime.open_requester("/rr/boom", carrier)
    with pytest.raises(RemoteError, match="kaput"):
        req.request(env("/rr/boom", 1), 2000)
    # the replier keeps serving afterwards
    rep2_ok = runtime.open_requester("/rr/boom", carrier)
    with pytest.raises(RemoteError):
        rep2_ok.request(env("/rr/boom", 2), 2000)
    stop.set()
    t.join(1)


def test_no_replier_fails_fast(runtime, carrier):
    req = runtime.open_requester("/rr/none", carrier)
    t0 = time.perf_counter()
    with pytest.raises(PeerUnreachable):
        req.request(env("/rr/none", 1), 2000, should_wait=False)
    assert time.perf_counter() - t0 < 0.5


def test_request_timeout_without_replier(runtime, carrier):
    req = runtime.open_requester("/rr/late", carrier)
    with pytest.raises(TimedOut):
        req.request(env("/rr/late", 1), 100)


def test_request_waits_for_late_replier(runtime, carrier):
    holder = {}

    def start():
        holder["rep"] = runtime.open_replier("/rr/later", carrier)
        holder["stop"], holder["t"] = serve_in_background(holder["rep"], lambda e: e)

    timer = threading.Timer(0.1, start)
    timer.start()
    req = runtime.open_requester("/rr/later", carrier)
    assert decode_native_envelope(req.request(env("/rr/later", "x"), 3000)) == "x"
    timer.join()  # the reply can land before start() stores its handles
    holder["stop"].set()


def test_serve_stops_promptly(runtime, carrier):
    rep = runtime.open_replier("/rr/stop", carrier)
    stop, t = serve_in_background(rep, lambda e: e)
    time.sleep(0.05)
    t0 = time.perf_counter()
    stop.set()
    t.join(1)
    assert not t.is_alive() and time.perf_counter() - t0 < 0.1


def test_inproc_duplicate_replier(runtime):
    runtime.open_replier("/rr/dup", "inproc")
    with pytest.raises(AddressInUse):
        runtime.open_replier("/rr/dup", "inproc")


def test_tcp_duplicate_bind(runtime):
    port = free_port()
    runtime.open_replier("/rr/dup", "tcp", {"address": f"127.0.0.1:{port}"})
    with pytest.raises(AddressInUse):
        runtime.open_replier("/rr/dup2", "tcp", {"address": f"127.0.0.1:{port}"})


def test_requests_from_threads_are_serialized(runtime, carrier):
    rep = runtime.open_replier("/rr/many", carrier)
    stop, t = serve_in_background(rep, lambda e: e)
    req = runtime.open_requester("/rr/many", carrier)
    results = {}

    def worker(i):
        results[i] = decode_native_envelope(req.request(env("/rr/many", i), 3000))

    threads = [threading.Thread(target=worker, args=(i,)) for i in range(8)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    assert results == {i: i for i in range(8)}
    stop.set()


# -- carriers and runtime ----------------------------------------------------------


def test_mcast_is_unsupported(runtime):
    with pytest.raises(UnsupportedCarrier):
        runtime.open_publisher("/a/b", "mcast")
    with pytest.raises(UnsupportedCarrier):
        runtime.open_subscriber("/a/b", "ros2")
    with pytest.raises(UnsupportedCarrier):
        runtime.open_publisher("/a/b", "no_such_carrier")


def test_tcp_without_broker(tmp_path):
    rt = Runtime(broker=f"127.0.0.1:{free_port()}", registry=str(tmp_path / "r.json"))
    with pytest.raises(BrokerUnreachable):
        rt.open_publisher("/a/b", "tcp")
    with pytest.raises(BrokerUnreachable):
        rt.open_subscriber("/a/b", "tcp")
    caps = {c.carrier: c for c in rt.list_transports()}
    assert caps["inproc"].available and not caps["tcp"].available


def test_list_transports(runtime):
    caps = {c.carrier: c for c in runtime.list_transports()}
    assert caps["inproc"].available and caps["tcp"].available
    assert "mcast" in caps and not caps["mcast"].available
    runtime.close()
    assert not any(c.available for c in runtime.list_transports())


def test_runtime_close_closes_handles(runtime, carrier):
    sub = runtime.open_subscriber("/rt/close", carrier)
    runtime.close()
    assert sub.closed


def test_view_disables_carrier(runtime):
    view = runtime.view(disabled={"inproc"})
    assert not view.is_enabled("inproc") and runtime.is_enabled("inproc")
    with pytest.raises(UnsupportedCarrier):
        view.open_publisher("/v/a", "inproc")


def test_custom_named_adapter(runtime):
    runtime.add_transport("side_bus", transport.InprocTransport(name="side_bus"))
    sub = runtime.open_subscriber("/n/a", "side_bus")
    runtime.open_publisher("/n/a", "inproc").publish(env("/n/a", "other bus"))
    runtime.open_publisher("/n/a", "side_bus").publish(env("/n/a", "mine"))
    assert decode_native_envelope(sub.try_receive(True, 1000)) == "mine"
    assert sub.try_receive(False) is None


def test_broker_rejects_second_bind():
    b = Broker(sub_port=0).start()
    try:
        with pytest.raises(AddressInUse):
            Broker(sub_port=b.sub_port).start()
    finally:
        b.stop()


def test_broker_counts_routed(runtime, broker):
    sub = runtime.open_subscriber("/b/count", "tcp")
    runtime.open_publisher("/b/count", "tcp").publish(env("/b/count", 1))
    sub.try_receive(True, 2000)
    assert broker.messages_routed >= 1


# -- bridge ------------------------------------------------------------------------


@pytest.mark.parametrize("src,dst", [("tcp", "inproc"), ("inproc", "tcp"), ("tcp", "tcp"), ("inproc", "inproc")])
def test_bridge_preserves_bytes(runtime, src, dst):
    sink = runtime.open_subscriber("/br/out", dst)
    with Bridge(runtime, ("/br/in", src), ("/br/out", dst)).start():
        original = env("/br/in", {"payload": list(range(10))})
        runtime.open_publisher("/br/in", src).publish(original)
        got = sink.try_receive(True, 2000)
    assert got.topic == "/br/out"
    assert got.payload == original.payload
    assert got.ts == original.ts and got.kind == original.kind
    meta = dict(got.meta)
    assert meta.pop(HOPS_KEY) == 1 and meta == original.meta


def test_chained_bridges_count_hops(runtime):
    sink = runtime.open_subscriber("/br/c", "tcp")
    with Bridge(runtime, ("/br/a", "tcp"), ("/br/b", "inproc")).start(), \
            Bridge(runtime, ("/br/b", "inproc"), ("/br/c", "tcp")).start():
        runtime.open_publisher("/br/a", "tcp").publish(env("/br/a", "hop"))
        got = sink.try_receive(True, 2000)
    assert got.meta[HOPS_KEY] == 2 and decode_native_envelope(got) == "hop"


def test_bridge_with_unavailable_carrier(runtime):
    with pytest.raises(UnsupportedCarrier):
        Bridge(runtime, ("/br/a", "tcp"), ("/br/b", "mcast"))
