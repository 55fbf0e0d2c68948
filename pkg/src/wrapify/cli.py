"""``wrapify`` command-line tool.

Exit codes: 0 success, 1 runtime failure, 2 usage or bind error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import signal
import sys
import threading
from pathlib import Path
from typing import Sequence

from wrapify.bench import run_bench, to_csv
from wrapify.codec import (
    decode_audio,
    decode_image,
    decode_native,
    decode_native_envelope,
    encode_audio,
    encode_image,
    encode_native,
    encode_native_envelope,
)
from wrapify.codec.files import pack_audio, pack_image, read_container
from wrapify.errors import AddressInUse, CodecError, WrapifyError
from wrapify.topic import check_topic
from wrapify.transport import Bridge, Broker, Runtime
from wrapify.transport.tcp import DEFAULT_BROKER, broker_address, parse_address

log = logging.getLogger("wrapify")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
POLL_MS = 200


def _install_signals(stop: threading.Event) -> None:
    def handler(signum, frame):
        stop.set()
        raise KeyboardInterrupt

    signal.signal(signal.SIGTERM, handler)


def _runtime(args: argparse.Namespace) -> Runtime:
    return Runtime(broker=args.broker, registry=args.registry)


def _endpoint(spec: str) -> tuple[str, str]:
    """``carrier:/topic`` -> (topic, carrier)."""
    carrier, sep, topic = spec.partition(":")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected CARRIER:/TOPIC, got {spec!r}")
    return _topic(topic), carrier


def _topic(value: str) -> str:
    try:
        return check_topic(value)
    except WrapifyError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


# -- commands -----------------------------------------------------------------


def cmd_broker(args: argparse.Namespace) -> int:
    host, port = parse_address(broker_address({"broker": args.broker}))
    broker = Broker(host, port)
    try:
        broker.start()
    except AddressInUse as exc:
        print(f"wrapify broker: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(f"broker listening sub={host}:{broker.sub_port} pub={host}:{broker.pub_port}", flush=True)
    stop = threading.Event()
    _install_signals(stop)
    try:
        broker.serve_forever(stop)
    except KeyboardInterrupt:
        pass
    finally:
        broker.stop()
    return EXIT_OK


def _read_records(args: argparse.Namespace):
    """Yield values to publish; malformed native lines are skipped with a warning."""
    if args.kind == "native":
        fh = open(args.source, encoding="utf-8") if args.source else sys.stdin
        try:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    yield decode_native(line.strip())
                except CodecError as exc:
                    print(f"wrapify: skipping line {lineno}: {exc}", file=sys.stderr)
        finally:
            if args.source:
                fh.close()
        return
    if args.source:
        with open(args.source, "rb") as fh:
            yield read_container(fh, args.kind)
    else:
        yield read_container(sys.stdin.buffer, args.kind)


def _encode(kind: str, value, topic: str):
    if kind == "native":
        return encode_native_envelope(value, topic)
    return encode_image(value, topic) if kind == "image" else encode_audio(value, topic)


def cmd_pub(args: argparse.Namespace) -> int:
    rt = _runtime(args)
    try:
        pub = rt.open_publisher(args.topic, args.carrier)
        n = 0
        for value in _read_records(args):
            pub.publish(_encode(args.kind, value, args.topic))
            n += 1
        log.info("published %d record(s) on %s", n, args.topic)
    finally:
        rt.close()
    return EXIT_OK


def _emit(kind: str, env, sink: str | None, index: int) -> None:
    if kind == "native":
        sys.stdout.write(encode_native(decode_native_envelope(env)).decode("utf-8") + "\n")
        sys.stdout.flush()
        return
    blob = pack_image(decode_image(env)) if kind == "image" else pack_audio(decode_audio(env))
    if sink is None:
        sys.stdout.buffer.write(blob)
        sys.stdout.buffer.flush()
        return
    path = Path(sink.format(n=index)) if "{n}" in sink else Path(sink)
    path.write_bytes(blob)


def cmd_sub(args: argparse.Namespace) -> int:
    rt = _runtime(args)
    stop = threading.Event()
    _install_signals(stop)
    received = 0
    try:
        sub = rt.open_subscriber(args.topic, args.carrier, {"queue_size": args.queue_size})
        print(f"subscribed {args.topic} on {args.carrier}", file=sys.stderr, flush=True)
        while not stop.is_set() and (args.count is None or received < args.count):
            try:
                env = sub.try_receive(True, POLL_MS)
            except TimeoutError:
                continue
            try:
                _emit(args.kind, env, args.sink, received)
            except CodecError as exc:
                print(f"wrapify: dropping undecodable message: {exc}", file=sys.stderr)
                continue
            received += 1
    except KeyboardInterrupt:
        pass
    finally:
        rt.close()
    return EXIT_OK


def cmd_req(args: argparse.Namespace) -> int:
    rt = _runtime(args)
    try:
        req = rt.open_requester(args.topic, args.carrier)
        for value in _read_records(args):
            reply = req.request(encode_native_envelope(value, args.topic), timeout_ms=args.timeout_ms)
            print(encode_native(decode_native_envelope(reply)).decode("utf-8"), flush=True)
    finally:
        rt.close()
    return EXIT_OK


def cmd_rep(args: argparse.Namespace) -> int:
    """Echo replier: answers each request with its own payload."""
    rt = _runtime(args)
    stop = threading.Event()
    _install_signals(stop)
    served = 0
    try:
        rep = rt.open_replier(args.topic, args.carrier)
        print(f"replying on {args.topic} via {args.carrier}", file=sys.stderr, flush=True)
        while not stop.is_set() and (args.count is None or served < args.count):
            if rep.serve_one(lambda env: env, POLL_MS):
                served += 1
    except KeyboardInterrupt:
        pass
    finally:
        rt.close()
    return EXIT_OK


def cmd_bridge(args: argparse.Namespace) -> int:
    rt = _runtime(args)
    for _, carrier in (args.src, args.dst):
        if not rt.is_enabled(carrier) or not rt.transport(carrier).available():
            print(f"wrapify bridge: carrier {carrier!r} is not available", file=sys.stderr)
            return EXIT_FAIL
    stop = threading.Event()
    _install_signals(stop)
    try:
        bridge = Bridge(rt, args.src, args.dst)
        print(f"bridging {args.src[1]}:{args.src[0]} -> {args.dst[1]}:{args.dst[0]}", file=sys.stderr, flush=True)
        bridge.run(stop)
    except KeyboardInterrupt:
        pass
    finally:
        rt.close()
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    try:
        rec = run_bench(args.kind, args.payload_bytes, args.count, args.carrier)
    except ValueError as exc:
        print(f"wrapify bench: {exc}", file=sys.stderr)
        return EXIT_USAGE
    text = to_csv([rec]) if args.out == "csv" else rec.to_json() + "\n"
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_demo(args: argparse.Namespace) -> int:
    from wrapify import schemes

    if args.scenario == "mirror":
        report = schemes.run_mirror_scenario(
            args.listeners, args.carrier, payload=args.message, input_text=args.input, broker=args.broker
        )
    elif args.scenario == "forward":
        if args.hops < 2:
            print("wrapify demo: forward needs --hops >= 2", file=sys.stderr)
            return EXIT_USAGE
        hops = [(f"/demo/hop{i}", "tcp" if i % 2 == 0 else "inproc") for i in range(args.hops)]
        report = schemes.run_forward_scenario(hops, {"msg": args.message}, broker=args.broker)
    else:
        report = schemes.run_channel_scenario(args.disable, broker=args.broker)
    print(report.to_json(indent=2))
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_transports(args: argparse.Namespace) -> int:
    for cap in _runtime(args).list_transports():
        print(json.dumps(dataclasses.asdict(cap)))
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--broker", default=None, help=f"broker host:port (default $WRAPIFY_BROKER or {DEFAULT_BROKER})")
    common.add_argument("--registry", default=None, help="name-registry file for tcp request/reply")
    common.add_argument("--mode-config", default=None, help="JSON/YAML file of method -> mode for demos")
    common.add_argument("-v", "--verbose", action="store_true")

    endpoint = argparse.ArgumentParser(add_help=False)
    endpoint.add_argument("--topic", required=True, type=_topic)
    endpoint.add_argument("--carrier", default="tcp")
    endpoint.add_argument("--kind", choices=("native", "image", "audio"), default="native")

    p = argparse.ArgumentParser(prog="wrapify", description="Middleware-agnostic messaging tool.")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("broker", parents=[common], help="run the tcp broker").set_defaults(func=cmd_broker)

    sp = sub.add_parser("pub", parents=[common, endpoint], help="publish JSON lines or a payload file")
    sp.add_argument("--source", default=None, help="input file (default stdin)")
    sp.set_defaults(func=cmd_pub)

    sp = sub.add_parser("sub", parents=[common, endpoint], help="print or store received messages")
    sp.add_argument("--sink", default=None, help="output file for image/audio ({n} expands to the index)")
    sp.add_argument("--count", type=int, default=None, help="exit after this many messages")
    sp.add_argument("--queue-size", type=int, default=5)
    sp.set_defaults(func=cmd_sub)

    sp = sub.add_parser("req", parents=[common, endpoint], help="send each JSON line as a request")
    sp.add_argument("--source", default=None)
    sp.add_argument("--timeout-ms", type=float, default=5000)
    sp.set_defaults(func=cmd_req, kind="native")

    sp = sub.add_parser("rep", parents=[common, endpoint], help="echo replier")
    sp.add_argument("--count", type=int, default=None, help="exit after this many requests")
    sp.set_defaults(func=cmd_rep)

    sp = sub.add_parser("bridge", parents=[common], help="republish one carrier:/topic onto another")
    sp.add_argument("--from", dest="src", required=True, type=_endpoint, metavar="CARRIER:/TOPIC")
    sp.add_argument("--to", dest="dst", required=True, type=_endpoint, metavar="CARRIER:/TOPIC")
    sp.set_defaults(func=cmd_bridge)

    sp = sub.add_parser("bench", parents=[common], help="echo round-trip latency")
    sp.add_argument("--kind", choices=("native", "image", "audio"), default="native")
    sp.add_argument("--carrier", default="inproc")
    sp.add_argument("--payload-bytes", type=int, default=1024)
    sp.add_argument("--count", type=int, default=100)
    sp.add_argument("--out", choices=("json", "csv"), default="json")
    sp.add_argument("--output", default=None, help="write to this file instead of stdout")
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("demo", parents=[common], help="run a mirror/forward/channel scenario")
    sp.add_argument("scenario", choices=("mirror", "forward", "channel"))
    sp.add_argument("--listeners", type=int, default=2)
    sp.add_argument("--carrier", default="tcp")
    sp.add_argument("--message", default="hello")
    sp.add_argument("--input", default=None, help="text the mirror publisher 'types'")
    sp.add_argument("--hops", type=int, default=3)
    sp.add_argument("--disable", type=int, action="append", default=None, choices=(0, 1, 2))
    sp.set_defaults(func=cmd_demo)

    sub.add_parser("transports", parents=[common], help="list carriers").set_defaults(func=cmd_transports)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if args.broker:
        os.environ["WRAPIFY_BROKER"] = args.broker
    if args.registry:
        os.environ["WRAPIFY_REGISTRY"] = args.registry
    if args.mode_config:
        os.environ["WRAPIFY_MODES"] = args.mode_config
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return EXIT_OK
    except AddressInUse as exc:
        print(f"wrapify: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (WrapifyError, OSError, ValueError) as exc:
        print(f"wrapify: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
