"""Echo round-trip latency measurement over a request/reply carrier."""

from __future__ import annotations

import csv
import io
import json
import math
import tempfile
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from wrapify.codec import (
    AudioChunk,
    ImageFrame,
    MessageEnvelope,
    decode_audio,
    decode_image,
    decode_native_envelope,
    encode_audio,
    encode_image,
    encode_native_envelope,
)
from wrapify.errors import ClosedEndpoint
from wrapify.transport.runtime import Runtime

WARMUP = 5
MIN_COUNT = 10
ROUNDTRIP_LIMIT_MS = 5000
BENCH_TOPIC = "/wrapify/bench"
CSV_FIELDS = ("payload_kind", "payload_bytes", "transport", "count", "p50_us", "p95_us", "p99_us", "mean_us")


@dataclass(frozen=True)
class BenchConfig:
    kind: str = "native"
    payload_bytes: int = 1024
    count: int = 100
    transport: str = "inproc"
    warmup: int = WARMUP

    def __post_init__(self) -> None:
        if self.count < MIN_COUNT:
            raise ValueError(f"count must be >= {MIN_COUNT}, got {self.count}")
        if self.payload_bytes < 0:
            raise ValueError("payload_bytes must be non-negative")
        if self.kind not in ("native", "image", "audio"):
            raise ValueError(f"unknown payload kind {self.kind!r}")


@dataclass
class BenchRecord:
    payload_kind: str
    payload_bytes: int
    transport: str
    count: int
    latencies_us: list[int]
    stats: dict[str, float] = field(default_factory=dict)

    def row(self) -> dict[str, object]:
        return {
            "payload_kind": self.payload_kind,
            "payload_bytes": self.payload_bytes,
            "transport": self.transport,
            "count": self.count,
            **{f"{k}_us": v for k, v in self.stats.items()},
        }

    def to_json(self) -> str:
        return json.dumps(asdict(self), separators=(",", ":"))


def latency_stats(samples: list[int]) -> dict[str, float]:
    arr = np.asarray(samples, dtype=np.float64)
    p50, p95, p99 = np.percentile(arr, [50, 95, 99])
    return {"p50": round(float(p50), 1), "p95": round(float(p95), 1), "p99": round(float(p99), 1),
            "mean": round(float(arr.mean()), 1)}


def to_csv(records: list[BenchRecord]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in records:
        w.writerow(r.row())
    return buf.getvalue()


def make_payload(kind: str, payload_bytes: int):
    """A payload whose wire body is ``payload_bytes`` long (native: the JSON text)."""
    if kind == "native":
        return "x" * max(payload_bytes - 2, 0)
    if kind == "image":
        side = math.isqrt(payload_bytes // 3) if payload_bytes % 3 == 0 else 0
        if side and side * side * 3 == payload_bytes:
            w, h, c = side, side, 3
        else:
            w, h, c = max(payload_bytes, 1), 1, 1
        pixels = bytes(i & 0xFF for i in range(w * h * c))
        return ImageFrame(w, h, c, pixels)
    n = max(payload_bytes // 4, 1)
    samples = np.sin(np.linspace(0, 2 * np.pi, n, dtype=np.float32)) * 0.5
    return AudioChunk(44100, n, 1, samples)


def _encode(kind: str, payload) -> MessageEnvelope:
    if kind == "native":
        return encode_native_envelope(payload, BENCH_TOPIC)
    if kind == "image":
        return encode_image(payload, BENCH_TOPIC)
    return encode_audio(payload, BENCH_TOPIC)


def _decode(kind: str, env: MessageEnvelope):
    if kind == "native":
        return decode_native_envelope(env)
    if kind == "image":
        return decode_image(env)
    return decode_audio(env)


def run_bench(
    kind: str = "native",
    payload_bytes: int = 1024,
    count: int = 100,
    transport: str = "inproc",
    runtime: Runtime | None = None,
) -> BenchRecord:
    """Time ``count`` encode -> echo -> decode cycles; one-way latency is half of each."""
    cfg = BenchConfig(kind, payload_bytes, count, transport)
    payload = make_payload(kind, payload_bytes)

    tmp = None
    own = runtime is None
    if own:
        tmp = tempfile.TemporaryDirectory(prefix="wrapify-bench-")
        runtime = Runtime(registry=str(Path(tmp.name) / "registry.json"), direct=True)
    stop = threading.Event()
    replier = runtime.open_replier(BENCH_TOPIC, transport)

    def echo_loop() -> None:
        try:
            replier.serve(lambda env: env, stop)
        except ClosedEndpoint:
            pass

    server = threading.Thread(target=echo_loop, name="bench-echo", daemon=True)
    server.start()
    requester = runtime.open_requester(BENCH_TOPIC, transport)
    samples: list[int] = []
    try:
        for _ in range(cfg.count):
            t0 = time.perf_counter_ns()
            reply = requester.request(_encode(kind, payload), timeout_ms=ROUNDTRIP_LIMIT_MS)
            _decode(kind, reply)
            samples.append((time.perf_counter_ns() - t0) // 2000)
    finally:
        stop.set()
        server.join(timeout=1.0)
        requester.close()
        replier.close()
        if own:
            runtime.close()
            tmp.cleanup()
    return BenchRecord(kind, payload_bytes, transport, cfg.count, samples, latency_stats(samples[cfg.warmup:]))
