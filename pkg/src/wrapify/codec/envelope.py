"""The multipart envelope every transport moves.

Wire layout: ``[topic, header_json, *payload]`` where the header is a JSON
object with keys ``ver``, ``ts``, ``kind`` and ``meta``.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from wrapify.errors import MalformedEnvelope
from wrapify.topic import check_topic

WIRE_VERSION = 1
KINDS = ("native", "image", "audio")


def dump_json(obj: Any) -> bytes:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False, allow_nan=False).encode("utf-8")


@dataclass(frozen=True)
class MessageEnvelope:
    topic: str
    header: Mapping[str, Any]
    payload: tuple[bytes, ...]
    # Raw header bytes as received, so forwarding an untouched envelope is byte-exact.
    _header_bytes: bytes | None = field(default=None, repr=False, compare=False)

    @property
    def kind(self) -> str:
        return self.header["kind"]

    @property
    def meta(self) -> Mapping[str, Any]:
        return self.header["meta"]

    @property
    def ts(self) -> float:
        return self.header["ts"]

    @property
    def header_bytes(self) -> bytes:
        if self._header_bytes is not None:
            return self._header_bytes
        return dump_json(dict(self.header))

    @property
    def parts(self) -> list[bytes]:
        return [self.topic.encode("utf-8"), self.header_bytes, *self.payload]

    @classmethod
    def from_parts(cls, parts: Sequence[bytes]) -> MessageEnvelope:
        if len(parts) < 2:
            raise MalformedEnvelope(f"envelope needs at least 2 parts, got {len(parts)}")
        try:
            topic = bytes(parts[0]).decode("utf-8")
            header = json.loads(bytes(parts[1]).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise MalformedEnvelope(f"unreadable envelope: {exc}") from exc
        _check_header(header)
        return cls(topic, header, tuple(bytes(p) for p in parts[2:]), _header_bytes=bytes(parts[1]))

    def with_topic(self, topic: str) -> MessageEnvelope:
        check_topic(topic)
        return MessageEnvelope(topic, self.header, self.payload, self._header_bytes)

    def with_meta(self, **updates: Any) -> MessageEnvelope:
        header = dict(self.header)
        header["meta"] = {**header["meta"], **updates}
        return MessageEnvelope(self.topic, header, self.payload)


def _check_header(header: Any) -> None:
    if not isinstance(header, dict):
        raise MalformedEnvelope("header is not a JSON object")
    missing = {"ver", "ts", "kind", "meta"} - header.keys()
    if missing:
        raise MalformedEnvelope(f"header missing keys {sorted(missing)}")
    if header["ver"] != WIRE_VERSION:
        raise MalformedEnvelope(f"unsupported wire version {header['ver']!r}")
    if not isinstance(header["meta"], dict):
        raise MalformedEnvelope("header meta is not a JSON object")


def make_envelope(
    topic: str,
    kind: str,
    meta: Mapping[str, Any],
    payload: Sequence[bytes],
    ts: float | None = None,
) -> MessageEnvelope:
    check_topic(topic)
    header = {"ver": WIRE_VERSION, "ts": time.time() if ts is None else float(ts), "kind": kind, "meta": dict(meta)}
    return MessageEnvelope(topic, header, tuple(bytes(p) for p in payload))
