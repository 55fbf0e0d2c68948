"""Encode/decode native values, images and audio chunks into envelopes."""

from __future__ import annotations

from typing import Any, Mapping

import numpy as np

from wrapify.codec.envelope import KINDS, WIRE_VERSION, MessageEnvelope, dump_json, make_envelope
from wrapify.codec.native import (
    ESCAPE_KEY,
    LITERAL_KEY,
    MAX_DEPTH,
    Extension,
    Plugin,
    PluginRegistry,
    decode_native,
    default_registry,
    encode_native,
    register_plugin,
)
from wrapify.codec.types import DTYPES, AudioChunk, DenseArray, ImageFrame
from wrapify.errors import GeometryMismatch, KindMismatch, SampleCountMismatch

__all__ = [
    "AudioChunk",
    "DTYPES",
    "DenseArray",
    "ESCAPE_KEY",
    "Extension",
    "ImageFrame",
    "KINDS",
    "LITERAL_KEY",
    "MAX_DEPTH",
    "MessageEnvelope",
    "Plugin",
    "PluginRegistry",
    "WIRE_VERSION",
    "decode_audio",
    "decode_image",
    "decode_native",
    "decode_native_envelope",
    "default_registry",
    "dump_json",
    "encode_audio",
    "encode_image",
    "encode_native",
    "encode_native_envelope",
    "make_envelope",
    "register_plugin",
]


def _expect_kind(env: MessageEnvelope, kind: str) -> None:
    if env.kind != kind:
        raise KindMismatch(f"expected a {kind!r} envelope, got {env.kind!r}")


def encode_native_envelope(
    value: Any, topic: str, registry: PluginRegistry | None = None, meta: Mapping[str, Any] | None = None
) -> MessageEnvelope:
    return make_envelope(topic, "native", meta or {}, [encode_native(value, registry)])


def decode_native_envelope(
    env: MessageEnvelope, decode_options: Mapping[str, Any] | None = None, registry: PluginRegistry | None = None
) -> Any:
    _expect_kind(env, "native")
    if not env.payload:
        raise KindMismatch("native envelope carries no payload part")
    return decode_native(env.payload[0], decode_options, registry)


def encode_image(img: ImageFrame, topic: str) -> MessageEnvelope:
    img.validate()
    meta = {"width": img.width, "height": img.height, "channels": img.channels, "encoding": img.encoding}
    return make_envelope(topic, "image", meta, [img.pixel_data])


def decode_image(env: MessageEnvelope) -> ImageFrame:
    _expect_kind(env, "image")
    meta = env.meta
    try:
        frame = ImageFrame(
            int(meta["width"]), int(meta["height"]), int(meta["channels"]), env.payload[0], meta["encoding"]
        )
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise GeometryMismatch(f"incomplete image envelope: {exc}") from exc
    frame.validate()
    return frame


def encode_audio(aud: AudioChunk, topic: str) -> MessageEnvelope:
    aud.validate()
    meta = {"rate": aud.rate, "chunk": aud.chunk, "channels": aud.channels, "format": "f32le"}
    return make_envelope(topic, "audio", meta, [aud.samples.tobytes()])


def decode_audio(env: MessageEnvelope) -> AudioChunk:
    _expect_kind(env, "audio")
    meta = env.meta
    try:
        rate, chunk, channels = int(meta["rate"]), int(meta["chunk"]), int(meta["channels"])
        data = env.payload[0]
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise SampleCountMismatch(f"incomplete audio envelope: {exc}") from exc
    if meta.get("format", "f32le") != "f32le":
        raise SampleCountMismatch(f"unsupported sample format {meta.get('format')!r}")
    if len(data) != chunk * channels * 4:
        raise SampleCountMismatch(f"chunk={chunk} x channels={channels} needs {chunk * channels * 4} bytes, got {len(data)}")
    return AudioChunk(rate, chunk, channels, np.frombuffer(data, dtype="<f4"))
