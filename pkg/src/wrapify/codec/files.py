"""Raw on-disk containers for images and audio chunks used by the command-line tool.

Layout: an 8-byte magic, three u32 little-endian header fields, then the body.
Images store width, height, channels and interleaved 8-bit pixels. Audio
stores rate, chunk, channels and f32le samples.
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

from wrapify.codec.types import AudioChunk, ImageFrame
from wrapify.errors import CodecError

IMAGE_MAGIC = b"WFIMG\0\0\0"
AUDIO_MAGIC = b"WFAUD\0\0\0"
_HEADER = struct.Struct("<III")


class ContainerError(CodecError):
    pass


def _split(blob: bytes, magic: bytes) -> tuple[tuple[int, int, int], bytes]:
    if blob[:8] != magic:
        raise ContainerError(f"bad magic {blob[:8]!r}, expected {magic!r}")
    if len(blob) < 8 + _HEADER.size:
        raise ContainerError("truncated header")
    return _HEADER.unpack_from(blob, 8), blob[8 + _HEADER.size:]


def pack_image(img: ImageFrame) -> bytes:
    raw = img.to_raw()
    return IMAGE_MAGIC + _HEADER.pack(raw.width, raw.height, raw.channels) + raw.pixel_data


def unpack_image(blob: bytes) -> ImageFrame:
    (w, h, c), body = _split(blob, IMAGE_MAGIC)
    img = ImageFrame(w, h, c, body)
    img.validate()
    return img


def pack_audio(aud: AudioChunk) -> bytes:
    return AUDIO_MAGIC + _HEADER.pack(aud.rate, aud.chunk, aud.channels) + aud.samples.astype("<f4").tobytes()


def unpack_audio(blob: bytes) -> AudioChunk:
    (rate, chunk, channels), body = _split(blob, AUDIO_MAGIC)
    if len(body) % 4:
        raise ContainerError("audio body is not a whole number of f32 samples")
    aud = AudioChunk(rate, chunk, channels, np.frombuffer(body, dtype="<f4"))
    aud.validate()
    return aud


def read_container(fh: BinaryIO, kind: str) -> ImageFrame | AudioChunk:
    blob = fh.read()
    return unpack_image(blob) if kind == "image" else unpack_audio(blob)
