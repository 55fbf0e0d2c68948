"""Length-prefixed multipart framing for stream sockets.

A frame is ``u32be part_count`` followed by ``u32be length + bytes`` per part.
"""

from __future__ import annotations

import socket
import struct
from typing import Sequence

_U32 = struct.Struct(">I")
MAX_PARTS = 1 << 16
MAX_PART_BYTES = 1 << 30


class FrameError(ConnectionError):
    pass


def encode_frame(parts: Sequence[bytes]) -> bytes:
    chunks = [_U32.pack(len(parts))]
    for part in parts:
        chunks.append(_U32.pack(len(part)))
        chunks.append(bytes(part))
    return b"".join(chunks)


def decode_frame(buf: bytes) -> list[bytes]:
    """Parse one complete frame held entirely in ``buf``."""
    (count,), pos = _U32.unpack_from(buf, 0), 4
    parts = []
    for _ in range(count):
        (n,) = _U32.unpack_from(buf, pos)
        pos += 4
        if pos + n > len(buf):
            raise FrameError("truncated frame")
        parts.append(buf[pos : pos + n])
        pos += n
    if pos != len(buf):
        raise FrameError(f"{len(buf) - pos} trailing bytes after frame")
    return parts


def recv_exactly(sock: socket.socket, n: int) -> bytes:
    buf = bytearray(n)
    view = memoryview(buf)
    got = 0
    while got < n:
        k = sock.recv_into(view[got:], n - got)
        if k == 0:
            raise EOFError("peer closed the connection")
        got += k
    return bytes(buf)


def read_frame(sock: socket.socket) -> list[bytes]:
    """Block until one full frame arrives. Raises EOFError on clean close."""
    (count,) = _U32.unpack(recv_exactly(sock, 4))
    if count > MAX_PARTS:
        raise FrameError(f"frame declares {count} parts")
    parts = []
    for _ in range(count):
        (n,) = _U32.unpack(recv_exactly(sock, 4))
        if n > MAX_PART_BYTES:
            raise FrameError(f"part of {n} bytes exceeds limit")
        parts.append(recv_exactly(sock, n))
    return parts


def write_frame(sock: socket.socket, parts: Sequence[bytes]) -> None:
    sock.sendall(encode_frame(parts))
