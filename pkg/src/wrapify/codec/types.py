"""Payload value types: dense arrays, image frames, audio chunks."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from wrapify.errors import GeometryMismatch, InvalidValue, SampleCountMismatch, SampleOutOfRange

# dtype name -> little-endian numpy dtype
DTYPES: dict[str, np.dtype] = {
    "i8": np.dtype("<i1"),
    "i16": np.dtype("<i2"),
    "i32": np.dtype("<i4"),
    "i64": np.dtype("<i8"),
    "u8": np.dtype("<u1"),
    "u16": np.dtype("<u2"),
    "u32": np.dtype("<u4"),
    "u64": np.dtype("<u8"),
    "f32": np.dtype("<f4"),
    "f64": np.dtype("<f8"),
    "bool": np.dtype("?"),
}
_KIND_SIZE_TO_NAME = {(dt.kind, dt.itemsize): name for name, dt in DTYPES.items()}


def dtype_name(dt: np.dtype) -> str | None:
    return _KIND_SIZE_TO_NAME.get((np.dtype(dt).kind, np.dtype(dt).itemsize))


@dataclass(frozen=True)
class DenseArray:
    """Row-major little-endian array bytes with explicit shape and dtype.

    ``device_tag`` is placement metadata only ("cpu", "gpu:0", ...).
    """

    shape: tuple[int, ...]
    dtype: str
    data: bytes
    device_tag: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        object.__setattr__(self, "data", bytes(self.data))
        if self.dtype not in DTYPES:
            raise InvalidValue(f"unsupported dtype {self.dtype!r}")
        if any(s < 0 for s in self.shape):
            raise InvalidValue(f"negative extent in shape {self.shape}")
        expected = math.prod(self.shape) * DTYPES[self.dtype].itemsize
        if len(self.data) != expected:
            raise InvalidValue(f"data has {len(self.data)} bytes, shape {self.shape} of {self.dtype} needs {expected}")

    @classmethod
    def from_numpy(cls, arr: np.ndarray, device_tag: str | None = None) -> DenseArray:
        name = dtype_name(arr.dtype)
        if name is None:
            raise InvalidValue(f"unsupported numpy dtype {arr.dtype}")
        le = np.ascontiguousarray(arr, dtype=DTYPES[name])
        return cls(arr.shape, name, le.tobytes(), device_tag)

    def to_numpy(self) -> np.ndarray:
        return np.frombuffer(self.data, dtype=DTYPES[self.dtype]).reshape(self.shape).copy()


@dataclass(frozen=True)
class ImageFrame:
    """An image as raw interleaved 8-bit pixels, or a JPEG stream.

    Geometry is checked by :func:`wrapify.codec.encode_image`, not here, so a
    malformed frame can still be constructed and reported on.
    """

    width: int
    height: int
    channels: int
    pixel_data: bytes
    encoding: str = "raw8"

    def __post_init__(self) -> None:
        object.__setattr__(self, "pixel_data", bytes(self.pixel_data))

    def validate(self) -> None:
        if self.encoding not in ("raw8", "jpeg"):
            raise GeometryMismatch(f"unknown image encoding {self.encoding!r}")
        if self.channels not in (1, 3):
            raise GeometryMismatch(f"channels must be 1 or 3, got {self.channels}")
        if self.width < 0 or self.height < 0:
            raise GeometryMismatch("negative image dimension")
        if self.encoding == "raw8" and len(self.pixel_data) != self.width * self.height * self.channels:
            raise GeometryMismatch(
                f"{self.width}x{self.height}x{self.channels} raw image needs "
                f"{self.width * self.height * self.channels} bytes, got {len(self.pixel_data)}"
            )

    @classmethod
    def from_array(cls, arr: np.ndarray) -> ImageFrame:
        """Accept an (H, W) or (H, W, C) uint8 array."""
        arr = np.asarray(arr)
        if arr.dtype != np.uint8:
            raise GeometryMismatch(f"image arrays must be uint8, got {arr.dtype}")
        if arr.ndim == 2:
            h, w = arr.shape
            c = 1
        elif arr.ndim == 3:
            h, w, c = arr.shape
        else:
            raise GeometryMismatch(f"image arrays must be 2-D or 3-D, got shape {arr.shape}")
        frame = cls(w, h, c, np.ascontiguousarray(arr).tobytes())
        frame.validate()
        return frame

    def to_array(self) -> np.ndarray:
        raw = self.to_raw()
        arr = np.frombuffer(raw.pixel_data, dtype=np.uint8).reshape(raw.height, raw.width, raw.channels)
        return arr.copy()

    def to_jpeg(self, quality: int = 90) -> ImageFrame:
        if self.encoding == "jpeg":
            return self
        from PIL import Image  # optional dependency

        self.validate()
        mode = "L" if self.channels == 1 else "RGB"
        img = Image.frombytes(mode, (self.width, self.height), self.pixel_data)
        buf = io.BytesIO()
        img.save(buf, format="JPEG", quality=quality)
        return ImageFrame(self.width, self.height, self.channels, buf.getvalue(), "jpeg")

    def to_raw(self) -> ImageFrame:
        if self.encoding == "raw8":
            return self
        from PIL import Image  # optional dependency

        img = Image.open(io.BytesIO(self.pixel_data))
        img = img.convert("L" if self.channels == 1 else "RGB")
        if img.size != (self.width, self.height):
            raise GeometryMismatch(f"JPEG is {img.size}, header says {(self.width, self.height)}")
        return ImageFrame(self.width, self.height, self.channels, img.tobytes(), "raw8")


@dataclass(frozen=True, eq=False)
class AudioChunk:
    """Frame-interleaved float32 samples: sample s of channel c is at s * channels + c."""

    rate: int
    chunk: int
    channels: int
    samples: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        samples = np.ascontiguousarray(np.asarray(self.samples, dtype="<f4").reshape(-1))
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AudioChunk):
            return NotImplemented
        return (
            (self.rate, self.chunk, self.channels) == (other.rate, other.chunk, other.channels)
            and self.samples.tobytes() == other.samples.tobytes()
        )

    __hash__ = None  # type: ignore[assignment]

    def validate(self) -> None:
        for name in ("rate", "chunk", "channels"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value <= 0:
                raise SampleCountMismatch(f"{name} must be a positive integer, got {value!r}")
        if self.samples.size != self.chunk * self.channels:
            raise SampleCountMismatch(
                f"chunk={self.chunk} x channels={self.channels} needs {self.chunk * self.channels} samples, "
                f"got {self.samples.size}"
            )
        if not np.all(np.isfinite(self.samples)) or np.any(np.abs(self.samples) > 1.0):
            raise SampleOutOfRange("samples must be finite and within [-1, 1]")

    @classmethod
    def from_array(cls, arr: np.ndarray | Sequence[float], rate: int) -> AudioChunk:
        """Accept sounddevice-style (frames,) or (frames, channels) arrays."""
        arr = np.asarray(arr)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2:
            raise SampleCountMismatch(f"audio arrays must be 1-D or 2-D, got shape {arr.shape}")
        chunk, channels = arr.shape
        return cls(int(rate), int(chunk), int(channels), arr.reshape(-1))

    def to_array(self) -> np.ndarray:
        return self.samples.reshape(self.chunk, self.channels).copy()
