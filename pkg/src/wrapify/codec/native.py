"""Native values as JSON text, with a plugin escape hatch for everything else.

Plain values map onto their JSON analogs. A value claimed by a plugin is
written as ``{"__wrapyfi__": [plugin_id, base64_payload, meta]}``; a user map
that itself contains one of the two reserved keys is wrapped as
``{"__wrapyfi_lit__": {...}}`` so decoding stays unambiguous.
"""

from __future__ import annotations

import base64
import binascii
import json
import math
import threading
from dataclasses import dataclass
from typing import Any, Callable, Mapping

import numpy as np

from wrapify.codec.types import DTYPES, AudioChunk, DenseArray, ImageFrame, dtype_name
from wrapify.errors import (
    DepthExceeded,
    DuplicatePlugin,
    InvalidPluginId,
    InvalidValue,
    MalformedJson,
    NonFiniteFloat,
    PluginDecodeFailure,
    UnknownPlugin,
)

ESCAPE_KEY = "__wrapyfi__"
LITERAL_KEY = "__wrapyfi_lit__"
MAX_DEPTH = 64
INT_MIN, INT_MAX = -(2**63), 2**63 - 1


@dataclass(frozen=True)
class Extension:
    """Force ``payload`` through the plugin named ``plugin_id``."""

    plugin_id: str
    payload: Any


@dataclass(frozen=True)
class Plugin:
    plugin_id: str
    detect: Callable[[Any], bool]
    encode: Callable[[Any], tuple[str, dict]]
    decode: Callable[[str, Mapping[str, Any], Mapping[str, Any]], Any]


def b64encode(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def b64decode(text: str) -> bytes:
    return base64.b64decode(text.encode("ascii"), validate=True)


class PluginRegistry:
    """Ordered plugin table; reads are lock-free snapshots, writes are exclusive."""

    def __init__(self, builtins: bool = True) -> None:
        self._lock = threading.Lock()
        self._plugins: tuple[Plugin, ...] = ()
        if builtins:
            for plugin in BUILTIN_PLUGINS:
                self.register(plugin)

    def register(self, plugin: Plugin) -> None:
        pid = plugin.plugin_id
        if not isinstance(pid, str) or not pid or "." in pid or "$" in pid:
            raise InvalidPluginId(f"plugin id {pid!r} must be a non-empty string without '.' or '$'")
        with self._lock:
            if any(p.plugin_id == pid for p in self._plugins):
                raise DuplicatePlugin(f"plugin {pid!r} already registered")
            self._plugins = (*self._plugins, plugin)

    def get(self, plugin_id: str) -> Plugin:
        for plugin in self._plugins:
            if plugin.plugin_id == plugin_id:
                return plugin
        raise UnknownPlugin(f"no plugin registered as {plugin_id!r}")

    def find(self, value: Any) -> Plugin | None:
        for plugin in self._plugins:
            if plugin.detect(value):
                return plugin
        return None

    @property
    def ids(self) -> list[str]:
        return [p.plugin_id for p in self._plugins]


# -- built-in plugins ---------------------------------------------------------


def _array_meta(shape, dtype: str, device: str | None) -> dict:
    meta = {"shape": list(shape), "dtype": dtype}
    if device is not None:
        meta["device"] = device
    return meta


def _read_array_meta(meta: Mapping[str, Any]) -> tuple[tuple[int, ...], str]:
    try:
        shape = tuple(int(s) for s in meta["shape"])
        dtype = meta["dtype"]
    except (KeyError, TypeError, ValueError) as exc:
        raise PluginDecodeFailure(f"bad array meta {meta!r}") from exc
    if dtype not in DTYPES:
        raise PluginDecodeFailure(f"unsupported dtype {dtype!r}")
    return shape, dtype


def _remap(device: str | None, options: Mapping[str, Any]) -> str | None:
    remap = options.get("device_remap") or {}
    if device is not None and device in remap:
        return remap[device]
    # "*" remaps every tagged array regardless of its source device
    if device is not None and "*" in remap:
        return remap["*"]
    return device


def _encode_dense(arr: DenseArray) -> tuple[str, dict]:
    return b64encode(arr.data), _array_meta(arr.shape, arr.dtype, arr.device_tag)


def _decode_dense(text: str, meta: Mapping[str, Any], options: Mapping[str, Any]) -> DenseArray:
    shape, dtype = _read_array_meta(meta)
    try:
        return DenseArray(shape, dtype, b64decode(text), _remap(meta.get("device"), options))
    except (binascii.Error, InvalidValue) as exc:
        raise PluginDecodeFailure(f"dense_array: {exc}") from exc


def _encode_ndarray(arr: np.ndarray) -> tuple[str, dict]:
    dense = DenseArray.from_numpy(arr)
    return b64encode(dense.data), _array_meta(dense.shape, dense.dtype, None)


def _decode_ndarray(text: str, meta: Mapping[str, Any], options: Mapping[str, Any]) -> np.ndarray:
    return _decode_dense(text, meta, options).to_numpy()


def _encode_image(frame: ImageFrame) -> tuple[str, dict]:
    frame.validate()
    meta = {"width": frame.width, "height": frame.height, "channels": frame.channels, "encoding": frame.encoding}
    return b64encode(frame.pixel_data), meta


def _decode_image(text: str, meta: Mapping[str, Any], options: Mapping[str, Any]) -> ImageFrame:
    try:
        frame = ImageFrame(meta["width"], meta["height"], meta["channels"], b64decode(text), meta["encoding"])
        frame.validate()
    except Exception as exc:
        raise PluginDecodeFailure(f"image_frame: {exc}") from exc
    return frame


def _encode_audio(aud: AudioChunk) -> tuple[str, dict]:
    aud.validate()
    meta = {"rate": aud.rate, "chunk": aud.chunk, "channels": aud.channels, "format": "f32le"}
    return b64encode(aud.samples.tobytes()), meta


def _decode_audio(text: str, meta: Mapping[str, Any], options: Mapping[str, Any]) -> AudioChunk:
    try:
        samples = np.frombuffer(b64decode(text), dtype="<f4")
        aud = AudioChunk(meta["rate"], meta["chunk"], meta["channels"], samples)
        aud.validate()
    except Exception as exc:
        raise PluginDecodeFailure(f"audio_chunk: {exc}") from exc
    return aud


BUILTIN_PLUGINS = (
    Plugin("dense_array", lambda v: isinstance(v, DenseArray), _encode_dense, _decode_dense),
    Plugin(
        "ndarray",
        lambda v: isinstance(v, np.ndarray) and dtype_name(v.dtype) is not None,
        _encode_ndarray,
        _decode_ndarray,
    ),
    Plugin("image_frame", lambda v: isinstance(v, ImageFrame), _encode_image, _decode_image),
    Plugin("audio_chunk", lambda v: isinstance(v, AudioChunk), _encode_audio, _decode_audio),
)

default_registry = PluginRegistry()


def register_plugin(plugin: Plugin, registry: PluginRegistry | None = None) -> None:
    (registry or default_registry).register(plugin)


# -- encode -------------------------------------------------------------------


def _to_json_tree(value: Any, registry: PluginRegistry, depth: int) -> Any:
    if depth > MAX_DEPTH:
        raise DepthExceeded(f"value nests deeper than {MAX_DEPTH} levels")
    if value is None or isinstance(value, (bool, str)):
        return value
    if isinstance(value, int):
        if not INT_MIN <= value <= INT_MAX:
            raise InvalidValue(f"int {value} outside signed 64-bit range")
        return int(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise NonFiniteFloat(f"{value!r} has no JSON representation")
        return float(value)
    if isinstance(value, (list, tuple)):
        return [_to_json_tree(v, registry, depth + 1) for v in value]
    if isinstance(value, dict):
        out = {}
        for k, v in value.items():
            if not isinstance(k, str):
                raise InvalidValue(f"map keys must be strings, got {type(k).__name__}")
            out[k] = _to_json_tree(v, registry, depth + 1)
        if ESCAPE_KEY in out or LITERAL_KEY in out:
            return {LITERAL_KEY: out}
        return out
    if isinstance(value, Extension):
        return _escape(registry.get(value.plugin_id), value.payload)
    if isinstance(value, np.generic) and dtype_name(value.dtype) is not None:
        return _to_json_tree(value.item(), registry, depth)
    plugin = registry.find(value)
    if plugin is None:
        raise UnknownPlugin(f"no plugin handles values of type {type(value).__name__}")
    return _escape(plugin, value)


def _escape(plugin: Plugin, value: Any) -> dict:
    text, meta = plugin.encode(value)
    return {ESCAPE_KEY: [plugin.plugin_id, text, meta]}


def encode_native(value: Any, registry: PluginRegistry | None = None) -> bytes:
    """Encode a native value to UTF-8 JSON text."""
    tree = _to_json_tree(value, registry or default_registry, 1)
    return json.dumps(tree, separators=(",", ":"), ensure_ascii=False, allow_nan=False).encode("utf-8")


# -- decode -------------------------------------------------------------------


def _reject_constant(name: str) -> Any:
    raise MalformedJson(f"non-standard JSON constant {name}")


def _from_json_tree(node: Any, registry: PluginRegistry, options: Mapping[str, Any], depth: int) -> Any:
    if depth > MAX_DEPTH:
        raise DepthExceeded(f"value nests deeper than {MAX_DEPTH} levels")
    if isinstance(node, list):
        return [_from_json_tree(v, registry, options, depth + 1) for v in node]
    if isinstance(node, dict):
        if len(node) == 1 and ESCAPE_KEY in node:
            return _unescape(node[ESCAPE_KEY], registry, options)
        if len(node) == 1 and LITERAL_KEY in node and isinstance(node[LITERAL_KEY], dict):
            node = node[LITERAL_KEY]
        return {k: _from_json_tree(v, registry, options, depth + 1) for k, v in node.items()}
    if isinstance(node, int) and not isinstance(node, bool) and not INT_MIN <= node <= INT_MAX:
        raise InvalidValue(f"int {node} outside signed 64-bit range")
    return node


def _unescape(body: Any, registry: PluginRegistry, options: Mapping[str, Any]) -> Any:
    if not (isinstance(body, list) and len(body) == 3 and isinstance(body[0], str) and isinstance(body[1], str)):
        raise PluginDecodeFailure(f"malformed extension object {body!r}")
    plugin_id, text, meta = body
    plugin = registry.get(plugin_id)
    try:
        return plugin.decode(text, meta if isinstance(meta, dict) else {}, options)
    except PluginDecodeFailure:
        raise
    except Exception as exc:
        raise PluginDecodeFailure(f"plugin {plugin_id!r} failed to decode: {exc}") from exc


def decode_native(
    text: bytes | str,
    decode_options: Mapping[str, Any] | None = None,
    registry: PluginRegistry | None = None,
) -> Any:
    """Inverse of :func:`encode_native`.

    ``decode_options["device_remap"]`` maps source device tags of arrays to
    the tags they should carry on this side.
    """
    try:
        if isinstance(text, (bytes, bytearray, memoryview)):
            text = bytes(text).decode("utf-8")
        tree = json.loads(text, parse_constant=_reject_constant)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedJson(str(exc)) from exc
    except RecursionError as exc:
        raise DepthExceeded("JSON nests too deeply") from exc
    return _from_json_tree(tree, registry or default_registry, decode_options or {}, 1)
