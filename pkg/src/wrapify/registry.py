"""Declarative method registration and per-mode invocation.

A method decorated with :func:`register` (once per return value) runs as
plain code until a mode is activated::

    class MirrorCls(MiddlewareCommunicator):
        @MiddlewareCommunicator.register("NativeObject", "$0", "MirrorCls", "/example/read_msg",
                                         carrier="tcp", should_wait="$blocking")
        def read_msg(self, mware, msg="", blocking=True):
            return {"msg": msg},

    mirror = MirrorCls()
    mirror.activate_communication("read_msg", mode="publish")

The first-listed decorator governs the first return value.
"""

from __future__ import annotations

import enum
import functools
import inspect
import json
import logging
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Any, Callable, Mapping, Sequence

import numpy as np
import yaml

from wrapify.codec import (
    AudioChunk,
    ImageFrame,
    MessageEnvelope,
    PluginRegistry,
    decode_audio,
    decode_image,
    decode_native_envelope,
    encode_audio,
    encode_image,
    encode_native_envelope,
)
from wrapify.errors import (
    DuplicateMethod,
    GeometryMismatch,
    InvalidSpec,
    ParseError,
    ReturnArityMismatch,
    SampleCountMismatch,
    UnknownMethod,
    UnknownMode,
    UnresolvedSplice,
    UnsupportedCarrier,
)
from wrapify.topic import check_topic
from wrapify.transport import Endpoint, Runtime, default_runtime

log = logging.getLogger(__name__)

PAYLOAD_KINDS = ("NativeObject", "Image", "AudioChunk")
LEGAL_EXTRAS = {
    "NativeObject": frozenset({"queue_size"}),
    "Image": frozenset({"width", "height", "rgb", "jpg", "queue_size"}),
    "AudioChunk": frozenset({"rate", "chunk", "channels", "queue_size"}),
}
_SPECS_ATTR = "__wrapify_specs__"


class Mode(str, enum.Enum):
    PUBLISH = "publish"
    LISTEN = "listen"
    REQUEST = "request"
    REPLY = "reply"
    DISABLE = "disable"

    @classmethod
    def parse(cls, value: Mode | str | None) -> Mode:
        if value is None:
            return cls.DISABLE
        if isinstance(value, Mode):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise UnknownMode(f"unknown mode {value!r}; expected one of {[m.value for m in cls]}") from None


@dataclass(frozen=True)
class SpliceMarker:
    """A ``$0`` / ``$name`` placeholder filled from the call's arguments."""

    raw: str
    index: int | None = None
    name: str | None = None

    @classmethod
    def parse(cls, raw: str) -> SpliceMarker:
        body = raw[1:]
        if body.isdigit():
            return cls(raw, index=int(body))
        if body.isidentifier():
            return cls(raw, name=body)
        raise InvalidSpec(f"malformed splice marker {raw!r}")

    def resolve(self, args: Sequence[Any], kwargs: Mapping[str, Any], signature: inspect.Signature | None) -> Any:
        params = list(signature.parameters.values()) if signature is not None else []
        if self.index is not None:
            if self.index < len(args):
                return args[self.index]
            # passed by keyword instead of position
            if self.index < len(params) and params[self.index].name in kwargs:
                return kwargs[params[self.index].name]
            raise UnresolvedSplice(f"{self.raw}: call has only {len(args)} positional argument(s)")
        if self.name in kwargs:
            return kwargs[self.name]
        for i, p in enumerate(params):
            if p.name != self.name:
                continue
            if i < len(args) and p.kind in (p.POSITIONAL_ONLY, p.POSITIONAL_OR_KEYWORD):
                return args[i]
            if p.default is not inspect.Parameter.empty:
                return p.default
        raise UnresolvedSplice(f"{self.raw}: no argument or default named {self.name!r}")


def _maybe_marker(value: Any) -> Any:
    if isinstance(value, str) and value.startswith("$"):
        return SpliceMarker.parse(value)
    return value


@dataclass(frozen=True)
class RegistrationSpec:
    """Declaration for one return position: what, over which middleware, where."""

    payload_kind: str
    middleware: str | SpliceMarker
    group: str
    topic: str | SpliceMarker
    carrier: str = "tcp"
    should_wait: bool | SpliceMarker = False
    extras: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.payload_kind not in PAYLOAD_KINDS:
            raise InvalidSpec(f"payload kind {self.payload_kind!r} not in {PAYLOAD_KINDS}")
        illegal = set(self.extras) - LEGAL_EXTRAS[self.payload_kind]
        if illegal:
            raise InvalidSpec(f"{self.payload_kind} spec does not accept {sorted(illegal)}")
        if not isinstance(self.group, str) or not self.group:
            raise InvalidSpec("group must be a non-empty string")
        if not isinstance(self.carrier, str) or not self.carrier:
            raise InvalidSpec("carrier must be a non-empty string")
        object.__setattr__(self, "middleware", _maybe_marker(self.middleware))
        object.__setattr__(self, "topic", _maybe_marker(self.topic))
        object.__setattr__(self, "should_wait", _maybe_marker(self.should_wait))
        object.__setattr__(self, "extras", MappingProxyType({k: _maybe_marker(v) for k, v in self.extras.items()}))
        if isinstance(self.topic, str):
            try:
                check_topic(self.topic)
            except ValueError as exc:
                raise InvalidSpec(str(exc)) from None
        if not isinstance(self.middleware, (str, SpliceMarker)):
            raise InvalidSpec(f"middleware must be a string or splice marker, got {self.middleware!r}")

    @classmethod
    def create(
        cls,
        payload_kind: str,
        middleware: str,
        group: str,
        topic: str,
        carrier: str = "tcp",
        should_wait: bool | str = False,
        **extras: Any,
    ) -> RegistrationSpec:
        return cls(payload_kind, middleware, group, topic, carrier, should_wait, extras)

    @property
    def markers(self) -> list[SpliceMarker]:
        values = [self.middleware, self.topic, self.should_wait, *self.extras.values()]
        return [v for v in values if isinstance(v, SpliceMarker)]


@dataclass(frozen=True)
class ConcreteSpec:
    payload_kind: str
    middleware: str
    group: str
    topic: str
    carrier: str
    should_wait: bool
    extras: Mapping[str, Any]


def resolve_spec(
    spec: RegistrationSpec,
    args: Sequence[Any] = (),
    kwargs: Mapping[str, Any] | None = None,
    signature: inspect.Signature | None = None,
) -> ConcreteSpec:
    """Substitute every splice marker from the call's arguments.

    Keyword markers fall back to ``signature`` defaults when the caller
    omitted them; positional markers index the positional arguments.
    """
    kwargs = kwargs or {}

    def fill(v: Any) -> Any:
        return v.resolve(args, kwargs, signature) if isinstance(v, SpliceMarker) else v

    middleware = fill(spec.middleware)
    topic = fill(spec.topic)
    if not isinstance(middleware, str):
        raise InvalidSpec(f"middleware resolved to {middleware!r}, expected a string")
    check_topic(topic)
    return ConcreteSpec(
        spec.payload_kind,
        middleware,
        spec.group,
        topic,
        spec.carrier,
        bool(fill(spec.should_wait)),
        MappingProxyType({k: fill(v) for k, v in spec.extras.items()}),
    )


@dataclass(eq=False)
class RegisteredMethod:
    group: str
    name: str
    specs: tuple[RegistrationSpec, ...]
    body: Callable[..., Any]
    mode: Mode = Mode.DISABLE
    timeout_ms: float | None = None
    signature: inspect.Signature | None = None
    _lock: threading.RLock = field(default_factory=threading.RLock, repr=False)
    _endpoints: dict[tuple, Endpoint] = field(default_factory=dict, repr=False)
    # envelopes behind the most recent Listen-mode return, position-wise
    last_received: tuple[MessageEnvelope | None, ...] = ()

    @property
    def qualname(self) -> str:
        return f"{self.group}.{self.name}"

    def close_endpoints(self) -> None:
        for handle in self._endpoints.values():
            handle.close()
        self._endpoints.clear()


# -- payload conversion -------------------------------------------------------


def _as_image(value: Any, spec: ConcreteSpec) -> ImageFrame:
    frame = value if isinstance(value, ImageFrame) else ImageFrame.from_array(np.asarray(value))
    ex = spec.extras
    if "width" in ex and int(ex["width"]) != frame.width:
        raise GeometryMismatch(f"{spec.topic}: image width {frame.width} != declared {ex['width']}")
    if "height" in ex and int(ex["height"]) != frame.height:
        raise GeometryMismatch(f"{spec.topic}: image height {frame.height} != declared {ex['height']}")
    if "rgb" in ex and (3 if ex["rgb"] else 1) != frame.channels:
        raise GeometryMismatch(f"{spec.topic}: image has {frame.channels} channel(s), rgb={ex['rgb']}")
    if ex.get("jpg"):
        frame = frame.to_jpeg()
    return frame


def _as_audio(value: Any, spec: ConcreteSpec) -> AudioChunk:
    ex = spec.extras
    if isinstance(value, AudioChunk):
        aud = value
    elif isinstance(value, tuple) and len(value) == 2:
        # sounddevice-style (samples, rate)
        aud = AudioChunk.from_array(np.asarray(value[0], dtype=np.float32), int(value[1]))
    else:
        if "rate" not in ex:
            raise SampleCountMismatch(f"{spec.topic}: bare sample arrays need a declared rate")
        aud = AudioChunk.from_array(np.asarray(value, dtype=np.float32), int(ex["rate"]))
    for key in ("rate", "chunk", "channels"):
        if key in ex and int(ex[key]) != getattr(aud, key):
            raise SampleCountMismatch(f"{spec.topic}: audio {key}={getattr(aud, key)} != declared {ex[key]}")
    return aud


def encode_return(value: Any, spec: ConcreteSpec, plugins: PluginRegistry | None = None) -> MessageEnvelope:
    if spec.payload_kind == "Image":
        return encode_image(_as_image(value, spec), spec.topic)
    if spec.payload_kind == "AudioChunk":
        return encode_audio(_as_audio(value, spec), spec.topic)
    return encode_native_envelope(value, spec.topic, plugins)


def decode_return(
    env: MessageEnvelope, spec: ConcreteSpec, plugins: PluginRegistry | None = None, decode_options: Mapping[str, Any] | None = None
) -> Any:
    if spec.payload_kind == "Image":
        return decode_image(env).to_raw()
    if spec.payload_kind == "AudioChunk":
        return decode_audio(env)
    return decode_native_envelope(env, decode_options, plugins)


# -- registry -----------------------------------------------------------------


class Registry:
    """Registered methods and their modes, bound to one transport runtime."""

    def __init__(
        self,
        runtime: Runtime | None = None,
        timeout_ms: float | None = None,
        opts: Mapping[str, Any] | None = None,
        plugins: PluginRegistry | None = None,
        decode_options: Mapping[str, Any] | None = None,
    ) -> None:
        self._runtime = runtime
        self.timeout_ms = timeout_ms
        self.opts = dict(opts or {})
        self.plugins = plugins
        self.decode_options = dict(decode_options or {})
        self._methods: dict[tuple[str, str], RegisteredMethod] = {}
        self._lock = threading.Lock()

    @property
    def runtime(self) -> Runtime:
        return self._runtime or default_runtime()

    def register(
        self, group: str, name: str, specs: Sequence[RegistrationSpec], body: Callable[..., Any]
    ) -> RegisteredMethod:
        specs = tuple(specs)
        if not specs:
            raise InvalidSpec(f"{group}.{name}: at least one registration spec is required")
        for s in specs:
            if not isinstance(s, RegistrationSpec):
                raise InvalidSpec(f"{group}.{name}: expected RegistrationSpec, got {type(s).__name__}")
        try:
            signature = inspect.signature(body)
        except (TypeError, ValueError):
            signature = None
        method = RegisteredMethod(group, name, specs, body, signature=signature)
        with self._lock:
            if (group, name) in self._methods:
                raise DuplicateMethod(f"{group}.{name} is already registered")
            self._methods[(group, name)] = method
        return method

    def method(self, group: str, name: str) -> RegisteredMethod:
        try:
            return self._methods[(group, name)]
        except KeyError:
            raise UnknownMethod(f"no method {group}.{name} registered") from None

    @property
    def methods(self) -> list[RegisteredMethod]:
        return list(self._methods.values())

    def activate_communication(
        self, group: str, name: str, mode: Mode | str, timeout_ms: float | None = None
    ) -> None:
        method = self.method(group, name)
        mode = Mode.parse(mode)
        with method._lock:
            if mode != method.mode:
                method.close_endpoints()
            method.mode = mode
            method.timeout_ms = timeout_ms

    def load_mode_config(self, path: str | os.PathLike, strict: bool = True) -> list[str]:
        """Apply a ``{"Group.method": mode}`` file in order; returns applied keys.

        With ``strict=False`` entries naming methods not in this registry are
        skipped instead of raising UnknownMethod.
        """
        entries = read_mode_config(path)
        plan = []
        for key, mode in entries.items():
            group, sep, name = key.rpartition(".")
            if not sep:
                raise ParseError(f"mode key {key!r} is not of the form Group.method")
            if (group, name) not in self._methods:
                if strict:
                    raise UnknownMethod(f"mode config names unknown method {key}")
                continue
            plan.append((group, name, Mode.parse(mode), key))
        for group, name, mode, _ in plan:
            self.activate_communication(group, name, mode)
        return [key for *_, key in plan]

    def close(self) -> None:
        for method in self.methods:
            with method._lock:
                method.close_endpoints()

    # -- invocation -----------------------------------------------------------

    def invoke(self, group: str, name: str, *args: Any, **kwargs: Any) -> Any:
        return self.invoke_method(self.method(group, name), args, kwargs)

    def invoke_method(self, method: RegisteredMethod, args: Sequence[Any], kwargs: Mapping[str, Any]) -> Any:
        with method._lock:
            mode = method.mode
            if mode is Mode.DISABLE:
                return method.body(*args, **kwargs)
            concrete = [resolve_spec(s, args, kwargs, method.signature) for s in method.specs]
            if mode is Mode.PUBLISH:
                return self._publish(method, concrete, args, kwargs)
            if mode is Mode.LISTEN:
                return self._listen(method, concrete)
            if mode is Mode.REQUEST:
                return self._request(method, concrete, args, kwargs)
            return self._reply(method, concrete)

    def establish(self, group: str, name: str, *args: Any, **kwargs: Any) -> None:
        """Open the endpoints the next invoke would use, without invoking.

        Lets listeners subscribe (or repliers bind) before a peer starts
        sending, since publish/subscribe keeps no history for late joiners.
        """
        method = self.method(group, name)
        with method._lock:
            if method.mode is Mode.DISABLE:
                return
            concrete = [resolve_spec(s, args, kwargs, method.signature) for s in method.specs]
            if method.mode in (Mode.PUBLISH, Mode.LISTEN):
                for i, spec in enumerate(concrete):
                    if self.runtime.is_enabled(spec.middleware):
                        self._endpoint(method, i, spec)
            elif self.runtime.is_enabled(concrete[0].middleware):
                self._endpoint(method, 0, concrete[0])

    def serve(self, group: str, name: str, stop_signal: threading.Event, *args: Any, **kwargs: Any) -> int:
        """Answer requests for a Reply-mode method until ``stop_signal``; returns the count."""
        method = self.method(group, name)
        served = 0
        while not stop_signal.is_set():
            with method._lock:
                concrete = [resolve_spec(s, args, kwargs, method.signature) for s in method.specs]
                if self._reply(method, concrete, timeout_ms=20, quiet=True) is not None:
                    served += 1
        return served

    def _endpoint(self, method: RegisteredMethod, index: int, spec: ConcreteSpec) -> Endpoint:
        if spec.carrier == "mcast":
            raise UnsupportedCarrier(f"{method.qualname}: carrier 'mcast' is accepted in specs but not implemented")
        role = method.mode
        queue_size = spec.extras.get("queue_size")
        key = (index, role, spec.middleware, spec.topic, queue_size)
        handle = method._endpoints.get(key)
        if handle is not None and not handle.closed:
            return handle
        opts = dict(self.opts)
        if queue_size is not None:
            opts["queue_size"] = int(queue_size)
        rt = self.runtime
        if role is Mode.PUBLISH:
            handle = rt.open_publisher(spec.topic, spec.middleware, opts)
        elif role is Mode.LISTEN:
            handle = rt.open_subscriber(spec.topic, spec.middleware, opts)
        elif role is Mode.REQUEST:
            handle = rt.open_requester(spec.topic, spec.middleware, opts)
        else:
            handle = rt.open_replier(spec.topic, spec.middleware, opts)
        method._endpoints[key] = handle
        return handle

    @staticmethod
    def _check_arity(method: RegisteredMethod, result: Any) -> tuple:
        if not isinstance(result, (tuple, list)) or len(result) != len(method.specs):
            got = len(result) if isinstance(result, (tuple, list)) else f"a non-tuple {type(result).__name__}"
            raise ReturnArityMismatch(f"{method.qualname} has {len(method.specs)} spec(s) but returned {got}")
        return tuple(result)

    def _timeout(self, method: RegisteredMethod) -> float | None:
        return method.timeout_ms if method.timeout_ms is not None else self.timeout_ms

    def _publish(self, method: RegisteredMethod, concrete: list[ConcreteSpec], args, kwargs) -> Any:
        result = method.body(*args, **kwargs)
        values = self._check_arity(method, result)
        for i, (spec, value) in enumerate(zip(concrete, values)):
            if not self.runtime.is_enabled(spec.middleware):
                continue
            if value is None and spec.payload_kind != "NativeObject":
                continue  # nothing to send for an absent image/audio position
            self._endpoint(method, i, spec).publish(encode_return(value, spec, self.plugins))
        return result

    def _listen(self, method: RegisteredMethod, concrete: list[ConcreteSpec]) -> tuple:
        out, envs = [], []
        for i, spec in enumerate(concrete):
            env = None
            if self.runtime.is_enabled(spec.middleware):
                sub = self._endpoint(method, i, spec)
                env = sub.try_receive(spec.should_wait, self._timeout(method) if spec.should_wait else None)
            envs.append(env)
            out.append(None if env is None else decode_return(env, spec, self.plugins, self.decode_options))
        method.last_received = tuple(envs)
        return tuple(out)

    def _request(self, method: RegisteredMethod, concrete: list[ConcreteSpec], args, kwargs) -> tuple:
        spec = concrete[0]
        if not self.runtime.is_enabled(spec.middleware):
            return (None,) * len(concrete)
        req = self._endpoint(method, 0, spec)
        env = encode_native_envelope({"args": list(args), "kwargs": dict(kwargs)}, spec.topic, self.plugins)
        reply = req.request(env, self._timeout(method), should_wait=spec.should_wait)
        values = decode_native_envelope(reply, self.decode_options, self.plugins)
        if not isinstance(values, list) or len(values) != len(concrete):
            raise ReturnArityMismatch(f"{method.qualname}: reply carries {values!r}, expected {len(concrete)} values")
        return tuple(
            _coerce_reply_value(v, s) for v, s in zip(values, concrete)
        )

    def _reply(
        self, method: RegisteredMethod, concrete: list[ConcreteSpec], timeout_ms: float | None = None, quiet: bool = False
    ) -> tuple | None:
        spec = concrete[0]
        if not self.runtime.is_enabled(spec.middleware):
            return None if quiet else (None,) * len(concrete)
        rep = self._endpoint(method, 0, spec)
        served: list[tuple] = []

        def handler(request: MessageEnvelope) -> MessageEnvelope:
            call = decode_native_envelope(request, self.decode_options, self.plugins)
            if not isinstance(call, dict):
                raise InvalidSpec(f"request payload must be a map with args/kwargs, got {type(call).__name__}")
            values = self._check_arity(method, method.body(*call.get("args", []), **call.get("kwargs", {})))
            served.append(values)
            return encode_native_envelope(list(values), spec.topic, self.plugins)

        if timeout_ms is None:
            timeout_ms = self._timeout(method) if spec.should_wait else 0
        rep.serve_one(handler, timeout_ms)
        if served:
            return served[0]
        return None if quiet else (None,) * len(concrete)


def _coerce_reply_value(value: Any, spec: ConcreteSpec) -> Any:
    # images and audio travel inside the native reply via their plugins
    if spec.payload_kind == "Image" and isinstance(value, np.ndarray):
        return ImageFrame.from_array(value)
    return value


def read_mode_config(path: str | os.PathLike) -> dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read mode config {path}: {exc}") from exc
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ParseError(f"cannot parse mode config {path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict) or not all(isinstance(k, str) and isinstance(v, str) for k, v in data.items()):
        raise ParseError(f"mode config {path} must map 'Group.method' strings to mode strings")
    return data


# -- decorator API -------------------------------------------------------------


def register(
    payload_kind: str,
    middleware: str,
    group: str,
    topic: str,
    carrier: str = "tcp",
    should_wait: bool | str = False,
    **extras: Any,
) -> Callable[[Callable], Callable]:
    """Attach a registration spec to a method; stack one per return value."""
    spec = RegistrationSpec.create(payload_kind, middleware, group, topic, carrier, should_wait, **extras)

    def decorate(func: Callable) -> Callable:
        # decorators apply bottom-up, so prepending keeps source order == return order
        specs = (spec, *getattr(func, _SPECS_ATTR, ()))
        groups = {s.group for s in specs}
        if len(groups) > 1:
            raise InvalidSpec(f"{func.__name__}: all specs must share one group, got {sorted(groups)}")
        setattr(func, _SPECS_ATTR, specs)
        return func

    return decorate


class MiddlewareCommunicator:
    """Base class whose decorated methods dispatch through a per-instance :class:`Registry`."""

    register = staticmethod(register)

    def __init__(self, runtime: Runtime | None = None, **registry_opts: Any) -> None:
        self._registry = Registry(runtime, **registry_opts)
        self._names: dict[str, RegisteredMethod] = {}
        seen = set()
        for klass in type(self).__mro__:
            for attr, func in vars(klass).items():
                specs = getattr(func, _SPECS_ATTR, None)
                if specs is None or attr in seen:
                    continue
                seen.add(attr)
                bound = func.__get__(self, type(self))
                method = self._registry.register(specs[0].group, attr, specs, bound)
                self._names[attr] = method
                setattr(self, attr, self._dispatcher(method, func))
        env_modes = os.environ.get("WRAPIFY_MODES")
        if env_modes:
            self._registry.load_mode_config(env_modes, strict=False)

    def _dispatcher(self, method: RegisteredMethod, func: Callable) -> Callable:
        @functools.wraps(func)
        def call(*args: Any, **kwargs: Any) -> Any:
            return self._registry.invoke_method(method, args, kwargs)

        return call

    @property
    def registry(self) -> Registry:
        return self._registry

    def _lookup(self, name: str | Callable) -> RegisteredMethod:
        key = name if isinstance(name, str) else name.__name__
        try:
            return self._names[key]
        except KeyError:
            raise UnknownMethod(f"{type(self).__name__} has no registered method {key!r}") from None

    def activate_communication(self, name: str | Callable, mode: Mode | str, timeout_ms: float | None = None) -> None:
        method = self._lookup(name)
        self._registry.activate_communication(method.group, method.name, mode, timeout_ms)

    def establish(self, name: str | Callable, *args: Any, **kwargs: Any) -> None:
        method = self._lookup(name)
        self._registry.establish(method.group, method.name, *args, **kwargs)

    def serve(self, name: str | Callable, stop_signal: threading.Event, *args: Any, **kwargs: Any) -> int:
        method = self._lookup(name)
        return self._registry.serve(method.group, method.name, stop_signal, *args, **kwargs)

    def last_received(self, name: str | Callable) -> tuple[MessageEnvelope | None, ...]:
        return self._lookup(name).last_received

    def close(self) -> None:
        self._registry.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc) -> None:
        self.close()
