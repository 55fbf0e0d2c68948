"""Middleware-agnostic messaging: registered methods exchanging native objects,
images and audio over pluggable transports."""

from wrapify.codec import AudioChunk, DenseArray, ImageFrame, MessageEnvelope, decode_native, encode_native
from wrapify.errors import WrapifyError
from wrapify.registry import MiddlewareCommunicator, Mode, Registry, RegistrationSpec, register
from wrapify.transport import Bridge, Broker, Runtime, list_transports

__version__ = "0.1.0"

__all__ = [
    "AudioChunk",
    "Bridge",
    "Broker",
    "DenseArray",
    "ImageFrame",
    "MessageEnvelope",
    "MiddlewareCommunicator",
    "Mode",
    "Registry",
    "RegistrationSpec",
    "Runtime",
    "WrapifyError",
    "decode_native",
    "encode_native",
    "list_transports",
    "register",
]
