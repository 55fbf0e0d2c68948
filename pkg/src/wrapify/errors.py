"""Exception hierarchy shared by every layer."""

from __future__ import annotations


class WrapifyError(Exception):
    """Base class for all library errors."""


# -- codec -------------------------------------------------------------------


class CodecError(WrapifyError, ValueError):
    pass


class DuplicatePlugin(CodecError):
    pass


class InvalidPluginId(CodecError):
    pass


class UnknownPlugin(CodecError):
    pass


class DepthExceeded(CodecError):
    pass


class NonFiniteFloat(CodecError):
    pass


class InvalidValue(CodecError):
    """Value has no native encoding (e.g. an int outside signed 64-bit range)."""


class MalformedJson(CodecError):
    pass


class PluginDecodeFailure(CodecError):
    pass


class MalformedEnvelope(CodecError):
    pass


class KindMismatch(CodecError):
    pass


class GeometryMismatch(CodecError):
    pass


class SampleCountMismatch(CodecError):
    pass


class SampleOutOfRange(CodecError):
    pass


# -- transport ---------------------------------------------------------------


class TransportError(WrapifyError):
    pass


class InvalidTopic(TransportError, ValueError):
    pass


class UnsupportedCarrier(TransportError):
    pass


class BrokerUnreachable(TransportError, ConnectionError):
    pass


class PeerUnreachable(TransportError, ConnectionError):
    pass


class AddressInUse(TransportError, OSError):
    pass


class ClosedEndpoint(TransportError):
    pass


class TopicMismatch(TransportError, ValueError):
    pass


class WrongRole(TransportError, TypeError):
    pass


class TimedOut(TransportError, TimeoutError):
    pass


class RemoteError(TransportError):
    """The replier's handler failed; carries the remote message."""


# -- registry ----------------------------------------------------------------


class RegistryError(WrapifyError):
    pass


class DuplicateMethod(RegistryError):
    pass


class InvalidSpec(RegistryError, ValueError):
    pass


class UnknownMethod(RegistryError, KeyError):
    def __str__(self) -> str:  # KeyError repr-quotes its message
        return str(self.args[0]) if self.args else ""


class UnknownMode(RegistryError, ValueError):
    pass


class UnresolvedSplice(RegistryError):
    pass


class ReturnArityMismatch(RegistryError):
    pass


class ParseError(RegistryError, ValueError):
    pass


# -- schemes -----------------------------------------------------------------


class ScenarioTimeout(WrapifyError, TimeoutError):
    pass
