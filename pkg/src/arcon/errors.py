"""Error hierarchy shared by all modules.

Every error carries a stable ``code`` string; the HTTP API serializes it and
the CLI maps codes onto its documented exit-code groups.
"""

from __future__ import annotations


class ArconError(Exception):
    code = "Error"

    def __init__(self, message: str = "", **details):
        super().__init__(message or self.code)
        self.message = message or self.code
        self.details = details

    def to_payload(self) -> dict:
        payload = {"error": self.code, "message": self.message}
        if self.details:
            payload["details"] = {
                k: v for k, v in self.details.items() if _jsonable(v)
            }
        return payload


def _jsonable(value) -> bool:
    return isinstance(value, (str, int, float, bool, list, dict, type(None)))


# -- images / registration ---------------------------------------------------

class MalformedImage(ArconError):
    code = "MalformedImage"


class InsufficientDetail(ArconError):
    code = "InsufficientDetail"

    def __init__(self, message: str = "", report=None, index: int | None = None):
        super().__init__(message, index=index)
        self.report = report
        self.index = index


class DuplicateImage(ArconError):
    code = "DuplicateImage"


class TooManyImages(ArconError):
    code = "TooManyImages"


class NoImages(ArconError):
    code = "NoImages"


# -- registry ----------------------------------------------------------------

class UnknownDevice(ArconError):
    code = "UnknownDevice"


class IoFailure(ArconError):
    code = "IoFailure"


class CorruptRegistry(ArconError):
    code = "CorruptRegistry"


# -- wire codec --------------------------------------------------------------

class FrameTooLarge(ArconError):
    code = "FrameTooLarge"


class MalformedPayload(ArconError):
    code = "MalformedPayload"


class Truncated(ArconError):
    code = "Truncated"


# -- pairing network ---------------------------------------------------------

class OutOfRange(ArconError):
    code = "OutOfRange"
    reason = "range"


class CapacityExceeded(ArconError):
    code = "CapacityExceeded"
    reason = "capacity"


class AlreadyPaired(ArconError):
    code = "AlreadyPaired"
    reason = "already-paired"


class UnknownEndpoint(ArconError):
    code = "UnknownEndpoint"
    reason = "unknown-endpoint"


class SessionClosed(ArconError):
    code = "SessionClosed"


class Timeout(ArconError):
    code = "Timeout"


class TransportFailure(ArconError):
    code = "TransportFailure"


class NotPaired(ArconError):
    code = "NotPaired"


# -- agents ------------------------------------------------------------------

class DevicePoweredOff(ArconError):
    code = "DevicePoweredOff"


class UnsupportedCommand(ArconError):
    code = "UnsupportedCommand"


class InvalidArgument(ArconError):
    code = "InvalidArgument"


# -- hub ---------------------------------------------------------------------

class SelfTransfer(ArconError):
    code = "SelfTransfer"


class ConfigInvalid(ArconError):
    code = "ConfigInvalid"


class RegistryLoadFailure(ArconError):
    code = "RegistryLoadFailure"


class PortUnavailable(ArconError):
    code = "PortUnavailable"


# CLI exit-code groups: 0 ok, 1 infrastructure, 2 registration, 3 pairing,
# 4 argument, 5 device error.
EXIT_CODES = {
    "MalformedImage": 2,
    "InsufficientDetail": 2,
    "DuplicateImage": 2,
    "TooManyImages": 2,
    "NoImages": 2,
    "NotPaired": 3,
    "OutOfRange": 3,
    "CapacityExceeded": 3,
    "AlreadyPaired": 3,
    "SessionClosed": 3,
    "Timeout": 3,
    "InvalidArgument": 4,
    "UnknownDevice": 4,
    "UnknownEndpoint": 4,
    "SelfTransfer": 4,
    "DevicePoweredOff": 5,
    "UnsupportedCommand": 5,
}


def exit_code_for(code: str) -> int:
    """Exit code for an error code; unlisted codes are infrastructure (1)."""
    return EXIT_CODES.get(code, 1)


_BY_CODE = {
    cls.code: cls
    for cls in list(globals().values())
    if isinstance(cls, type) and issubclass(cls, ArconError) and cls is not ArconError
}


def error_from_code(code: str, message: str = "") -> ArconError:
    """Rebuild a typed error from its wire code (unknown codes -> ArconError)."""
    cls = _BY_CODE.get(code, ArconError)
    err = cls(message)
    if cls is ArconError:
        err.code = code or "Error"
    return err
