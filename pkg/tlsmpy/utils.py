import hashlib
import json
from pathlib import Path
from typing import Any


__all__ = [
    "TlsmException",
    "ConfigError",
    "LayoutError",
    "SingularEvaluationError",
    "SingularSystemError",
    "ShapeMismatchError",
    "RegularizationError",
    "InvalidMapError",
    "GridMismatchError",
    "UnsupportedModeError",
    "ManifestError",
    "next_power_of_two",
    "canonical_hash",
    "file_sha256",
]


class TlsmException(Exception):
    """
    Base class for errors raised by tlsmpy.
    """

    pass


class ConfigError(TlsmException):
    """
    Raised when a scenario config is malformed or inconsistent.
    """

    pass


class LayoutError(TlsmException):
    """
    Raised when sensing points are invalid, e.g. lying on a crack.
    """

    pass


class SingularEvaluationError(TlsmException, ValueError):
    """
    Raised when a kernel is evaluated at coincident points.
    """

    pass


class SingularSystemError(TlsmException):
    """
    Raised when a crack system is numerically singular.
    """

    pass


class ShapeMismatchError(TlsmException, ValueError):
    """
    Raised when operator inputs have incompatible shapes.
    """

    pass


class RegularizationError(TlsmException, ValueError):
    """
    Raised on invalid regularization settings.
    """

    pass


class InvalidMapError(TlsmException):
    """
    Raised when an indicator map cannot be formed from the data.
    """

    pass


class GridMismatchError(TlsmException, ValueError):
    """
    Raised when maps defined on different grids are compared.
    """

    pass


class UnsupportedModeError(TlsmException):
    """
    Raised when a wave mode is not available for an operation.
    """

    pass


class ManifestError(TlsmException):
    """
    Raised when a run manifest is unreadable or does not match its artifacts.
    """

    pass


def next_power_of_two(n: int) -> int:
    if n < 1:
        raise ValueError(f"Expected a positive length, received {n}")

    return 1 << (n - 1).bit_length()


def canonical_hash(obj: Any) -> str:
    payload = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def file_sha256(path: Path | str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            digest.update(block)

    return digest.hexdigest()
