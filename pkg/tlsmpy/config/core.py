"""
JSON scenario files parsed into frozen dataclasses by their type hints.
"""

import dataclasses
import json
import logging
import re
from enum import Enum
from pathlib import Path
from typing import (
    Any,
    Dict,
    List,
    Type,
    TypeVar,
    Union,
    get_args,
    get_origin,
    get_type_hints,
)

import numpy as np

from tlsmpy.utils import ConfigError


__all__ = [
    "ConfigElement",
    "to_json",
]

logger = logging.getLogger(__name__)

_CAMEL_BOUNDARY = re.compile(r"(?<!^)(?=[A-Z])")


def to_json(obj: Any) -> Any:
    """
    Plain JSON types for configs, enums, numpy values and paths.
    """
    if isinstance(obj, ConfigElement):
        obj = obj.__dict__

    if isinstance(obj, dict):
        return {key: to_json(obj=val) for key, val in obj.items()}

    if isinstance(obj, np.ndarray):
        obj = obj.tolist()

    if isinstance(obj, (list, tuple)):
        return [to_json(obj=item) for item in obj]

    if isinstance(obj, Enum):
        return obj.value

    if isinstance(obj, np.generic):
        return obj.item()

    return str(obj) if isinstance(obj, Path) else obj


def _snake_case(key: str) -> str:
    return _CAMEL_BOUNDARY.sub("_", key).lower()


def _parse_enum(value: Any, hint: Type[Enum], name: str) -> Enum:
    if not isinstance(value, str):
        raise ConfigError(f"{name} takes one of the {hint.__name__} names, received {type(value).__name__}")

    # "Tone-Burst" and "tone burst" both name TONE_BURST:
    for candidate in (value, value.lower().replace("-", "_").replace(" ", "_")):
        try:
            return hint(candidate)
        except ValueError:
            continue

    raise ConfigError(f"{name} must be one of {[member.value for member in hint]}, received {value!r}")


def _parse_value(value: Any, hint: Any, name: str) -> Any:
    if value is None:
        if get_origin(hint) is Union and type(None) in get_args(hint):
            return None
        raise ConfigError(f"{name} does not accept null, expected {hint}")

    if hint is Any:
        return value

    origin = get_origin(hint)
    if origin is Union:
        # Optional[X] with the None case already handled:
        (inner,) = [arg for arg in get_args(hint) if arg is not type(None)]
        return _parse_value(value, inner, name)

    if origin in (list, List):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{name} expects a list, received {type(value).__name__}")
        (item_hint,) = get_args(hint)
        return [_parse_value(item, item_hint, f"{name}[{i}]") for i, item in enumerate(value)]

    if origin is not None:
        raise ConfigError(f"{name} has an unsupported type {hint}")

    # bool is an int, but never a valid number here:
    if isinstance(value, bool) and hint is not bool:
        raise ConfigError(f"{name} expects {hint.__name__}, received a bool")

    if issubclass(hint, Enum):
        return value if isinstance(value, hint) else _parse_enum(value, hint, name)

    if issubclass(hint, ConfigElement):
        if not isinstance(value, dict):
            raise ConfigError(f"{name} expects an object, received {type(value).__name__}")
        return hint.from_raw(raw=value)

    # ints widen to float; "inf" / "-inf" stand in for the missing JSON literal:
    if hint is float and isinstance(value, (int, str)):
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"{name} expects a number, received {value!r}")

    if isinstance(value, hint):
        return value

    raise ConfigError(f"{name} expects {hint.__name__}, received {type(value).__name__}: {value}")


class ConfigElement:
    """
    Base class of the config sections; subclasses are frozen dataclasses whose
    fields double as the accepted (camelCase) JSON keys.
    """

    @classmethod
    def from_raw(cls: Type["U"], raw: Dict[str, Any]) -> "U":
        try:
            hints = get_type_hints(cls)
            values = {_snake_case(key): val for key, val in raw.items()}
            unknown = sorted(set(values) - set(hints))
            if unknown:
                raise ConfigError(f"{cls.__name__}.from_raw() received unexpected args: {unknown}")

            kwargs = {}
            for param in dataclasses.fields(cls):
                if param.name in values:
                    kwargs[param.name] = _parse_value(values[param.name], hints[param.name], f"{cls.__name__}.{param.name}")
                elif param.default is dataclasses.MISSING and param.default_factory is dataclasses.MISSING:
                    raise ConfigError(f"{cls.__name__} requires '{param.name}'")

            return cls(**kwargs)

        except Exception as e:
            logger.error(f"{type(e).__name__}({e}) while calling {cls.__name__}.from_raw(), data was: {raw}")
            raise

    @classmethod
    def from_file(cls: Type["U"], path: Path | str) -> "U":
        with open(path, "r") as f:
            raw = json.load(f)

        return cls.from_raw(raw=raw)

    def to_dict(self) -> dict:
        return to_json(obj=self)

    def __str__(self) -> str:
        return str(self.to_dict())

    def __repr__(self) -> str:
        return str(self)

    def display(self) -> str:
        return json.dumps(obj=self.to_dict(), indent=4)


U = TypeVar("U", bound=ConfigElement)
