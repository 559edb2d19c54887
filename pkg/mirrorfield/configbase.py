from dataclasses import fields, is_dataclass
from typing import Any, get_args, get_origin, get_type_hints
import hashlib
import json


class JsonConfig:
    """Mixin for (nested) configuration dataclasses giving them a JSON dumpable
    representation and a strict constructor from such a representation.

    Example:
      >>> from dataclasses import dataclass
      >>> @dataclass
      ... class Inner(JsonConfig):
      ...     size: int = 2
      >>> @dataclass
      ... class Outer(JsonConfig):
      ...     name: str = "a"
      ...     inner: Inner = None
      >>> Outer.fromJson({"name": "b", "inner": {"size": 3}})
      Outer(name='b', inner=Inner(size=3))
    """

    def toJson(self) -> "dict[str, Any]":
        """Return a JSON dumpable representation of the configuration"""
        res = {}
        for field in fields(self):  # type: ignore
            res[field.name] = _toJsonValue(getattr(self, field.name))
        return res

    @classmethod
    def fromJson(cls, data: "dict[str, Any]|None"):
        """Create a configuration from its JSON representation. Missing keys keep
        their default value, unknown keys raise a ValueError

        Args:
            data (dict|None): A JSON representation, typically loaded from a file

        Returns:
            An instance of the class
        """
        if data is None:
            return cls()
        if not isinstance(data, dict):
            raise ValueError(f"{cls.__name__} must be given a mapping, got {data!r}")
        hints = get_type_hints(cls)
        known = {field.name for field in fields(cls)}  # type: ignore
        unknown = sorted(set(data) - known)
        if len(unknown) > 0:
            raise ValueError(f"Unknown {cls.__name__} key(s): {', '.join(unknown)}")
        kwargs = {}
        for key, value in data.items():
            kwargs[key] = _fromJsonValue(hints.get(key), value)
        return cls(**kwargs)

    def hash(self) -> str:
        """SHA-256 of the canonical JSON representation"""
        canonical = json.dumps(self.toJson(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _toJsonValue(value):
    if isinstance(value, JsonConfig):
        return value.toJson()
    if isinstance(value, (list, tuple)):
        return [_toJsonValue(v) for v in value]
    if isinstance(value, dict):
        return {k: _toJsonValue(v) for k, v in value.items()}
    if hasattr(value, "tolist"):
        return value.tolist()
    return value


def _nestedConfigType(hint):
    if isinstance(hint, type) and is_dataclass(hint) and issubclass(hint, JsonConfig):
        return hint
    for arg in get_args(hint):
        nested = _nestedConfigType(arg)
        if nested is not None:
            return nested
    return None


def _fromJsonValue(hint, value):
    if value is None:
        return None
    nested = _nestedConfigType(hint)
    if nested is not None and isinstance(value, dict):
        return nested.fromJson(value)
    if get_origin(hint) is tuple or (
        isinstance(value, list) and any(get_origin(a) is tuple for a in get_args(hint))
    ):
        return tuple(value)
    return value
