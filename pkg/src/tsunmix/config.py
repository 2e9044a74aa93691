"""Key=value config files: one `key = value` pair per line, `#` comments."""

from __future__ import annotations

import os
from typing import Any, Callable, Mapping

from .errors import ConfigError

# sentinel for schema entries without a default
REQUIRED = object()


def parse_kv_file(path: str | os.PathLike) -> dict[str, str]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    return parse_kv_text(text, source=str(path))


def parse_kv_text(text: str, source: str = "<string>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = stripped.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key '{key}'")
        out[key] = value.strip()
    return out


def parse_bool(raw: str) -> bool:
    lowered = raw.lower()
    if lowered in ("true", "yes", "on", "1"):
        return True
    if lowered in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def coerce_config(
    raw: Mapping[str, str],
    schema: Mapping[str, tuple[Callable[[str], Any], Any]],
    source: str = "config",
) -> dict[str, Any]:
    """Validate ``raw`` against ``schema`` ({key: (parser, default)}).

    Unknown keys and unparsable values raise ConfigError naming the key.
    """
    out: dict[str, Any] = {}
    for key in raw:
        if key not in schema:
            raise ConfigError(f"{source}: unknown config key '{key}'")
    for key, (parser, default) in schema.items():
        if key in raw:
            try:
                out[key] = parser(raw[key])
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"{source}: bad value for key '{key}': {exc}") from None
        elif default is REQUIRED:
            raise ConfigError(f"{source}: missing required key '{key}'")
        else:
            out[key] = default
    return out


def format_kv(pairs: Mapping[str, Any]) -> str:
    lines = [f"{key} = {_format_value(value)}" for key, value in pairs.items()]
    return "\n".join(lines) + "\n"


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)
