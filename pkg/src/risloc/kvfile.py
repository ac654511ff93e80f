"""Flat ``key = value`` text files with ``#`` comments."""
from __future__ import annotations

from pathlib import Path

from .errors import ConfigError


def parse_kv(text: str, allowed: set[str] | None = None, source: str = "<string>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if allowed is not None and key not in allowed:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def read_kv(path: str | Path, allowed: set[str] | None = None) -> dict[str, str]:
    path = Path(path)
    return parse_kv(path.read_text(encoding="utf-8"), allowed, source=str(path))


def format_kv(values: dict[str, object]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in values.items())
