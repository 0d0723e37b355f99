"""Flat key-value configuration files.

Policy and scenario files share one operator-editable format:

    # comment lines start with '#'
    key: value
    key: another value        # repeated keys accumulate into a list

    [section name]
    key: value

Values are kept as raw strings; consumers coerce them. Keys are
lower-cased, section names keep their case (user ids live there).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError


@dataclass
class KvSection:
    name: str
    values: dict[str, list[str]] = field(default_factory=dict)

    def get(self, key: str, default: str | None = None) -> str | None:
        vals = self.values.get(key)
        if not vals:
            return default
        if len(vals) > 1:
            raise ConfigError(f"key '{key}' given {len(vals)} times, expected once")
        return vals[0]

    def get_all(self, key: str) -> list[str]:
        return list(self.values.get(key, []))

    def require(self, key: str) -> str:
        val = self.get(key)
        if val is None:
            raise ConfigError(f"missing required key '{key}'" + (f" in [{self.name}]" if self.name else ""))
        return val


@dataclass
class KvDocument:
    """Top-level keys plus ordered named sections."""

    top: KvSection
    sections: list[KvSection] = field(default_factory=list)


def parse_kv_text(text: str, source: str = "<string>") -> KvDocument:
    doc = KvDocument(top=KvSection(name=""))
    current = doc.top
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = KvSection(name=line[1:-1].strip())
            doc.sections.append(current)
            continue
        if ":" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key: value', got {line!r}")
        key, _, value = line.partition(":")
        current.values.setdefault(key.strip().lower(), []).append(value.strip())
    return doc


def parse_kv_file(path: str | Path) -> KvDocument:
    path = Path(path)
    return parse_kv_text(path.read_text(encoding="utf-8"), source=str(path))


def as_float(value: str, key: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"key '{key}': expected a number, got {value!r}") from None


def as_int(value: str, key: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"key '{key}': expected an integer, got {value!r}") from None


def as_bool(value: str, key: str) -> bool:
    lowered = value.lower()
    if lowered in ("true", "yes", "1"):
        return True
    if lowered in ("false", "no", "0"):
        return False
    raise ConfigError(f"key '{key}': expected true/false, got {value!r}")
