import re
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

# section.key = value, with "#" comments and blank lines allowed.
LINE_PATTERN = re.compile(r"^\s*([A-Za-z_]\w*)\.([A-Za-z_]\w*)\s*=\s*(.*?)\s*$")

# Where each section prefix lands in the nested run configuration.
SECTION_PATHS: Dict[str, Tuple[str, ...]] = {
    "run": (),
    "generator": ("generator",),
    "augment": ("augment",),
    "model": ("model",),
    "audio": ("model", "audio"),
    "text": ("model", "text"),
    "fusion": ("model", "fusion"),
    "loss": ("loss",),
    "optim": ("optim",),
    "ablation": ("ablation",),
    "verify": ("verify",),
}


class ConfigParseError(ValueError):
    """A config line could not be parsed. Carries the offending line number."""

    def __init__(self, message: str, line: Optional[int] = None, source: str = "<config>"):
        self.line = line
        self.source = source
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")


@dataclass
class ParsedConfig:
    """Nested values plus the line each key came from."""

    values: Dict[str, Any] = field(default_factory=dict)
    lines: Dict[Tuple[str, ...], int] = field(default_factory=dict)
    source: str = "<config>"

    def set(self, path: Tuple[str, ...], value: Any, line: Optional[int] = None):
        target = self.values
        for part in path[:-1]:
            target = target.setdefault(part, {})
        target[path[-1]] = value
        if line is not None:
            self.lines[path] = line

    def line_for(self, loc: Tuple[Any, ...]) -> Optional[int]:
        """Finds the line of the longest known key prefix of a validation location."""
        parts = tuple(str(p) for p in loc)
        while parts:
            if parts in self.lines:
                return self.lines[parts]
            parts = parts[:-1]
        return None


def _coerce(raw: str) -> Any:
    """Blank or 'none' means unset; commas separate list items."""
    if raw == "" or raw.lower() == "none":
        return None
    if "," in raw:
        return [item.strip() for item in raw.split(",") if item.strip()]
    return raw


def parse_config_lines(lines: List[str], source: str = "<config>") -> ParsedConfig:
    """
    Parses flat `section.key = value` lines into a nested dictionary.

    Args:
        lines: The raw config lines.
        source: A name used in error messages (usually the file path).

    Returns:
        A ParsedConfig with the nested values and per-key line numbers.
    """
    parsed = ParsedConfig(source=source)
    for number, line in enumerate(lines, start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue

        match = LINE_PATTERN.match(stripped)
        if not match:
            if "=" not in stripped:
                raise ConfigParseError(f"expected 'section.key = value', got {stripped!r}", number, source)
            raise ConfigParseError(f"key must carry a section prefix, got {stripped!r}", number, source)

        section, key, raw = match.groups()
        if section not in SECTION_PATHS:
            known = ", ".join(sorted(SECTION_PATHS))
            raise ConfigParseError(f"unknown section '{section}' (known: {known})", number, source)

        path = SECTION_PATHS[section] + (key,)
        if path in parsed.lines:
            raise ConfigParseError(
                f"duplicate key '{section}.{key}' (first set on line {parsed.lines[path]})",
                number,
                source,
            )
        parsed.set(path, _coerce(raw), number)

    logging.debug(f"Parsed {len(parsed.lines)} config keys from {source}")
    return parsed


def parse_config_file(path: str) -> ParsedConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.read().splitlines()
    except OSError as e:
        raise ConfigParseError(f"cannot read config file: {e}", source=path)
    return parse_config_lines(lines, source=path)
