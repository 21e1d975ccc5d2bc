"""Flat `key = value` run configuration with dotted section keys.

Example::

    run.seed = 0
    stage1.alpha = 7
    twin.params = 38.76, 0.68, 8.93, 5.03, 8.93, 2.16, 3.10
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ConfigError

_TRUE = {"true", "yes", "1", "on"}
_FALSE = {"false", "no", "0", "off"}


@dataclass
class Config:
    values: dict = field(default_factory=dict)   # key -> str
    lines: dict = field(default_factory=dict)    # key -> line number
    path: str = "<memory>"

    def has(self, key: str) -> bool:
        return key in self.values

    def require(self, key: str) -> str:
        if key not in self.values:
            raise ConfigError(f"{self.path}: missing required key {key!r}")
        return self.values[key]

    def _convert(self, key: str, raw: str, conv, typename: str):
        try:
            return conv(raw)
        except ValueError:
            raise ConfigError(
                f"{self.path}:{self.lines.get(key, '?')}: key {key!r} "
                f"is not a valid {typename}: {raw!r}"
            ) from None

    def get_str(self, key: str, default: str | None = None) -> str:
        if key not in self.values:
            if default is None:
                return self.require(key)
            return default
        return self.values[key]

    def get_int(self, key: str, default: int | None = None) -> int:
        if key not in self.values and default is not None:
            return default
        return self._convert(key, self.require(key), int, "integer")

    def get_float(self, key: str, default: float | None = None) -> float:
        if key not in self.values and default is not None:
            return default
        return self._convert(key, self.require(key), float, "number")

    def get_bool(self, key: str, default: bool | None = None) -> bool:
        if key not in self.values and default is not None:
            return default
        raw = self.require(key).lower()
        if raw in _TRUE:
            return True
        if raw in _FALSE:
            return False
        raise ConfigError(
            f"{self.path}:{self.lines.get(key, '?')}: key {key!r} "
            f"is not a valid boolean: {raw!r}"
        )

    def get_floats(self, key: str, default: tuple | None = None) -> tuple:
        if key not in self.values and default is not None:
            return tuple(default)
        raw = self.require(key)
        return tuple(
            self._convert(key, part.strip(), float, "number")
            for part in raw.split(",") if part.strip()
        )

    def get_ints(self, key: str, default: tuple | None = None) -> tuple:
        if key not in self.values and default is not None:
            return tuple(default)
        raw = self.require(key)
        return tuple(
            self._convert(key, part.strip(), int, "integer")
            for part in raw.split(",") if part.strip()
        )


def parse_config(text: str, path: str = "<memory>") -> Config:
    cfg = Config(path=path)
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        if key in cfg.values:
            raise ConfigError(
                f"{path}:{lineno}: duplicate key {key!r} "
                f"(first set on line {cfg.lines[key]})"
            )
        cfg.values[key] = value.strip()
        cfg.lines[key] = lineno
    return cfg


def load_config(path) -> Config:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, path=str(path))
