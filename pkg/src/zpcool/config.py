"""TOML configuration loading with line-aware validation errors."""

from __future__ import annotations

import math
import re
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError, DomainError
from .params import Kind, SystemParams

_DECODE_LINE = re.compile(r"line (\d+)")


class ConfigDoc:
    """Parsed TOML document that remembers where keys and array-tables live."""

    def __init__(self, text: str, path=None):
        self.path = str(path) if path is not None else None
        self.text = text
        try:
            self.data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            m = _DECODE_LINE.search(str(exc))
            raise ConfigError(f"TOML syntax error: {exc}", line=int(m.group(1)) if m else None, path=self.path) from exc
        self._lines = text.splitlines()

    @classmethod
    def load(cls, path) -> "ConfigDoc":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc.strerror}", path=str(path)) from exc
        return cls(text, path)

    def _table_span(self, table):
        """Line range (0-based, half-open) of a ``[table]`` or the top level."""
        if table is None:
            start = 0
        else:
            pat = re.compile(r"^\s*\[\s*" + re.escape(table) + r"\s*\]\s*(#.*)?$")
            hits = [i for i, ln in enumerate(self._lines) if pat.match(ln)]
            if not hits:
                return None
            start = hits[0] + 1
        end = len(self._lines)
        for i in range(start, len(self._lines)):
            if re.match(r"^\s*\[", self._lines[i]):
                end = i
                break
        return start, end

    def key_line(self, key, table=None):
        """1-based line of ``key = ...`` inside ``table`` (dotted table names allowed)."""
        span = self._table_span(table)
        if span is None:
            if table and "." in table:
                # inline table: report the line of its parent key
                parent, _, name = table.rpartition(".")
                return self.key_line(name, parent)
            if table:
                return self.key_line(table, None)
            return None
        pat = re.compile(r"^\s*" + re.escape(key) + r"\s*=")
        for i in range(*span):
            if pat.match(self._lines[i]):
                return i + 1
        return span[0] if table is not None else None

    def array_table_lines(self, name):
        pat = re.compile(r"^\s*\[\[\s*" + re.escape(name) + r"\s*\]\]")
        return [i + 1 for i, ln in enumerate(self._lines) if pat.match(ln)]

    def error(self, message, key=None, table=None, line=None):
        if line is None and key is not None:
            line = self.key_line(key, table)
        field = ".".join(p for p in (table, key) if p)
        msg = f"{field}: {message}" if field else message
        return ConfigError(msg, line=line, path=self.path)


def get_number(doc: ConfigDoc, mapping, key, table=None, default=None, minimum=None, maximum=None, required=False):
    if key not in mapping:
        if required:
            raise doc.error("missing required field", key=key, table=table, line=doc.key_line(key, table))
        return default
    value = mapping[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise doc.error(f"expected a number, got {value!r}", key=key, table=table)
    value = float(value)
    if not math.isfinite(value):
        raise doc.error("must be finite", key=key, table=table)
    if minimum is not None and value < minimum:
        raise doc.error(f"must be >= {minimum}, got {value}", key=key, table=table)
    if maximum is not None and value > maximum:
        raise doc.error(f"must be <= {maximum}, got {value}", key=key, table=table)
    return value


def get_int(doc, mapping, key, table=None, default=None, minimum=None, required=False):
    if key not in mapping:
        if required:
            raise doc.error("missing required field", key=key, table=table)
        return default
    value = mapping[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise doc.error(f"expected an integer, got {value!r}", key=key, table=table)
    if minimum is not None and value < minimum:
        raise doc.error(f"must be >= {minimum}, got {value}", key=key, table=table)
    return value


def get_kind(doc, mapping, key="kind", table=None, default=None):
    if key not in mapping:
        if default is None:
            raise doc.error("missing required field", key=key, table=table)
        return Kind.parse(default)
    try:
        return Kind.parse(mapping[key])
    except DomainError as exc:
        raise doc.error(str(exc), key=key, table=table) from exc


@dataclass(frozen=True)
class Grid:
    """Axis specification: ``steps`` points from ``min`` to ``max`` on a linear or log scale."""

    min: float
    max: float
    steps: int
    scale: str = "linear"

    def values(self) -> np.ndarray:
        if self.steps == 1:
            return np.array([self.min])
        if self.scale == "log":
            return np.geomspace(self.min, self.max, self.steps)
        return np.linspace(self.min, self.max, self.steps)

    def as_dict(self) -> dict:
        return {"min": self.min, "max": self.max, "steps": self.steps, "scale": self.scale}


def get_grid(doc, mapping, key, table=None, lower=None, upper=None) -> Grid:
    """Read ``key`` as a grid table ``{min, max, steps, scale}`` or an explicit list of values."""
    path = ".".join(p for p in (table, key) if p)
    if key not in mapping:
        raise doc.error("missing required grid", key=key, table=table)
    spec = mapping[key]
    if isinstance(spec, list):
        raise doc.error("use a {min, max, steps, scale} table for grids", key=key, table=table)
    if not isinstance(spec, dict):
        raise doc.error("expected a table {min, max, steps, scale}", key=key, table=table)
    lo = get_number(doc, spec, "min", table=path, required=True, minimum=lower, maximum=upper)
    hi = get_number(doc, spec, "max", table=path, required=True, minimum=lower, maximum=upper)
    steps = get_int(doc, spec, "steps", table=path, required=True, minimum=1)
    scale = spec.get("scale", "linear")
    if scale not in ("linear", "log"):
        raise doc.error(f"scale must be 'linear' or 'log', got {scale!r}", key="scale", table=path)
    if hi < lo:
        raise doc.error("max must be >= min", key="max", table=path)
    if scale == "log" and lo <= 0:
        raise doc.error("log-scale axes need positive bounds", key="min", table=path)
    return Grid(lo, hi, steps, scale)


def get_number_list(doc, mapping, key, table=None, minimum=None, maximum=None):
    if key not in mapping:
        raise doc.error("missing required field", key=key, table=table)
    values = mapping[key]
    if not isinstance(values, list):
        values = [values]
    if not values:
        raise doc.error("list must not be empty", key=key, table=table)
    out = []
    for v in values:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise doc.error(f"expected finite numbers, got {v!r}", key=key, table=table)
        if (minimum is not None and v < minimum) or (maximum is not None and v > maximum):
            raise doc.error(f"value {v} outside [{minimum}, {maximum}]", key=key, table=table)
        out.append(float(v))
    return out


def get_params(doc, mapping, table="params", defaults=None) -> SystemParams:
    """SystemParams from a table; ``C`` may replace ``G`` (G = sqrt(C kappa gamma))."""
    if table not in mapping:
        if defaults is not None:
            return defaults
        raise doc.error("missing [params] table", key=None, table=table, line=None)
    block = mapping[table]
    if not isinstance(block, dict):
        raise doc.error("expected a table", table=table)
    base = defaults.as_dict() if defaults is not None else {}
    known = {"G", "C", "kappa_ex", "kappa_in", "gamma", "Nbar", "eta"}
    for name in block:
        if name not in known:
            raise doc.error(f"unknown field (expected one of {sorted(known)})", key=name, table=table)
    vals = {}
    for name in ("kappa_ex", "kappa_in", "gamma", "Nbar"):
        vals[name] = get_number(doc, block, name, table, default=base.get(name, 0.0 if name != "gamma" else 1.0),
                                minimum=0.0)
    vals["eta"] = get_number(doc, block, "eta", table, default=base.get("eta", 0.0), minimum=0.0, maximum=1.0)
    if "G" in block and "C" in block:
        raise doc.error("give either G or C, not both", key="C", table=table)
    if "C" in block:
        C = get_number(doc, block, "C", table, minimum=0.0)
        return SystemParams.from_cooperativity(C, **vals)
    vals["G"] = get_number(doc, block, "G", table, default=base.get("G"), minimum=0.0, required="G" not in base)
    return SystemParams(**vals)
