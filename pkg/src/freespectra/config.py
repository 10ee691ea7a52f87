"""Run configuration: an INI file with a fixed set of sections and keys.

All defaults live in :data:`DEFAULTS`; :meth:`RunConfig.to_text` writes
every key back out (defaults included) so that a report's embedded config
re-parses to the same run.
"""
from __future__ import annotations

import configparser
import json
import math
import re
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .errors import ContractError
from .ncalg import NCPolynomial, PolynomialSyntaxError, parse_polynomial
from .rmt import EntryLaw
from .subord import SolverOptions

COMMANDS = (
    "linearize",
    "density",
    "support",
    "norm",
    "simulate",
    "verify-inclusion",
    "verify-gap",
    "verify-norm",
    "compare",
)


class ConfigError(ContractError):
    """Bad configuration; ``line`` and ``column`` are 1-based when known."""

    def __init__(self, message, line=None, column=None):
        where = f"line {line}" if line else ""
        if line and column:
            where += f", column {column}"
        super().__init__(f"{where}: {message}" if where else message)
        self.line = line
        self.column = column


def _int_list(text):
    return [int(tok) for tok in re.split(r"[,\s]+", text.strip()) if tok]


def _float_pair(text):
    if text.strip().lower() in ("", "none"):
        return None
    vals = [float(tok) for tok in text.split(",")]
    if len(vals) != 2:
        raise ValueError("expected two comma-separated numbers")
    return tuple(vals)


def _grid(text):
    if text.strip().lower() in ("", "auto", "none"):
        return None
    vals = [float(tok) for tok in text.split(",")]
    if len(vals) != 3 or vals[2] <= 0 or vals[1] <= vals[0]:
        raise ValueError("expected 'lo, hi, step' with lo < hi and step > 0")
    return tuple(vals)


def _dets(text):
    return [tok.strip() for tok in text.split(";") if tok.strip()]


def _matrix(text):
    if text.strip().lower() in ("", "none"):
        return None
    arr = np.asarray(json.loads(text), dtype=float)
    if arr.ndim == 3 and arr.shape[2] == 2:
        return arr[..., 0] + 1j * arr[..., 1]
    if arr.ndim == 2:
        return arr.astype(complex)
    raise ValueError("matrix must be a nested list of reals or [re, im] pairs")


def _matrix_list(text):
    if text.strip().lower() in ("", "none"):
        return None
    return [_matrix(json.dumps(item)) for item in json.loads(text)]


def _fmt_float(v):
    return "none" if v is None else repr(float(v))


def _fmt_pair(v):
    return "none" if v is None else ", ".join(repr(float(x)) for x in v)


def _fmt_matrix(M):
    if M is None:
        return "none"
    return json.dumps([[[float(z.real), float(z.imag)] for z in row] for row in np.asarray(M)])


def _choice(*options):
    def parse(text):
        text = text.strip()
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text

    return parse


def _seed(text):
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    return value


@dataclass(frozen=True)
class Key:
    default: Any
    parse: Callable
    fmt: Callable = str
    required: bool = False


_REQ = object()

# Every default the tool uses, in one place.
DEFAULTS = {
    "run": {
        "command": Key(_REQ, _choice(*COMMANDS), required=True),
        "seed": Key(_REQ, _seed, required=True),
        "threads": Key(1, int),
    },
    "model": {
        "poly": Key("", str),
        "r": Key(_REQ, int, required=True),
        "t": Key(0, int),
        "dets": Key([], _dets, lambda v: "; ".join(v)),
        "model_n": Key(0, int),
        "gamma": Key(None, _matrix, _fmt_matrix),
        "alphas": Key(None, _matrix_list, lambda v: "none" if v is None else json.dumps([json.loads(_fmt_matrix(M)) for M in v])),
        "betas": Key(None, _matrix_list, lambda v: "none" if v is None else json.dumps([json.loads(_fmt_matrix(M)) for M in v])),
    },
    "solver": {
        "tol": Key(1e-11, float, _fmt_float),
        "max_iter": Key(2000, int),
        "damping_min": Key(0.05, float, _fmt_float),
        "continuation_start": Key(1.0, float, _fmt_float),
    },
    "spectra": {
        "eps": Key(1e-3, float, _fmt_float),
        "threshold": Key(1e-3, float, _fmt_float),
        "grid": Key(None, _grid, lambda v: "auto" if v is None else _fmt_pair(v)),
    },
    "simulation": {
        "law": Key("gaussian", lambda s: str(EntryLaw.parse(s))),
        "n": Key([512], _int_list, lambda v: ", ".join(map(str, v))),
        "trials": Key(20, int),
        "truncation": Key(None, _float_pair, _fmt_pair),
        "model": Key("same", _choice("same", "small")),
    },
    "verify": {
        "eps": Key(0.1, float, _fmt_float),
        "delta": Key(0.1, float, _fmt_float),
        "gap": Key(None, _float_pair, _fmt_pair),
        "tol": Key(0.07, float, _fmt_float),
        "ks_tol": Key(0.02, float, _fmt_float),
        "moment_tol": Key(0.02, float, _fmt_float),
    },
    "output": {
        "dir": Key("out", str),
        "stem": Key("", str),
    },
}


def _positions(text):
    """Map ``(section, key)`` and ``section`` to ``(line, column)`` of their first appearance."""
    pos = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        head = re.match(r"\s*\[([^\]]+)\]", line)
        if head:
            section = head.group(1).strip()
            pos.setdefault(section, (lineno, line.index("[") + 2))
            continue
        item = re.match(r"(\s*)([^=:#;\s][^=:]*?)\s*[=:]\s*", line)
        if item and section is not None and not line[:1].isspace():
            key = item.group(2).strip().lower()
            pos.setdefault((section, key), (lineno, len(item.group(1)) + 1, item.end() + 1))
    return pos


@dataclass
class RunConfig:
    values: dict
    polynomial: NCPolynomial | None = None
    source: str = field(default="", repr=False)

    def __getitem__(self, section):
        return self.values[section]

    @property
    def command(self) -> str:
        return self.values["run"]["command"]

    @property
    def seed(self) -> int:
        return self.values["run"]["seed"]

    def solver_options(self) -> SolverOptions:
        s = self.values["solver"]
        return SolverOptions(tol=s["tol"], max_iter=s["max_iter"], damping_min=s["damping_min"], continuation_start=s["continuation_start"])

    def law(self) -> EntryLaw:
        return EntryLaw.parse(self.values["simulation"]["law"])

    def with_overrides(self, **changes) -> "RunConfig":
        """Copy with ``section__key=value`` overrides (values already typed)."""
        values = {sec: dict(keys) for sec, keys in self.values.items()}
        for name, value in changes.items():
            sec, key = name.split("__")
            values[sec][key] = value
        return RunConfig(values, self.polynomial, self.source)

    def to_text(self) -> str:
        """Every key, defaults included, as re-parseable INI text."""
        lines = []
        for sec, keys in DEFAULTS.items():
            lines.append(f"[{sec}]")
            for key, spec in keys.items():
                lines.append(f"{key} = {spec.fmt(self.values[sec][key])}")
            lines.append("")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {sec: {key: DEFAULTS[sec][key].fmt(v) for key, v in keys.items()} for sec, keys in self.values.items()}

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.to_text() == other.to_text()


def parse_config(text: str) -> RunConfig:
    """Parse and validate config text; every error names its line and column."""
    parser = configparser.ConfigParser(strict=True, interpolation=None, empty_lines_in_values=False)
    try:
        parser.read_string(text)
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key {exc.option!r} in section [{exc.section}]", exc.lineno) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section [{exc.section}]", exc.lineno) from None
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside of any [section]", exc.lineno) from None
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else None
        raise ConfigError(f"cannot parse line: {exc.errors[0][1] if exc.errors else exc}", lineno) from None
    pos = _positions(text)

    values = {}
    for sec in parser.sections():
        if sec not in DEFAULTS:
            raise ConfigError(f"unknown section [{sec}]", *pos.get(sec, (None, None)))
        for key in parser[sec]:
            if key not in DEFAULTS[sec]:
                raise ConfigError(f"unknown key {key!r} in section [{sec}]", *pos.get((sec, key), (None, None))[:2])
    for sec, keys in DEFAULTS.items():
        values[sec] = {}
        for key, spec in keys.items():
            raw = parser.get(sec, key, fallback=None) if parser.has_section(sec) else None
            if raw is None:
                if spec.required:
                    line = pos.get(sec, (None,))[0]
                    raise ConfigError(f"missing required key {key!r} in section [{sec}]", line)
                values[sec][key] = spec.default
                continue
            try:
                values[sec][key] = spec.parse(raw)
            except (ValueError, TypeError, ContractError) as exc:
                line, col = pos.get((sec, key), (None, None, None))[:2]
                raise ConfigError(f"bad value for {sec}.{key}: {exc}", line, col) from None

    model = values["model"]
    if model["r"] < 0 or model["t"] < 0:
        raise ConfigError("r and t must be nonnegative", *pos.get(("model", "r"), (None, None))[:2])
    if len(model["dets"]) != model["t"]:
        line = pos.get(("model", "dets"), pos.get(("model", "t"), (None,)))[0]
        raise ConfigError(f"t = {model['t']} but {len(model['dets'])} deterministic matrix specs given", line)
    if model["gamma"] is not None:
        for key, want in (("alphas", model["r"]), ("betas", model["t"])):
            got = len(model[key] or [])
            if got != want:
                raise ConfigError(f"{got} {key} given for {want} generators", pos.get(("model", key), (None,))[0])
    poly = None
    if model["poly"].strip():
        try:
            poly = parse_polynomial(model["poly"], model["r"], model["t"])
        except PolynomialSyntaxError as exc:
            line, _, value_col = pos.get(("model", "poly"), (None, None, 1))
            raise ConfigError(str(exc), line, value_col + exc.position) from None
    elif model["gamma"] is None:
        raise ConfigError("model needs either 'poly' or 'gamma'", pos.get("model", (None,))[0])
    if values["run"]["threads"] < 1 or values["simulation"]["trials"] < 1:
        raise ConfigError("threads and trials must be positive")
    if any(n < 1 for n in values["simulation"]["n"]) or not values["simulation"]["n"]:
        raise ConfigError("simulation sizes must be positive", pos.get(("simulation", "n"), (None,))[0])
    for key in ("eps", "threshold"):
        if not values["spectra"][key] > 0 or not math.isfinite(values["spectra"][key]):
            raise ConfigError(f"spectra.{key} must be positive", pos.get(("spectra", key), (None,))[0])
    return RunConfig(values, poly, text)
