"""INI run configuration with line-numbered diagnostics.

Example::

    [params]
    mu_S = 1
    delta_S = inf
    q = 2:1

    [movement]
    kind = brownian
    dimension = 1
    sigma = 1

    [initial]
    moving = 0.0

    [run]
    horizon = 1
    replicas = 1000
    seed = 42
"""
from __future__ import annotations

import configparser
import math
import os
import re
from dataclasses import dataclass, field

import numpy as np

from .model import FullConfiguration, Params, SimplifiedState
from .movement import MovementSpec

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_config", "parse_law", "MODES"]

MODES = ("simplified", "labeled")
EVENT_MODES = ("first", "all", "none")

_KEYS = {
    "params": {"mu_s", "mu_b", "delta_m", "delta_s", "l", "q", "nu"},
    "movement": {"kind", "dimension", "sigma", "box_lo", "box_hi", "euler_dt", "rates"},
    "initial": {"moving", "settled", "labels", "offspring"},
    "run": {"horizon", "replicas", "seed", "threads", "out", "mode", "events"},
}


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path:
            where = f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


@dataclass
class RunConfig:
    params: Params
    initial: SimplifiedState | FullConfiguration
    horizon: float = 1.0
    replicas: int = 1
    seed: int = 0
    threads: int = 0
    out: str = "out"
    mode: str = "simplified"
    events: str = "first"
    echo: dict = field(default_factory=dict)

    def effective(self) -> dict:
        """Flattened configuration echoed into output headers.

        Threads and the output directory are left out: neither changes
        results, so outputs stay byte-comparable.
        """
        d = {k: v for k, v in self.echo.items() if k not in ("run.threads", "run.out")}
        d.update(
            {
                "run.horizon": repr(self.horizon),
                "run.replicas": str(self.replicas),
                "run.seed": str(self.seed),
                "run.mode": self.mode,
                "run.events": self.events,
                "params.digest": self.params.digest(),
            }
        )
        return dict(sorted(d.items()))


def _line_index(text: str) -> dict[tuple[str, str], int]:
    """Map (section, key) to the 1-based line where the key is defined."""
    idx = {}
    section = None
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = re.match(r"^\[([^\]]+)\]$", line)
        if m:
            section = m.group(1).strip().lower()
            idx[(section, "")] = n
            continue
        m = re.match(r"^([^=:]+?)\s*[=:]", line)
        if m and section is not None:
            idx[(section, m.group(1).strip().lower())] = n
    return idx


def _number(text: str, what: str, allow_inf: bool = False) -> float:
    t = text.strip().lower()
    if allow_inf and t in ("inf", "infinity", "∞"):
        return math.inf
    try:
        v = float(t)
    except ValueError:
        raise ValueError(f"{what}: expected a decimal number, got {text!r}") from None
    if not math.isfinite(v):
        raise ValueError(f"{what}: expected a finite number, got {text!r}")
    return v


def _integer(text: str, what: str) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise ValueError(f"{what}: expected an integer, got {text!r}") from None


def parse_law(text: str, what: str) -> dict[int, float]:
    """Parse ``"k:weight, k:weight"``; an empty string is the zero measure."""
    out: dict[int, float] = {}
    text = text.strip()
    if not text:
        return out
    for item in re.split(r"[,\s]+", text):
        if not item:
            continue
        if ":" not in item:
            raise ValueError(f"{what}: expected k:weight pairs, got {item!r}")
        k, w = item.split(":", 1)
        k = _integer(k, what)
        if k in out:
            raise ValueError(f"{what}: point {k} given twice")
        out[k] = _number(w, what)
    return out


def _points(text: str, what: str) -> list[list[float]]:
    """Points separated by ';', coordinates by ',' or whitespace."""
    text = text.strip()
    if not text:
        return []
    pts = []
    for chunk in text.split(";"):
        coords = [c for c in re.split(r"[,\s]+", chunk.strip()) if c]
        if not coords:
            raise ValueError(f"{what}: empty point")
        pts.append([_number(c, what) for c in coords])
    return pts


def _matrix(text: str, what: str) -> np.ndarray:
    rows = _points(text, what)
    if not rows or any(len(r) != len(rows) for r in rows):
        raise ValueError(f"{what}: expected a square matrix with rows separated by ';'")
    return np.array(rows, dtype=float)


def _vector(text: str, what: str) -> list[float]:
    return [_number(c, what) for c in re.split(r"[,\s]+", text.strip()) if c]


def parse_config(text: str, path: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Parse configuration text; ``overrides`` maps ``"section.key"`` to strings."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str.lower
    try:
        cp.read_string(text, source=path or "<config>")
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(str(exc).splitlines()[0], line, path) from None
    lines = _line_index(text)
    for section in cp.sections():
        if section not in _KEYS:
            raise ConfigError(f"unknown section [{section}]", lines.get((section, "")), path)
        for key in cp[section]:
            if key not in _KEYS[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]", lines.get((section, key)), path)
    overridden = set()
    for dotted, value in (overrides or {}).items():
        section, key = dotted.split(".", 1)
        if not cp.has_section(section):
            cp.add_section(section)
        cp[section][key] = str(value)
        overridden.add((section, key))

    def fail(message, section, key=""):
        if (section, key) in overridden:
            return ConfigError(message, None, "command line")
        return ConfigError(message, lines.get((section, key), lines.get((section, ""))), path)

    def get(section, key, default=None):
        if cp.has_section(section) and key in cp[section]:
            return cp[section][key]
        return default

    def guard(section, key, fn):
        try:
            return fn()
        except (ValueError, TypeError) as exc:
            raise fail(str(exc), section, key) from None

    echo = {f"{s}.{k}": v.strip() for s in cp.sections() for k, v in cp[s].items()}

    movement = guard("movement", "kind", lambda: _movement(get))
    p = {}
    p["mu_S"] = guard("params", "mu_s", lambda: _number(get("params", "mu_s", "0"), "mu_S"))
    p["mu_B"] = guard("params", "mu_b", lambda: _number(get("params", "mu_b", "0"), "mu_B"))
    p["delta_M"] = guard("params", "delta_m", lambda: _number(get("params", "delta_m", "0"), "delta_M"))
    p["delta_S"] = guard("params", "delta_s", lambda: _number(get("params", "delta_s", "0"), "delta_S", True))
    L = guard("params", "l", lambda: _number(get("params", "l", "inf"), "L", True))
    if not math.isinf(L):
        if L != int(L) or L < 1:
            raise fail("L must be a positive integer or inf", "params", "l")
        p["L"] = int(L)
    p["q"] = guard("params", "q", lambda: parse_law(get("params", "q", "0:1"), "q"))
    p["nu"] = guard("params", "nu", lambda: parse_law(get("params", "nu", ""), "nu"))
    if "mu_b" not in (cp["params"] if cp.has_section("params") else {}):
        p["mu_B"] = sum(p["nu"].values())
    try:
        params = Params(movement=movement, **p)
    except (ValueError, TypeError) as exc:
        # Params messages open with the offending field name
        field_name = str(exc).split()[0].lower()
        raise fail(str(exc), "params", field_name if ("params", field_name) in lines else "") from None

    initial = guard("initial", "moving", lambda: _initial(get, params))
    horizon = guard("run", "horizon", lambda: _number(get("run", "horizon", "1"), "horizon"))
    if horizon < 0:
        raise fail("horizon must be non-negative", "run", "horizon")
    replicas = guard("run", "replicas", lambda: _integer(get("run", "replicas", "1"), "replicas"))
    if replicas < 1:
        raise fail("replicas must be >= 1", "run", "replicas")
    seed = guard("run", "seed", lambda: _integer(get("run", "seed", "0"), "seed"))
    if not 0 <= seed < 2**64:
        raise fail("seed must be an unsigned 64-bit integer", "run", "seed")
    threads = guard("run", "threads", lambda: _integer(get("run", "threads", "0"), "threads"))
    if threads < 0:
        raise fail("threads must be >= 0 (0 = all cores)", "run", "threads")
    mode = get("run", "mode", "labeled" if isinstance(initial, FullConfiguration) else "simplified").strip()
    if mode not in MODES:
        raise fail(f"mode must be one of {MODES}", "run", "mode")
    events = get("run", "events", "first").strip()
    if events not in EVENT_MODES:
        raise fail(f"events must be one of {EVENT_MODES}", "run", "events")
    return RunConfig(params, initial, horizon, replicas, seed, threads,
                     get("run", "out", "out").strip(), mode, events, echo)


def _movement(get) -> MovementSpec:
    kind = get("movement", "kind", "brownian").strip()
    dim = _integer(get("movement", "dimension", "1"), "dimension")
    sigma = _number(get("movement", "sigma", "1"), "sigma")
    if kind == "brownian":
        return MovementSpec.brownian(dim, sigma)
    if kind == "killed_brownian":
        lo = _vector(get("movement", "box_lo", ""), "box_lo")
        hi = _vector(get("movement", "box_hi", ""), "box_hi")
        dt = _number(get("movement", "euler_dt", "0.001"), "euler_dt")
        return MovementSpec.killed_brownian(lo, hi, sigma, dt)
    if kind == "chain":
        return MovementSpec.chain(_matrix(get("movement", "rates", ""), "rates"))
    if kind == "brownian_chain":
        return MovementSpec.brownian_chain(dim, sigma, _matrix(get("movement", "rates", ""), "rates"))
    raise ValueError(f"unknown movement kind {kind!r}")


def _initial(get, params: Params):
    moving = _points(get("initial", "moving", ""), "moving")
    settled = _points(get("initial", "settled", ""), "settled")
    pts = moving + settled
    D = params.movement.point_dim
    for z in pts:
        params.movement.check_point(z)
    labels_text = get("initial", "labels", "").strip()
    offspring_text = get("initial", "offspring", "").strip()
    if labels_text:
        labels = []
        for chunk in labels_text.split(";"):
            entries = [c for c in re.split(r"[,\s]+", chunk.strip()) if c]
            labels.append(tuple(_integer(e, "labels") for e in entries) if entries != ["root"] else ())
        if len(labels) != len(pts):
            raise ValueError("labels: need one label per initial particle (moving first, then settled)")
        off = [_integer(c, "offspring") for c in re.split(r"[,\s]+", offspring_text) if c] if offspring_text else None
        if off is not None and len(off) != len(pts):
            raise ValueError("offspring: need one count per initial particle")
        settled_flags = [False] * len(moving) + [True] * len(settled)
        return FullConfiguration.from_particles(labels, np.array(pts).reshape(len(pts), D), settled_flags, off)
    if offspring_text:
        raise ValueError("offspring counts need explicit labels")
    if not pts:
        return SimplifiedState.cemetery(D)
    return SimplifiedState(len(moving), len(settled), np.array(pts).reshape(len(pts), D))


def load_config(path: str, overrides: dict | None = None) -> RunConfig:
    """Read and parse ``path``; OSError propagates for IO failures."""
    with open(os.fspath(path), encoding="utf-8") as fh:
        text = fh.read()
    return parse_config(text, os.fspath(path), overrides)
