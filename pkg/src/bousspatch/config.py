"""Run configuration files.

The format is TOML with keys mirroring :class:`~bousspatch.solver.SimConfig`::

    dt = 0.005
    T = 1.0
    cfl_safety = 0.5
    raster_width = 2.0
    contour_nodes = 512
    snapshot_stride = 1
    gamma = 0.5
    gravity = 1.0

    [grid]
    n = 256
    L = 8.0

    [initial_velocity]
    profile = "zero"

    [initial_contour]
    shape = "ellipse"

    [initial_contour.params]
    a = 1.0
    b = 0.5

Every key is optional.  Unknown keys, values of the wrong type and values
outside their range raise :class:`ConfigError` carrying the line and column
of the offending key.
"""

from __future__ import annotations

import json
import re

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import spectral as sp
from .solver import CONTOUR_SHAPES, VELOCITY_PROFILES, ConfigurationError, SimConfig

_DEFAULT = SimConfig()

# scalar fields in emission order: name -> kind
_SCALARS = {
    "dt": "float",
    "T": "float",
    "cfl_safety": "float",
    "raster_width": "float",
    "contour_nodes": "int",
    "snapshot_stride": "int",
    "gamma": "float",
    "gravity": "float",
}
_GRID = {"n": "int", "L": "float"}

VELOCITY_PARAMS = {
    "zero": {},
    "taylor_green": {"amplitude": "float", "mode": "int"},
    "gaussian_vortex": {"circulation": "float", "sigma": "float", "center": "point"},
}
CONTOUR_PARAMS = {
    "circle": {"radius": "float", "center": "point"},
    "ellipse": {"a": "float", "b": "float", "angle": "float", "center": "point"},
    "star": {"radius": "float", "amplitude": "float", "lobes": "int", "center": "point"},
    "none": {},
}
# parameters that must be strictly positive
_POSITIVE = {"radius", "a", "b", "sigma", "mode", "lobes"}


class ConfigError(ConfigurationError):
    """Invalid configuration file; ``line`` and ``column`` are 1-based or None."""

    def __init__(self, path, message, line=None, column=None):
        self.path = str(path)
        self.line = line
        self.column = column
        where = f"{path}:{line}:{column}" if line is not None else str(path)
        super().__init__(f"{where}: {message}")


# -- key positions ------------------------------------------------------------

_HEADER = re.compile(r"^\s*\[\s*([^\[\]]+?)\s*\]")
_KEY = re.compile(r"^(\s*)([A-Za-z0-9_\-\".' ]+?)\s*=")


def _split_key(key):
    return tuple(p.strip().strip("\"'") for p in key.split("."))


def _key_positions(text):
    """Map dotted key paths to ``(line, column)`` of the key's first character."""
    pos = {}
    table = ()
    for ln, line in enumerate(text.splitlines(), start=1):
        m = _HEADER.match(line)
        if m:
            table = _split_key(m.group(1))
            pos.setdefault(table, (ln, line.index("[") + 1))
            continue
        m = _KEY.match(line)
        if m:
            pos.setdefault(table + _split_key(m.group(2)), (ln, len(m.group(1)) + 1))
    return pos


class _Reader:
    def __init__(self, path, text):
        self.path = path
        self.pos = _key_positions(text)

    def fail(self, key, message):
        key = tuple(key)
        while key and key not in self.pos:
            key = key[:-1]
        line, col = self.pos.get(key, (None, None))
        raise ConfigError(self.path, message, line, col)

    def value(self, key, v, kind):
        name = ".".join(key)
        if kind == "float":
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                self.fail(key, f"{name} must be a number, got {v!r}")
            return float(v)
        if kind == "int":
            if isinstance(v, bool) or not isinstance(v, int):
                self.fail(key, f"{name} must be an integer, got {v!r}")
            return v
        if kind == "str":
            if not isinstance(v, str):
                self.fail(key, f"{name} must be a string, got {v!r}")
            return v
        if kind == "point":
            if (not isinstance(v, list) or len(v) != 2
                    or any(isinstance(c, bool) or not isinstance(c, (int, float)) for c in v)):
                self.fail(key, f"{name} must be a pair of numbers, got {v!r}")
            return (float(v[0]), float(v[1]))
        if kind == "table":
            if not isinstance(v, dict):
                self.fail(key, f"{name} must be a table, got {v!r}")
            return v
        raise AssertionError(kind)

    def unknown(self, table, allowed, prefix=()):
        for k in table:
            if k not in allowed:
                self.fail(prefix + (k,), f"unknown key {'.'.join(prefix + (k,))!r}")


# -- parsing ------------------------------------------------------------------

def _parse_named(rd, data, section, name_key, default, schema):
    """``(name, params)`` from a table with a name key and a params table."""
    tab = rd.value((section,), data.get(section, {}), "table")
    rd.unknown(tab, {name_key, "params"}, (section,))
    if name_key in tab:
        name = rd.value((section, name_key), tab[name_key], "str")
        if name not in schema:
            rd.fail((section, name_key), f"{section}.{name_key} must be one of "
                    f"{sorted(schema)}, got {name!r}")
        params = {}
    else:
        name, params = default[0], dict(default[1])
    if "params" in tab:
        raw = rd.value((section, "params"), tab["params"], "table")
        rd.unknown(raw, schema[name], (section, "params"))
        params = {}
        for k in schema[name]:
            if k in raw:
                key = (section, "params", k)
                params[k] = rd.value(key, raw[k], schema[name][k])
                if k in _POSITIVE and not params[k] > 0:
                    rd.fail(key, f"{'.'.join(key)} must be positive, got {params[k]}")
    return name, params


def _is_pow2(n, lo):
    return n >= lo and not n & (n - 1)


def config_from_text(text, path="<string>"):
    """Parse configuration text; see the module docstring for the format."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+), column (\d+)", str(exc))
        line, col = (int(m.group(1)), int(m.group(2))) if m else (None, None)
        msg = re.sub(r"\s*\(at line \d+, column \d+\)", "", str(exc))
        raise ConfigError(path, f"malformed TOML: {msg}", line, col) from None
    rd = _Reader(path, text)
    rd.unknown(data, set(_SCALARS) | {"grid", "initial_velocity", "initial_contour"})

    vals = {k: getattr(_DEFAULT, k) for k in _SCALARS}
    for k, kind in _SCALARS.items():
        if k in data:
            vals[k] = rd.value((k,), data[k], kind)

    grid = rd.value(("grid",), data.get("grid", {}), "table")
    rd.unknown(grid, _GRID, ("grid",))
    n = rd.value(("grid", "n"), grid["n"], "int") if "n" in grid else _DEFAULT.grid.n
    L = rd.value(("grid", "L"), grid["L"], "float") if "L" in grid else _DEFAULT.grid.L
    if not _is_pow2(n, 32):
        rd.fail(("grid", "n"), f"grid.n must be a power of two >= 32, got {n}")
    if not L > 0:
        rd.fail(("grid", "L"), f"grid.L must be positive, got {L}")

    checks = (
        ("dt", vals["dt"] > 0, "must be positive"),
        ("T", vals["T"] >= 0, "must be nonnegative"),
        ("cfl_safety", 0 < vals["cfl_safety"] <= 1, "must lie in (0, 1]"),
        ("raster_width", vals["raster_width"] >= 1, "must be >= 1"),
        ("contour_nodes", _is_pow2(vals["contour_nodes"], 16), "must be a power of two >= 16"),
        ("snapshot_stride", vals["snapshot_stride"] >= 1, "must be >= 1"),
        ("gamma", 0 < vals["gamma"] < 1, "must lie in (0, 1)"),
    )
    for k, ok, what in checks:
        if not ok:
            rd.fail((k,), f"{k} {what}, got {vals[k]}")
    steps = vals["T"] / vals["dt"]
    if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
        rd.fail(("T",), f"T = {vals['T']} is not a multiple of dt = {vals['dt']}")

    velocity = _parse_named(rd, data, "initial_velocity", "profile",
                            _DEFAULT.initial_velocity, VELOCITY_PARAMS)
    contour = _parse_named(rd, data, "initial_contour", "shape",
                           _DEFAULT.initial_contour, CONTOUR_PARAMS)
    assert set(VELOCITY_PARAMS) == set(VELOCITY_PROFILES)
    assert set(CONTOUR_PARAMS) == set(CONTOUR_SHAPES)
    return SimConfig(grid=sp.Grid(n, L), initial_velocity=velocity,
                     initial_contour=contour, **vals)


def parse_config(path):
    """Read a configuration file into a :class:`SimConfig`.

    Raises
    ------
    ConfigError
        If the file is missing or unreadable, is not valid TOML, or holds an
        unknown key or an invalid value.
    """
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError(path, f"cannot read configuration: {exc.strerror}") from None
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        line = raw[:exc.start].count(b"\n") + 1
        col = exc.start - (raw.rfind(b"\n", 0, exc.start) + 1) + 1
        raise ConfigError(path, "configuration is not UTF-8", line, col) from None
    return config_from_text(text, path)


# -- emission -----------------------------------------------------------------

def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (tuple, list)):
        return "[" + ", ".join(_fmt(float(c)) for c in v) + "]"
    raise TypeError(f"cannot format {v!r}")


def emit_config(config):
    """Canonical text of ``config``: every field, fixed order, ``repr`` floats."""
    out = []
    for k, kind in _SCALARS.items():
        v = getattr(config, k)
        out.append(f"{k} = {_fmt(float(v) if kind == 'float' else int(v))}")
    out += ["", "[grid]", f"n = {int(config.grid.n)}", f"L = {_fmt(float(config.grid.L))}"]
    for section, key, (name, params), schema in (
            ("initial_velocity", "profile", config.initial_velocity, VELOCITY_PARAMS),
            ("initial_contour", "shape", config.initial_contour, CONTOUR_PARAMS)):
        out += ["", f"[{section}]", f"{key} = {_fmt(name)}", "", f"[{section}.params]"]
        for k in schema[name]:
            if k in params:
                v = params[k]
                kind = schema[name][k]
                out.append(f"{k} = {_fmt(float(v) if kind == 'float' else int(v) if kind == 'int' else v)}")
    return "\n".join(out) + "\n"
