"""Experiment configuration: sectioned INI text with a typed schema.

Maps and observable components are written as call expressions, e.g.

    [maps]
    maps = doubling(); beta-map(beta=3.0)

    [observable]
    components = trig(cos=[(1, 1.0), (3, 1.0)])

Parsing is locale independent (Python literals) and serialize(parse(text))
is a fixed point.
"""
import ast
import configparser
from dataclasses import dataclass, field
import hashlib

from .base_driver import BaseSystem
from .errors import CatalogError, ConfigError
from .map_family import COMPONENT_CATALOG, MAP_CATALOG

REQUIRED = object()


def _calls(text):
    out = []
    for part in [p.strip() for p in text.split(";") if p.strip()]:
        name = part.split("(", 1)[0].strip()
        src = part if "(" in part else part + "()"
        try:
            node = ast.parse(src.replace(name, "_f", 1), mode="eval").body
        except SyntaxError as exc:
            raise ValueError(f"cannot parse {part!r}") from exc
        if not isinstance(node, ast.Call) or node.args:
            raise ValueError(f"expected name(key=value, ...) in {part!r}")
        params = {}
        for kw in node.keywords:
            params[kw.arg] = ast.literal_eval(kw.value)
        out.append((name, params))
    return tuple(out)


def _fmt_calls(calls):
    parts = []
    for name, params in calls:
        inner = ", ".join(f"{k}={v!r}" for k, v in sorted(params.items()))
        parts.append(f"{name}({inner})")
    return "; ".join(parts)


def _floats(text):
    return tuple(float(v) for v in text.replace(",", " ").split())


def _ints(text):
    return tuple(int(v) for v in text.replace(",", " ").split())


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _u64(text):
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return v


_PARSE = {
    "int": int, "u64": _u64, "float": float, "str": str.strip, "floats": _floats,
    "ints": _ints, "calls": _calls, "bool": _bool,
}


def _fmt(kind, v):
    if kind in ("floats",):
        return ", ".join(repr(float(x)) for x in v)
    if kind == "ints":
        return ", ".join(str(int(x)) for x in v)
    if kind == "calls":
        return _fmt_calls(v)
    if kind == "float":
        return repr(float(v))
    if kind == "bool":
        return "true" if v else "false"
    return str(v)


# section -> key -> (kind, default, doc)
SCHEMA = {
    "base": {
        "kind": ("str", REQUIRED, "rotation | iid"),
        "seed": ("u64", REQUIRED, "seed for base symbols and Monte Carlo streams"),
        "alpha": ("float", 0.6180339887498949, "rotation angle in (0, 1)"),
        "x0": ("float", 0.0, "rotation starting point"),
        "n_symbols": ("int", 2, "rotation alphabet size"),
        "weights": ("floats", (0.5, 0.5), "iid symbol probabilities"),
        "origin": ("int", 0, "absolute index of the reference fiber omega"),
    },
    "maps": {
        "maps": ("calls", REQUIRED, "fiber map per symbol (cycled)"),
        "delta": ("float", 0.1, "required expansion margin: slopes >= 1 + delta"),
    },
    "observable": {
        "components": ("calls", REQUIRED, "observable components g^1..g^d"),
        "centering": ("str", "acim", "acim | none"),
    },
    "numerics": {
        "n_bins": ("int", 4096, "Ulam partition size"),
        "pullback_tol": ("float", 1e-12, "Cauchy tolerance for twisted pullbacks"),
        "acim_tol": ("float", 1e-13, "L1 Cauchy tolerance for the a.c.i.m. pullback"),
        "contour_radius": ("float", 0.25, "radius for contour derivatives"),
        "theta_min": ("float", -0.5, "theta grid lower end"),
        "theta_max": ("float", 0.5, "theta grid upper end"),
        "theta_points": ("int", 21, "theta grid size per axis"),
        "lag_max": ("int", 40, "Green-Kubo truncation lag"),
        "gk_fibers": ("int", 8, "starting fibers averaged in Green-Kubo"),
        "variance_n": ("int", 4096, "horizon for Hessian-based covariance"),
    },
    "experiment": {
        "n": ("int", 1024, "time horizon"),
        "n_ladder": ("ints", (), "horizons for rate fits"),
        "M": ("int", 100000, "Monte Carlo sample count"),
        "heldout_M": ("int", 100000, "held-out sample count (concentrate)"),
        "levels": ("floats", (), "deviation levels a"),
        "tilted_levels": ("floats", (), "levels checked against the tilted estimator"),
        "tilted_M": ("int", 100000, "tilted sample count"),
        "theta": ("floats", (1.0,), "direction/tilt for mdp"),
        "mdp_exponent": ("float", 0.75, "a_n = n^exponent"),
        "tolerance": ("float", 0.0, "check tolerance (0 = pipeline default)"),
        "eps_grid": ("floats", (), "concentration deviations"),
        "window": ("float", 0.05, "LCLT window half-width in units of sqrt(n) Sigma"),
        "t_probe": ("floats", (0.5, 3.0), "twisted-norm probe interval J"),
        "probe_n": ("int", 64, "steps for norm-growth probes"),
        "oracle": ("str", "", "closed-form cumulant: log-cosh | gaussian | empty"),
        "target": ("floats", (), "expected covariance entries, row major"),
        "block": ("int", 65536, "Monte Carlo block size"),
        "jobs": ("int", 0, "worker processes (0 = available cores)"),
    },
    "output": {
        "dir": ("str", "", "artifact directory"),
        "formats": ("str", "csv,json", "artifact formats"),
    },
}


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=dict)  # section -> key -> value
    source: str = ""

    def __getitem__(self, item):
        return self.values[item]

    def get(self, section, key):
        return self.values[section][key]

    def serialize(self):
        lines = []
        for sec, keys in SCHEMA.items():
            lines.append(f"[{sec}]")
            for key, (kind, _, _) in keys.items():
                lines.append(f"{key} = {_fmt(kind, self.values[sec][key])}")
            lines.append("")
        return "\n".join(lines)

    @property
    def hash(self):
        return hashlib.sha256(self.serialize().encode()).hexdigest()[:16]

    def with_override(self, section, key, value):
        vals = {s: dict(v) for s, v in self.values.items()}
        vals[section][key] = value
        return ExperimentConfig(vals, self.source)

    def base_system(self):
        b = self.values["base"]
        return BaseSystem(b["kind"], alpha=b["alpha"], x0=b["x0"], n_symbols=b["n_symbols"],
                          weights=b["weights"], seed=b["seed"])


def _line_of(text, section, key=None):
    cur = None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            cur = s[1:-1].strip()
            if key is None and cur == section:
                return i
        elif cur == section and key is not None and "=" in s and s.split("=", 1)[0].strip() == key:
            return i
    return None


def _where(text, section, key=None):
    ln = _line_of(text, section, key)
    loc = f"[{section}]" + (f" {key}" if key else "")
    return f"{loc} (line {ln})" if ln else loc


def parse_config(text, source="<string>"):
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"{source}: unknown section {_where(text, sec)}")
    values = {}
    for sec, keys in SCHEMA.items():
        got = cp[sec] if cp.has_section(sec) else {}
        for k in got:
            if k not in keys:
                raise ConfigError(f"{source}: unknown field {_where(text, sec, k)}")
        values[sec] = {}
        for key, (kind, default, _) in keys.items():
            if key in got:
                try:
                    values[sec][key] = _PARSE[kind](got[key])
                except (ValueError, SyntaxError) as exc:
                    raise ConfigError(f"{source}: bad value for {_where(text, sec, key)}: {exc}") from exc
            elif default is REQUIRED:
                raise ConfigError(f"{source}: missing required field [{sec}] {key}")
            else:
                values[sec][key] = default
    cfg = ExperimentConfig(values, source)
    _validate(cfg, text, source)
    return cfg


def _validate(cfg, text, source):
    def fail(sec, key, msg):
        raise ConfigError(f"{source}: {_where(text, sec, key)}: {msg}")

    b = cfg["base"]
    if b["kind"] not in ("rotation", "iid"):
        fail("base", "kind", f"unknown base kind {b['kind']!r}")
    try:
        cfg.base_system()
    except ConfigError as exc:
        fail("base", "weights" if b["kind"] == "iid" else "alpha", str(exc))
    for name, _ in cfg["maps"]["maps"]:
        if name not in MAP_CATALOG:
            raise CatalogError(f"{source}: {_where(text, 'maps', 'maps')}: unknown map {name!r}")
    comps = cfg["observable"]["components"]
    if not comps:
        fail("observable", "components", "need at least one component")
    for name, _ in comps:
        if name not in COMPONENT_CATALOG:
            raise CatalogError(f"{source}: {_where(text, 'observable', 'components')}: "
                               f"unknown observable {name!r}")
    if cfg["observable"]["centering"] not in ("acim", "none"):
        fail("observable", "centering", "must be acim or none")
    nm = cfg["numerics"]
    if not 8 <= nm["n_bins"] <= 1 << 20:
        fail("numerics", "n_bins", "must lie in [8, 2^20]")
    if not 0 < nm["contour_radius"] < 1:
        fail("numerics", "contour_radius", "must lie in (0, 1)")
    if nm["theta_points"] < 3:
        fail("numerics", "theta_points", "need at least 3 points")
    if nm["lag_max"] < 1:
        fail("numerics", "lag_max", "must be >= 1")
    ex = cfg["experiment"]
    if ex["oracle"] not in ("", "log-cosh", "gaussian"):
        fail("experiment", "oracle", "must be log-cosh, gaussian or empty")
    if ex["n"] < 1 or ex["M"] < 1:
        fail("experiment", "n", "n and M must be positive")


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), str(path))
