"""Command line entry point: `qcocycle <subcommand> --config FILE [--out DIR]`.

Exit codes: 0 all checks pass, 1 a check failed, 2 configuration error,
3 convergence or other numerical failure.
"""
import argparse
import dataclasses
import json
import os
import platform
import sys
import time

import numpy as np
import scipy

from . import __version__
from .config import SCHEMA, load_config
from .errors import CocycleError, ConfigError, ExpansionError
from .map_family import COMPONENT_CATALOG, MAP_CATALOG
from .pipelines import PIPELINES, run

OUT_ENV = "QCOCYCLE_OUT"
EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

BASE_CATALOG = {
    "rotation": {"params": {"alpha": "float in (0, 1), default (sqrt 5 - 1)/2",
                            "x0": "float in [0, 1)", "n_symbols": "int >= 2"},
                 "doc": "x -> x + alpha mod 1, symbol floor(n_symbols * x)"},
    "iid": {"params": {"weights": "floats summing to 1", "seed": "u64"},
            "doc": "two-sided i.i.d. symbols from a counter hash of (seed, index)"},
}


def list_catalog():
    """Catalog of bases, maps and observables with parameter schemas (sorted)."""
    return {
        "bases": {k: BASE_CATALOG[k] for k in sorted(BASE_CATALOG)},
        "maps": {k: MAP_CATALOG[k] for k in sorted(MAP_CATALOG)},
        "observables": {k: COMPONENT_CATALOG[k] for k in sorted(COMPONENT_CATALOG)},
    }


def format_catalog(cat):
    lines = []
    for group, items in cat.items():
        lines.append(f"{group}:")
        for name, info in items.items():
            lines.append(f"  {name}: {info['doc']}")
            for p, desc in info["params"].items():
                lines.append(f"    {p}: {desc}")
    return "\n".join(lines)


def _report_json(rep, cfg, seed, wall):
    return {
        "subcommand": rep.subcommand,
        "passed": rep.passed,
        "checks": [dataclasses.asdict(c) for c in rep.checks],
        "info": rep.info,
        "artifacts": rep.artifacts,
        "provenance": {
            "config_hash": cfg.hash,
            "config_source": cfg.source,
            "seed": seed,
            "versions": {"qcocycle": __version__, "python": platform.python_version(),
                         "numpy": np.__version__, "scipy": scipy.__version__},
        },
        "timings": dict(rep.timings, wall_s=wall),
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if np.isfinite(f) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def build_parser():
    p = argparse.ArgumentParser(prog="qcocycle", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in PIPELINES:
        sp = sub.add_parser(name, help=f"run the {name} pipeline")
        sp.add_argument("--config", required=True, help="experiment config (INI)")
        sp.add_argument("--out", help=f"artifact directory (default: ${OUT_ENV}, [output] dir, or ./out)")
        sp.add_argument("--seed", type=lambda s: int(s, 0), help="override [base] seed (u64)")
        sp.add_argument("--jobs", type=int, help="worker processes")
    cp = sub.add_parser("catalog", help="list bases, maps and observables")
    cp.add_argument("--json", action="store_true", help="print as JSON")
    sch = sub.add_parser("schema", help="print the config schema")
    sch.add_argument("--json", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "catalog":
        cat = list_catalog()
        print(json.dumps(cat, indent=2) if args.json else format_catalog(cat))
        return EXIT_OK
    if args.command == "schema":
        sch = {s: {k: {"type": t, "doc": d} for k, (t, _, d) in keys.items()} for s, keys in SCHEMA.items()}
        print(json.dumps(sch, indent=2) if args.json else
              "\n".join(f"[{s}] {k}: {v['type']} - {v['doc']}" for s, ks in sch.items() for k, v in ks.items()))
        return EXIT_OK
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            cfg = cfg.with_override("base", "seed", args.seed)
        out = args.out or os.environ.get(OUT_ENV) or cfg["output"]["dir"] or "out"
        t0 = time.perf_counter()
        rep = run(args.command, cfg, out, args.jobs)
    except (ConfigError, ExpansionError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CocycleError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    wall = time.perf_counter() - t0
    doc = _json_safe(_report_json(rep, cfg, cfg["base"]["seed"], wall))
    with open(os.path.join(out, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, allow_nan=False)
        fh.write("\n")
    for c in rep.checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {rep.subcommand}:{c.name} "
              f"observed={c.observed} predicted={c.predicted} tol={c.tolerance}")
    return EXIT_OK if rep.passed else EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
