"""``mflab <experiment> --config <path> [--seed S] [--out DIR]``.

Exit codes: 0 when every assertion passes (or is skipped by the state cap),
1 on an assertion failure, 2 on a malformed or schema-violating config.
"""
from __future__ import annotations

import argparse
import csv
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import EXPERIMENTS, ConfigError, load_config
from .experiments import SKIP, run_experiment, sanitize


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(sanitize(obj), indent=2, sort_keys=True, allow_nan=False) + "\n")


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return v


def _dump_csv(header, rows, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])


def _versions() -> dict:
    return {"mflab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _status(v) -> str:
    return SKIP if v == SKIP else ("pass" if v is True else "fail")


def run(experiment: str, config: str, seed=None, out="out", overrides=None) -> int:
    overrides = dict(overrides or {})
    if seed is not None:
        overrides["seed"] = seed
    try:
        cfg = load_config(config, experiment, overrides)
    except ConfigError as e:
        print(f"config error at {e.pointer}: {e.message}", file=sys.stderr)
        return 2
    digest = cfg.digest()
    outdir = Path(out) / f"{experiment}-{digest[:16]}"
    outdir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    result = run_experiment(cfg)
    wall = time.perf_counter() - t0
    artifacts = []
    for name, (header, rows) in sorted(result.tables.items()):
        _dump_csv(header, rows, outdir / f"{name}.csv")
        artifacts.append(f"{name}.csv")
    _dump_json(result.report, outdir / "report.json")
    _dump_json(cfg.raw, outdir / "config.json")
    artifacts += ["report.json", "config.json"]
    manifest = {
        "experiment": experiment,
        "config_hash": digest,
        "artifacts": artifacts,
        "wall_clock_seconds": wall,
        "versions": _versions(),
        "assertions": {k: _status(v) for k, v in result.assertions.items()},
        "passed": result.passed,
    }
    _dump_json(manifest, outdir / "manifest.json")
    for k, v in result.assertions.items():
        print(f"{_status(v):>13}  {k}")
    print(f"manifest: {outdir / 'manifest.json'}")
    if not result.passed:
        print(f"assertion failure; see {outdir / 'report.json'}", file=sys.stderr)
        return 1
    return 0


def run_suite(out="out", only=None, seed=0) -> int:
    from .acceptance import run_all

    results = run_all(only=only, seed=seed, echo=True)
    outdir = Path(out) / "suite"
    outdir.mkdir(parents=True, exist_ok=True)
    summary = {"criteria": [r.as_dict() for r in results],
               "passed": all(r.status != "fail" for r in results),
               "versions": _versions()}
    _dump_json(summary, outdir / "summary.json")
    print(f"summary: {outdir / 'summary.json'}")
    return 0 if summary["passed"] else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mflab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int)
        p.add_argument("--out", default="out")
        p.add_argument("--dt", type=float)
        p.add_argument("--t-end", type=float, dest="t_end")
        p.add_argument("--cap-states", type=int, dest="cap_states_override")
        p.add_argument("--replicas", type=int)
        p.add_argument("--samples", type=int)
        p.add_argument("--validate", action="store_const", const=True)
    p = sub.add_parser("suite", help="run every acceptance criterion")
    p.add_argument("--out", default="out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--only", type=lambda s: [int(x) for x in s.split(",")],
                   help="comma-separated criterion numbers")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.experiment == "suite":
        return run_suite(args.out, args.only, args.seed)
    keys = ("dt", "t_end", "cap_states_override", "replicas", "samples", "validate")
    overrides = {k: getattr(args, k) for k in keys}
    return run(args.experiment, args.config, args.seed, args.out, overrides)


if __name__ == "__main__":
    sys.exit(main())
