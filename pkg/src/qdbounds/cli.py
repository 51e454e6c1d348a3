"""Command line entry point.

    qdbounds run <scenario> [--set key=value]... [--out dir] [--threads n]
    qdbounds validate <scenario>
    qdbounds list

``<scenario>`` is a YAML file or the name of a bundled scenario.  ``run``
exits with 0 when no experiment failed, 1 otherwise and 2 on a bad
scenario.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import logging
import sys
from pathlib import Path

from . import __version__
from .config import ScenarioError, bundled_scenarios, load_scenario, scenario_hash
from .experiments import RunContext, run_experiment
from .io import write_json
from .lattice import operator_from_config

log = logging.getLogger("qdbounds")


def run(scenario, overrides=(), out=None, threads: int = 1):
    """Execute every experiment block in order; returns ``(manifest, exit_code)``."""
    doc = load_scenario(scenario, list(overrides))
    spec = operator_from_config(doc["operator"])
    out_dir = Path(out or doc.get("output") or Path("runs") / doc["name"])
    out_dir.mkdir(parents=True, exist_ok=True)
    ctx = RunContext(out_dir, int(doc.get("seed", 0)), max(1, int(threads)))
    results = []
    for block in doc["experiments"]:
        log.info("running %s", block.get("name", block["type"]))
        res = run_experiment(spec, block, ctx)
        if res.error:
            log.error(res.error)
        log.info("%s: %s", res.name, res.status)
        results.append(res)
    manifest = {
        "scenario": doc["name"],
        "scenario_sha256": scenario_hash(doc),
        "version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "seed": ctx.seed,
        "experiments": [vars(r) for r in results],
        "files": sorted(f for r in results for f in r.files) + ["manifest.json"],
    }
    write_json(out_dir / "manifest.json", manifest)
    failed = any(r.status in ("fail", "error") for r in results)
    return manifest, 1 if failed else 0


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")
    ap = argparse.ArgumentParser(prog="qdbounds", description="Quantum dynamical bounds laboratory",
                                 parents=[common])
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run a scenario", parents=[common])
    r.add_argument("scenario")
    r.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config value by dotted path (repeatable)")
    r.add_argument("--out", default=None, help="output directory")
    r.add_argument("--threads", type=int, default=1, help="worker threads for grid sweeps")
    v = sub.add_parser("validate", help="parse and check a scenario without computing", parents=[common])
    v.add_argument("scenario")
    v.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    sub.add_parser("list", help="list bundled scenarios", parents=[common])
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.cmd == "list":
        for name, desc in bundled_scenarios().items():
            print(f"{name}\t{desc}")
        return 0
    try:
        if args.cmd == "validate":
            load_scenario(args.scenario, args.overrides)
            print("ok")
            return 0
        manifest, code = run(args.scenario, args.overrides, args.out, args.threads)
    except (ScenarioError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    for ex in manifest["experiments"]:
        line = f"{ex['name']}: {ex['status']}"
        if ex["error"]:
            line += f" ({ex['error']})"
        print(line)
    return code


if __name__ == "__main__":
    sys.exit(main())
