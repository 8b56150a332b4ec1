"""Command-line entry point.

Exit codes: 0 success, 1 compare found deviations above tolerance,
2 configuration error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .config import ConfigError, PipelineSettings, bundled_names, load_scenario
from .link import BeatRecord, simulate
from .pipeline import analyze_to, compare, decompose_to, write_record, write_report
from .stability import NOMINAL_CARRIER_HZ
from .timeseries import FreqKind, GridError, read_counter_csv

EXIT_OK, EXIT_COMPARE_FAIL, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3
OUT_ENV = "HYBRIDLINK_OUT"


def _add_source(p: argparse.ArgumentParser, record: bool = False) -> None:
    g = p.add_mutually_exclusive_group(required=not record)
    g.add_argument("--config", help="scenario JSON file")
    g.add_argument("--scenario", help=f"bundled scenario: {', '.join(bundled_names())}")
    if record:
        g.add_argument("--record", help="directory written by 'simulate'")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config value, e.g. pipeline.gate_s=10 (repeatable)")
    p.add_argument("--out", help=f"output directory (default: ${OUT_ENV}/<scenario>/<command>)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hybridlink", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a scenario and save the beat record")
    _add_source(p)
    p.add_argument("--truth", action="store_true", help="also save the ground-truth traces")

    p = sub.add_parser("analyze", help="counters, stability curves, offsets and slip checks")
    _add_source(p, record=True)
    p.add_argument("--counter-csv", nargs="+", metavar="CSV",
                   help="analyse externally recorded counter files (gate_start,freq_hz,kind)")
    p.add_argument("--carrier-hz", type=float, default=NOMINAL_CARRIER_HZ)

    p = sub.add_parser("decompose", help="lag scan and thermal regression of the comparison error")
    _add_source(p, record=True)

    p = sub.add_parser("report", help="full run written as a report bundle")
    _add_source(p)

    p = sub.add_parser("compare", help="compare two report bundles")
    p.add_argument("bundle_a")
    p.add_argument("bundle_b")
    p.add_argument("--tol", type=float, default=0.0, help="default absolute tolerance")
    p.add_argument("--tolerances", help="JSON file mapping path prefixes to tolerances")

    sub.add_parser("list", help="list bundled scenarios")
    return ap


def _out_dir(args, name: str) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get(OUT_ENV, "hybridlink-out")) / name / args.command


def _settings_only(args) -> tuple[PipelineSettings, dict]:
    """Pipeline settings for record/CSV inputs: from a config when one is given."""
    if args.config or args.scenario:
        sc = load_scenario(args.config, args.scenario, args.seed, args.set)
        return sc.pipeline, {"scenario": sc.name, "config_sha256": sc.hash, "seed": sc.seed}
    return PipelineSettings(), {}


def _ingest(files: list[str]) -> dict:
    counters = {}
    for f in files:
        s = read_counter_csv(f)
        key = (Path(f).stem, s.kind.value)
        if s.kind is FreqKind.INSTANT:
            raise ConfigError(f"{f}: counter data must be Pi or Lambda")
        counters[key] = s
    # a Pi/Lambda pair from two files is analysed as one target for slip detection
    pis = [k for k in counters if k[1] == "Pi"]
    lams = [k for k in counters if k[1] == "Lambda"]
    if len(pis) == 1 and len(lams) == 1 and pis[0][0] != lams[0][0]:
        counters = {("ingested", "Pi"): counters[pis[0]], ("ingested", "Lambda"): counters[lams[0]]}
    return counters


def _run(args) -> int:
    cmd = args.command
    if cmd == "list":
        print("\n".join(bundled_names()))
        return EXIT_OK
    if cmd == "compare":
        tol: dict | float = args.tol
        if args.tolerances:
            try:
                tol = {"default": args.tol, **json.loads(Path(args.tolerances).read_text())}
            except (OSError, json.JSONDecodeError) as e:
                raise ConfigError(f"cannot read tolerances {args.tolerances}: {e}") from None
        for b in (args.bundle_a, args.bundle_b):
            if not (Path(b) / "manifest.json").is_file():
                raise ConfigError(f"{b}: no manifest.json (not a bundle)")
        rep = compare(args.bundle_a, args.bundle_b, tol)
        print("\n".join(rep.lines()))
        return EXIT_OK if rep.passed else EXIT_COMPARE_FAIL

    if cmd in ("analyze", "decompose") and (getattr(args, "record", None) or getattr(args, "counter_csv", None)):
        settings, meta = _settings_only(args)
        out = _out_dir(args, Path(args.record).name if args.record else "ingested")
        if cmd == "analyze" and args.counter_csv:
            path = analyze_to(out, settings, args.carrier_hz, {**meta, "inputs": sorted(args.counter_csv)},
                              counters=_ingest(args.counter_csv))
        else:
            rec = BeatRecord.load(args.record)
            meta = {**meta, "record": str(args.record)}
            if cmd == "analyze":
                path = analyze_to(out, settings, rec.carrier, meta, record=rec)
            else:
                path = decompose_to(out, rec, settings, meta)
        print(path)
        return EXIT_OK

    sc = load_scenario(args.config, args.scenario, args.seed, args.set)
    out = _out_dir(args, sc.name) if args.out or not sc.output_dir else Path(sc.output_dir)
    if cmd == "simulate":
        path = write_record(sc, out, truth=args.truth)
    elif cmd == "report":
        path = write_report(sc, out)
    else:
        rec = simulate(sc.link, sc.grid, sc.seed)
        meta = {"scenario": sc.name, "config_sha256": sc.hash, "seed": sc.seed}
        if cmd == "analyze":
            path = analyze_to(out, sc.pipeline, rec.carrier, meta, record=rec)
        else:
            path = decompose_to(out, rec, sc.pipeline, meta, sc.link.local_ifo.gamma)
    print(path)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _run(args)
    except (ConfigError, GridError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
