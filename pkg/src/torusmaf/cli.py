"""Command-line entry point: ``torusmaf run | solve | compare | sweep | verify``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import io, lab
from .scenario import ConfigError, load_scenario


def _load(path: str):
    try:
        return load_scenario(path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return None


def cmd_run(args) -> int:
    sc = _load(args.scenario)
    if sc is None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        io.write_json(out / "summary.json", {"error": {"type": "ConfigError", "message": "unreadable scenario"},
                                             "exit_code": lab.EXIT_CONFIG})
        return lab.EXIT_CONFIG
    try:
        sc = sc.with_overrides(args.grid, args.t_end)
        sc.grid()
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return lab.EXIT_CONFIG
    status = lab.run_scenario(sc, args.out, plots=args.plots)
    _report(Path(args.out) / "summary.json")
    return status


def cmd_solve(args) -> int:
    sc = _load(args.scenario)
    if sc is None:
        return lab.EXIT_CONFIG
    try:
        sc = sc.with_overrides(args.grid)
        sc.grid()
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return lab.EXIT_CONFIG
    status = lab.solve_scenario(sc, args.out)
    _report(Path(args.out) / "summary.json")
    return status


def cmd_compare(args) -> int:
    try:
        status, data = lab.compare_dirs(args.trace, args.elliptic)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return lab.EXIT_CONFIG
    except ValueError as exc:
        print(f"compare failed: {exc}", file=sys.stderr)
        return lab.EXIT_NUMERICAL
    last = data["distances"][-1]
    print(f"t={last['t']:g} sup={last['sup']:.3e} masked_sup={last['masked_sup']:.3e} "
          f"L1={data['weak_l1']:.3e} monotone={data['monotone_after_2']}")
    return status


def cmd_sweep(args) -> int:
    cfgs = sorted(str(p) for p in Path(args.directory).glob("*.cfg"))
    if not cfgs:
        print(f"no .cfg files under {args.directory}", file=sys.stderr)
        return lab.EXIT_CONFIG
    with ProcessPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        results = list(pool.map(lab.run_path, cfgs, [args.out] * len(cfgs)))
    for cfg, status in results:
        print(f"{status}  {cfg}")
    return max(status for _, status in results)


def cmd_verify(args) -> int:
    try:
        status, checks = lab.verify_dir(args.out)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return lab.EXIT_CONFIG
    except ValueError as exc:
        print(f"verify failed: {exc}", file=sys.stderr)
        return lab.EXIT_NUMERICAL
    for name, c in checks.items():
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {name}: {c['value']!r} (threshold {c['threshold']!r})")
    return status


def _report(summary: Path) -> None:
    if not summary.exists():
        return
    s = io.read_json(summary)
    if s.get("error"):
        print(f"error: {json.dumps(s['error'])}", file=sys.stderr)
    for name, c in (s.get("checks") or {}).items():
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {name}: {c['value']!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="torusmaf", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="flow + elliptic reference + checks")
    r.add_argument("scenario", help="scenario file or preset name")
    r.add_argument("--out", required=True)
    r.add_argument("--grid", type=int, default=None, help="override N")
    r.add_argument("--t-end", type=float, default=None)
    r.add_argument("--plots", action="store_true", help="also write plots/*.svg (needs matplotlib)")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("solve", help="elliptic solve only")
    s.add_argument("scenario")
    s.add_argument("--out", required=True)
    s.add_argument("--grid", type=int, default=None, help="override N")
    s.set_defaults(func=cmd_solve)

    c = sub.add_parser("compare", help="compare stored flow checkpoints with a stored elliptic solution")
    c.add_argument("--trace", required=True)
    c.add_argument("--elliptic", required=True)
    c.set_defaults(func=cmd_compare)

    w = sub.add_parser("sweep", help="run every .cfg in a directory")
    w.add_argument("directory")
    w.add_argument("--out", required=True)
    w.add_argument("--jobs", type=int, default=1)
    w.set_defaults(func=cmd_sweep)

    v = sub.add_parser("verify", help="re-run checks against stored artifacts")
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
