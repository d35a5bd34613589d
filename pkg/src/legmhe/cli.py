"""Command-line entry point: ``legmhe {simulate,estimate,sweep-window,compare-fif}``.

Every command writes only data derived from its inputs to ``--out`` and
stdout, so two runs with the same inputs produce identical bytes.  Wall-clock
solve times go to a separate ``*.timing.json`` file next to the output.
On failure a single JSON object ``{"error": ..., "message": ...}`` is written
to stderr and the exit code is nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .config import Config, load_config
from .errors import ConfigParse, LegMheError
from .logio import ImuRecord, read_log, write_log, write_text
from .pipeline import run_estimator, trace_csv
from .sim import simulate

EXIT_ERROR = 2
FIF_TICK_LIMIT = 1000


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _sidecar(out: Path, suffix: str) -> Path:
    return out.with_name(out.name + suffix)


def _estimator_config(cfg: Config, args) -> Config:
    changes = {}
    if getattr(args, "window", None) is not None:
        changes["window"] = args.window
    if getattr(args, "lo_form", None) is not None:
        changes["lo_form"] = args.lo_form
    if changes:
        cfg = Config(cfg.sim, cfg.noise.with_changes(**changes))
    return cfg


def cmd_simulate(args) -> dict:
    cfg = load_config(args.config)
    sim = cfg.sim
    if args.seed is not None:
        sim = replace(sim, seed=args.seed)
    log = simulate(sim)
    write_log(log, args.out)
    return {"records": len(log.records), "imu": len(log.of_type(ImuRecord)), "out": str(args.out)}


def cmd_estimate(args) -> dict:
    cfg = _estimator_config(load_config(args.config), args)
    log = read_log(args.log)
    result = run_estimator(log, cfg.noise, use_vo=not args.no_vo)
    out = Path(args.out)
    write_text(out, trace_csv(result.rows, int(log.header.get("n_feet", 0))))
    report = {"metrics": result.metrics.to_dict(), "counters": result.counters}
    write_text(_sidecar(out, ".metrics.json"), _json(report))
    write_text(_sidecar(out, ".timing.json"), _json(result.timing.to_dict()))
    return report


def _parse_sizes(text: str) -> list:
    try:
        sizes = [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigParse("window sizes must be integers", sizes=text) from exc
    if not sizes or min(sizes) < 1:
        raise ConfigParse("window sizes must be at least 1", sizes=text)
    return sizes


def cmd_sweep_window(args) -> dict:
    cfg = _estimator_config(load_config(args.config), args)
    log = read_log(args.log)
    table, timing = [], []
    for size in _parse_sizes(args.sizes):
        result = run_estimator(log, cfg.noise.with_changes(window=size), use_vo=not args.no_vo)
        table.append({"window": size, "rmse_v": result.metrics.rmse_v,
                      "rmse_euler": result.metrics.rmse_euler})
        timing.append({"window": size, **result.timing.to_dict()})
    out = Path(args.out)
    lines = ["window,rmse_v,rmse_euler"] + [f"{r['window']},{r['rmse_v']!r},{r['rmse_euler']!r}" for r in table]
    write_text(out, "\n".join(lines) + "\n")
    write_text(_sidecar(out, ".timing.json"), _json(timing))
    return {"sweep": table}


def cmd_compare_fif(args) -> dict:
    cfg = _estimator_config(load_config(args.config), args)
    log = read_log(args.log)
    ticks = len(log.of_type(ImuRecord))
    if args.max_ticks is None and ticks > FIF_TICK_LIMIT:
        raise ConfigParse("log too long for the full-information comparison; pass --max-ticks",
                          ticks=ticks, limit=FIF_TICK_LIMIT)
    if args.every < 1:
        raise ConfigParse("--every must be at least 1", every=args.every)
    result = run_estimator(log, cfg.noise, use_vo=not args.no_vo, fif_every=args.every,
                           max_ticks=args.max_ticks)
    report = {"max_relative_deviation": result.fif_deviation, "checks": result.fif_checks,
              "ticks": len(result.rows), "window": cfg.noise.window}
    if args.out is not None:
        write_text(Path(args.out), _json(report))
    return report


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="legmhe", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a synthetic sensor log")
    p.add_argument("--config", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_simulate)

    def estimator_flags(p, out_required=True):
        p.add_argument("--log", type=Path, required=True)
        p.add_argument("--config", type=Path)
        p.add_argument("--out", type=Path, required=out_required)
        p.add_argument("--window", type=int)
        p.add_argument("--no-vo", action="store_true", help="ignore both VO record types")
        p.add_argument("--lo-form", choices=("position", "velocity", "both"))

    p = sub.add_parser("estimate", help="run the estimator over a log")
    estimator_flags(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("sweep-window", help="estimate once per window size")
    estimator_flags(p)
    p.add_argument("--sizes", default="1,5,10,20")
    p.set_defaults(func=cmd_sweep_window)

    p = sub.add_parser("compare-fif", help="deviation of the window estimate from the full-history one")
    estimator_flags(p, out_required=False)
    p.add_argument("--every", type=int, default=1, help="compare every this many ticks")
    p.add_argument("--max-ticks", type=int)
    p.set_defaults(func=cmd_compare_fif)
    return parser


def main(argv: list | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        report = args.func(args)
    except LegMheError as exc:
        err = {"error": exc.kind, "message": str(exc)}
        err.update({k: v if isinstance(v, (int, float, str, bool)) or v is None else str(v)
                    for k, v in exc.context.items()})
        sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
        return EXIT_ERROR
    sys.stdout.write(_json(report))
    return 0


if __name__ == "__main__":
    sys.exit(main())
