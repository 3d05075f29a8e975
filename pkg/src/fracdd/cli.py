"""Command-line entry points: run, sweep, reference, rates."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from pathlib import Path

from .experiments import (
    get_reference,
    parse_config,
    rates_from_rows,
    run_experiment,
    run_sweep,
    write_history_csv,
    write_rows_csv,
)


def _apply_overrides(cfg, args):
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(
            cfg, gmres=dataclasses.replace(cfg.gmres, seed=args.seed)
        )
    if getattr(args, "out", None) is not None:
        cfg = dataclasses.replace(cfg, out_dir=args.out)
    return cfg


def _cmd_run(args) -> int:
    cfg = _apply_overrides(parse_config(args.config), args)
    row = run_experiment(cfg)
    out_dir = Path(cfg.out_dir or "out")
    stem = Path(args.config).stem
    write_rows_csv([row], out_dir / f"{stem}.csv")
    if cfg.gmres.record_history and row.report is not None:
        write_history_csv(row.report, out_dir / f"{stem}_history.csv")
    rep = row.report
    print(f"iterations={rep.iterations} subdomain_solves={rep.subdomain_solve_count} "
          f"converged={rep.converged}")
    for (region, quantity), err in sorted(row.errors.errors.items()):
        print(f"  {region:8s} {quantity:9s} error={err:.4e}")
    return 0 if rep.converged else 1


def _cmd_sweep(args) -> int:
    config_dir = Path(args.config_dir)
    paths = sorted(config_dir.glob("*.yaml")) + sorted(config_dir.glob("*.yml"))
    if not paths:
        print(f"no configs found in {config_dir}", file=sys.stderr)
        return 1
    configs = [_apply_overrides(parse_config(p), args) for p in paths]
    rows = run_sweep(configs, threads=args.threads, verbose=True)
    out_dir = Path(args.out or configs[0].out_dir or "out")
    write_rows_csv(rows, out_dir / "results.csv")
    _write_counts(rows, out_dir / "counts.csv")
    n_failed = sum(r.failed for r in rows)
    print(f"{len(rows) - n_failed}/{len(rows)} runs succeeded; "
          f"tables in {out_dir}")
    return 0 if n_failed == 0 else 1


def _write_counts(rows, path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "preconditioner", "dt", "dt_gamma",
                    "iterations", "subdomain_solves", "converged"])
        for row in rows:
            cfg = row.config
            rep = row.report
            w.writerow([
                cfg["method"], cfg["preconditioner"],
                cfg["dt_subdomain"], cfg["dt_fracture"],
                "" if rep is None else rep.iterations,
                "" if rep is None else rep.subdomain_solve_count,
                "failed" if row.failed else rep.converged,
            ])


def _cmd_reference(args) -> int:
    cfg = parse_config(args.config)
    if cfg.cache_dir is None:
        print("config has no reference.cache_dir; nothing to store",
              file=sys.stderr)
        return 1
    get_reference(cfg, verbose=True)
    print("reference cached")
    return 0


def _cmd_rates(args) -> int:
    """Recompute rate columns from a results CSV produced by this tool."""
    with open(args.csv) as fh:
        rows = list(csv.DictReader(fh))
    series: dict[tuple, dict] = {}
    for r in rows:
        if not r["error"]:
            continue
        key = (r["method"], r["preconditioner"], r["region"], r["quantity"])
        series.setdefault(key, {})[float(r["dt"])] = float(r["error"])
    wr = csv.writer(sys.stdout)
    wr.writerow(["method", "preconditioner", "region", "quantity",
                 "dt", "error", "rate"])
    import math
    for key, by_dt in sorted(series.items()):
        dts = sorted(by_dt, reverse=True)
        for coarse, fine in zip(dts, dts[1:]):
            if abs(coarse / fine - 2.0) > 1e-9:
                continue
            rate = math.log2(by_dt[coarse] / by_dt[fine]) \
                if by_dt[coarse] > 0 and by_dt[fine] > 0 else float("nan")
            wr.writerow([*key, fine, f"{by_dt[fine]:.6e}", f"{rate:.4f}"])
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="fracdd",
        description="Global-in-time domain decomposition for a reduced "
                    "fracture model of compressible flow",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a single experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--out", default=None)
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="run every config in a directory")
    p_sweep.add_argument("config_dir")
    p_sweep.add_argument("--threads", type=int, default=1)
    p_sweep.add_argument("--seed", type=int, default=None)
    p_sweep.add_argument("--out", default=None)
    p_sweep.set_defaults(func=_cmd_sweep)

    p_ref = sub.add_parser("reference", help="build and cache the reference "
                                             "solution for a config")
    p_ref.add_argument("config")
    p_ref.set_defaults(func=_cmd_reference)

    p_rates = sub.add_parser("rates", help="print convergence rates from a "
                                           "results CSV")
    p_rates.add_argument("csv")
    p_rates.set_defaults(func=_cmd_rates)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
