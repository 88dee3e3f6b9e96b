"""Command-line interface.

Subcommands::

    storearb gen    --synthetic SPEC [--out FILE]
    storearb solve  (--prices FILE | --synthetic SPEC) [store flags] --out DIR
    storearb verify (--prices FILE | --synthetic SPEC) [store flags] --schedule FILE
    storearb sweep  (--prices FILE | --synthetic SPEC) [store flags] --param {eta,E,P} --values V1,V2,...
    storearb bench  --synthetic SPEC [store flags] --horizons T1,T2,...

Exit codes: 0 success, 1 bad input or usage, 2 infeasible problem,
3 self-verification failed after solving, 4 verification failed.
"""

from __future__ import annotations

import argparse
import csv
import gc
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

from . import __version__
from .dataio import (
    PriceSeries,
    SyntheticSpec,
    effective_prices,
    generate_prices,
    problem_from_prices,
    read_prices,
    read_schedule,
    write_prices,
    write_schedule,
)
from .errors import GridInfeasible, InfeasibleProblem, InfeasibleSchedule, StoreArbError
from .oracle import GridSpec, dp_solve
from .solver import Problem, Tolerances, objective, solve, verify_certificate

log = logging.getLogger("storearb")

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_INFEASIBLE = 2
EXIT_SELF_CHECK = 3
EXIT_VERIFY = 4

ORACLE_GAP_TOL = 1e-6


class _Parser(argparse.ArgumentParser):
    # exit code 2 is reserved for infeasible problems
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


@dataclass(frozen=True)
class RunConfig:
    capacity: float = 10.0
    rate_in: float = 1.0
    rate_out: float | None = None
    eta: float = 1.0
    start_level: float = 0.0
    end_level: float | None = None
    prices_path: str | None = None
    synthetic: SyntheticSpec | None = None
    tol: Tolerances = Tolerances()
    out: str | None = None

    def load_prices(self) -> PriceSeries:
        if self.prices_path is not None:
            with open(self.prices_path, newline="") as fh:
                return read_prices(fh, eta=1.0)
        return generate_prices(replace(self.synthetic, eta=1.0))

    def problem(self, prices: PriceSeries) -> Problem:
        return problem_from_prices(
            prices,
            self.capacity,
            self.rate_in,
            self.rate_out,
            eta=self.eta,
            start_level=self.start_level,
            end_level=self.end_level,
        )


def _csv_floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _add_store_args(p: argparse.ArgumentParser, synthetic_only: bool = False) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    if not synthetic_only:
        src.add_argument("--prices", metavar="FILE", help="price CSV (timestamp,buy,sell or timestamp,price)")
    src.add_argument("--synthetic", metavar="SPEC", type=SyntheticSpec.parse,
                     help="synthetic series, e.g. days=7,base=50,daily_amplitude=20,noise_std=3")
    p.add_argument("--capacity", type=float, default=10.0)
    p.add_argument("--rate-in", type=float, default=1.0)
    p.add_argument("--rate-out", type=float, default=None, help="defaults to --rate-in")
    p.add_argument("--eta", type=float, default=None,
                   help="efficiency; scales sell prices (default: synthetic spec eta, else 1)")
    p.add_argument("--start-level", type=float, default=0.0)
    p.add_argument("--end-level", type=float, default=None, help="defaults to --start-level")
    p.add_argument("--seed", type=int, default=None, help="overrides the synthetic seed")
    p.add_argument("--tol-mu", type=float, default=None)
    p.add_argument("--tol-x", type=float, default=Tolerances.x)
    p.add_argument("--tol-cost", type=float, default=Tolerances.cost)


def _config(args) -> RunConfig:
    synthetic = args.synthetic
    if synthetic is not None and args.seed is not None:
        synthetic = replace(synthetic, seed=args.seed)
    eta = args.eta
    if eta is None:
        eta = synthetic.eta if synthetic is not None else 1.0
    return RunConfig(
        capacity=args.capacity,
        rate_in=args.rate_in,
        rate_out=args.rate_out,
        eta=eta,
        start_level=args.start_level,
        end_level=args.end_level,
        prices_path=getattr(args, "prices", None),
        synthetic=synthetic,
        tol=Tolerances(x=args.tol_x, cost=args.tol_cost, mu=args.tol_mu),
        out=getattr(args, "out", None),
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="storearb", description="Optimal storage arbitrage schedules.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="write a synthetic price series")
    p.add_argument("--synthetic", metavar="SPEC", type=SyntheticSpec.parse, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", metavar="FILE", default=None, help="defaults to stdout")

    p = sub.add_parser("solve", help="solve and self-verify")
    _add_store_args(p)
    p.add_argument("--out", metavar="DIR", required=True)

    p = sub.add_parser("verify", help="check a schedule file against the optimality conditions")
    _add_store_args(p)
    p.add_argument("--schedule", metavar="FILE", required=True)
    p.add_argument("--oracle-max-horizon", type=int, default=48,
                   help="run the grid DP oracle only up to this horizon")
    p.add_argument("--grid", type=int, default=100, help="oracle grid points per energy unit")

    p = sub.add_parser("sweep", help="solve over a list of parameter values")
    _add_store_args(p)
    p.add_argument("--param", choices=["eta", "E", "P"], required=True)
    p.add_argument("--values", type=_csv_floats, required=True)
    p.add_argument("--out", metavar="DIR", default=None, help="write sweep.csv here instead of stdout")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("bench", help="time the solver on synthetic data")
    _add_store_args(p, synthetic_only=True)
    p.add_argument("--horizons", type=lambda s: [int(v) for v in s.split(",")], required=True)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--out", metavar="DIR", default=None)
    return parser


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    spec = args.synthetic if args.seed is None else replace(args.synthetic, seed=args.seed)
    series = generate_prices(spec)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            write_prices(series, fh)
    else:
        write_prices(series, sys.stdout)
    return EXIT_OK


def cmd_solve(cfg: RunConfig) -> int:
    prices = cfg.load_prices()
    problem = cfg.problem(prices)
    try:
        sched, cert = solve(problem, cfg.tol)
    except InfeasibleProblem as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    report = verify_certificate(problem, sched, cert, cfg.tol)
    if not report.ok:
        print("internal error: solver output failed self-verification", file=sys.stderr)
        for line in report.details[:20]:
            print(f"  {line}", file=sys.stderr)
        return EXIT_SELF_CHECK
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    obj = objective(problem, sched, cfg.tol.x)
    with open(out / "schedule.csv", "w", newline="") as fh, open(out / "summary.json", "w") as js:
        write_schedule(
            sched, cert, effective_prices(prices, problem), fh, js,
            objective=obj, capacity=problem.capacity, tol_x=cfg.tol.x,
        )
    log.info("objective %.10g over %d periods in %d segments", obj, problem.horizon, len(cert.segments))
    return EXIT_OK


def cmd_verify(cfg: RunConfig, schedule_path: str, oracle_max_horizon: int = 48, grid: int = 100) -> int:
    prices = cfg.load_prices()
    problem = cfg.problem(prices)
    with open(schedule_path, newline="") as fh:
        table = read_schedule(fh)
    if len(table.x) != problem.horizon:
        print(f"schedule has {len(table.x)} rows, problem has {problem.horizon} periods", file=sys.stderr)
        print("FAIL (i)")
        return EXIT_VERIFY
    sched = table.schedule(problem.start_level)
    cert = table.certificate()
    report = verify_certificate(problem, sched, cert, cfg.tol)
    failed = report.failed_conditions()

    lines = [
        f"(i)   feasibility:           {'ok' if report.feasible else 'FAIL'}",
        f"(ii)  pointwise minimality:  {'ok' if report.pointwise_min else 'FAIL'}",
        f"(iii) complementary slack:   {'ok' if report.comp_slack else 'FAIL'}",
    ]
    if problem.horizon <= oracle_max_horizon:
        try:
            obj = objective(problem, sched, cfg.tol.x)
            dp = dp_solve(problem, GridSpec(grid))
            gap = obj - dp.cost
            ok = gap <= ORACLE_GAP_TOL
            lines.append(
                f"oracle-gap:                {'ok' if ok else 'FAIL'} "
                f"(schedule {obj:.10g}, grid DP {dp.cost:.10g}, gap {gap:.3e}, step {1 / grid:g})"
            )
            if not ok:
                failed.append("oracle-gap")
        except InfeasibleSchedule:
            lines.append("oracle-gap:                skipped (schedule infeasible)")
        except GridInfeasible as exc:
            lines.append(f"oracle-gap:                skipped ({exc})")
    else:
        lines.append(f"oracle-gap:                skipped (horizon {problem.horizon} > {oracle_max_horizon})")
    print("\n".join(lines))
    for d in report.details[:20]:
        print(f"  {d}")
    if failed:
        print("FAIL " + " ".join(failed))
        return EXIT_VERIFY
    print("PASS")
    return EXIT_OK


SWEEP_COLUMNS = ("param", "value", "objective", "active_periods", "num_segments", "max_horizon", "status")


def _sweep_row(cfg: RunConfig, prices: PriceSeries, param: str, value: float) -> list:
    if param == "eta":
        cfg = replace(cfg, eta=value)
    elif param == "E":
        cfg = replace(cfg, capacity=value)
    else:
        cfg = replace(cfg, rate_in=value, rate_out=value)
    try:
        problem = cfg.problem(prices)
        sched, cert = solve(problem, cfg.tol)
    except InfeasibleProblem:
        return [param, value, "", "", "", "", "infeasible"]
    except StoreArbError as exc:
        return [param, value, "", "", "", "", f"error: {exc}"]
    if not verify_certificate(problem, sched, cert, cfg.tol).ok:
        return [param, value, "", "", "", "", "uncertified"]
    active = sum(1 for x in sched.flows if abs(x) > cfg.tol.x)
    return [
        param, value, repr(objective(problem, sched, cfg.tol.x)), active,
        len(cert.segment_lengths()), max(cert.segment_lengths()), "ok",
    ]


def cmd_sweep(cfg: RunConfig, param: str, values: list[float], jobs: int = 1) -> int:
    prices = cfg.load_prices()
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_row, [cfg] * len(values), [prices] * len(values),
                                 [param] * len(values), values))
    else:
        rows = [_sweep_row(cfg, prices, param, v) for v in values]
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "sweep.csv", "w", newline="") as fh:
            _write_rows(fh, SWEEP_COLUMNS, rows)
    else:
        _write_rows(sys.stdout, SWEEP_COLUMNS, rows)
    return EXIT_OK


BENCH_COLUMNS = ("horizon", "seconds", "num_segments", "max_segment", "mean_segment")


def bench_rows(cfg: RunConfig, horizons: list[int], repeats: int = 3) -> list[list]:
    """Best-of-``repeats`` solve time and segment statistics per horizon.

    Repeats are interleaved across horizons so that slow phases of a shared
    machine affect every horizon alike.
    """
    days = math.ceil(max(horizons) / 48)
    full = generate_prices(replace(cfg.synthetic, days=days, eta=1.0))
    problems = [
        cfg.problem(PriceSeries(full.timestamps[:T], full.buy[:T], full.sell[:T], full.period))
        for T in horizons
    ]
    best = [math.inf] * len(horizons)
    certs = [None] * len(horizons)
    for _ in range(max(repeats, 1)):
        for i, problem in enumerate(problems):
            # as in timeit: collector pauses are noise, not solver work
            gc.collect()
            gc.disable()
            try:
                t0 = time.perf_counter()
                _, certs[i] = solve(problem, cfg.tol)
                best[i] = min(best[i], time.perf_counter() - t0)
            finally:
                gc.enable()
    rows = []
    for T, secs, cert in zip(horizons, best, certs):
        lengths = cert.segment_lengths()
        rows.append([T, f"{secs:.6f}", len(lengths), max(lengths), f"{sum(lengths) / len(lengths):.6f}"])
    return rows


def cmd_bench(cfg: RunConfig, horizons: list[int], repeats: int = 3) -> int:
    rows = bench_rows(cfg, horizons, repeats)
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "bench.csv", "w", newline="") as fh:
            _write_rows(fh, BENCH_COLUMNS, rows)
    else:
        _write_rows(sys.stdout, BENCH_COLUMNS, rows)
    return EXIT_OK


def _write_rows(fh, header, rows) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "gen":
            return cmd_gen(args)
        cfg = _config(args)
        if args.command == "solve":
            return cmd_solve(cfg)
        if args.command == "verify":
            return cmd_verify(cfg, args.schedule, args.oracle_max_horizon, args.grid)
        if args.command == "sweep":
            return cmd_sweep(cfg, args.param, args.values, args.jobs)
        if args.command == "bench":
            return cmd_bench(cfg, args.horizons, args.repeats)
    except (StoreArbError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    parser.error(f"unknown command {args.command}")
    return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
