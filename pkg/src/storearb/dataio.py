"""Price series ingestion, synthetic prices, and schedule serialisation.

File formats
------------
Price CSV: header ``timestamp,buy,sell`` or ``timestamp,price``.  Timestamps
are RFC 3339 instants, strictly increasing and uniformly spaced.  In the
single-price form ``sell = eta * price`` and ``eta`` must be supplied.

Schedule CSV: ``t,timestamp,buy,sell,mu,x,level,action`` with one row per
period ``t = 1..T``; ``level`` is the store level at the end of the period and
``action`` is ``buy``, ``sell`` or ``hold`` by the sign of ``x``.

Summary JSON (``schema_version: 1``)::

    {"schema_version": 1, "objective": ..., "profit": ..., "start_level": ...,
     "end_level": ..., "capacity": ..., "horizon": T,
     "segments": [{"start": ..., "end": ..., "mu": ..., "pin": ...}, ...],
     "horizon_stats": {"max": ..., "mean": ...}}

Floats are written with ``repr`` so that a read-back is bit-exact.

Synthetic prices
----------------
48 half-hour periods per day::

    price_t = base + daily_amplitude * sin(2 pi t / 48)
                   + weekly_amplitude * sin(2 pi t / 336) + noise_t

with ``noise_t`` standard normal times ``noise_std``, floored at
``0.05 * base``; ``buy = price`` and ``sell = eta * price``.  Noise comes
from :class:`random.Random` (Mersenne Twister) seeded with ``seed``, using
only ``random()`` -- whose output sequence Python guarantees across versions
and platforms -- turned into normals by the Box-Muller transform.
"""

from __future__ import annotations

import csv
import io
import json
import math
import random
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from typing import IO, Iterable, Sequence

from .cost_model import TOL_X
from .errors import ParseError, ValidationError
from .solver import MuCertificate, Pin, Schedule

PERIODS_PER_DAY = 48
DEFAULT_PERIOD = timedelta(minutes=30)
SYNTHETIC_EPOCH = datetime(2011, 1, 9, tzinfo=timezone.utc)
SCHEDULE_COLUMNS = ("t", "timestamp", "buy", "sell", "mu", "x", "level", "action")
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class PriceSeries:
    timestamps: tuple[datetime, ...]
    buy: tuple[float, ...]
    sell: tuple[float, ...]
    period: timedelta = DEFAULT_PERIOD

    def __post_init__(self):
        n = len(self.timestamps)
        if len(self.buy) != n or len(self.sell) != n:
            raise ValidationError("timestamps, buy and sell must have equal length")
        for i, (b, s) in enumerate(zip(self.buy, self.sell)):
            if not b >= s:
                raise ValidationError(f"record {i + 1}: buy {b} < sell {s}")
        for i in range(1, n):
            step = self.timestamps[i] - self.timestamps[i - 1]
            if step <= timedelta(0):
                raise ValidationError(f"record {i + 1}: timestamps not strictly increasing")
            if step != self.period:
                raise ValidationError(f"record {i + 1}: gap of {step}, expected {self.period}")

    def __len__(self) -> int:
        return len(self.timestamps)


@dataclass(frozen=True)
class SyntheticSpec:
    days: int = 7
    base: float = 50.0
    daily_amplitude: float = 20.0
    weekly_amplitude: float = 5.0
    noise_std: float = 3.0
    seed: int = 0
    eta: float = 1.0

    @classmethod
    def parse(cls, text: str) -> SyntheticSpec:
        """Build from ``key=value`` pairs, e.g. ``days=7,seed=3,noise_std=0``."""
        kwargs = {}
        fields = cls.__dataclass_fields__
        for part in filter(None, (p.strip() for p in text.split(","))):
            key, sep, val = part.partition("=")
            key = key.strip()
            if not sep or key not in fields:
                raise ValueError(f"bad synthetic spec entry {part!r}")
            kwargs[key] = int(val) if key in ("days", "seed") else float(val)
        return cls(**kwargs)


def parse_timestamp(text: str) -> datetime:
    text = text.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        raise ValueError("timestamp lacks a UTC offset")
    return ts


def format_timestamp(ts: datetime) -> str:
    ts = ts.astimezone(timezone.utc)
    return ts.strftime("%Y-%m-%dT%H:%M:%SZ")


def _infer_period(stamps: Sequence[datetime]) -> timedelta:
    return stamps[1] - stamps[0] if len(stamps) > 1 else DEFAULT_PERIOD


def read_prices(source: IO[str] | Iterable[str], eta: float | None = None) -> PriceSeries:
    """Parse a price CSV.

    Raises:
        ParseError: malformed header, row or number (carries the line number).
        ValidationError: non-monotone or unevenly spaced timestamps, buy < sell.
    """
    reader = csv.reader(source)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise ParseError("empty price file", 1) from None
    if header == ["timestamp", "buy", "sell"]:
        single = False
    elif header == ["timestamp", "price"]:
        single = True
        if eta is None:
            raise ParseError("single-price file needs an efficiency to derive sell prices", 1)
        if not 0 < eta <= 1:
            raise ValidationError(f"efficiency must lie in (0, 1], got {eta}")
    else:
        raise ParseError(f"unexpected header {','.join(header)!r}", 1)

    stamps, buys, sells = [], [], []
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", line)
        try:
            stamps.append(parse_timestamp(row[0]))
            if single:
                price = float(row[1])
                buys.append(price)
                sells.append(eta * price)
            else:
                buys.append(float(row[1]))
                sells.append(float(row[2]))
        except ValueError as exc:
            raise ParseError(str(exc), line) from None
        if not (math.isfinite(buys[-1]) and math.isfinite(sells[-1])):
            raise ParseError("prices must be finite", line)
    if not stamps:
        raise ValidationError("price file has no records")
    return PriceSeries(tuple(stamps), tuple(buys), tuple(sells), _infer_period(stamps))


def write_prices(series: PriceSeries, sink: IO[str]) -> None:
    w = csv.writer(sink, lineterminator="\n")
    w.writerow(["timestamp", "buy", "sell"])
    for ts, b, s in zip(series.timestamps, series.buy, series.sell):
        w.writerow([format_timestamp(ts), repr(b), repr(s)])


def _normals(rng: random.Random, n: int) -> list[float]:
    out = []
    while len(out) < n:
        u1 = 1.0 - rng.random()  # (0, 1]
        u2 = rng.random()
        r = math.sqrt(-2.0 * math.log(u1))
        out.append(r * math.cos(2 * math.pi * u2))
        out.append(r * math.sin(2 * math.pi * u2))
    return out[:n]


def generate_prices(spec: SyntheticSpec) -> PriceSeries:
    n = spec.days * PERIODS_PER_DAY
    if spec.noise_std > 0:
        noise = _normals(random.Random(spec.seed), n)
    else:
        noise = [0.0] * n
    floor = 0.05 * spec.base
    buy = []
    for t in range(n):
        v = (
            spec.base
            + spec.daily_amplitude * math.sin(2 * math.pi * t / PERIODS_PER_DAY)
            + spec.weekly_amplitude * math.sin(2 * math.pi * t / (7 * PERIODS_PER_DAY))
            + spec.noise_std * noise[t]
        )
        buy.append(max(v, floor))
    stamps = tuple(SYNTHETIC_EPOCH + i * DEFAULT_PERIOD for i in range(n))
    return PriceSeries(stamps, tuple(buy), tuple(spec.eta * b for b in buy))


def action_of(x: float, tol_x: float = TOL_X) -> str:
    if abs(x) <= tol_x:
        return "hold"
    return "buy" if x > 0 else "sell"


def write_schedule(
    s: Schedule,
    c: MuCertificate,
    prices: PriceSeries,
    sink: IO[str],
    summary_sink: IO[str] | None = None,
    objective: float | None = None,
    capacity: float | None = None,
    tol_x: float = TOL_X,
) -> dict:
    """Write the schedule CSV to ``sink`` and return the JSON summary.

    The summary is also written to ``summary_sink`` when given.  Without an
    explicit ``objective`` it is re-summed from the two-price columns.
    """
    T = len(s.flows)
    if len(prices) != T or len(c.mu) != T:
        raise ValueError(f"length mismatch: {T} flows, {len(prices)} prices, {len(c.mu)} multipliers")
    w = csv.writer(sink, lineterminator="\n")
    w.writerow(SCHEDULE_COLUMNS)
    for t in range(T):
        x = s.flows[t]
        w.writerow(
            [
                t + 1,
                format_timestamp(prices.timestamps[t]),
                repr(prices.buy[t]),
                repr(prices.sell[t]),
                repr(c.mu[t]),
                repr(x),
                repr(s.levels[t + 1]),
                action_of(x, tol_x),
            ]
        )
    if objective is None:
        objective = two_price_cost(prices.buy, prices.sell, s.flows)
    summary = summarize(s, c, objective, capacity)
    if summary_sink is not None:
        json.dump(summary, summary_sink, indent=2, sort_keys=False)
        summary_sink.write("\n")
    return summary


def two_price_cost(buy: Sequence[float], sell: Sequence[float], flows: Sequence[float]) -> float:
    return math.fsum(b * x if x >= 0 else s * x for b, s, x in zip(buy, sell, flows))


def summarize(s: Schedule, c: MuCertificate, objective: float, capacity: float | None = None) -> dict:
    lengths = c.segment_lengths()
    segments = [
        {"start": a, "end": b, "mu": mu, "pin": pin.value} for a, b, mu, pin in c.segments
    ]
    out = {
        "schema_version": SCHEMA_VERSION,
        "objective": objective,
        "profit": -objective,
        "horizon": len(s.flows),
        "start_level": s.levels[0],
        "end_level": s.levels[-1],
    }
    if capacity is not None:
        out["capacity"] = capacity
    out["segments"] = segments
    out["horizon_stats"] = {"max": max(lengths), "mean": sum(lengths) / len(lengths)}
    return out


@dataclass
class ScheduleTable:
    """Contents of a schedule CSV read back from disk."""

    t: list[int]
    timestamps: list[datetime]
    buy: list[float]
    sell: list[float]
    mu: list[float]
    x: list[float]
    level: list[float]
    action: list[str]

    def schedule(self, start_level: float) -> Schedule:
        return Schedule((float(start_level), *self.level), tuple(self.x))

    def certificate(self) -> MuCertificate:
        """Rebuild segment structure from the multiplier column."""
        bounds = [0]
        pins = []
        for i in range(1, len(self.mu)):
            if self.mu[i] != self.mu[i - 1]:
                bounds.append(i)
                pins.append(Pin.FULL if self.mu[i] > self.mu[i - 1] else Pin.EMPTY)
        bounds.append(len(self.mu))
        return MuCertificate(tuple(self.mu), tuple(bounds), tuple(pins))


def read_schedule(source: IO[str] | Iterable[str]) -> ScheduleTable:
    reader = csv.reader(source)
    try:
        header = tuple(h.strip() for h in next(reader))
    except StopIteration:
        raise ParseError("empty schedule file", 1) from None
    if header != SCHEDULE_COLUMNS:
        raise ParseError(f"unexpected header {','.join(header)!r}", 1)
    tab = ScheduleTable([], [], [], [], [], [], [], [])
    for row in reader:
        line = reader.line_num
        if not row:
            continue
        if len(row) != len(SCHEDULE_COLUMNS):
            raise ParseError(f"expected {len(SCHEDULE_COLUMNS)} fields, got {len(row)}", line)
        try:
            tab.t.append(int(row[0]))
            tab.timestamps.append(parse_timestamp(row[1]))
            tab.buy.append(float(row[2]))
            tab.sell.append(float(row[3]))
            tab.mu.append(float(row[4]))
            tab.x.append(float(row[5]))
            tab.level.append(float(row[6]))
        except ValueError as exc:
            raise ParseError(str(exc), line) from None
        if row[7] not in ("buy", "sell", "hold"):
            raise ParseError(f"unknown action {row[7]!r}", line)
        tab.action.append(row[7])
    return tab


def dumps_schedule(s: Schedule, c: MuCertificate, prices: PriceSeries, **kwargs) -> tuple[str, dict]:
    buf = io.StringIO()
    summary = write_schedule(s, c, prices, buf, **kwargs)
    return buf.getvalue(), summary


def problem_from_prices(
    prices: PriceSeries,
    capacity: float,
    rate_in: float,
    rate_out: float | None = None,
    eta: float = 1.0,
    start_level: float = 0.0,
    end_level: float | None = None,
):
    """Price-taking store problem; ``eta`` scales the sell prices."""
    from .cost_model import CostFunction, RateLimits, TwoPriceLinear
    from .solver import Problem

    limits = RateLimits(rate_in, rate_in if rate_out is None else rate_out)
    costs = tuple(
        CostFunction(TwoPriceLinear(b, s), limits).apply_efficiency(eta)
        for b, s in zip(prices.buy, prices.sell)
    )
    return Problem(capacity, start_level, start_level if end_level is None else end_level, costs)


def effective_prices(prices: PriceSeries, problem) -> PriceSeries:
    """Price series as seen by the solver (after efficiency scaling)."""
    return PriceSeries(
        prices.timestamps,
        tuple(cf.curve.buy for cf in problem.costs),
        tuple(cf.curve.sell for cf in problem.costs),
        prices.period,
    )
