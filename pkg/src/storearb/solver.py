"""Local-in-time Lagrangian construction of optimal storage schedules.

The store holds ``S_t`` units at the end of period ``t``; period ``t`` changes
the level by ``x_t = S_t - S_{t-1}`` at cost ``C_t(x_t)``.  We minimise the
total cost subject to ``0 <= S_t <= E`` at interior times and fixed levels at
both ends.

The solver builds the pair (levels, multipliers) one segment at a time.  From
a segment start it searches for the largest reference value ``mu`` whose
pointwise-optimal trajectory still runs the store dry (or ends short of the
target).  At that value the trajectory either lands on the target, or must
touch full (resp. empty) capacity before failing; the segment is closed at the
last such touch, the level pinned there, and the search restarts.  ``mu`` is
constant on each segment and may only rise after a full pin and fall after an
empty pin, which is exactly what :func:`verify_certificate` checks.

Cost functions that are not strictly convex have set-valued minimisers.  All
trajectory propagation is therefore done on intervals ("reach bands"): a
``mu`` counts as underflowing only if every minimiser selection underflows.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, field
from typing import Sequence

from .cost_model import (
    TOL_COST,
    TOL_X,
    CostFunction,
    PiecewiseLinearConvex,
    QuadraticImpact,
    RateLimits,
)
from .errors import (
    DomainViolation,
    InfeasibleProblem,
    InfeasibleSchedule,
    InternalInvariantViolation,
    InvalidProblem,
)

MAX_BRACKET_EXPANSIONS = 60
MU_REL_TOL = 1e-7


class Side(str, enum.Enum):
    UNDER = "under"
    OVER = "over"


class Pin(str, enum.Enum):
    FULL = "full"
    EMPTY = "empty"
    TERMINAL = "terminal"


@dataclass(frozen=True)
class Classification:
    """Outcome of following a reference value from a segment start.

    ``kind`` is ``"feasible"``, ``"under"`` or ``"over"``; ``time`` is the first
    violation time for the latter two.
    """

    kind: str
    time: int | None = None

    @property
    def is_under(self) -> bool:
        return self.kind == "under"

    @property
    def is_over(self) -> bool:
        return self.kind == "over"

    @property
    def is_feasible(self) -> bool:
        return self.kind == "feasible"


FEASIBLE = Classification("feasible")


@dataclass(frozen=True)
class Tolerances:
    x: float = TOL_X
    cost: float = TOL_COST
    mu: float | None = None  # None: MU_REL_TOL times the price spread, floored at 1

    def resolve_mu(self, problem: Problem) -> float:
        if self.mu is not None:
            return self.mu
        lo, hi = problem.slope_bounds()
        return MU_REL_TOL * max(hi - lo, 1.0)


@dataclass(frozen=True)
class Problem:
    capacity: float
    start_level: float
    end_level: float
    costs: tuple[CostFunction, ...]

    def __post_init__(self):
        object.__setattr__(self, "costs", tuple(self.costs))
        if not self.costs:
            raise InvalidProblem("horizon must contain at least one period")
        if not (self.capacity >= 0 and math.isfinite(self.capacity)):
            raise InvalidProblem(f"capacity must be finite and >= 0, got {self.capacity}")
        for name in ("start_level", "end_level"):
            v = getattr(self, name)
            if not (0 <= v <= self.capacity):
                raise InvalidProblem(f"{name}={v} outside [0, {self.capacity}]")

    @property
    def horizon(self) -> int:
        return len(self.costs)

    @functools.cached_property
    def _slope_bounds(self) -> tuple[float, float]:
        ranges = [cf.slope_range() for cf in self.costs]
        return min(r[0] for r in ranges), max(r[1] for r in ranges)

    def slope_bounds(self) -> tuple[float, float]:
        """Range of reference values outside which every period is saturated."""
        return self._slope_bounds

    def scaled(self, k: float) -> Problem:
        """Scale capacity, boundary levels and rate limits by ``k``.

        Only defined for the linear families, whose cost per unit is
        scale-free.
        """
        costs = []
        for cf in self.costs:
            curve = cf.curve
            if isinstance(curve, QuadraticImpact) and (curve.buy_curvature or curve.sell_curvature):
                raise InvalidProblem("quadratic impact is not scale-free")
            if isinstance(curve, PiecewiseLinearConvex):
                curve = PiecewiseLinearConvex(tuple((x * k, s) for x, s in curve.breakpoints))
            costs.append(CostFunction(curve, RateLimits(cf.p_in * k, cf.p_out * k)))
        return Problem(self.capacity * k, self.start_level * k, self.end_level * k, tuple(costs))


@dataclass(frozen=True)
class Schedule:
    levels: tuple[float, ...]
    flows: tuple[float, ...]

    @classmethod
    def from_levels(cls, levels: Sequence[float]) -> Schedule:
        levels = tuple(float(v) for v in levels)
        return cls(levels, tuple(b - a for a, b in zip(levels, levels[1:])))

    @classmethod
    def from_flows(cls, start_level: float, flows: Sequence[float]) -> Schedule:
        levels = [float(start_level)]
        for x in flows:
            levels.append(levels[-1] + x)
        return cls(tuple(levels), tuple(float(x) for x in flows))


@dataclass(frozen=True)
class MuCertificate:
    mu: tuple[float, ...]
    boundaries: tuple[int, ...]
    pin_kinds: tuple[Pin, ...]  # one per interior boundary

    @property
    def segments(self) -> list[tuple[int, int, float, Pin]]:
        kinds = list(self.pin_kinds) + [Pin.TERMINAL]
        return [
            (a, b, self.mu[b - 1], kinds[i])
            for i, (a, b) in enumerate(zip(self.boundaries, self.boundaries[1:]))
        ]

    def segment_lengths(self) -> list[int]:
        return [b - a for a, b in zip(self.boundaries, self.boundaries[1:])]


@dataclass
class ReachBand:
    """Reachable store levels when following fixed reference values.

    ``lower[i]``/``upper[i]`` bound the level at time ``start_time + i``
    (index 0 is the start level).  Interior entries are clipped to
    ``[0, E]``; the entry at a violation or at the final time is left raw.
    """

    start_time: int
    lower: list[float] = field(default_factory=list)
    upper: list[float] = field(default_factory=list)
    first_violation: tuple[int, Side] | None = None

    @property
    def end_time(self) -> int:
        return self.start_time + len(self.lower) - 1


@dataclass
class CertificateReport:
    feasible: bool
    pointwise_min: bool
    comp_slack: bool
    details: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.feasible and self.pointwise_min and self.comp_slack

    def failed_conditions(self) -> list[str]:
        names = [("(i)", self.feasible), ("(ii)", self.pointwise_min), ("(iii)", self.comp_slack)]
        return [n for n, passed in names if not passed]


# ---------------------------------------------------------------------------
# feasibility and objective
# ---------------------------------------------------------------------------


def schedule_violations(p: Problem, s: Schedule, tol_x: float = TOL_X) -> list[str]:
    """Human-readable list of every way ``s`` fails to be feasible for ``p``."""
    T, E = p.horizon, p.capacity
    if len(s.levels) != T + 1 or len(s.flows) != T:
        return [f"expected {T + 1} levels and {T} flows, got {len(s.levels)} and {len(s.flows)}"]
    out = []
    if abs(s.levels[0] - p.start_level) > tol_x:
        out.append(f"start level {s.levels[0]} != {p.start_level}")
    if abs(s.levels[-1] - p.end_level) > tol_x:
        out.append(f"end level {s.levels[-1]} != {p.end_level}")
    for t in range(1, T):
        if not (-tol_x <= s.levels[t] <= E + tol_x):
            out.append(f"level S_{t}={s.levels[t]} outside [0, {E}]")
    for t in range(1, T + 1):
        x = s.flows[t - 1]
        if abs(x - (s.levels[t] - s.levels[t - 1])) > tol_x:
            out.append(f"flow x_{t}={x} inconsistent with levels")
        cf = p.costs[t - 1]
        if not (-cf.p_out - tol_x <= x <= cf.p_in + tol_x):
            out.append(f"flow x_{t}={x} outside [{-cf.p_out}, {cf.p_in}]")
    return out


def objective(p: Problem, s: Schedule, tol_x: float = TOL_X) -> float:
    """Total cost of a feasible schedule; negative values are profit."""
    bad = schedule_violations(p, s, tol_x)
    if bad:
        raise InfeasibleSchedule("; ".join(bad[:5]))
    return math.fsum(cf.evaluate(x, tol_x) for cf, x in zip(p.costs, s.flows))


# ---------------------------------------------------------------------------
# reach bands and classification
# ---------------------------------------------------------------------------


def _sweep(
    p: Problem, start_time: int, start_level: float, mu_lo: float, mu_hi: float, tol_x: float
) -> tuple[Classification, ReachBand]:
    # Lower edge follows the smallest minimiser at mu_lo, upper edge the
    # largest at mu_hi.  The edges evolve independently under clipping.
    costs, T, E, target = p.costs, p.horizon, p.capacity, p.end_level
    band = ReachBand(start_time, [start_level], [start_level])
    lows, ups = band.lower, band.upper
    lo = hi = start_level
    same = mu_lo == mu_hi
    for t in range(start_time + 1, T + 1):
        cf = costs[t - 1]
        if same:
            a, b = cf.minimizer_interval(mu_lo)
        else:
            a = cf.minimizer_interval(mu_lo)[0]
            b = cf.minimizer_interval(mu_hi)[1]
        lo += a
        hi += b
        if t == T:
            lows.append(lo)
            ups.append(hi)
            if hi < target - tol_x:
                band.first_violation = (t, Side.UNDER)
                return Classification("under", t), band
            if lo > target + tol_x:
                band.first_violation = (t, Side.OVER)
                return Classification("over", t), band
            return FEASIBLE, band
        if hi < -tol_x:
            lows.append(lo)
            ups.append(hi)
            band.first_violation = (t, Side.UNDER)
            return Classification("under", t), band
        if lo > E + tol_x:
            lows.append(lo)
            ups.append(hi)
            band.first_violation = (t, Side.OVER)
            return Classification("over", t), band
        lo = min(max(lo, 0.0), E)
        hi = max(min(hi, E), 0.0)
        lows.append(lo)
        ups.append(hi)
    raise AssertionError("unreachable: start_time must be < horizon")


def classify_mu(
    p: Problem, start_time: int, start_level: float, mu: float, tol_x: float = TOL_X
) -> tuple[Classification, ReachBand]:
    """Classify ``mu`` by the trajectory band it induces from ``(start_time, start_level)``.

    Returns ``under`` if every selection of pointwise minimisers drops below
    empty (or ends below the target) before any selection is forced above
    full, ``over`` in the mirror case, and ``feasible`` if some selection
    stays within capacity and lands on the target.
    """
    if not 0 <= start_time < p.horizon:
        raise ValueError(f"start_time {start_time} outside [0, {p.horizon})")
    return _sweep(p, start_time, start_level, mu, mu, tol_x)


# ---------------------------------------------------------------------------
# search for the segment reference value
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Bracket:
    lo: float  # classifies under (or is the degenerate all-feasible bottom)
    hi: float  # does not classify under
    degenerate: bool = False


def _search(
    p: Problem,
    start_time: int,
    start_level: float,
    bracket: tuple[float, float],
    tol: float,
    tol_x: float,
) -> _Bracket:
    lo_b, hi_b = bracket
    smin, smax = p.slope_bounds()
    width = max(hi_b - lo_b, 1.0)

    def cls(mu):
        return _sweep(p, start_time, start_level, mu, mu, tol_x)[0]

    c_lo = cls(lo_b)
    for _ in range(MAX_BRACKET_EXPANSIONS):
        if c_lo.is_under or lo_b < smin:
            break
        lo_b -= width
        width *= 2
        c_lo = cls(lo_b)
    if c_lo.is_over:
        raise InfeasibleProblem(
            f"from level {start_level} at time {start_time} the end level {p.end_level} "
            "cannot be reached: the store cannot shed energy fast enough"
        )
    if c_lo.is_feasible:
        # selling flat out is already feasible; no reference value underflows
        return _Bracket(lo_b, lo_b, degenerate=True)

    width = max(hi_b - lo_b, 1.0)
    c_hi = cls(hi_b)
    for _ in range(MAX_BRACKET_EXPANSIONS):
        if not c_hi.is_under or hi_b > smax:
            break
        hi_b += width
        width *= 2
        c_hi = cls(hi_b)
    if c_hi.is_under:
        raise InfeasibleProblem(
            f"from level {start_level} at time {start_time} the end level {p.end_level} "
            "cannot be reached: the store cannot take in energy fast enough"
        )

    lo, hi = lo_b, hi_b
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if cls(mid).is_under:
            lo = mid
        else:
            hi = mid
    return _Bracket(lo, hi)


def find_mu_bar(
    p: Problem,
    start_time: int,
    start_level: float,
    bracket: tuple[float, float] | None = None,
    tol_mu: float | None = None,
    tol_x: float = TOL_X,
) -> float:
    """Supremum (to within ``tol_mu``) of the reference values that underflow.

    The returned value itself underflows and ``mu_bar + tol_mu`` does not.
    When even the lowest saturated value is feasible the bottom of the
    bracket is returned.

    Raises:
        InfeasibleProblem: the end level is unreachable from this start.
    """
    if tol_mu is None:
        tol_mu = Tolerances().resolve_mu(p)
    if bracket is None:
        smin, smax = p.slope_bounds()
        bracket = (smin - 1.0, smax + 1.0)
    return _search(p, start_time, start_level, bracket, tol_mu, tol_x).lo


# ---------------------------------------------------------------------------
# segment extraction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Segment:
    start: int
    end: int
    pin: Pin
    mu: float
    levels: tuple[float, ...]  # levels at start+1 .. end


def _representative_mu(p: Problem, start: int, end: int, lo: float, hi: float) -> float:
    # A single kink inside the window makes the certificate exact for
    # piecewise-linear periods.
    inside = {k for cf in p.costs[start:end] for k in cf.kinks() if lo <= k <= hi}
    if len(inside) == 1:
        return inside.pop()
    return 0.5 * (lo + hi)


def _backward_band(
    p: Problem, start: int, end: int, end_level: float, mu_lo: float, mu_hi: float
) -> tuple[list[float], list[float]]:
    E = p.capacity
    n = end - start
    b_lo = [0.0] * (n + 1)
    b_hi = [0.0] * (n + 1)
    b_lo[n] = b_hi[n] = end_level
    for i in range(n, 0, -1):
        cf = p.costs[start + i - 1]
        a = cf.minimizer_interval(mu_lo)[0]
        b = cf.minimizer_interval(mu_hi)[1]
        lo, hi = b_lo[i] - b, b_hi[i] - a
        if i - 1 > 0:
            lo, hi = max(lo, 0.0), min(hi, E)
        b_lo[i - 1], b_hi[i - 1] = lo, hi
    return b_lo, b_hi


def _trace_levels(
    p: Problem,
    start: int,
    start_level: float,
    end: int,
    end_level: float,
    mu_lo: float,
    mu_hi: float,
    slack: float,
) -> tuple[float, ...]:
    """Concrete levels from ``start_level`` to ``end_level`` using window minimisers.

    Each flow is the admissible value closest to zero.
    """
    E = p.capacity
    b_lo, b_hi = _backward_band(p, start, end, end_level, mu_lo, mu_hi)
    if not (b_lo[0] - slack <= start_level <= b_hi[0] + slack):
        raise InternalInvariantViolation(
            f"segment ({start}, {end}]: start level {start_level} outside backward band "
            f"[{b_lo[0]}, {b_hi[0]}]"
        )
    levels = []
    s = start_level
    for i in range(1, end - start + 1):
        if i == end - start:
            levels.append(end_level)
            break
        cf = p.costs[start + i - 1]
        a = cf.minimizer_interval(mu_lo)[0]
        b = cf.minimizer_interval(mu_hi)[1]
        x_lo = max(a, b_lo[i] - s)
        x_hi = min(b, b_hi[i] - s)
        if x_lo > x_hi:
            if x_lo - x_hi > slack:
                raise InternalInvariantViolation(
                    f"segment ({start}, {end}]: empty admissible flow set at t={start + i}"
                )
            x = 0.5 * (x_lo + x_hi)
        else:
            x = min(max(0.0, x_lo), x_hi)
        s = min(max(s + x, 0.0), E)
        levels.append(s)
    return tuple(levels)


def _extract(
    p: Problem, start: int, start_level: float, br: _Bracket, tol_x: float, slack: float
) -> Segment:
    T, E = p.horizon, p.capacity
    if br.degenerate:
        levels = _trace_levels(p, start, start_level, T, p.end_level, br.lo, br.lo, slack)
        return Segment(start, T, Pin.TERMINAL, br.lo, levels)

    cls, band = _sweep(p, start, start_level, br.lo, br.hi, tol_x)
    mu = _representative_mu(p, start, T if cls.is_feasible else cls.time, br.lo, br.hi)
    if cls.is_feasible:
        levels = _trace_levels(p, start, start_level, T, p.end_level, br.lo, br.hi, slack)
        return Segment(start, T, Pin.TERMINAL, mu, levels)

    t_viol = cls.time
    pin_time = None
    for t in range(t_viol - 1, start, -1):
        i = t - start
        if cls.is_under and band.upper[i] >= E - tol_x:
            pin_time = t
            break
        if cls.is_over and band.lower[i] <= tol_x:
            pin_time = t
            break
    if pin_time is None:
        raise InternalInvariantViolation(
            f"no {'full' if cls.is_under else 'empty'} pin before violation at t={t_viol} "
            f"(segment start {start}, mu window [{br.lo}, {br.hi}])"
        )
    pin = Pin.FULL if cls.is_under else Pin.EMPTY
    pin_level = E if cls.is_under else 0.0
    mu = _representative_mu(p, start, pin_time, br.lo, br.hi)
    levels = _trace_levels(p, start, start_level, pin_time, pin_level, br.lo, br.hi, slack)
    return Segment(start, pin_time, pin, mu, levels)


def extract_segment(
    p: Problem,
    start_time: int,
    start_level: float,
    mu_bar: float,
    classification_at_mu_bar: Classification | None = None,
    tol_mu: float | None = None,
    tol_x: float = TOL_X,
) -> Segment:
    """Close the segment that starts at ``(start_time, start_level)``.

    ``mu_bar`` is the output of :func:`find_mu_bar`; the window
    ``[mu_bar, mu_bar + tol_mu]`` brackets the exact supremum.  Depending on
    how that window classifies, the segment runs to the horizon and lands on
    the end level, or ends at the last time the store can be full (resp.
    empty) before the violation.
    """
    if tol_mu is None:
        tol_mu = Tolerances().resolve_mu(p)
    if classification_at_mu_bar is None:
        classification_at_mu_bar = _sweep(p, start_time, start_level, mu_bar, mu_bar, tol_x)[0]
    if classification_at_mu_bar.is_feasible:
        br = _Bracket(mu_bar, mu_bar, degenerate=True)
    else:
        br = _Bracket(mu_bar, mu_bar + tol_mu)
    return _extract(p, start_time, start_level, br, tol_x, slack=max(tol_x, 1e-7))


def solve(p: Problem, tol: Tolerances | None = None) -> tuple[Schedule, MuCertificate]:
    """Optimal schedule together with the multipliers certifying it."""
    tol = tol or Tolerances()
    tol_mu = tol.resolve_mu(p)
    tol_search = 0.5 * tol_mu
    smin, smax = p.slope_bounds()
    bracket = (smin - 1.0, smax + 1.0)
    slack = max(tol.x, 1e-7)

    T = p.horizon
    levels = [p.start_level]
    mus: list[float] = []
    boundaries = [0]
    pins: list[Pin] = []
    start, level = 0, p.start_level
    while start < T:
        br = _search(p, start, level, bracket, tol_search, tol.x)
        try:
            seg = _extract(p, start, level, br, tol.x, slack)
        except InternalInvariantViolation:
            br = _search(p, start, level, bracket, tol_search * 1e-3, tol.x)
            seg = _extract(p, start, level, br, tol.x, slack)
        levels.extend(seg.levels)
        mus.extend([seg.mu] * (seg.end - seg.start))
        boundaries.append(seg.end)
        if seg.pin is not Pin.TERMINAL:
            pins.append(seg.pin)
        start, level = seg.end, seg.levels[-1]
    return Schedule.from_levels(levels), MuCertificate(tuple(mus), tuple(boundaries), tuple(pins))


# ---------------------------------------------------------------------------
# optimality certificate
# ---------------------------------------------------------------------------


def verify_certificate(
    p: Problem, s: Schedule, c: MuCertificate, tol: Tolerances | None = None
) -> CertificateReport:
    """Check the three sufficient optimality conditions for ``(s, c)``.

    (i) feasibility; (ii) each flow minimises ``C_t(x) - mu_t x`` over the
    domain; (iii) ``mu`` is constant across interior levels, may only fall
    after an empty store and only rise after a full one.  Failures are
    reported, never raised.
    """
    tol = tol or Tolerances()
    tol_mu = tol.resolve_mu(p)
    T, E = p.horizon, p.capacity
    details = schedule_violations(p, s, tol.x)
    feasible = not details
    if len(c.mu) != T or len(s.flows) != T or len(s.levels) != T + 1:
        details.append(f"multiplier vector has length {len(c.mu)}, expected {T}")
        return CertificateReport(False, False, False, details)

    pointwise = True
    for t, (cf, x, mu) in enumerate(zip(p.costs, s.flows, c.mu), start=1):
        best = cf.reduced_min(mu)
        allow = tol.cost + tol_mu * (cf.p_in + cf.p_out)
        try:
            got = cf.evaluate(x, tol.x) - mu * x
        except DomainViolation:
            pointwise = False
            details.append(f"(ii) t={t}: flow {x} outside the cost domain")
            continue
        if got > best + allow:
            pointwise = False
            details.append(f"(ii) t={t}: reduced cost {got:.12g} exceeds minimum {best:.12g}")

    slack = True
    for t in range(1, T):
        lvl, d = s.levels[t], c.mu[t] - c.mu[t - 1]
        at_empty = lvl <= tol.x
        at_full = lvl >= E - tol.x
        if at_empty and at_full:
            continue
        if at_empty:
            ok = d <= tol_mu
        elif at_full:
            ok = d >= -tol_mu
        else:
            ok = abs(d) <= tol_mu
        if not ok:
            slack = False
            details.append(f"(iii) t={t}: level {lvl:.12g} with mu step {d:.12g}")
    return CertificateReport(feasible, pointwise, slack, details)
