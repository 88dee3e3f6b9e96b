"""Independent reference solvers used to validate :mod:`storearb.solver`.

Nothing here is used by the solver.  Both oracles restrict store levels to a
uniform grid of step ``1 / levels_per_unit`` and evaluate cost functions only
pointwise, so they share no machinery with the Lagrangian construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GridInfeasible, TooLarge
from .solver import Problem, Schedule

EXHAUSTIVE_MAX_T = 6
EXHAUSTIVE_MAX_PATHS = 10**7


@dataclass(frozen=True)
class GridSpec:
    levels_per_unit: int

    def __post_init__(self):
        if int(self.levels_per_unit) != self.levels_per_unit or self.levels_per_unit <= 0:
            raise ValueError("levels_per_unit must be a positive integer")

    @property
    def step(self) -> float:
        return 1.0 / self.levels_per_unit


@dataclass
class GridProblem:
    """A problem snapped onto the grid, in integer grid units."""

    n_levels: int  # capacity in grid steps
    start: int
    end: int
    k_in: list[int]
    k_out: list[int]
    snap: dict[str, float] = field(default_factory=dict)

    @property
    def max_snap(self) -> float:
        return max(self.snap.values(), default=0.0)


@dataclass
class DPResult:
    cost: float
    schedule: Schedule
    snap: dict[str, float]


def snap_problem(p: Problem, g: GridSpec) -> GridProblem:
    """Round levels to the nearest grid point; round rate limits down.

    Rounding rates down keeps every grid flow inside the true domain.
    """
    n = g.levels_per_unit
    snap = {}

    def nearest(name, v):
        k = int(round(v * n))
        snap[name] = abs(k / n - v)
        return k

    def floor(name, v):
        k = int(math.floor(v * n + 1e-9))
        snap[name] = max(snap.get(name, 0.0), abs(k / n - v))
        return k

    n_levels = nearest("capacity", p.capacity)
    start = min(nearest("start_level", p.start_level), n_levels)
    end = min(nearest("end_level", p.end_level), n_levels)
    k_in = [floor("p_in", cf.p_in) for cf in p.costs]
    k_out = [floor("p_out", cf.p_out) for cf in p.costs]
    return GridProblem(n_levels, start, end, k_in, k_out, snap)


def dp_solve(p: Problem, g: GridSpec) -> DPResult:
    """Exact minimum cost over grid-valued level paths, by backward induction.

    Raises:
        GridInfeasible: no grid path reaches the snapped end level.
    """
    gp = snap_problem(p, g)
    d = g.step
    T, N = p.horizon, gp.n_levels
    value = np.full(N + 1, np.inf)
    value[gp.end] = 0.0
    choice = np.zeros((T, N + 1), dtype=np.int64)

    for t in range(T, 0, -1):
        cf = p.costs[t - 1]
        ks = range(-gp.k_out[t - 1], gp.k_in[t - 1] + 1)
        prev = np.full(N + 1, np.inf)
        arg = np.zeros(N + 1, dtype=np.int64)
        for k in ks:
            c = cf.evaluate(k * d)
            # level i at t-1 moves to i + k at t
            lo, hi = max(0, -k), min(N, N - k)
            if lo > hi:
                continue
            cand = value[lo + k : hi + k + 1] + c
            cur = prev[lo : hi + 1]
            better = cand < cur
            cur[better] = cand[better]
            arg[lo : hi + 1][better] = k
        value = prev
        choice[t - 1] = arg

    if not math.isfinite(value[gp.start]):
        raise GridInfeasible("no grid path connects the snapped boundary levels")

    levels = [gp.start]
    for t in range(T):
        levels.append(levels[-1] + int(choice[t, levels[-1]]))
    sched = Schedule.from_levels([i * d for i in levels])
    return DPResult(float(value[gp.start]), sched, gp.snap)


def count_grid_paths(p: Problem, g: GridSpec) -> int:
    gp = snap_problem(p, g)
    ways = [0] * (gp.n_levels + 1)
    ways[gp.start] = 1
    for t in range(p.horizon):
        nxt = [0] * (gp.n_levels + 1)
        for i, w in enumerate(ways):
            if w:
                for j in range(max(0, i - gp.k_out[t]), min(gp.n_levels, i + gp.k_in[t]) + 1):
                    nxt[j] += w
        ways = nxt
    return ways[gp.end]


def exhaustive_solve(p: Problem, g: GridSpec) -> float:
    """Minimum cost over every grid path, by plain enumeration.

    Raises:
        TooLarge: horizon above 6 or more than 10**7 paths.
        GridInfeasible: no grid path exists.
    """
    if p.horizon > EXHAUSTIVE_MAX_T:
        raise TooLarge(f"horizon {p.horizon} exceeds {EXHAUSTIVE_MAX_T}")
    n_paths = count_grid_paths(p, g)
    if n_paths > EXHAUSTIVE_MAX_PATHS:
        raise TooLarge(f"{n_paths} grid paths exceed {EXHAUSTIVE_MAX_PATHS}")
    if n_paths == 0:
        raise GridInfeasible("no grid path connects the snapped boundary levels")
    gp = snap_problem(p, g)
    d = g.step
    T = p.horizon
    best = math.inf

    def walk(t, level, acc):
        nonlocal best
        if t == T:
            if level == gp.end and acc < best:
                best = acc
            return
        for k in range(-gp.k_out[t], gp.k_in[t] + 1):
            nxt = level + k
            if 0 <= nxt <= gp.n_levels:
                walk(t + 1, nxt, acc + p.costs[t].evaluate(k * d))

    walk(0, gp.start, 0.0)
    return best


def random_feasible_schedule(p: Problem, rng: np.random.Generator, extreme_prob: float = 0.3) -> Schedule:
    """Sample a feasible schedule, ignoring costs.

    Each level is drawn from the set still consistent with reaching the end
    level; with probability ``extreme_prob`` an endpoint of that set is taken
    instead of a uniform draw.
    """
    T, E = p.horizon, p.capacity
    # backward-feasible level intervals
    lo = [0.0] * (T + 1)
    hi = [0.0] * (T + 1)
    lo[T] = hi[T] = p.end_level
    for t in range(T, 0, -1):
        cf = p.costs[t - 1]
        lo[t - 1] = max(lo[t] - cf.p_in, 0.0)
        hi[t - 1] = min(hi[t] + cf.p_out, E)
    levels = [p.start_level]
    for t in range(1, T + 1):
        cf = p.costs[t - 1]
        s = levels[-1]
        if t == T:
            levels.append(p.end_level)
            break
        a = max(lo[t], s - cf.p_out, 0.0)
        b = min(hi[t], s + cf.p_in, E)
        if a > b:
            a = b = min(max(s, a), b) if a - b < 1e-12 else None
            if a is None:
                raise GridInfeasible("problem admits no feasible schedule")
        u = rng.random()
        if u < extreme_prob / 2:
            v = a
        elif u < extreme_prob:
            v = b
        else:
            v = a + (b - a) * rng.random()
        levels.append(v)
    return Schedule.from_levels(levels)
