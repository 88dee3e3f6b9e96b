from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from storearb.cost_model import CostFunction, QuadraticImpact, RateLimits
from storearb.dataio import SyntheticSpec, generate_prices, problem_from_prices
from storearb.errors import InfeasibleProblem, InfeasibleSchedule, InvalidProblem
from storearb.oracle import GridSpec, dp_solve, random_feasible_schedule
from storearb.solver import (
    MuCertificate,
    Pin,
    Problem,
    Schedule,
    Tolerances,
    classify_mu,
    extract_segment,
    find_mu_bar,
    objective,
    solve,
    verify_certificate,
)

from instances import BUY_THEN_SELL, random_problem, two_price_problem


def brute_classify(p: Problem, mu: float, step: float = 0.1) -> str:
    """Classification by enumerating minimising flows on a grid.

    Minimisers are found by direct evaluation of ``C(x) - mu x`` over the
    flow grid, never through ``minimizer_interval``.  A value is feasible if
    some path of minimisers stays in ``[0, E]`` and lands on the target;
    otherwise it is under when the path of largest minimisers fails low.
    """
    choices = []
    for cf in p.costs:
        n_out, n_in = round(cf.p_out / step), round(cf.p_in / step)
        xs = [k * step for k in range(-n_out, n_in + 1)]
        vals = [cf.evaluate(x) - mu * x for x in xs]
        best = min(vals)
        choices.append([x for x, v in zip(xs, vals) if v <= best + 1e-9])
    T, E = p.horizon, p.capacity
    for path in itertools.product(*choices):
        levels = np.cumsum([p.start_level, *path])
        if np.all((levels[1:T] >= -1e-9) & (levels[1:T] <= E + 1e-9)) and abs(levels[T] - p.end_level) < 1e-9:
            return "feasible"
    level = p.start_level
    for t, opts in enumerate(choices, start=1):
        level += max(opts)
        if t < T and level < -1e-9:
            return "under"
    return "under" if level < p.end_level - 1e-9 else "over"


class TestObjective:
    def test_zero_flows(self):
        p = two_price_problem(BUY_THEN_SELL)
        assert objective(p, Schedule.from_flows(0, [0, 0])) == 0.0

    def test_buy_then_sell(self):
        p = two_price_problem(BUY_THEN_SELL)
        assert objective(p, Schedule.from_flows(0, [1, -1])) == -1.0

    def test_resummation(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            p = random_problem(rng, int(rng.integers(2, 20)))
            s = random_feasible_schedule(p, rng)
            total = 0.0
            for t in range(p.horizon):
                total += p.costs[t].evaluate(s.levels[t + 1] - s.levels[t])
            assert_allclose(objective(p, s), total, rtol=1e-12, atol=1e-12)

    @pytest.mark.parametrize(
        "flows",
        [[1.0, 0.0], [2.0, -2.0], [-1.0, 1.0]],
        ids=["wrong-end", "rate", "below-empty"],
    )
    def test_infeasible(self, flows):
        p = two_price_problem(BUY_THEN_SELL, capacity=2.0, rate=1.0)
        with pytest.raises(InfeasibleSchedule):
            objective(p, Schedule.from_flows(0, flows))


class TestClassify:
    def test_all_selling_underflows(self):
        p = two_price_problem([(2, 1)] * 3, capacity=5, start=1, end=1)
        c, band = classify_mu(p, 0, 1.0, 0.0)
        assert c.is_under and c.time == 2
        assert band.first_violation[0] == 2

    def test_all_buying_overflows(self):
        p = two_price_problem([(2, 1)] * 4, capacity=2, start=0, end=0)
        c, _ = classify_mu(p, 0, 0.0, 10.0)
        assert c.is_over and c.time == 3

    def test_two_period_example(self):
        """Hand propagation: x1 = 1 (mu above buy 1), x2 = -1 (mu below sell 2).

        The band is {1} then {0}, which lands on the target, so the value is
        feasible.
        """
        p = two_price_problem(BUY_THEN_SELL)
        c, band = classify_mu(p, 0, 0.0, 1.5)
        assert c.is_feasible
        assert_allclose(band.lower, [0, 1, 0])
        assert_allclose(band.upper, [0, 1, 0])

    @pytest.mark.parametrize("mu", [round(0.1 * k, 1) for k in range(41)])
    def test_two_period_against_enumeration(self, mu):
        p = two_price_problem(BUY_THEN_SELL)
        assert classify_mu(p, 0, 0.0, mu)[0].kind == brute_classify(p, mu)

    @settings(max_examples=150, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(-2, 14), st.floats(-2, 14))
    def test_monotone(self, seed, mu1, mu2):
        rng = np.random.default_rng(seed)
        p = random_problem(rng, int(rng.integers(1, 12)))
        mu1, mu2 = sorted((mu1, mu2))
        c1 = classify_mu(p, 0, p.start_level, mu1)[0]
        c2 = classify_mu(p, 0, p.start_level, mu2)[0]
        if c1.is_over:
            assert c2.is_over
        if c2.is_under:
            assert c1.is_under

    def test_band_clipped(self):
        rng = np.random.default_rng(5)
        p = random_problem(rng, 20)
        _, band = classify_mu(p, 0, p.start_level, 5.0)
        last = len(band.lower) - 1
        for i, (lo, hi) in enumerate(zip(band.lower, band.upper)):
            assert lo <= hi + 1e-12
            if 0 < i < last:
                assert -1e-12 <= lo and hi <= p.capacity + 1e-12


class TestFindMuBar:
    def test_single_forced_purchase(self):
        p = two_price_problem([(2, 1)], capacity=1, start=0, end=1)
        tol = Tolerances().resolve_mu(p)
        mu = find_mu_bar(p, 0, 0.0)
        assert_allclose(mu, 2.0, atol=tol)
        assert classify_mu(p, 0, 0.0, mu)[0].is_under
        assert classify_mu(p, 0, 0.0, mu + tol)[0].is_feasible

    def test_two_period(self):
        """Enumeration over mu in steps of 0.1 shows Under below 1 and Feasible on [1, 2]."""
        p = two_price_problem(BUY_THEN_SELL)
        tol = Tolerances().resolve_mu(p)
        mu = find_mu_bar(p, 0, 0.0)
        assert 1 - tol <= mu <= 2
        assert classify_mu(p, 0, 0.0, mu + tol)[0].is_feasible
        grid = [round(0.1 * k, 1) for k in range(41)]
        assert [m for m in grid if brute_classify(p, m) == "under"] == [m for m in grid if m < 1]

    def test_supplied_bracket_expands(self):
        p = two_price_problem([(2, 1)], capacity=1, start=0, end=1)
        mu = find_mu_bar(p, 0, 0.0, bracket=(2.5, 3.0))
        assert_allclose(mu, 2.0, atol=1e-6)

    @pytest.mark.parametrize("start,end", [(0.0, 3.0), (3.0, 0.0)], ids=["too-high", "too-low"])
    def test_unreachable(self, start, end):
        p = two_price_problem([(2, 1)] * 2, capacity=3, start=start, end=end)
        with pytest.raises(InfeasibleProblem):
            find_mu_bar(p, 0, start)


class TestExtractSegment:
    def test_feasible_case(self):
        p = two_price_problem(BUY_THEN_SELL)
        mu = find_mu_bar(p, 0, 0.0)
        seg = extract_segment(p, 0, 0.0, mu)
        assert seg.end == 2 and seg.pin is Pin.TERMINAL
        assert_allclose(seg.levels, [1.0, 0.0])

    def test_three_period_terminal(self):
        """Following the construction, mu_bar is the last sell price 1.1.

        At that value buying at t=1 and selling at t=2 already lands on the
        target, so the first segment is terminal.  The objective matches the
        grid optimum of -3.
        """
        p = two_price_problem([(1, 0.9), (5, 4), (1.2, 1.1)])
        mu = find_mu_bar(p, 0, 0.0)
        assert_allclose(mu, 1.1, atol=1e-6)
        seg = extract_segment(p, 0, 0.0, mu)
        assert seg.pin is Pin.TERMINAL and seg.end == 3
        assert_allclose(seg.levels, [1.0, 0.0, 0.0])
        s, c = solve(p)
        assert_allclose(objective(p, s), dp_solve(p, GridSpec(100)).cost, atol=1e-9)
        assert_allclose(objective(p, s), -3.0)
        assert verify_certificate(p, s, c).ok

    def test_full_pin(self):
        """Buy at 1 and hold to sell at 20; holding while full at prices 2 and 10 forces mu to rise."""
        p = two_price_problem([(1, 1), (2, 2), (10, 10), (20, 20)])
        s, c = solve(p)
        assert_allclose(s.levels, [0, 1, 1, 1, 0])
        assert Pin.FULL in c.pin_kinds
        assert_allclose(objective(p, s), -19.0)
        assert verify_certificate(p, s, c).ok

    def test_empty_pin(self):
        """Mirror image: sell a full store at 20 and buy back at 1."""
        p = two_price_problem([(20, 20), (10, 10), (2, 2), (1, 1)], start=1, end=1)
        s, c = solve(p)
        assert_allclose(s.levels, [1, 0, 0, 0, 1])
        assert Pin.EMPTY in c.pin_kinds
        assert verify_certificate(p, s, c).ok

    def test_single_period_tail(self):
        p = two_price_problem([(2, 1), (3, 2)], capacity=2, start=1, end=0.5)
        seg = extract_segment(p, 1, 1.0, find_mu_bar(p, 1, 1.0))
        assert seg.end == 2 and seg.pin is Pin.TERMINAL
        assert_allclose(seg.levels, [0.5])


class TestSolve:
    def test_constant_prices(self):
        p = two_price_problem([(3, 3)] * 10, capacity=4, start=2, end=2)
        s, c = solve(p)
        assert_allclose(s.flows, 0.0)
        assert c.segment_lengths() == [10]
        assert len(set(c.mu)) == 1

    def test_buy_then_sell(self):
        p = two_price_problem(BUY_THEN_SELL)
        s, c = solve(p)
        assert_allclose(s.levels, [0, 1, 0])
        assert_allclose(objective(p, s), -1.0)
        assert_allclose(dp_solve(p, GridSpec(100)).cost, -1.0)

    def test_synthetic_day_vs_oracle(self):
        prices = generate_prices(SyntheticSpec(days=1, seed=4))
        p = problem_from_prices(prices, capacity=10, rate_in=1, eta=0.75)
        s, c = solve(p)
        assert verify_certificate(p, s, c).ok
        assert_allclose(objective(p, s), dp_solve(p, GridSpec(100)).cost, atol=1e-6)

    def test_mu_moves_with_pins(self):
        rng = np.random.default_rng(21)
        for _ in range(30):
            p = random_problem(rng, 30, families=("two_price",))
            _, c = solve(p)
            tol = Tolerances().resolve_mu(p)
            for (_, b, mu, pin), nxt in zip(c.segments, c.segments[1:]):
                if pin is Pin.FULL:
                    assert nxt[2] >= mu - tol
                else:
                    assert nxt[2] <= mu + tol

    def test_infeasible(self):
        p = two_price_problem([(2, 1)] * 3, capacity=10, start=0, end=5)
        with pytest.raises(InfeasibleProblem):
            solve(p)

    def test_zero_capacity(self):
        p = two_price_problem([(1, 1), (9, 9)], capacity=0)
        s, c = solve(p)
        assert_allclose(s.flows, 0.0)
        assert verify_certificate(p, s, c).ok

    def test_quadratic_interior(self):
        """With curvature the optimal flow is interior: buy at 1 + 2x equals sell at 3 - 2x."""
        cost = lambda b, s: CostFunction(QuadraticImpact(b, s, 1, 1), RateLimits(5, 5))  # noqa: E731
        p = Problem(10, 0, 0, (cost(1, 1), cost(3, 3)))
        s, c = solve(p)
        assert_allclose(s.flows, [0.5, -0.5], atol=1e-6)
        assert verify_certificate(p, s, c).ok

    def test_segment_locality(self):
        """Re-solving each segment with its end levels reproduces its cost."""
        rng = np.random.default_rng(8)
        for _ in range(10):
            p = random_problem(rng, 40)
            s, c = solve(p)
            for a, b, _, _ in c.segments:
                sub = Problem(p.capacity, s.levels[a], s.levels[b], p.costs[a:b])
                sub_s, _ = solve(sub)
                part = math.fsum(p.costs[t].evaluate(s.flows[t]) for t in range(a, b))
                assert_allclose(objective(sub, sub_s), part, atol=1e-6)


class TestVerifyCertificate:
    @staticmethod
    def solved():
        rng = np.random.default_rng(2)
        p = random_problem(rng, 24, families=("two_price",), max_capacity=3, max_rate=1)
        return p, *solve(p)

    def test_accepts_solution(self):
        p, s, c = self.solved()
        rep = verify_certificate(p, s, c)
        assert rep.ok and rep.failed_conditions() == []

    def test_perturbed_flow(self):
        p = two_price_problem([*BUY_THEN_SELL, (5, 1), (5, 1)], capacity=2)
        s, c = solve(p)
        assert_allclose(s.flows, [1, -1, 0, 0])
        flows = list(s.flows)
        flows[2] += 0.1  # buy a little in a hold period, sell it in the next
        flows[3] -= 0.1
        rep = verify_certificate(p, Schedule.from_flows(0, flows), c)
        assert rep.feasible
        assert not rep.pointwise_min
        assert "(ii)" in rep.failed_conditions()

    def test_ramp_multipliers(self):
        p = two_price_problem([(3, 1)] * 6, capacity=4, start=2, end=2)
        s, _ = solve(p)
        ramp = MuCertificate(tuple(2.0 + 1e-3 * t for t in range(6)), (0, 6), ())
        rep = verify_certificate(p, s, ramp)
        assert not rep.comp_slack and rep.failed_conditions() == ["(iii)"]

    def test_infeasible_flagged(self):
        p, s, c = self.solved()
        levels = list(s.levels)
        levels[-1] += 0.5
        rep = verify_certificate(p, Schedule.from_levels(levels), c)
        assert not rep.feasible

    def test_wrong_length(self):
        p, s, c = self.solved()
        rep = verify_certificate(p, s, MuCertificate(c.mu[:-1], (0, p.horizon - 1), ()))
        assert not rep.ok


class TestProblem:
    def test_bad_levels(self):
        with pytest.raises(InvalidProblem):
            two_price_problem([(1, 1)], capacity=1, start=2)

    def test_scaled(self):
        p = two_price_problem(BUY_THEN_SELL, capacity=2, start=1, end=1)
        q = p.scaled(3)
        assert (q.capacity, q.start_level, q.end_level) == (6, 3, 3)
        assert q.costs[0].p_in == 3

    def test_scaled_quadratic_rejected(self):
        cf = CostFunction(QuadraticImpact(1, 1, 1, 1), RateLimits(1, 1))
        with pytest.raises(InvalidProblem):
            Problem(1, 0, 0, (cf,)).scaled(2)
