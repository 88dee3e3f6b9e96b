"""Convex per-period cost functions for a store trading energy.

A cost function gives the money cost ``C(x)`` of changing the store level by
``x`` in one period: positive ``x`` buys energy, negative ``x`` sells it, and
``C(0) == 0``.  Rate limits are encoded as a domain restriction: ``C`` is
finite on ``[-p_out, p_in]`` and treated as ``+inf`` outside.

Three curve families are provided:

* :class:`TwoPriceLinear` -- a price-taking store with separate unit buy and
  sell prices.
* :class:`PiecewiseLinearConvex` -- general convex piecewise-linear cost,
  given by breakpoints and the slope to the right of each.
* :class:`QuadraticImpact` -- linear prices plus quadratic market impact on
  either side (strictly convex on a side when its curvature is positive).

The central query is :meth:`CostFunction.minimizer_interval`, the closed set
of flows minimising ``C(x) - mu * x`` over the domain.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Union

from .errors import DomainViolation, InvalidCost, InvalidEfficiency

TOL_X = 1e-9
TOL_COST = 1e-9


@dataclass(frozen=True)
class RateLimits:
    p_in: float
    p_out: float

    def __post_init__(self):
        if not (self.p_in >= 0 and self.p_out >= 0):
            raise InvalidCost(f"rate limits must be >= 0, got {self.p_in}, {self.p_out}")
        if self.p_in == 0 and self.p_out == 0:
            raise InvalidCost("at least one rate limit must be positive")
        if math.isinf(self.p_in) or math.isinf(self.p_out):
            raise InvalidCost("rate limits must be finite")


@dataclass(frozen=True)
class TwoPriceLinear:
    """Buy at ``buy`` per unit, sell at ``sell`` per unit (``buy >= sell``)."""

    buy: float
    sell: float

    def __post_init__(self):
        if not self.buy >= self.sell:
            raise InvalidCost(f"buy price {self.buy} below sell price {self.sell}")

    def value(self, x: float) -> float:
        return self.buy * x if x >= 0 else self.sell * x

    def argmin(self, mu: float, lo: float, hi: float) -> tuple[float, float]:
        if mu > self.buy:
            return hi, hi
        if mu < self.sell:
            return lo, lo
        x_lo = lo if mu == self.sell else 0.0
        x_hi = hi if mu == self.buy else 0.0
        return max(x_lo, lo), min(x_hi, hi)

    def slopes_at(self, lo: float, hi: float) -> tuple[float, float]:
        return (self.sell if lo < 0 else self.buy), (self.buy if hi > 0 else self.sell)

    def kinks(self) -> tuple[float, ...]:
        return (self.sell, self.buy)

    def scale_sell(self, eta: float) -> TwoPriceLinear:
        return TwoPriceLinear(buy=self.buy, sell=self.sell * eta)


@dataclass(frozen=True)
class PiecewiseLinearConvex:
    """Convex piecewise-linear cost anchored at ``C(0) = 0``.

    ``breakpoints`` is a sequence of ``(x, slope)`` pairs in increasing ``x``;
    ``slope`` holds on ``[x, next x)``.  The first slope also extends to the
    left of the first breakpoint and the last slope to the right of the last,
    so the curve is defined on the whole line.
    """

    breakpoints: tuple[tuple[float, float], ...]

    def __post_init__(self):
        pts = tuple((float(x), float(s)) for x, s in self.breakpoints)
        if not pts:
            raise InvalidCost("piecewise-linear cost needs at least one breakpoint")
        for (x0, s0), (x1, s1) in zip(pts, pts[1:]):
            if not x1 > x0:
                raise InvalidCost("breakpoints must be strictly increasing in x")
            if s1 < s0:
                raise InvalidCost("slopes must be nondecreasing (convexity)")
        object.__setattr__(self, "breakpoints", pts)
        object.__setattr__(self, "_xs", [x for x, _ in pts])
        object.__setattr__(self, "_slopes", [s for _, s in pts])

    def value(self, x: float) -> float:
        if x == 0:
            return 0.0
        a, b = (0.0, x) if x > 0 else (x, 0.0)
        xs, slopes = self._xs, self._slopes
        total = 0.0
        # piece k spans [xs[k], xs[k+1]), first piece open to the left, last to the right
        for k, s in enumerate(slopes):
            left = -math.inf if k == 0 else xs[k]
            right = math.inf if k == len(xs) - 1 else xs[k + 1]
            overlap = min(b, right) - max(a, left)
            if overlap > 0:
                total += s * overlap
        return total if x > 0 else -total

    def argmin(self, mu: float, lo: float, hi: float) -> tuple[float, float]:
        xs, slopes = self._xs, self._slopes
        # smallest x whose right-derivative is >= mu
        k = bisect.bisect_left(slopes, mu)
        if k == len(slopes):
            x_lo = hi
        elif k == 0:
            x_lo = lo
        else:
            x_lo = xs[k]
        # largest x whose left-derivative is <= mu
        j = bisect.bisect_right(slopes, mu) - 1
        if j < 0:
            x_hi = lo
        elif j == len(slopes) - 1:
            x_hi = hi
        else:
            x_hi = xs[j + 1]
        x_lo = min(max(x_lo, lo), hi)
        x_hi = min(max(x_hi, lo), hi)
        return x_lo, x_hi

    def _slope_right_of(self, x: float) -> float:
        k = bisect.bisect_right(self._xs, x) - 1
        return self.breakpoints[max(k, 0)][1]

    def _slope_left_of(self, x: float) -> float:
        k = bisect.bisect_left(self._xs, x) - 1
        return self.breakpoints[max(k, 0)][1]

    def slopes_at(self, lo: float, hi: float) -> tuple[float, float]:
        return self._slope_right_of(lo), self._slope_left_of(hi)

    def kinks(self) -> tuple[float, ...]:
        return tuple(self._slopes)

    def scale_sell(self, eta: float) -> PiecewiseLinearConvex:
        pts = dict(self.breakpoints)
        pts.setdefault(0.0, self._slope_right_of(0.0))
        if min(pts) == 0.0:
            # the first slope runs left through 0; give the sell side its own piece
            pts[-1.0] = pts[0.0]
        scaled = tuple((x, s * eta if x < 0 else s) for x, s in sorted(pts.items()))
        return PiecewiseLinearConvex(scaled)


@dataclass(frozen=True)
class QuadraticImpact:
    """Linear prices with quadratic market impact.

    ``C(x) = buy_price*x + buy_curvature*x**2`` for ``x >= 0`` and
    ``C(x) = sell_price*x + sell_curvature*x**2`` for ``x < 0``: each extra
    unit bought costs more and each extra unit sold earns less.
    """

    buy_price: float
    sell_price: float
    buy_curvature: float = 0.0
    sell_curvature: float = 0.0

    def __post_init__(self):
        if self.buy_curvature < 0 or self.sell_curvature < 0:
            raise InvalidCost("curvatures must be >= 0")
        if not self.buy_price >= self.sell_price:
            raise InvalidCost(f"buy price {self.buy_price} below sell price {self.sell_price}")

    def value(self, x: float) -> float:
        if x >= 0:
            return self.buy_price * x + self.buy_curvature * x * x
        return self.sell_price * x + self.sell_curvature * x * x

    def argmin(self, mu: float, lo: float, hi: float) -> tuple[float, float]:
        b, s = self.buy_price, self.sell_price
        bc, sc = self.buy_curvature, self.sell_curvature
        if mu > b:
            x_lo = (mu - b) / (2 * bc) if bc > 0 else math.inf
        elif mu > s:
            x_lo = 0.0
        else:
            x_lo = (mu - s) / (2 * sc) if sc > 0 else -math.inf
        if mu >= b:
            x_hi = (mu - b) / (2 * bc) if bc > 0 else math.inf
        elif mu >= s:
            x_hi = 0.0
        else:
            x_hi = (mu - s) / (2 * sc) if sc > 0 else -math.inf
        return min(max(x_lo, lo), hi), min(max(x_hi, lo), hi)

    def _derivative(self, x: float, right: bool) -> float:
        if x > 0 or (x == 0 and right):
            return self.buy_price + 2 * self.buy_curvature * x
        return self.sell_price + 2 * self.sell_curvature * x

    def slopes_at(self, lo: float, hi: float) -> tuple[float, float]:
        return self._derivative(lo, right=True), self._derivative(hi, right=False)

    def kinks(self) -> tuple[float, ...]:
        out = []
        if self.sell_curvature == 0:
            out.append(self.sell_price)
        if self.buy_curvature == 0:
            out.append(self.buy_price)
        return tuple(out)

    def scale_sell(self, eta: float) -> QuadraticImpact:
        return QuadraticImpact(
            buy_price=self.buy_price,
            sell_price=self.sell_price * eta,
            buy_curvature=self.buy_curvature,
            sell_curvature=self.sell_curvature * eta,
        )


Curve = Union[TwoPriceLinear, PiecewiseLinearConvex, QuadraticImpact]


@dataclass(frozen=True)
class CostFunction:
    """A convex curve restricted to the rate-limited domain ``[-p_out, p_in]``."""

    curve: Curve
    limits: RateLimits

    @property
    def p_in(self) -> float:
        return self.limits.p_in

    @property
    def p_out(self) -> float:
        return self.limits.p_out

    def evaluate(self, x: float, tol_x: float = TOL_X) -> float:
        if x < -self.p_out - tol_x or x > self.p_in + tol_x:
            raise DomainViolation(f"flow {x} outside [{-self.p_out}, {self.p_in}]")
        if x == 0:
            return 0.0
        return self.curve.value(min(max(x, -self.p_out), self.p_in))

    def minimizer_interval(self, mu: float) -> tuple[float, float]:
        """Closed interval of flows minimising ``C(x) - mu*x`` on the domain."""
        return self.curve.argmin(mu, -self.p_out, self.p_in)

    def reduced_min(self, mu: float) -> float:
        """Minimum of ``C(x) - mu*x`` over the domain."""
        x, _ = self.minimizer_interval(mu)
        return self.curve.value(x) - mu * x

    def slope_range(self) -> tuple[float, float]:
        """Right-derivative at ``-p_out`` and left-derivative at ``p_in``.

        For ``mu`` strictly below the first value the unique minimiser is
        ``-p_out``; strictly above the second it is ``p_in``.
        """
        return self.curve.slopes_at(-self.p_out, self.p_in)

    def kinks(self) -> tuple[float, ...]:
        """Values of ``mu`` at which the minimiser set may be a fat interval."""
        return self.curve.kinks()

    def apply_efficiency(self, eta: float) -> CostFunction:
        if not (0 < eta <= 1):
            raise InvalidEfficiency(f"efficiency must lie in (0, 1], got {eta}")
        if eta == 1:
            return self
        return CostFunction(self.curve.scale_sell(eta), self.limits)


def two_price(buy: float, sell: float, p_in: float = 1.0, p_out: float | None = None) -> CostFunction:
    """Convenience constructor for the price-taking store."""
    return CostFunction(TwoPriceLinear(buy, sell), RateLimits(p_in, p_in if p_out is None else p_out))


def evaluate(cf: CostFunction, x: float, tol_x: float = TOL_X) -> float:
    return cf.evaluate(x, tol_x)


def minimizer_interval(cf: CostFunction, mu: float) -> tuple[float, float]:
    return cf.minimizer_interval(mu)


def apply_efficiency(cf: CostFunction, eta: float) -> CostFunction:
    """Scale the sell side of ``cf`` by ``eta`` so that store levels stay in as-stored units."""
    return cf.apply_efficiency(eta)
