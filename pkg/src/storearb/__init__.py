"""Optimal control of energy storage for price arbitrage."""

from .cost_model import (
    CostFunction,
    PiecewiseLinearConvex,
    QuadraticImpact,
    RateLimits,
    TwoPriceLinear,
    apply_efficiency,
    evaluate,
    minimizer_interval,
    two_price,
)
from .solver import (
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

__version__ = "0.1.0"

__all__ = [
    "CostFunction",
    "MuCertificate",
    "Pin",
    "PiecewiseLinearConvex",
    "Problem",
    "QuadraticImpact",
    "RateLimits",
    "Schedule",
    "Tolerances",
    "TwoPriceLinear",
    "apply_efficiency",
    "classify_mu",
    "evaluate",
    "extract_segment",
    "find_mu_bar",
    "minimizer_interval",
    "objective",
    "solve",
    "two_price",
    "verify_certificate",
]
