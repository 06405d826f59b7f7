"""Estimating discrete distributions from many encoders that each send a few bits."""

from .core import (
    BudgetError,
    Distribution,
    ProtocolConfig,
    SampleMatrix,
    SharedRandomness,
    SubDistribution,
    Transcript,
    lp_loss,
    make_instance,
    sample,
)
from .harness import budget_audit, estimate_risk, run_protocol, scaling_slope, worst_case_risk
from .rates import classify_regime, lower_bound

__all__ = [
    "BudgetError",
    "Distribution",
    "ProtocolConfig",
    "SampleMatrix",
    "SharedRandomness",
    "SubDistribution",
    "Transcript",
    "budget_audit",
    "classify_regime",
    "estimate_risk",
    "lower_bound",
    "lp_loss",
    "make_instance",
    "run_protocol",
    "sample",
    "scaling_slope",
    "worst_case_risk",
]
