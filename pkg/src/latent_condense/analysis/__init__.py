from .bounds import (
    BoundReport,
    DeviationReport,
    GroupDeviation,
    check_theorem1,
    measure_deviations,
    theorem1_bound,
)
from .cost import CostReport, cost_model, visible_fused_pairs
from .optimality import OptimalityReport, check_proposition1, expected_loss

__all__ = (
    "BoundReport",
    "CostReport",
    "DeviationReport",
    "GroupDeviation",
    "OptimalityReport",
    "check_proposition1",
    "check_theorem1",
    "cost_model",
    "expected_loss",
    "measure_deviations",
    "theorem1_bound",
    "visible_fused_pairs",
)
