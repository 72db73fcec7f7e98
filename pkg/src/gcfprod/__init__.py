"""Production function and markup estimation with a generalized control
function and an orthogonalized GMM moment, plus the simulator used to
study it."""
from .ces import DemandState, StructuralParams
from .dgp import DGPConfig, FirmPanel, simulate_panel
from .gcf import EstimateOptions, EstimationResult, InstrumentPlan, estimate
from .baseline import BaselineConfig, estimate_baseline

__all__ = [
    "BaselineConfig", "DGPConfig", "DemandState", "EstimateOptions", "EstimationResult",
    "FirmPanel", "InstrumentPlan", "StructuralParams", "estimate", "estimate_baseline",
    "simulate_panel",
]
