"""Bundled vs. school-by-school broadband procurement: simulation and analysis.

The package has two halves. The auction half computes first-price equilibrium
bids with cost synergies and compares the two procurement formats by paired
Monte Carlo. The empirical half models school contract panels, estimates the
two-period participation effect, stress-tests it against trend violations,
and turns the estimates into expenditure and welfare bounds.
"""

__version__ = "0.1.0"

from .auction_sim import (
    AuctionOutcome,
    ScatterData,
    SimConfig,
    SimulationSummary,
    run_auction,
    run_grid,
    scatter_data,
)
from .distributions import (
    BundleCostDistribution,
    CostDistribution,
    convolve_bundle,
    make_truncated_exponential,
)
from .econometrics import (
    DiDEstimate,
    DiDSpec,
    RobustBound,
    design_matrix,
    did_estimate,
    ols,
    robust_bound,
    robust_grid,
)
from .equilibrium import (
    BidTable,
    MarketConfig,
    bundled_bid,
    decentralized_bid,
    standalone_markup,
)
from .errors import DomainError, NumericError, PanelParseError, PanelValidationError
from .panel_data import (
    Calibration,
    ContractPanel,
    ContractRecord,
    GroupStats,
    default_calibration,
    expenditure_calibrated_panel,
    load_contracts,
    save_contracts,
    synthesize_panel,
    welfare_sample,
)
from .policy_bounds import (
    CounterfactualGap,
    ExpenditureBounds,
    GapReport,
    WelfareBound,
    counterfactual_gap,
    expenditure_bounds,
    welfare_bounds,
    welfare_report,
)

__all__ = [
    "__version__",
    "AuctionOutcome", "ScatterData", "SimConfig", "SimulationSummary",
    "run_auction", "run_grid", "scatter_data",
    "BundleCostDistribution", "CostDistribution", "convolve_bundle",
    "make_truncated_exponential",
    "DiDEstimate", "DiDSpec", "RobustBound", "design_matrix", "did_estimate",
    "ols", "robust_bound", "robust_grid",
    "BidTable", "MarketConfig", "bundled_bid", "decentralized_bid",
    "standalone_markup",
    "DomainError", "NumericError", "PanelParseError", "PanelValidationError",
    "Calibration", "ContractPanel", "ContractRecord", "GroupStats",
    "default_calibration", "expenditure_calibrated_panel", "load_contracts",
    "save_contracts", "synthesize_panel", "welfare_sample",
    "CounterfactualGap", "ExpenditureBounds", "GapReport", "WelfareBound",
    "counterfactual_gap", "expenditure_bounds", "welfare_bounds",
    "welfare_report",
]
