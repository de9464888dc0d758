"""Benchmark problems with closed-form equilibria."""
from .common import mc_standard_error, relative_l2
from .consumption import ConsumptionParams, ConsumptionProblem, consumption_oracle
from .lq import LqParams, LqProblem, lq_oracle
from .portfolio import PortfolioParams, PortfolioProblem, portfolio_oracle

__all__ = [
    "ConsumptionParams", "ConsumptionProblem", "consumption_oracle",
    "LqParams", "LqProblem", "lq_oracle",
    "PortfolioParams", "PortfolioProblem", "portfolio_oracle",
    "mc_standard_error", "relative_l2",
]
