"""
cvar-filter - CVaR barrier-function safety filters for stochastic linear systems

Features:
- VaR and CVaR of finite distributions, in closed form and variationally
- Linear systems with finitely many disturbance outcomes
- Barrier functions with min/max/negation composition and exact nested CVaR verification
- A dense interior-point QP solver with infeasibility certificates
- Minimally interfering safety filters (exact epigraph QP and convex-concave procedure)
- Built-in walking scenarios, Monte Carlo violation statistics and confidence-level sweeps
"""

from ._version import __version__
from .barrier import (
    BarrierCertificate,
    LinearBarrier,
    MaxBarrier,
    MinBarrier,
    NegBarrier,
    nested_cvar_verify,
    one_step_cvar_margin,
)
from .qp import QpProblem, solve_qp
from .risk import FiniteDistribution, RiskLevel, TailConvention, cvar, expectation, var
from .safety_filter import FilterMethod, FilterRequest, FilterStatus, filter_rollout, solve_filter
from .scenario_config import ScenarioConfig, load_scenario
from .scenarios import builtin_scenario, run_monte_carlo, sweep_beta
from .system import LinearStochasticSystem, Outcome

__all__ = [
    "__version__",
    "BarrierCertificate",
    "FilterMethod",
    "FilterRequest",
    "FilterStatus",
    "FiniteDistribution",
    "LinearBarrier",
    "LinearStochasticSystem",
    "MaxBarrier",
    "MinBarrier",
    "NegBarrier",
    "Outcome",
    "QpProblem",
    "RiskLevel",
    "ScenarioConfig",
    "TailConvention",
    "builtin_scenario",
    "cvar",
    "expectation",
    "filter_rollout",
    "load_scenario",
    "nested_cvar_verify",
    "one_step_cvar_margin",
    "run_monte_carlo",
    "solve_filter",
    "solve_qp",
    "sweep_beta",
    "var",
]
