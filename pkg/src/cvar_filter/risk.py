"""
Value-at-risk, conditional value-at-risk and expectation of finite distributions.

Two tail conventions are supported:

- ``LOWER_TAIL`` treats the variable as a gain (a safety value where small is
  bad) and averages the worst ``beta`` probability mass from below:
  ``sup_zeta { zeta - E[(zeta - h)_+] / beta }``.  This is the convention used
  by all safety machinery.
- ``UPPER_TAIL`` is the literal loss form ``inf_zeta E[zeta + (h - zeta)_+ / beta]``,
  which averages the largest ``beta`` probability mass.

Every CVaR value can be computed two ways: in closed form by sorting the atoms,
and variationally by evaluating the objective at every atom (the optimum of the
piecewise-linear objective is attained at an atom).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

logger = logging.getLogger(__name__)

PROB_SUM_TOL = 1e-12
LIMIT_BETA_LOW = 1e-9
LIMIT_BETA_HIGH = 1.0 - 1e-9


class DistributionError(ValueError):
    """Raised when values/probabilities do not form a valid finite distribution."""


class RiskLevelError(ValueError):
    """Raised when a confidence level is outside the open interval (0, 1)."""


class TailConvention(str, Enum):
    """Which tail of the distribution a CVaR value averages."""

    LOWER_TAIL = "lower_tail"
    UPPER_TAIL = "upper_tail"


@dataclass(frozen=True)
class RiskLevel:
    """Confidence level ``beta`` of a VaR/CVaR evaluation, strictly inside (0, 1)."""

    beta: float

    def __post_init__(self):
        beta = float(self.beta)
        if not (0.0 < beta < 1.0):
            raise RiskLevelError(f"beta must lie strictly between 0 and 1, got {self.beta}")
        object.__setattr__(self, "beta", beta)

    @classmethod
    def of(cls, value: RiskLevel | float) -> RiskLevel:
        """Coerce a float or an existing RiskLevel."""
        if isinstance(value, RiskLevel):
            return value
        return cls(value)

    def __float__(self) -> float:
        return self.beta


def check_probabilities(probs, size: int | None = None) -> np.ndarray:
    """Validate a probability vector and return it as a float array.

    Raises:
        DistributionError: on negative entries, empty vectors, length
            mismatch or a sum further than ``PROB_SUM_TOL`` from 1.
    """
    p = np.asarray(probs, dtype=float).reshape(-1)
    if p.size == 0:
        raise DistributionError("probs must contain at least one entry")
    if size is not None and p.size != size:
        raise DistributionError(f"probs has {p.size} entries, expected {size}")
    if not np.all(np.isfinite(p)):
        raise DistributionError("probs must be finite")
    if np.any(p < 0.0):
        raise DistributionError(f"probs must be nonnegative, got min {p.min()}")
    total = float(p.sum())
    if abs(total - 1.0) > PROB_SUM_TOL:
        raise DistributionError(f"probs must sum to 1, got {total!r}")
    return p


@dataclass(frozen=True, eq=False)
class FiniteDistribution:
    """Atoms of a real random variable together with their probabilities."""

    values: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(-1)
        if values.size == 0:
            raise DistributionError("a distribution needs at least one atom")
        if not np.all(np.isfinite(values)):
            raise DistributionError("values must be finite")
        probs = np.array(check_probabilities(self.probs, size=values.size))
        values.setflags(write=False)
        probs.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def uniform(cls, values) -> FiniteDistribution:
        values = np.asarray(values, dtype=float).reshape(-1)
        return cls(values, np.full(values.size, 1.0 / max(values.size, 1)))

    def __len__(self) -> int:
        return int(self.values.size)

    def merged(self) -> FiniteDistribution:
        """Return the distribution with sorted unique atoms, tied probabilities summed."""
        unique, inverse = np.unique(self.values, return_inverse=True)
        probs = np.zeros(unique.size)
        np.add.at(probs, inverse.reshape(-1), self.probs)
        return FiniteDistribution(unique, probs)

    def shifted(self, c: float) -> FiniteDistribution:
        return FiniteDistribution(self.values + c, self.probs)

    def scaled(self, lam: float) -> FiniteDistribution:
        return FiniteDistribution(self.values * lam, self.probs)

    def support_min(self) -> float:
        return float(self.values[self.probs > 0].min())

    def support_max(self) -> float:
        return float(self.values[self.probs > 0].max())


def expectation(d: FiniteDistribution) -> float:
    """Return ``sum(p_i * h_i)``."""
    return float(np.dot(d.probs, d.values))


def var(d: FiniteDistribution, beta: RiskLevel | float) -> float:
    """Lower beta-quantile: the smallest atom v with ``P(h <= v) >= beta``."""
    b = RiskLevel.of(beta).beta
    m = d.merged()
    cumulative = np.cumsum(m.probs)
    index = int(np.searchsorted(cumulative, b - PROB_SUM_TOL, side="left"))
    return float(m.values[min(index, m.values.size - 1)])


def _lower_tail_average(values: np.ndarray, probs: np.ndarray, beta: float) -> float:
    """Average of the lowest ``beta`` mass, splitting the boundary atom."""
    m = FiniteDistribution(values, probs).merged()
    cumulative = np.cumsum(m.probs)
    k = min(int(np.searchsorted(cumulative, beta - PROB_SUM_TOL, side="left")), m.values.size - 1)
    below = float(np.dot(m.probs[:k], m.values[:k]))
    mass_below = float(cumulative[k - 1]) if k > 0 else 0.0
    return (below + (beta - mass_below) * float(m.values[k])) / beta


def cvar_sorted(
    d: FiniteDistribution, beta: RiskLevel | float, tail: TailConvention = TailConvention.LOWER_TAIL
) -> float:
    """Closed-form CVaR by sorting atoms and averaging the tail mass."""
    b = RiskLevel.of(beta).beta
    if tail is TailConvention.LOWER_TAIL:
        return _lower_tail_average(d.values, d.probs, b)
    return -_lower_tail_average(-d.values, d.probs, b)


def cvar_variational(
    d: FiniteDistribution, beta: RiskLevel | float, tail: TailConvention = TailConvention.LOWER_TAIL
) -> float:
    """CVaR from the variational form, optimizing zeta over the atoms."""
    b = RiskLevel.of(beta).beta
    zeta = d.values[:, None]
    h = d.values[None, :]
    if tail is TailConvention.LOWER_TAIL:
        objective = d.values - np.maximum(zeta - h, 0.0) @ d.probs / b
        return float(objective.max())
    objective = d.values + np.maximum(h - zeta, 0.0) @ d.probs / b
    return float(objective.min())


def cvar(d: FiniteDistribution, beta: RiskLevel | float, tail: TailConvention = TailConvention.LOWER_TAIL) -> float:
    """CVaR of ``d`` at level ``beta``.

    The lower tail is evaluated in closed form; the upper (literal) tail is
    evaluated variationally.  Both results lie within ``[min(values), max(values)]``.
    """
    if tail is TailConvention.LOWER_TAIL:
        return cvar_sorted(d, beta, tail)
    return cvar_variational(d, beta, tail)


@dataclass(frozen=True)
class LimitsReport:
    """Residuals of the risk-neutral and worst-case limits of lower-tail CVaR."""

    expectation: float
    minimum: float
    risk_neutral_value: float
    worst_case_value: float
    expectation_residual: float
    minimum_residual: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.expectation_residual <= self.tolerance and self.minimum_residual <= self.tolerance


def cvar_limits_check(d: FiniteDistribution) -> LimitsReport:
    """Compare CVaR near beta=1 with the mean and near beta=0 with the smallest atom."""
    mean = expectation(d)
    minimum = d.support_min()
    neutral = cvar(d, LIMIT_BETA_HIGH, TailConvention.LOWER_TAIL)
    worst = cvar(d, LIMIT_BETA_LOW, TailConvention.LOWER_TAIL)
    report = LimitsReport(
        expectation=mean,
        minimum=minimum,
        risk_neutral_value=neutral,
        worst_case_value=worst,
        expectation_residual=abs(neutral - mean),
        minimum_residual=abs(worst - minimum),
        tolerance=1e-6 * (1.0 + abs(mean)),
    )
    logger.debug("limits check: %s", report)
    return report
