"""
Barrier functions and CVaR barrier conditions.

A barrier expression is a tree of linear atoms ``h(x) = H x + offset`` combined
with ``Min`` (conjunction of safe sets), ``Max`` (disjunction) and ``Neg``.  The
safe set is ``{x | h(x) >= 0}``.

Barrier trees serialize to plain dicts for scenario documents::

    {"H": [-1.0, 0.0], "offset": 1.0}
    {"min": [{...}, {...}]}
    {"max": [{...}, {...}]}
    {"neg": {...}}
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np

from .risk import FiniteDistribution, RiskLevel, TailConvention, cvar
from .system import LinearStochasticSystem, successor_value_distribution, successors

logger = logging.getLogger(__name__)

DEFAULT_NODE_BUDGET = 1_000_000
DEFAULT_VERIFY_TOLERANCE = 1e-9


class BarrierError(ValueError):
    """Raised for malformed barrier expressions or certificates."""


class TreeBudgetError(RuntimeError):
    """Raised when an exhaustive scenario tree would exceed the node budget."""

    def __init__(self, required: int, budget: int):
        self.required = required
        self.budget = budget
        super().__init__(f"scenario tree needs {required} leaves, budget is {budget}")


@dataclass(frozen=True, eq=False)
class LinearBarrier:
    """Affine barrier atom ``h(x) = H x + offset``."""

    H: np.ndarray
    offset: float

    def __post_init__(self):
        H = np.array(self.H, dtype=float).reshape(-1)
        if H.size == 0 or not np.all(np.isfinite(H)):
            raise BarrierError("H must be a nonempty finite row vector")
        if not np.any(H):
            raise BarrierError("H must not be all-zero (a constant barrier is degenerate)")
        H.setflags(write=False)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "offset", float(self.offset))

    def negated(self) -> LinearBarrier:
        return LinearBarrier(-self.H, -self.offset)


@dataclass(frozen=True, eq=False)
class MinBarrier:
    """Pointwise minimum of its children (intersection of safe sets)."""

    children: tuple[BarrierExpr, ...]

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if not self.children:
            raise BarrierError("min composition needs at least one child")


@dataclass(frozen=True, eq=False)
class MaxBarrier:
    """Pointwise maximum of its children (union of safe sets)."""

    children: tuple[BarrierExpr, ...]

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if not self.children:
            raise BarrierError("max composition needs at least one child")


@dataclass(frozen=True, eq=False)
class NegBarrier:
    """``-h`` of its child."""

    child: BarrierExpr


BarrierExpr = LinearBarrier | MinBarrier | MaxBarrier | NegBarrier


class CompositionMode(str, Enum):
    CONJUNCTION = "conjunction"
    DISJUNCTION = "disjunction"


@dataclass(frozen=True)
class BarrierCertificate:
    """Decay rate ``alpha`` and confidence level ``beta`` of a CVaR barrier condition."""

    alpha: float
    beta: RiskLevel

    def __post_init__(self):
        alpha = float(self.alpha)
        if not (0.0 < alpha < 1.0):
            raise BarrierError(f"alpha must lie strictly between 0 and 1, got {self.alpha}")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", RiskLevel.of(self.beta))

    def to_dict(self) -> dict[str, float]:
        return {"alpha": self.alpha, "beta": self.beta.beta}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> BarrierCertificate:
        return cls(alpha=data["alpha"], beta=data["beta"])


# =============================================================================
# EVALUATION
# =============================================================================


def dimension(b: BarrierExpr) -> int:
    """State dimension of an expression; all leaves must agree."""
    if isinstance(b, LinearBarrier):
        return b.H.size
    if isinstance(b, NegBarrier):
        return dimension(b.child)
    sizes = {dimension(child) for child in b.children}
    if len(sizes) != 1:
        raise BarrierError(f"leaves disagree on state dimension: {sorted(sizes)}")
    return sizes.pop()


def evaluate(b: BarrierExpr, x) -> float:
    """Barrier value at ``x``; ``x`` is in the safe set iff the result is ``>= 0``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if isinstance(b, LinearBarrier):
        if x.shape != b.H.shape:
            raise BarrierError(f"state has length {x.size}, barrier expects {b.H.size}")
        return float(b.H @ x + b.offset)
    if isinstance(b, MinBarrier):
        return min(evaluate(child, x) for child in b.children)
    if isinstance(b, MaxBarrier):
        return max(evaluate(child, x) for child in b.children)
    if isinstance(b, NegBarrier):
        return -evaluate(b.child, x)
    raise BarrierError(f"unknown barrier node {type(b).__name__}")


def negate_to_leaves(b: BarrierExpr) -> BarrierExpr:
    """Equivalent expression without ``Neg`` nodes (negation pushed into the atoms)."""
    if isinstance(b, LinearBarrier):
        return b
    if isinstance(b, MinBarrier):
        return MinBarrier(tuple(negate_to_leaves(c) for c in b.children))
    if isinstance(b, MaxBarrier):
        return MaxBarrier(tuple(negate_to_leaves(c) for c in b.children))
    return _negated(b.child)


def _negated(b: BarrierExpr) -> BarrierExpr:
    if isinstance(b, LinearBarrier):
        return b.negated()
    if isinstance(b, MinBarrier):
        return MaxBarrier(tuple(_negated(c) for c in b.children))
    if isinstance(b, MaxBarrier):
        return MinBarrier(tuple(_negated(c) for c in b.children))
    return negate_to_leaves(b.child)


def barrier_to_dict(b: BarrierExpr) -> dict[str, Any]:
    if isinstance(b, LinearBarrier):
        return {"H": [float(v) for v in b.H], "offset": b.offset}
    if isinstance(b, MinBarrier):
        return {"min": [barrier_to_dict(c) for c in b.children]}
    if isinstance(b, MaxBarrier):
        return {"max": [barrier_to_dict(c) for c in b.children]}
    return {"neg": barrier_to_dict(b.child)}


def barrier_from_dict(data: dict[str, Any]) -> BarrierExpr:
    if not isinstance(data, dict):
        raise BarrierError(f"barrier node must be a mapping, got {type(data).__name__}")
    if "H" in data:
        unknown = set(data) - {"H", "offset"}
        if unknown:
            raise BarrierError(f"unknown barrier keys: {sorted(unknown)}")
        return LinearBarrier(data["H"], data.get("offset", 0.0))
    if len(data) != 1:
        raise BarrierError(f"composite barrier node needs exactly one of min/max/neg, got {sorted(data)}")
    kind, value = next(iter(data.items()))
    if kind == "min":
        return MinBarrier(tuple(barrier_from_dict(c) for c in value))
    if kind == "max":
        return MaxBarrier(tuple(barrier_from_dict(c) for c in value))
    if kind == "neg":
        return NegBarrier(barrier_from_dict(value))
    raise BarrierError(f"unknown barrier node kind: {kind}")


# =============================================================================
# ONE-STEP CONDITION
# =============================================================================


def one_step_cvar_margin(
    b: BarrierExpr,
    sys: LinearStochasticSystem,
    x,
    u,
    cert: BarrierCertificate,
    tail: TailConvention = TailConvention.LOWER_TAIL,
) -> float:
    """``CVaR_beta(h(x+)) - alpha * h(x)``; nonnegative iff the barrier condition holds at ``(x, u)``."""
    distribution = successor_value_distribution(sys, x, u, lambda state: evaluate(b, state))
    return cvar(distribution, cert.beta, tail) - cert.alpha * evaluate(b, x)


def composite_condition_check(
    bs: Sequence[LinearBarrier],
    mode: CompositionMode,
    sys: LinearStochasticSystem,
    x,
    u,
    cert: BarrierCertificate,
) -> float:
    """Barrier-condition margin of the min (conjunction) or max (disjunction) of ``bs``."""
    if not bs:
        raise BarrierError("composite condition needs at least one barrier")
    tree = MinBarrier(tuple(bs)) if CompositionMode(mode) is CompositionMode.CONJUNCTION else MaxBarrier(tuple(bs))
    return one_step_cvar_margin(tree, sys, x, u, cert)


# =============================================================================
# NESTED CVaR OVER THE SCENARIO TREE
# =============================================================================


@dataclass(frozen=True)
class NestedCvarRow:
    t: int
    nested: float
    bound: float
    holds: bool


@dataclass(frozen=True)
class NestedVerifyReport:
    rows: tuple[NestedCvarRow, ...]
    min_one_step_margin: float | None
    nodes: int
    tolerance: float = DEFAULT_VERIFY_TOLERANCE

    @property
    def all_hold(self) -> bool:
        return all(row.holds for row in self.rows)


@dataclass
class _TreeWalk:
    barrier: BarrierExpr
    sys: LinearStochasticSystem
    policy: Callable[[np.ndarray, int], Any]
    cert: BarrierCertificate
    branches: np.ndarray
    nodes: int = 0
    min_margin: float | None = None
    probs: np.ndarray = field(init=False)

    def __post_init__(self):
        self.probs = self.sys.probs[self.branches]

    def values(self, x: np.ndarray, t: int, depth: int) -> np.ndarray:
        """Nested CVaR of ``h`` ``k`` steps ahead for ``k = 0..depth``, seen from ``x``."""
        self.nodes += 1
        result = np.empty(depth + 1)
        result[0] = evaluate(self.barrier, x)
        if depth == 0:
            return result
        u = np.asarray(self.policy(x, t), dtype=float).reshape(-1)
        children = successors(self.sys, x, u)[self.branches]
        child_values = np.array([self.values(child, t + 1, depth - 1) for child in children])
        for k in range(1, depth + 1):
            result[k] = cvar(FiniteDistribution(child_values[:, k - 1], self.probs), self.cert.beta)
        margin = result[1] - self.cert.alpha * result[0]
        if self.min_margin is None or margin < self.min_margin:
            self.min_margin = float(margin)
        return result


def nested_cvar_verify(
    b: BarrierExpr,
    sys: LinearStochasticSystem,
    policy: Callable[[np.ndarray, int], Any],
    x0,
    cert: BarrierCertificate,
    horizon: int,
    node_budget: int = DEFAULT_NODE_BUDGET,
    tolerance: float = DEFAULT_VERIFY_TOLERANCE,
) -> NestedVerifyReport:
    """Exact nested CVaR of ``h(x^t)`` for every ``t <= horizon`` against ``alpha^t h(x0)``.

    The whole disturbance scenario tree is expanded; outcomes with zero
    probability are not expanded.  ``policy(x, t)`` supplies the control at
    every node.

    Raises:
        TreeBudgetError: if the tree would have more than ``node_budget`` leaves.
    """
    if horizon < 0:
        raise ValueError(f"horizon must be nonnegative, got {horizon}")
    branches = np.flatnonzero(sys.probs > 0)
    required = int(branches.size) ** int(horizon)
    if required > node_budget:
        raise TreeBudgetError(required, node_budget)
    x0 = sys.check_state(x0)

    walk = _TreeWalk(b, sys, policy, cert, branches)
    nested = walk.values(x0, 0, horizon)
    h0 = nested[0]
    rows = []
    for t in range(horizon + 1):
        bound = cert.alpha**t * h0
        holds = bool(nested[t] >= bound - tolerance)
        rows.append(NestedCvarRow(t=t, nested=float(nested[t]), bound=float(bound), holds=holds))
    logger.info("nested CVaR verification: %d nodes, horizon %d", walk.nodes, horizon)
    return NestedVerifyReport(
        rows=tuple(rows), min_one_step_margin=walk.min_margin, nodes=walk.nodes, tolerance=tolerance
    )
