"""
Disturbance-dependent linear dynamics ``x+ = A(w) x + B(w) u + G(w)`` over a
finite disturbance set.
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .risk import FiniteDistribution, check_probabilities

logger = logging.getLogger(__name__)


class DimensionError(ValueError):
    """Raised when vectors or matrices do not match the system dimensions."""


class OutcomeIndexError(IndexError):
    """Raised when a disturbance outcome index is out of range."""


@dataclass(frozen=True, eq=False)
class Outcome:
    """Matrices of one disturbance outcome ``w_i``."""

    A: np.ndarray
    B: np.ndarray
    G: np.ndarray

    def __post_init__(self):
        A = np.array(self.A, dtype=float, ndmin=2)
        B = np.array(self.B, dtype=float)
        G = np.array(self.G, dtype=float).reshape(-1)
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionError(f"A must be square, got shape {A.shape}")
        if B.ndim == 1:
            B = B.reshape(n, -1)
        if B.ndim != 2 or B.shape[0] != n:
            raise DimensionError(f"B must have {n} rows, got shape {B.shape}")
        if G.shape != (n,):
            raise DimensionError(f"G must have length {n}, got {G.shape[0]}")
        for name, value in (("A", A), ("B", B), ("G", G)):
            if not np.all(np.isfinite(value)):
                raise DimensionError(f"{name} must be finite")
            value.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "G", G)


@dataclass(frozen=True, eq=False)
class LinearStochasticSystem:
    """Linear system with one ``(A_i, B_i, G_i)`` per disturbance outcome and box control bounds."""

    outcomes: tuple[Outcome, ...]
    probs: np.ndarray
    u_lower: np.ndarray
    u_upper: np.ndarray

    def __post_init__(self):
        outcomes = tuple(self.outcomes)
        if not outcomes:
            raise DimensionError("a system needs at least one disturbance outcome")
        n, m = outcomes[0].B.shape
        for i, outcome in enumerate(outcomes):
            if outcome.A.shape != (n, n) or outcome.B.shape != (n, m):
                raise DimensionError(
                    f"outcome {i} has A {outcome.A.shape}, B {outcome.B.shape}; expected ({n}, {n}) and ({n}, {m})"
                )
        probs = np.array(check_probabilities(self.probs, size=len(outcomes)))
        u_lower = np.array(self.u_lower, dtype=float).reshape(-1)
        u_upper = np.array(self.u_upper, dtype=float).reshape(-1)
        if u_lower.shape != (m,) or u_upper.shape != (m,):
            raise DimensionError(f"control bounds must have length {m}")
        if np.any(u_lower > u_upper):
            raise ValueError(f"u_lower must not exceed u_upper: {u_lower} > {u_upper}")
        for value in (probs, u_lower, u_upper):
            value.setflags(write=False)
        object.__setattr__(self, "outcomes", outcomes)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "u_lower", u_lower)
        object.__setattr__(self, "u_upper", u_upper)

    @classmethod
    def additive(
        cls,
        A,
        B,
        disturbances: Sequence[Sequence[float]],
        u_lower,
        u_upper,
        probs=None,
    ) -> LinearStochasticSystem:
        """Build ``x+ = A x + B u + w`` with ``G(w_i) = w_i`` (uniform when ``probs`` is None)."""
        outcomes = tuple(Outcome(A, B, w) for w in disturbances)
        if probs is None:
            probs = np.full(len(outcomes), 1.0 / max(len(outcomes), 1))
        return cls(outcomes, probs, u_lower, u_upper)

    @property
    def n(self) -> int:
        return self.outcomes[0].A.shape[0]

    @property
    def m(self) -> int:
        return self.outcomes[0].B.shape[1]

    @property
    def num_outcomes(self) -> int:
        return len(self.outcomes)

    @cached_property
    def A_stack(self) -> np.ndarray:
        return np.stack([o.A for o in self.outcomes])

    @cached_property
    def B_stack(self) -> np.ndarray:
        return np.stack([o.B for o in self.outcomes])

    @cached_property
    def G_stack(self) -> np.ndarray:
        return np.stack([o.G for o in self.outcomes])

    def check_state(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape != (self.n,):
            raise DimensionError(f"state must have length {self.n}, got {x.shape[0]}")
        return x

    def check_control(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float).reshape(-1)
        if u.shape != (self.m,):
            raise DimensionError(f"control must have length {self.m}, got {u.shape[0]}")
        return u


def step(sys: LinearStochasticSystem, x, u, outcome_index: int) -> np.ndarray:
    """Return ``A_i x + B_i u + G_i`` for outcome ``i``."""
    if not 0 <= outcome_index < sys.num_outcomes:
        raise OutcomeIndexError(f"outcome index {outcome_index} out of range [0, {sys.num_outcomes})")
    x = sys.check_state(x)
    u = sys.check_control(u)
    outcome = sys.outcomes[outcome_index]
    return outcome.A @ x + outcome.B @ u + outcome.G


def successors(sys: LinearStochasticSystem, x, u) -> np.ndarray:
    """All successor states, one row per outcome."""
    x = sys.check_state(x)
    u = sys.check_control(u)
    return sys.A_stack @ x + sys.B_stack @ u + sys.G_stack


def sample_outcome(sys: LinearStochasticSystem, rng: np.random.Generator) -> int:
    """Draw an outcome index with probability ``probs_i``."""
    draw = rng.random()
    index = int(np.searchsorted(np.cumsum(sys.probs), draw, side="right"))
    return min(index, sys.num_outcomes - 1)


def successor_value_distribution(
    sys: LinearStochasticSystem, x, u, value_fn: Callable[[np.ndarray], float]
) -> FiniteDistribution:
    """Distribution of ``value_fn(x+)`` over the disturbance outcomes (atoms not merged)."""
    values = [float(value_fn(row)) for row in successors(sys, x, u)]
    return FiniteDistribution(values, sys.probs)


def clip_control(sys: LinearStochasticSystem, u) -> np.ndarray:
    """Project ``u`` onto the control box."""
    return np.clip(sys.check_control(u), sys.u_lower, sys.u_upper)


def rollout_rng(master_seed: int, rollout_index: int) -> np.random.Generator:
    """Independent random stream for one rollout.

    The stream is ``PCG64(SeedSequence([master_seed, rollout_index]))``, so
    adding rollouts never changes the streams of existing ones.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(master_seed), int(rollout_index)])))
