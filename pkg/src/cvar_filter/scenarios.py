"""
Built-in scenarios and Monte Carlo evaluation of the safety filter.

Three cases on the step-to-step surrogate walking model:

- ``case1``: one axis, keep the forward position below ``px``
  (``h = px - c_x``), legacy law walking forward at constant speed.
- ``case2``: two axes, stay above the line ``c_y + k (c_x - p) >= 0``.
- ``case3``: two axes, keep ``-p1 <= c_y <= p2`` (minimum of two barriers)
  while the legacy law tracks a sinusoidal lateral reference.

Every rollout ``i`` draws its disturbances from
``rollout_rng(master_seed, i)``, so results do not depend on execution order
and adding rollouts leaves existing ones unchanged.
"""

from __future__ import annotations

import logging
import time
from collections import Counter
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np

from .barrier import DEFAULT_NODE_BUDGET, DEFAULT_VERIFY_TOLERANCE, NestedVerifyReport, nested_cvar_verify
from .qp import SolverSettings
from .risk import RiskLevel
from .safety_filter import (
    FilterRequest,
    FilterSettings,
    FilterSolverError,
    FilterStatus,
    TraceRecord,
    filter_rollout,
    solve_filter,
)
from .scenario_config import ScenarioConfig, ScenarioConfigError, apply_overrides
from .system import clip_control, rollout_rng

logger = logging.getLogger(__name__)


class CaseId(str, Enum):
    CASE1 = "case1"
    CASE2 = "case2"
    CASE3 = "case3"


CASE_PARAMETERS: dict[CaseId, dict[str, float]] = {
    CaseId.CASE1: {"px": 1.0},
    CaseId.CASE2: {"k": -0.5, "p": 2.0},
    CaseId.CASE3: {"p1": 2.0, "p2": 0.0},
}


def _axis(position_index: int, **kwargs: float) -> dict[str, float]:
    axis = {"position_index": position_index, "start": 0.0, "speed": 0.0, "amplitude": 0.0, "period": 20.0}
    return {**axis, "offset": 0.0, **kwargs}


def _base_document(name: str, axes: int) -> dict[str, Any]:
    n = 2 * axes
    return {
        "schema_version": 1,
        "name": name,
        "system": {
            "template": "s2s_surrogate",
            "params": {"axes": axes, "dt": 0.1, "decay": 0.5, "input_gain_position": 1.0, "input_gain_velocity": 0.5},
            "A": None,
            "B": None,
            "outcome_matrices": None,
            "u_lower": [-0.4] * axes,
            "u_upper": [0.4] * axes,
        },
        "disturbance": {
            "uniform": True,
            "w": None,
            "probs": None,
            "box": {"lower": [-0.05, -0.01] * axes, "upper": [0.05, 0.01] * axes, "count": 10, "seed": 7},
        },
        "cert": {"alpha": 0.9, "beta": 0.1},
        "x0": [0.0] * n,
        "steps": 25,
        "num_rollouts": 1000,
        "master_seed": 7,
        "method": "epigraph",
        "filter_enabled": True,
        "dccp": {"max_iters": 100, "stationarity_tol": 1e-7, "initial_point": "legacy", "tail": "lower_tail"},
    }


def _case_document(case: CaseId, params: dict[str, float]) -> dict[str, Any]:
    if case is CaseId.CASE1:
        doc = _base_document("case1", axes=1)
        doc["barrier"] = {"H": [-1.0, 0.0], "offset": params["px"]}
        doc["legacy_law"] = {"gain": 1.0, "axes": [_axis(0, speed=0.1)]}
        return doc
    if case is CaseId.CASE2:
        doc = _base_document("case2", axes=2)
        k, p = params["k"], params["p"]
        doc["barrier"] = {"H": [k, 0.0, 1.0, 0.0], "offset": -k * p}
        doc["legacy_law"] = {"gain": 1.0, "axes": [_axis(0, speed=0.1), _axis(2)]}
        return doc
    doc = _base_document("case3", axes=2)
    doc["barrier"] = {
        "min": [
            {"H": [0.0, 0.0, 1.0, 0.0], "offset": params["p1"]},
            {"H": [0.0, 0.0, -1.0, 0.0], "offset": params["p2"]},
        ]
    }
    doc["x0"] = [0.0, 0.0, -1.0, 0.0]
    doc["legacy_law"] = {
        "gain": 1.0,
        "axes": [_axis(0, speed=0.1), _axis(2, amplitude=2.0, period=20.0, offset=-0.5)],
    }
    return doc


def builtin_scenario(case_id: CaseId | str, overrides: dict[str, Any] | None = None) -> ScenarioConfig:
    """Scenario document for one of the built-in cases.

    ``overrides`` may set the case parameters (``px`` for case1, ``k``/``p``
    for case2, ``p1``/``p2`` for case3) or any document field by dotted path
    (``cert.beta``, ``disturbance.box.count``, ``legacy_law.axes.0.speed``).

    Raises:
        ScenarioConfigError: for an unknown case or override.
    """
    try:
        case = CaseId(str(case_id).lower())
    except ValueError as e:
        choices = [c.value for c in CaseId]
        raise ScenarioConfigError("case", f"unknown case {case_id!r}, expected one of {choices}") from e
    overrides = dict(overrides or {})
    params = dict(CASE_PARAMETERS[case])
    for key in list(overrides):
        if key in params:
            params[key] = float(overrides.pop(key))
    doc = apply_overrides(_case_document(case, params), overrides)
    return ScenarioConfig.from_dict(doc)


# =============================================================================
# MONTE CARLO
# =============================================================================


@dataclass(frozen=True)
class FailedRollout:
    rollout: int
    step: int
    message: str


@dataclass(frozen=True)
class ViolationReport:
    """Aggregate safety statistics over the rollouts of one scenario.

    A rollout violates safety when the barrier is negative at any visited
    state.  Failed rollouts (solver failures) have ``None`` as their minimum
    barrier value and count neither as safe nor as violating.
    """

    num_rollouts: int
    min_barrier: tuple[float | None, ...]
    violation_count: int
    violation_rate: float
    worst_rollout: int | None
    mean_interference: float | None
    mean_margin: float | None
    status_counts: dict[str, int]
    failed: tuple[FailedRollout, ...] = ()
    runtime_s: float = field(default=0.0, compare=False)
    traces: dict[int, list[TraceRecord]] | None = field(default=None, compare=False, repr=False)

    def to_dict(self) -> dict[str, Any]:
        return {
            "num_rollouts": self.num_rollouts,
            "min_barrier": list(self.min_barrier),
            "violation_count": self.violation_count,
            "violation_rate": self.violation_rate,
            "worst_rollout": self.worst_rollout,
            "mean_interference": self.mean_interference,
            "mean_margin": self.mean_margin,
            "status_counts": dict(self.status_counts),
            "failed": [{"rollout": f.rollout, "step": f.step, "message": f.message} for f in self.failed],
            "runtime_s": self.runtime_s,
        }


def rollout_min_barrier(trace: Sequence[TraceRecord]) -> float:
    """Smallest barrier value over every visited state, successors included."""
    return min(min(record.h, record.h_next) for record in trace)


def run_monte_carlo(
    cfg: ScenarioConfig,
    keep_traces: bool = False,
    settings: FilterSettings | None = None,
    solver_settings: SolverSettings | None = None,
    progress: Callable[[int, int], None] | None = None,
) -> ViolationReport:
    """Run ``cfg.num_rollouts`` closed-loop rollouts and aggregate violations.

    A solver failure ends its own rollout only; it is reported in ``failed``
    and the batch continues.
    """
    started = time.perf_counter()
    sys = cfg.system_model()
    barrier = cfg.barrier_expr()
    legacy = cfg.legacy_controller()

    minima: list[float | None] = []
    failed: list[FailedRollout] = []
    statuses: Counter[str] = Counter()
    interference: list[float] = []
    margins: list[float] = []
    traces: dict[int, list[TraceRecord]] = {}

    for index in range(cfg.num_rollouts):
        try:
            trace = filter_rollout(
                sys,
                barrier,
                cfg.cert,
                legacy,
                cfg.x0,
                cfg.steps,
                rollout_rng(cfg.master_seed, index),
                method=cfg.method,
                dccp_options=cfg.dccp,
                filter_enabled=cfg.filter_enabled,
                settings=settings,
                solver_settings=solver_settings,
            )
        except FilterSolverError as e:
            logger.warning("Rollout %d failed at step %d: %s", index, e.step, e)
            failed.append(FailedRollout(index, e.step, str(e)))
            minima.append(None)
        else:
            minima.append(rollout_min_barrier(trace))
            for record in trace:
                statuses[record.status.value] += 1
                interference.append(record.interference)
                margins.append(record.margin)
            if keep_traces:
                traces[index] = trace
        if progress is not None:
            progress(index + 1, cfg.num_rollouts)

    violating = [i for i, value in enumerate(minima) if value is not None and value < 0.0]
    completed = [(value, i) for i, value in enumerate(minima) if value is not None]
    report = ViolationReport(
        num_rollouts=cfg.num_rollouts,
        min_barrier=tuple(minima),
        violation_count=len(violating),
        violation_rate=len(violating) / cfg.num_rollouts,
        worst_rollout=min(completed)[1] if completed else None,
        mean_interference=float(np.mean(interference)) if interference else None,
        mean_margin=float(np.mean(margins)) if margins else None,
        status_counts=dict(sorted(statuses.items())),
        failed=tuple(failed),
        runtime_s=time.perf_counter() - started,
        traces=traces if keep_traces else None,
    )
    logger.info(
        "%s: %d/%d rollouts violated (rate %.4f), %d failed, %.2fs",
        cfg.name,
        report.violation_count,
        report.num_rollouts,
        report.violation_rate,
        len(failed),
        report.runtime_s,
    )
    return report


# =============================================================================
# BETA SWEEP
# =============================================================================


@dataclass(frozen=True)
class SweepRow:
    beta: float
    report: ViolationReport

    @property
    def violation_rate(self) -> float:
        return self.report.violation_rate

    @property
    def mean_interference(self) -> float | None:
        return self.report.mean_interference

    @property
    def mean_margin(self) -> float | None:
        return self.report.mean_margin


def parse_betas(text: str) -> list[float]:
    """Parse a comma-separated list of confidence levels, each strictly inside (0, 1).

    Raises:
        ValueError: if the list is empty or an entry is not a valid level.
    """
    items = [item.strip() for item in text.split(",") if item.strip()]
    if not items:
        raise ValueError("betas must not be empty")
    betas = []
    for item in items:
        try:
            value = float(item)
        except ValueError as e:
            raise ValueError(f"beta {item!r} is not a number") from e
        betas.append(RiskLevel(value).beta)
    return betas


def sweep_beta(
    cfg: ScenarioConfig,
    betas: Sequence[float],
    settings: FilterSettings | None = None,
    solver_settings: SolverSettings | None = None,
) -> list[SweepRow]:
    """One Monte Carlo report per ``beta``, all on the same random streams."""
    if not betas:
        raise ValueError("betas must not be empty")
    levels = [RiskLevel.of(beta).beta for beta in betas]
    rows = []
    for beta in levels:
        report = run_monte_carlo(cfg.with_beta(beta), settings=settings, solver_settings=solver_settings)
        logger.info("beta %.6g: violation rate %.4f", beta, report.violation_rate)
        rows.append(SweepRow(beta, report))
    return rows


# =============================================================================
# NESTED VERIFICATION
# =============================================================================


def scenario_policy(
    cfg: ScenarioConfig,
    policy: str = "filter",
    settings: FilterSettings | None = None,
    solver_settings: SolverSettings | None = None,
) -> Callable[[np.ndarray, int], np.ndarray]:
    """Control law ``(x, t) -> u``: the filtered legacy law, or the clipped legacy law alone."""
    sys = cfg.system_model()
    barrier = cfg.barrier_expr()
    legacy = cfg.legacy_controller()
    if policy == "legacy":
        return lambda x, t: clip_control(sys, legacy(x, t))
    if policy != "filter":
        raise ValueError(f"policy must be 'filter' or 'legacy', got {policy!r}")

    def filtered(x: np.ndarray, t: int) -> np.ndarray:
        request = FilterRequest(x, legacy(x, t), barrier, cfg.cert, cfg.method, cfg.dccp)
        result = solve_filter(request, sys, settings, solver_settings)
        if result.status is FilterStatus.SOLVER_FAILURE:
            raise FilterSolverError(t, result.message or "solver failure")
        return result.u_star

    return filtered


def verify_scenario(
    cfg: ScenarioConfig,
    horizon: int,
    policy: str = "filter",
    node_budget: int = DEFAULT_NODE_BUDGET,
    tolerance: float = DEFAULT_VERIFY_TOLERANCE,
    settings: FilterSettings | None = None,
    solver_settings: SolverSettings | None = None,
) -> NestedVerifyReport:
    """Exact nested CVaR check of ``cfg`` from ``x0`` over the full scenario tree."""
    law = scenario_policy(cfg, policy, settings, solver_settings)
    return nested_cvar_verify(
        cfg.barrier_expr(),
        cfg.system_model(),
        law,
        cfg.x0,
        cfg.cert,
        horizon,
        node_budget=node_budget,
        tolerance=tolerance,
    )

