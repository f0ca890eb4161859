"""
Minimally interfering CVaR safety filter.

Given a state ``x``, a legacy control ``u_legacy`` and a barrier ``h``, find the
control closest to ``u_legacy`` (in squared Euclidean distance) within the
control box such that ``CVaR_beta(h(x+)) >= alpha * h(x)``.

Two methods are provided:

- ``EPIGRAPH``: the lower-tail CVaR constraint written with auxiliary variables
  ``zeta`` and ``s_i``, giving one convex QP whose solution is exact.
- ``DCCP``: the convex-concave procedure.  With the upper-tail convention the
  constraint ``alpha h(x) - q4(zeta, u) <= 0`` with
  ``q4 = zeta + 1/beta sum_i p_i (h_i(u) - zeta)_+`` is nonconvex; ``q4`` is
  replaced by its supporting affine minorant at the current iterate and the
  resulting QP is solved until the control stops moving.  With the lower-tail
  convention there is no concave term and the procedure ends after one exact
  subproblem.

Whatever the method, the reported ``margin`` is recomputed by
:func:`cvar_filter.barrier.one_step_cvar_margin` and decides whether a result
is ``SAFE``.
"""

from __future__ import annotations

import logging
from collections.abc import Callable
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np

from .barrier import (
    BarrierCertificate,
    BarrierExpr,
    LinearBarrier,
    MaxBarrier,
    MinBarrier,
    evaluate,
    negate_to_leaves,
    one_step_cvar_margin,
)
from .qp import QpProblem, QpStatus, SolverSettings, solve_qp
from .risk import FiniteDistribution, TailConvention, var
from .system import LinearStochasticSystem, clip_control, sample_outcome, step

logger = logging.getLogger(__name__)

INITIAL_POINT_RULES = ("legacy", "center")


class UnsupportedBarrierError(ValueError):
    """Raised when a barrier tree cannot be handled by the selected method."""


class FilterSolverError(RuntimeError):
    """Raised by a rollout when the QP solver fails; carries the step index."""

    def __init__(self, step: int, message: str):
        self.step = step
        super().__init__(f"step {step}: {message}")


class FilterMethod(str, Enum):
    EPIGRAPH = "epigraph"
    DCCP = "dccp"


class FilterStatus(str, Enum):
    SAFE = "safe"
    UNSAFE = "unsafe"
    INFEASIBLE_FALLBACK = "infeasible_fallback"
    SOLVER_FAILURE = "solver_failure"
    UNFILTERED = "unfiltered"


@dataclass(frozen=True)
class FilterSettings:
    """Tolerances of the filter itself (solver tolerances live in SolverSettings)."""

    safe_margin_tol: float = 1e-7
    backoff: float = 1e-8
    fallback_interference_weight: float = 1e-6


@dataclass(frozen=True)
class DccpOptions:
    max_iters: int = 100
    stationarity_tol: float = 1e-7
    initial_point: str = "legacy"
    tail: TailConvention = TailConvention.LOWER_TAIL

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be at least 1, got {self.max_iters}")
        if self.stationarity_tol <= 0:
            raise ValueError(f"stationarity_tol must be positive, got {self.stationarity_tol}")
        if self.initial_point not in INITIAL_POINT_RULES:
            raise ValueError(f"initial_point must be one of {INITIAL_POINT_RULES}, got {self.initial_point!r}")
        object.__setattr__(self, "tail", TailConvention(self.tail))

    def to_dict(self) -> dict[str, Any]:
        return {
            "max_iters": self.max_iters,
            "stationarity_tol": self.stationarity_tol,
            "initial_point": self.initial_point,
            "tail": self.tail.value,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> DccpOptions:
        defaults = cls()
        return cls(
            max_iters=int(data.get("max_iters", defaults.max_iters)),
            stationarity_tol=float(data.get("stationarity_tol", defaults.stationarity_tol)),
            initial_point=str(data.get("initial_point", defaults.initial_point)),
            tail=TailConvention(data.get("tail", defaults.tail)),
        )


@dataclass(frozen=True, eq=False)
class FilterRequest:
    x: np.ndarray
    u_legacy: np.ndarray
    barrier: BarrierExpr
    cert: BarrierCertificate
    method: FilterMethod = FilterMethod.EPIGRAPH
    dccp_options: DccpOptions = field(default_factory=DccpOptions)

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float).reshape(-1))
        object.__setattr__(self, "u_legacy", np.asarray(self.u_legacy, dtype=float).reshape(-1))
        object.__setattr__(self, "method", FilterMethod(self.method))


@dataclass(frozen=True, eq=False)
class DccpIterate:
    """One convex subproblem of the convex-concave procedure."""

    u: np.ndarray
    zeta: float
    objective: float
    linearized_residual: float
    surrogate_margin: float


@dataclass(eq=False)
class FilterResult:
    u_star: np.ndarray
    zeta_star: float
    status: FilterStatus
    objective: float
    margin: float
    iterations: int
    upper_tail_margin: float
    conservative: bool = False
    history: tuple[DccpIterate, ...] = ()
    message: str = ""


@dataclass(eq=False)
class TraceRecord:
    """One simulated step."""

    t: int
    x: np.ndarray
    u_legacy: np.ndarray
    u: np.ndarray
    h: float
    margin: float
    status: FilterStatus
    h_next: float

    @property
    def interference(self) -> float:
        return float(np.sum((self.u - self.u_legacy) ** 2))


# =============================================================================
# BARRIER LOWERING
# =============================================================================


@dataclass(frozen=True)
class LoweredBarrier:
    """Conjunction of linear atoms enforced in place of a barrier tree."""

    atoms: tuple[LinearBarrier, ...]
    conservative: bool


def lower_barrier(expr: BarrierExpr, x) -> LoweredBarrier:
    """Rewrite ``expr`` as a minimum of linear atoms.

    Negations are pushed to the leaves and nested minima flattened.  Every
    maximum is replaced by its branch that is largest at ``x``; this keeps the
    value at ``x`` and only shrinks the successor value, so the lowered
    condition implies the original one (the result is flagged conservative).
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    atoms, conservative = _lower(negate_to_leaves(expr), x)
    return LoweredBarrier(tuple(atoms), conservative)


def _lower(expr: BarrierExpr, x: np.ndarray) -> tuple[list[LinearBarrier], bool]:
    if isinstance(expr, LinearBarrier):
        return [expr], False
    if isinstance(expr, MinBarrier):
        atoms: list[LinearBarrier] = []
        conservative = False
        for child in expr.children:
            child_atoms, child_conservative = _lower(child, x)
            atoms.extend(child_atoms)
            conservative = conservative or child_conservative
        return atoms, conservative
    if isinstance(expr, MaxBarrier):
        values = [evaluate(child, x) for child in expr.children]
        chosen = int(np.argmax(values))
        atoms, child_conservative = _lower(expr.children[chosen], x)
        return atoms, child_conservative or len(expr.children) > 1
    raise UnsupportedBarrierError(f"cannot lower barrier node {type(expr).__name__}")


# =============================================================================
# EPIGRAPH QP
# =============================================================================


@dataclass(frozen=True, eq=False)
class _Successors:
    """Per-outcome successor values ``h_k(x+_i) = const[k, i] + coef[k, i] @ u`` over positive-probability outcomes."""

    probs: np.ndarray
    const: np.ndarray
    coef: np.ndarray


def _successor_terms(sys: LinearStochasticSystem, x: np.ndarray, atoms: tuple[LinearBarrier, ...]) -> _Successors:
    keep = np.flatnonzero(sys.probs > 0)
    drift = (sys.A_stack @ x + sys.G_stack)[keep]
    H = np.stack([atom.H for atom in atoms])
    offsets = np.array([atom.offset for atom in atoms])
    const = H @ drift.T + offsets[:, None]
    coef = np.einsum("kn,inm->kim", H, sys.B_stack[keep])
    return _Successors(sys.probs[keep], const, coef)


def _epigraph_arrays(
    req: FilterRequest,
    sys: LinearStochasticSystem,
    lowered: LoweredBarrier,
    backoff: float,
    relax_weight: float | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Epigraph QP data; with ``relax_weight`` the CVaR row gets a slack ``delta`` penalized by ``delta^2``.

    Variables are ``(u, zeta, s_1..s_N[, m_1..m_N][, delta])``; the ``m_i``
    carry the minimum over atoms when there is more than one atom.
    """
    m = sys.m
    terms = _successor_terms(sys, req.x, lowered.atoms)
    K, N = terms.const.shape
    beta = req.cert.beta.beta
    alpha_h = req.cert.alpha * evaluate(req.barrier, req.x)

    i_zeta = m
    i_s = m + 1
    i_m = i_s + N
    width = i_m + (N if K > 1 else 0)
    i_delta = width
    if relax_weight is not None:
        width += 1

    rows: list[np.ndarray] = []
    rhs: list[float] = []

    def row() -> np.ndarray:
        r = np.zeros(width)
        rows.append(r)
        return r

    for j in range(m):
        row()[j] = 1.0
        rhs.append(sys.u_upper[j])
    for j in range(m):
        row()[j] = -1.0
        rhs.append(-sys.u_lower[j])
    for i in range(N):
        row()[i_s + i] = -1.0
        rhs.append(0.0)
    if K == 1:
        for i in range(N):
            r = row()
            r[:m] = -terms.coef[0, i]
            r[i_zeta] = 1.0
            r[i_s + i] = -1.0
            rhs.append(terms.const[0, i])
    else:
        for k in range(K):
            for i in range(N):
                r = row()
                r[:m] = -terms.coef[k, i]
                r[i_m + i] = 1.0
                rhs.append(terms.const[k, i])
        for i in range(N):
            r = row()
            r[i_zeta] = 1.0
            r[i_m + i] = -1.0
            r[i_s + i] = -1.0
            rhs.append(0.0)
    r = row()
    r[i_zeta] = -1.0
    r[i_s : i_s + N] = terms.probs / beta
    if relax_weight is not None:
        r[i_delta] = -1.0
    rhs.append(-alpha_h - backoff)
    if relax_weight is not None:
        row()[i_delta] = -1.0
        rhs.append(0.0)

    weight = 1.0 if relax_weight is None else relax_weight
    P = np.zeros((width, width))
    P[:m, :m] = 2.0 * weight * np.eye(m)
    q = np.zeros(width)
    q[:m] = -2.0 * weight * req.u_legacy
    if relax_weight is not None:
        P[i_delta, i_delta] = 2.0
    return P, q, np.vstack(rows), np.array(rhs)


def build_epigraph_qp(
    req: FilterRequest, sys: LinearStochasticSystem, settings: FilterSettings | None = None
) -> QpProblem:
    """Convex QP whose optimal ``u`` is the minimally interfering lower-tail CVaR-safe control.

    For a single linear atom and ``N`` positive-probability outcomes the QP has
    ``m + 1 + N`` variables and ``2m + 2N + 1`` constraints.  Outcomes with
    zero probability add no rows or variables, so ``N = |W|`` exactly when
    every disturbance outcome carries mass.
    """
    settings = settings or FilterSettings()
    lowered = lower_barrier(req.barrier, req.x)
    return QpProblem(*_epigraph_arrays(req, sys, lowered, settings.backoff))


# =============================================================================
# SOLVING
# =============================================================================


def _margins(req: FilterRequest, sys: LinearStochasticSystem, u: np.ndarray) -> tuple[float, float]:
    lower = one_step_cvar_margin(req.barrier, sys, req.x, u, req.cert)
    upper = one_step_cvar_margin(req.barrier, sys, req.x, u, req.cert, TailConvention.UPPER_TAIL)
    return lower, upper


def _finish(
    req: FilterRequest,
    sys: LinearStochasticSystem,
    u: np.ndarray,
    zeta: float,
    iterations: int,
    settings: FilterSettings,
    *,
    status: FilterStatus | None = None,
    conservative: bool = False,
    history: tuple[DccpIterate, ...] = (),
    message: str = "",
) -> FilterResult:
    u = clip_control(sys, u)
    margin, upper = _margins(req, sys, u)
    if status is None:
        status = FilterStatus.SAFE if margin >= -settings.safe_margin_tol else FilterStatus.UNSAFE
    if status is FilterStatus.UNSAFE:
        logger.warning("filtered control fails the barrier check (margin %.3g)", margin)
    return FilterResult(
        u_star=u,
        zeta_star=float(zeta),
        status=status,
        objective=float(np.sum((u - req.u_legacy) ** 2)),
        margin=float(margin),
        iterations=iterations,
        upper_tail_margin=float(upper),
        conservative=conservative,
        history=history,
        message=message,
    )


def _successor_var(req: FilterRequest, sys: LinearStochasticSystem, u: np.ndarray) -> float:
    values = [evaluate(req.barrier, step(sys, req.x, u, i)) for i in range(sys.num_outcomes)]
    return var(FiniteDistribution(values, sys.probs), req.cert.beta)


def _fallback(
    req: FilterRequest,
    sys: LinearStochasticSystem,
    lowered: LoweredBarrier,
    settings: FilterSettings,
    solver_settings: SolverSettings,
    iterations: int,
) -> FilterResult:
    """Control minimizing the violation of the CVaR condition, clipped to the bounds."""
    qp = QpProblem(
        *_epigraph_arrays(req, sys, lowered, settings.backoff, relax_weight=settings.fallback_interference_weight)
    )
    solution = solve_qp(qp, solver_settings)
    if solution.status is not QpStatus.OPTIMAL:
        return _finish(
            req,
            sys,
            req.u_legacy,
            np.nan,
            iterations + solution.iterations,
            settings,
            status=FilterStatus.SOLVER_FAILURE,
            conservative=lowered.conservative,
            message=f"violation-minimizing fallback ended with {solution.status.value}",
        )
    result = _finish(
        req,
        sys,
        solution.z_star[: sys.m],
        solution.z_star[sys.m],
        iterations + solution.iterations,
        settings,
        status=FilterStatus.INFEASIBLE_FALLBACK,
        conservative=lowered.conservative,
        message="no control satisfies the CVaR barrier condition",
    )
    logger.info("no safe control exists; fallback margin %.3g", result.margin)
    return result


def _solve_epigraph(
    req: FilterRequest,
    sys: LinearStochasticSystem,
    lowered: LoweredBarrier,
    settings: FilterSettings,
    solver_settings: SolverSettings,
) -> FilterResult:
    qp = QpProblem(*_epigraph_arrays(req, sys, lowered, settings.backoff))
    solution = solve_qp(qp, solver_settings)
    if solution.status is QpStatus.INFEASIBLE:
        return _fallback(req, sys, lowered, settings, solver_settings, solution.iterations)
    if solution.status is not QpStatus.OPTIMAL:
        return _finish(
            req,
            sys,
            req.u_legacy,
            np.nan,
            solution.iterations,
            settings,
            status=FilterStatus.SOLVER_FAILURE,
            conservative=lowered.conservative,
            message=f"epigraph QP ended with {solution.status.value}",
        )
    z = solution.z_star
    u = z[: sys.m]
    history = ()
    if req.method is FilterMethod.DCCP:
        cvar_row = qp.G[-1] @ z - qp.g[-1]
        surrogate = -(qp.G[-1] @ z) - req.cert.alpha * evaluate(req.barrier, req.x)
        history = (
            DccpIterate(
                u=u.copy(),
                zeta=float(z[sys.m]),
                objective=float(np.sum((u - req.u_legacy) ** 2)),
                linearized_residual=float(cvar_row),
                surrogate_margin=float(surrogate),
            ),
        )
    return _finish(
        req, sys, u, z[sys.m], max(len(history), 1), settings, conservative=lowered.conservative, history=history
    )


def _q4(terms: _Successors, beta: float, zeta: float, u: np.ndarray) -> float:
    values = terms.const[0] + terms.coef[0] @ u
    return float(zeta + terms.probs @ np.maximum(values - zeta, 0.0) / beta)


def _solve_dccp_upper(
    req: FilterRequest,
    sys: LinearStochasticSystem,
    lowered: LoweredBarrier,
    settings: FilterSettings,
    solver_settings: SolverSettings,
) -> FilterResult:
    """Convex-concave procedure on the literal upper-tail constraint."""
    if len(lowered.atoms) != 1:
        raise UnsupportedBarrierError("the upper-tail convex-concave procedure supports a single linear atom only")
    options = req.dccp_options
    m = sys.m
    beta = req.cert.beta.beta
    alpha_h = req.cert.alpha * evaluate(req.barrier, req.x)
    terms = _successor_terms(sys, req.x, lowered.atoms)
    const, coef = terms.const[0], terms.coef[0]

    # zeta is kept within the range the successor values can take over the control box
    low = const + np.minimum(coef * sys.u_lower, coef * sys.u_upper).sum(axis=1)
    high = const + np.maximum(coef * sys.u_lower, coef * sys.u_upper).sum(axis=1)
    pad = 1e-9 * (1.0 + float(np.max(np.abs(np.concatenate([low, high])))))
    zeta_lo, zeta_hi = float(low.min()) - pad, float(high.max()) + pad

    if options.initial_point == "center":
        u_k = 0.5 * (sys.u_lower + sys.u_upper)
    else:
        u_k = clip_control(sys, req.u_legacy)
    zeta_k = float(np.clip(_successor_var(req, sys, u_k), zeta_lo, zeta_hi))

    P = np.zeros((m + 1, m + 1))
    P[:m, :m] = 2.0 * np.eye(m)
    q = np.zeros(m + 1)
    q[:m] = -2.0 * req.u_legacy
    box = np.zeros((2 * m + 2, m + 1))
    box[:m, :m] = np.eye(m)
    box[m : 2 * m, :m] = -np.eye(m)
    box[2 * m, m] = 1.0
    box[2 * m + 1, m] = -1.0
    box_rhs = np.concatenate([sys.u_upper, -sys.u_lower, [zeta_hi, -zeta_lo]])

    history: list[DccpIterate] = []
    total_iterations = 0
    for iteration in range(options.max_iters):
        active = (const + coef @ u_k - zeta_k) > 0.0
        q4_k = _q4(terms, beta, zeta_k, u_k)
        grad_zeta = 1.0 - float(terms.probs[active].sum()) / beta
        grad_u = terms.probs[active] @ coef[active] / beta
        linear_row = np.concatenate([-grad_u, [-grad_zeta]])
        linear_rhs = q4_k - grad_zeta * zeta_k - grad_u @ u_k - alpha_h - settings.backoff
        qp = QpProblem(P, q, np.vstack([box, linear_row]), np.append(box_rhs, linear_rhs))
        solution = solve_qp(qp, solver_settings)
        total_iterations += solution.iterations
        if solution.status is QpStatus.INFEASIBLE:
            if iteration == 0:
                return _fallback(req, sys, lowered, settings, solver_settings, total_iterations)
            logger.warning("linearized subproblem %d infeasible; keeping previous iterate", iteration)
            break
        if solution.status is not QpStatus.OPTIMAL:
            return _finish(
                req,
                sys,
                u_k,
                zeta_k,
                len(history),
                settings,
                status=FilterStatus.SOLVER_FAILURE,
                conservative=lowered.conservative,
                history=tuple(history),
                message=f"linearized subproblem {iteration} ended with {solution.status.value}",
            )
        z = solution.z_star
        u_next, zeta_next = z[:m], float(z[m])
        history.append(
            DccpIterate(
                u=u_next.copy(),
                zeta=zeta_next,
                objective=float(np.sum((u_next - req.u_legacy) ** 2)),
                linearized_residual=float(linear_row @ z - linear_rhs) - settings.backoff,
                surrogate_margin=_q4(terms, beta, zeta_next, u_next) - alpha_h,
            )
        )
        moved = float(np.linalg.norm(u_next - u_k))
        u_k, zeta_k = u_next, zeta_next
        logger.debug("convex-concave iteration %d: objective %.6g, step %.3g", iteration, history[-1].objective, moved)
        if moved <= options.stationarity_tol:
            break

    return _finish(
        req,
        sys,
        u_k,
        zeta_k,
        len(history),
        settings,
        conservative=lowered.conservative,
        history=tuple(history),
    )


def solve_filter(
    req: FilterRequest,
    sys: LinearStochasticSystem,
    settings: FilterSettings | None = None,
    solver_settings: SolverSettings | None = None,
) -> FilterResult:
    """Minimally interfering CVaR-safe control for ``req``.

    A legacy control that already lies in the control box and satisfies the
    barrier condition with at least ``backoff`` to spare is optimal and is
    returned unchanged.  When no control satisfies the condition the result
    has status ``INFEASIBLE_FALLBACK`` and a negative margin.  A solver that
    fails to certify its answer yields ``SOLVER_FAILURE``; a control that
    fails the barrier check is never reported ``SAFE``.
    """
    settings = settings or FilterSettings()
    solver_settings = solver_settings or SolverSettings()
    sys.check_state(req.x)
    sys.check_control(req.u_legacy)

    legacy_in_box = bool(np.all(clip_control(sys, req.u_legacy) == req.u_legacy))
    if legacy_in_box:
        margin = one_step_cvar_margin(req.barrier, sys, req.x, req.u_legacy, req.cert)
        if margin >= settings.backoff:
            return _finish(req, sys, req.u_legacy, _successor_var(req, sys, req.u_legacy), 0, settings)

    lowered = lower_barrier(req.barrier, req.x)
    if req.method is FilterMethod.DCCP and req.dccp_options.tail is TailConvention.UPPER_TAIL:
        return _solve_dccp_upper(req, sys, lowered, settings, solver_settings)
    return _solve_epigraph(req, sys, lowered, settings, solver_settings)


# =============================================================================
# ROLLOUTS
# =============================================================================


def filter_rollout(
    sys: LinearStochasticSystem,
    barrier: BarrierExpr,
    cert: BarrierCertificate,
    legacy_law: Callable[[np.ndarray, int], Any],
    x0,
    steps: int,
    rng: np.random.Generator,
    method: FilterMethod = FilterMethod.EPIGRAPH,
    dccp_options: DccpOptions | None = None,
    filter_enabled: bool = True,
    settings: FilterSettings | None = None,
    solver_settings: SolverSettings | None = None,
) -> list[TraceRecord]:
    """Simulate ``steps`` steps of the filtered (or legacy-only) closed loop.

    Raises:
        FilterSolverError: when the filter reports a solver failure; the
            exception carries the step index.
    """
    if steps < 1:
        raise ValueError(f"steps must be at least 1, got {steps}")
    dccp_options = dccp_options or DccpOptions()
    x = sys.check_state(x0).copy()
    records: list[TraceRecord] = []
    for t in range(steps):
        h = evaluate(barrier, x)
        u_legacy = sys.check_control(legacy_law(x, t))
        if filter_enabled:
            request = FilterRequest(x, u_legacy, barrier, cert, method, dccp_options)
            result = solve_filter(request, sys, settings, solver_settings)
            if result.status is FilterStatus.SOLVER_FAILURE:
                raise FilterSolverError(t, result.message or "solver failure")
            u, margin, status = result.u_star, result.margin, result.status
        else:
            u = clip_control(sys, u_legacy)
            margin = one_step_cvar_margin(barrier, sys, x, u, cert)
            status = FilterStatus.UNFILTERED
        x_next = step(sys, x, u, sample_outcome(sys, rng))
        records.append(
            TraceRecord(
                t=t,
                x=x,
                u_legacy=u_legacy,
                u=u,
                h=h,
                margin=float(margin),
                status=status,
                h_next=evaluate(barrier, x_next),
            )
        )
        x = x_next
    return records
