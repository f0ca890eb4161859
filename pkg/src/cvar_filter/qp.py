"""
Dense convex quadratic programming.

Solves ``minimize 1/2 z'Pz + q'z  subject to  Gz <= g`` for small dense
problems with a Mehrotra predictor-corrector primal-dual interior-point
method.  Every returned solution carries KKT residuals computed from the
final point itself:

- stationarity ``|Pz + q + G'lambda|_inf``
- primal feasibility ``|(Gz - g)_+|_inf``
- complementarity ``max_i |lambda_i (Gz - g)_i|``

When the interior-point iteration does not produce a certified optimum, a
least-violation problem ``min 1/2|r|^2 + eps/2 |z|^2  s.t.  Gz - r <= g`` is
solved.  Its multipliers ``y`` are a Farkas certificate of infeasibility
(``y >= 0``, ``G'y ~ 0``, ``g'y < 0``) whenever the violation is positive.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

logger = logging.getLogger(__name__)

MAX_VARIABLES = 64
MAX_CONSTRAINTS = 256
SYMMETRY_TOL = 1e-10
PSD_TOL = 1e-8

_STEP_FRACTION = 0.99
_DIVERGENCE = 1e12
_STALL_ITERATIONS = 50
_PHASE1_REGULARIZATION = 1e-10


class QpInputError(ValueError):
    """Raised for malformed or non-convex QP data."""


class QpStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    ITER_LIMIT = "iter_limit"


@dataclass(frozen=True)
class SolverSettings:
    """Tolerances and limits of the interior-point solver."""

    max_iter: int = 10_000
    tol: float = 1e-10
    kkt_tol: float = 1e-6
    feas_tol: float = 1e-8


@dataclass(frozen=True, eq=False)
class QpProblem:
    """``minimize 1/2 z'Pz + q'z  s.t.  Gz <= g``."""

    P: np.ndarray
    q: np.ndarray
    G: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=float).reshape(-1)
        d = q.size
        P = np.array(self.P, dtype=float, ndmin=2)
        if P.shape != (d, d):
            raise QpInputError(f"P must be {d}x{d}, got {P.shape}")
        g = np.array(self.g, dtype=float).reshape(-1)
        G = np.zeros((0, d)) if g.size == 0 else np.array(self.G, dtype=float, ndmin=2)
        if G.shape != (g.size, d):
            raise QpInputError(f"G must be {g.size}x{d}, got {G.shape}")
        if d == 0 or d > MAX_VARIABLES:
            raise QpInputError(f"number of variables must be in [1, {MAX_VARIABLES}], got {d}")
        if g.size > MAX_CONSTRAINTS:
            raise QpInputError(f"at most {MAX_CONSTRAINTS} constraints supported, got {g.size}")
        for name, value in (("P", P), ("q", q), ("G", G), ("g", g)):
            if not np.all(np.isfinite(value)):
                raise QpInputError(f"{name} must be finite")
        if np.max(np.abs(P - P.T), initial=0.0) > SYMMETRY_TOL:
            raise QpInputError("P must be symmetric")
        P = 0.5 * (P + P.T)
        smallest = float(np.linalg.eigvalsh(P).min())
        if smallest < -PSD_TOL:
            raise QpInputError(f"P must be positive semidefinite, smallest eigenvalue {smallest:.3g}")
        for value in (P, q, G, g):
            value.setflags(write=False)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "g", g)

    @property
    def d(self) -> int:
        return self.q.size

    @property
    def c(self) -> int:
        return self.g.size

    def objective(self, z: np.ndarray) -> float:
        return float(0.5 * z @ self.P @ z + self.q @ z)


@dataclass(frozen=True)
class KktResiduals:
    """Infinity-norm KKT residuals of a candidate primal-dual pair."""

    stationarity: float
    primal: float
    complementarity: float

    def worst(self) -> float:
        return max(self.stationarity, self.primal, self.complementarity)


@dataclass(frozen=True, eq=False)
class InfeasibilityCertificate:
    """Farkas multipliers ``y >= 0`` with ``G'y ~ 0`` and ``g'y < 0``."""

    y: np.ndarray
    violation: float
    farkas_value: float
    farkas_residual: float
    reason: str


@dataclass(eq=False)
class QpSolution:
    """Result of :func:`solve_qp`; ``certificate`` is set only for ``INFEASIBLE``."""

    z_star: np.ndarray
    duals: np.ndarray
    status: QpStatus
    kkt_residuals: KktResiduals
    iterations: int
    objective: float
    certificate: InfeasibilityCertificate | None = field(default=None)


def kkt_residuals(p: QpProblem, z: np.ndarray, lam: np.ndarray) -> KktResiduals:
    """Certified residuals of ``(z, lambda)``; never uses solver-internal slacks."""
    gap = p.G @ z - p.g
    stationarity = p.P @ z + p.q + p.G.T @ lam
    return KktResiduals(
        stationarity=float(np.max(np.abs(stationarity), initial=0.0)),
        primal=float(np.max(np.maximum(gap, 0.0), initial=0.0)),
        complementarity=float(np.max(np.abs(lam * gap), initial=0.0)),
    )


def _certified(p: QpProblem, residuals: KktResiduals, settings: SolverSettings) -> bool:
    scale = 1.0 + float(np.max(np.abs(p.q), initial=0.0))
    return (
        residuals.primal <= settings.feas_tol
        and residuals.stationarity <= settings.kkt_tol * scale
        and residuals.complementarity <= settings.kkt_tol * scale
    )


def _solve_spd(M: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve ``M x = rhs`` for symmetric PSD ``M``, adding a diagonal shift only when Cholesky fails."""
    size = M.shape[0]
    base = 1e-13 * (1.0 + float(np.max(np.abs(np.diag(M)), initial=0.0)))
    for shift in (0.0, base, base * 1e3, base * 1e6):
        try:
            L = np.linalg.cholesky(M + shift * np.eye(size))
        except np.linalg.LinAlgError:
            continue
        return np.linalg.solve(L.T, np.linalg.solve(L, rhs))
    return np.linalg.lstsq(M, rhs, rcond=None)[0]


def _max_step(v: np.ndarray, dv: np.ndarray) -> float:
    negative = dv < 0
    if not np.any(negative):
        return 1.0
    return float(min(1.0, np.min(-v[negative] / dv[negative])))


@dataclass
class _Iterate:
    z: np.ndarray
    s: np.ndarray
    lam: np.ndarray


@dataclass
class _NewtonSystem:
    """Reduced Newton system of the slack-form KKT conditions at one iterate."""

    G: np.ndarray
    M: np.ndarray
    s: np.ndarray
    lam: np.ndarray
    r_d: np.ndarray
    r_p: np.ndarray

    def direction(self, r_c: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Solve for ``(dz, ds, dlam)`` given the complementarity right-hand side ``r_c``."""
        w = self.lam / self.s
        rhs = -self.r_d - self.G.T @ (w * self.r_p - r_c / self.s)
        dz = _solve_spd(self.M, rhs)
        dlam = w * (self.G @ dz + self.r_p) - r_c / self.s
        ds = -(r_c + self.s * dlam) / self.lam
        return dz, ds, dlam


def _interior_point(
    P: np.ndarray, q: np.ndarray, G: np.ndarray, g: np.ndarray, settings: SolverSettings
) -> tuple[_Iterate, int, bool]:
    """Run the predictor-corrector iteration; returns the best iterate, iterations and convergence flag."""
    c = g.size
    scale = 1.0 + max(float(np.max(np.abs(q), initial=0.0)), float(np.max(np.abs(g), initial=0.0)))
    target = settings.tol * scale

    z = _solve_spd(P + G.T @ G, -q + G.T @ g)
    s = np.maximum(g - G @ z, 1.0)
    lam = np.ones(c)

    best = _Iterate(z.copy(), s.copy(), lam.copy())
    best_merit = np.inf
    since_best = 0
    iterations = 0
    converged = False

    while iterations < settings.max_iter:
        r_d = P @ z + q + G.T @ lam
        r_p = G @ z + s - g
        mu = float(s @ lam) / c
        merit = max(float(np.max(np.abs(r_d))), float(np.max(np.abs(r_p))), mu)
        if merit < best_merit * 0.999:
            best = _Iterate(z.copy(), s.copy(), lam.copy())
            best_merit = merit
            since_best = 0
        else:
            since_best += 1
        if merit <= target:
            converged = True
            break
        if since_best > _STALL_ITERATIONS:
            logger.debug("interior point stalled after %d iterations (merit %.3g)", iterations, best_merit)
            break
        if np.max(lam) > _DIVERGENCE or np.max(np.abs(z)) > _DIVERGENCE:
            logger.debug("interior point diverging after %d iterations", iterations)
            break

        newton = _NewtonSystem(G, P + G.T @ ((lam / s)[:, None] * G), s, lam, r_d, r_p)

        dz_a, ds_a, dlam_a = newton.direction(s * lam)
        alpha_a = min(_max_step(s, ds_a), _max_step(lam, dlam_a))
        mu_aff = float((s + alpha_a * ds_a) @ (lam + alpha_a * dlam_a)) / c
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0

        dz, ds, dlam = newton.direction(s * lam + ds_a * dlam_a - sigma * mu)
        alpha = min(1.0, _STEP_FRACTION * min(_max_step(s, ds), _max_step(lam, dlam)))
        z = z + alpha * dz
        s = s + alpha * ds
        lam = lam + alpha * dlam
        iterations += 1

    if converged:
        best = _Iterate(z, s, lam)
    return best, iterations, converged


def _phase_one(p: QpProblem, settings: SolverSettings) -> InfeasibilityCertificate | None:
    """Least-violation problem; returns a certificate if the constraints are inconsistent."""
    d, c = p.d, p.c
    P = np.zeros((d + c, d + c))
    P[:d, :d] = _PHASE1_REGULARIZATION * np.eye(d)
    P[d:, d:] = np.eye(c)
    iterate, iterations, _ = _interior_point(P, np.zeros(d + c), np.hstack([p.G, -np.eye(c)]), p.g, settings)
    r = iterate.z[d:]
    y = iterate.lam
    violation = float(np.max(r, initial=0.0))
    farkas_value = float(p.g @ y)
    farkas_residual = float(np.max(np.abs(p.G.T @ y), initial=0.0))
    logger.debug(
        "phase one: %d iterations, violation %.3g, g'y %.3g, |G'y| %.3g",
        iterations,
        violation,
        farkas_value,
        farkas_residual,
    )
    if violation > settings.feas_tol * (1.0 + float(np.max(np.abs(p.g), initial=0.0))) and farkas_value < 0:
        return InfeasibilityCertificate(
            y=y,
            violation=violation,
            farkas_value=farkas_value,
            farkas_residual=farkas_residual,
            reason=f"constraints inconsistent: least violation {violation:.3g}, g'y = {farkas_value:.3g}",
        )
    return None


def _unconstrained(p: QpProblem, settings: SolverSettings) -> QpSolution:
    z = np.linalg.lstsq(p.P, -p.q, rcond=None)[0]
    lam = np.zeros(0)
    residuals = kkt_residuals(p, z, lam)
    status = QpStatus.OPTIMAL if _certified(p, residuals, settings) else QpStatus.ITER_LIMIT
    return QpSolution(z, lam, status, residuals, iterations=0, objective=p.objective(z))


def solve_qp(p: QpProblem, settings: SolverSettings | None = None) -> QpSolution:
    """Solve ``p`` and certify the result.

    Returns a solution with status ``OPTIMAL`` (feasible within ``feas_tol``
    and KKT residuals within ``kkt_tol * (1 + |q|_inf)``), ``INFEASIBLE``
    (with a Farkas certificate) or ``ITER_LIMIT`` (best iterate found).
    """
    settings = settings or SolverSettings()
    if p.c == 0:
        return _unconstrained(p, settings)

    # Scaling (P, q) by a positive factor leaves the iterated problem unchanged;
    # duals are scaled back to the original objective.
    objective_scale = max(float(np.max(np.abs(p.P))), float(np.max(np.abs(p.q))))
    if objective_scale == 0.0:
        objective_scale = 1.0
    iterate, iterations, converged = _interior_point(
        p.P / objective_scale, p.q / objective_scale, p.G, p.g, settings
    )
    z = iterate.z
    lam = objective_scale * np.maximum(iterate.lam, 0.0)
    residuals = kkt_residuals(p, z, lam)
    if _certified(p, residuals, settings):
        logger.debug("QP optimal after %d iterations (d=%d, c=%d)", iterations, p.d, p.c)
        return QpSolution(z, lam, QpStatus.OPTIMAL, residuals, iterations, p.objective(z))

    certificate = _phase_one(p, settings)
    if certificate is not None:
        logger.debug("QP infeasible: %s", certificate.reason)
        return QpSolution(z, lam, QpStatus.INFEASIBLE, residuals, iterations, p.objective(z), certificate)

    logger.warning(
        "QP not certified after %d iterations (converged=%s, residuals %s)", iterations, converged, residuals
    )
    return QpSolution(z, lam, QpStatus.ITER_LIMIT, residuals, iterations, p.objective(z))
