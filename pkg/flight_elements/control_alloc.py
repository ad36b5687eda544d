# flight_elements/control_alloc.py
"""Minimum-norm control allocation over box-bounded surfaces.

The allocator first finds the attainable moment closest to the demand
(bounded least squares), then returns the smallest deflection vector that
produces exactly that moment, using a primal active-set method.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.optimize import lsq_linear

from .errors import AllocationError, DomainError

logger = logging.getLogger(__name__)

AT_LOWER = -1
FREE = 0
AT_UPPER = 1


class AllocationStatus(str, Enum):
    EXACT = "exact"
    RELAXED = "relaxed"
    ERROR = "error"


@dataclass(frozen=True, eq=False)
class AllocationProblem:
    """Demand ``tau_c`` = ``phi`` u with ``lower`` <= u <= ``upper``, all in radians."""

    phi: np.ndarray
    tau_c: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    u0: np.ndarray = None

    def __post_init__(self):
        phi = np.atleast_2d(np.asarray(self.phi, dtype=float))
        tau = np.asarray(self.tau_c, dtype=float).reshape(-1)
        lower = np.asarray(self.lower, dtype=float).reshape(-1)
        upper = np.asarray(self.upper, dtype=float).reshape(-1)
        m = phi.shape[1]
        if tau.size != phi.shape[0] or lower.size != m or upper.size != m:
            raise DomainError("Allocation problem dimensions do not agree")
        if np.any(lower >= upper):
            raise DomainError("Allocation bounds need lower < upper")
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "tau_c", tau)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if self.u0 is not None:
            object.__setattr__(self, "u0", np.asarray(self.u0, dtype=float).reshape(-1))

    def is_finite(self):
        return all(np.all(np.isfinite(a)) for a in (self.phi, self.tau_c, self.lower, self.upper))


@dataclass(frozen=True, eq=False)
class AllocationResult:
    u: np.ndarray
    residual: float
    status: AllocationStatus
    iterations: int
    active_lower: tuple = ()
    active_upper: tuple = ()
    demand_norm: float = 0.0

    @property
    def relative_residual(self):
        """Share of the demand left unproduced; zero for a zero demand."""
        if self.demand_norm == 0.0:
            return 0.0
        return self.residual / self.demand_norm


class ControlAllocator:
    """Stateful allocator; keeps the last working set for warm starts."""

    def __init__(self, tolerance=1e-10, max_iterations=50, weights=None):
        self.tolerance = tolerance
        self.max_iterations = max_iterations
        self.weights = None if weights is None else np.asarray(weights, dtype=float)
        self._working_set = None

    def reset(self):
        self._working_set = None

    def allocate(self, problem):
        if not problem.is_finite():
            raise AllocationError("Allocation problem has non-finite entries")
        phi, tau = problem.phi, problem.tau_c
        lower, upper = problem.lower, problem.upper
        demand_norm = float(np.linalg.norm(tau))
        feasibility_tol = self.tolerance * max(1.0, demand_norm)

        warm = self._warm_start(phi, tau, lower, upper, feasibility_tol, problem.u0)
        if warm is not None:
            start, working_set = warm
            target, relaxed = tau, False
        else:
            start = self._closest_attainable(phi, tau, lower, upper)
            working_set = None
            gap = float(np.linalg.norm(phi @ start - tau))
            relaxed = gap > feasibility_tol
            target = phi @ start if relaxed else tau

        try:
            u, working_set, iterations = self._minimum_norm(phi, target, lower, upper, start, working_set)
        except AllocationError as e:
            if not relaxed:
                raise
            # The attainable point is often unique on the boundary; keep it.
            logger.debug("Minimum-norm stage stalled on a relaxed demand: %s", e)
            u = e.best_iterate
            working_set = self._classify(u, lower, upper)
            iterations = self.max_iterations

        self._working_set = working_set
        residual = float(np.linalg.norm(phi @ u - tau))
        status = AllocationStatus.RELAXED if relaxed else AllocationStatus.EXACT
        if relaxed:
            logger.debug("Demand outside attainable set; residual %.3e", residual)
        return AllocationResult(
            u=u,
            residual=residual,
            status=status,
            iterations=iterations,
            active_lower=tuple(int(i) for i in np.flatnonzero(working_set == AT_LOWER)),
            active_upper=tuple(int(i) for i in np.flatnonzero(working_set == AT_UPPER)),
            demand_norm=demand_norm,
        )

    # --- Stages ---

    def _closest_attainable(self, phi, tau, lower, upper):
        if self.weights is None:
            A, b = phi, tau
        else:
            A, b = self.weights[:, None] * phi, self.weights * tau
        result = lsq_linear(A, b, bounds=(lower, upper), method="bvls", tol=1e-12)
        return np.clip(result.x, lower, upper)

    def _warm_start(self, phi, tau, lower, upper, feasibility_tol, u0):
        working_set = self._working_set
        if working_set is None or working_set.size != lower.size:
            if u0 is None or u0.size != lower.size:
                return None
            working_set = self._classify(np.clip(u0, lower, upper), lower, upper)
        u = np.where(working_set == AT_LOWER, lower, np.where(working_set == AT_UPPER, upper, 0.0))
        free = working_set == FREE
        if free.any():
            rhs = tau - phi[:, ~free] @ u[~free]
            u[free] = np.linalg.lstsq(phi[:, free], rhs, rcond=None)[0]
        slack = 1e-12 * max(1.0, float(np.abs(u).max()))
        if np.any(u < lower - slack) or np.any(u > upper + slack):
            return None
        u = np.clip(u, lower, upper)
        if np.linalg.norm(phi @ u - tau) > feasibility_tol:
            return None
        return u, working_set.copy()

    @staticmethod
    def _classify(u, lower, upper):
        tol = 1e-12 * max(1.0, float(np.abs(lower).max()), float(np.abs(upper).max()))
        working_set = np.full(u.size, FREE, dtype=int)
        working_set[u <= lower + tol] = AT_LOWER
        working_set[u >= upper - tol] = AT_UPPER
        return working_set

    def _minimum_norm(self, phi, target, lower, upper, u, working_set=None):
        """Primal active set for min 1/2|u|^2 s.t. phi u = target, box bounds.

        ``u`` must satisfy the equality and the bounds on entry.
        """
        u = np.clip(np.array(u, dtype=float), lower, upper)
        if working_set is None:
            working_set = self._classify(u, lower, upper)
        working_set = working_set.copy()
        u[working_set == AT_LOWER] = lower[working_set == AT_LOWER]
        u[working_set == AT_UPPER] = upper[working_set == AT_UPPER]

        for iteration in range(1, self.max_iterations + 1):
            free = working_set == FREE
            step_tol = 1e-12 * (1.0 + float(np.linalg.norm(u)))
            if free.any():
                rhs = target - phi[:, ~free] @ u[~free]
                u_free = np.linalg.lstsq(phi[:, free], rhs, rcond=None)[0]
                step = u_free - u[free]
            else:
                step = np.zeros(0)

            if np.linalg.norm(step) <= step_tol:
                if free.any():
                    multiplier = np.linalg.lstsq(phi[:, free].T, u[free], rcond=None)[0]
                else:
                    multiplier = np.linalg.lstsq(phi.T, u, rcond=None)[0]
                gradient = u - phi.T @ multiplier
                bound_multipliers = np.where(
                    working_set == AT_LOWER, gradient, np.where(working_set == AT_UPPER, -gradient, np.inf)
                )
                worst = int(np.argmin(bound_multipliers))
                if bound_multipliers[worst] >= -step_tol:
                    return u, working_set, iteration
                working_set[worst] = FREE
                continue

            index = np.flatnonzero(free)
            room = np.where(step > 0.0, upper[index] - u[index], np.where(step < 0.0, lower[index] - u[index], np.inf))
            with np.errstate(divide="ignore", invalid="ignore"):
                ratios = np.where(step != 0.0, room / step, np.inf)
            blocking = int(np.argmin(ratios))
            fraction = min(1.0, max(0.0, float(ratios[blocking])))
            u[index] += fraction * step
            if fraction < 1.0:
                j = index[blocking]
                if step[blocking] > 0.0:
                    working_set[j], u[j] = AT_UPPER, upper[j]
                else:
                    working_set[j], u[j] = AT_LOWER, lower[j]

        raise AllocationError(
            f"Active-set iteration budget ({self.max_iterations}) exhausted", best_iterate=np.clip(u, lower, upper)
        )


def allocate(problem, tolerance=1e-10, max_iterations=50):
    """One-shot allocation without warm-start memory."""
    return ControlAllocator(tolerance=tolerance, max_iterations=max_iterations).allocate(problem)
