import numpy as np
import pytest
from scipy.optimize import lsq_linear

from flight_elements import (
    AllocationError, AllocationProblem, AllocationStatus, ControlAllocator, DomainError, allocate,
)

LIMIT = 0.5


def _random_phi(rng):
    return rng.normal(size=(3, 5))


def _box(m=5):
    return -LIMIT * np.ones(m), LIMIT * np.ones(m)


def _kkt_residual(phi, u, lower, upper, tol=1e-9):
    """(stationarity, worst multiplier sign violation), or None when the free set is rank deficient."""
    free = (u > lower + tol) & (u < upper - tol)
    if np.linalg.matrix_rank(phi[:, free]) < phi.shape[0]:
        return None
    multiplier = np.linalg.lstsq(phi[:, free].T, u[free], rcond=None)[0]
    gradient = u - phi.T @ multiplier
    stationarity = float(np.abs(gradient[free]).max())
    sign_violation = max(
        float(np.max(-gradient[u <= lower + tol], initial=0.0)),
        float(np.max(gradient[u >= upper - tol], initial=0.0)),
    )
    return stationarity, sign_violation


def test_interior_demand_matches_pseudo_inverse(rng):
    lower, upper = _box()
    for _ in range(500):
        phi = _random_phi(rng)
        tau = phi @ rng.uniform(-0.1, 0.1, size=5)
        result = allocate(AllocationProblem(phi, tau, lower, upper))
        reference = np.linalg.pinv(phi) @ tau
        assert result.status is AllocationStatus.EXACT
        assert result.residual <= 1e-8
        assert np.linalg.norm(result.u) == pytest.approx(np.linalg.norm(reference), abs=1e-8)
        assert np.allclose(result.u, reference, atol=1e-8)


def test_bound_active_demand_satisfies_kkt(rng):
    lower, upper = _box()
    checked = 0
    for _ in range(500):
        phi = _random_phi(rng)
        u_true = rng.uniform(-LIMIT, LIMIT, size=5)
        u_true[rng.choice(5, size=2, replace=False)] = rng.choice([-LIMIT, LIMIT], size=2)
        tau = phi @ u_true
        result = allocate(AllocationProblem(phi, tau, lower, upper))
        assert result.status is AllocationStatus.EXACT
        assert result.residual <= 1e-8
        assert np.all(result.u >= lower) and np.all(result.u <= upper)
        assert np.linalg.norm(result.u) <= np.linalg.norm(u_true) + 1e-9
        kkt = _kkt_residual(phi, result.u, lower, upper)
        if (result.active_lower or result.active_upper) and kkt is not None:
            stationarity, sign_violation = kkt
            assert stationarity <= 1e-6
            assert sign_violation <= 1e-6
            checked += 1
    assert checked > 0


def test_unattainable_demand_is_relaxed_to_closest_moment(rng):
    lower, upper = _box()
    for _ in range(50):
        phi = _random_phi(rng)
        tau = 100.0 * rng.normal(size=3)
        result = allocate(AllocationProblem(phi, tau, lower, upper))
        closest = lsq_linear(phi, tau, bounds=(lower, upper), method="bvls")
        assert result.status is AllocationStatus.RELAXED
        assert np.all(result.u >= lower) and np.all(result.u <= upper)
        assert result.residual == pytest.approx(np.linalg.norm(phi @ closest.x - tau), rel=1e-8)
        assert 0.0 < result.relative_residual < 1.0


def test_zero_demand_allocates_nothing(rng):
    lower, upper = _box()
    result = allocate(AllocationProblem(_random_phi(rng), np.zeros(3), lower, upper))
    assert np.allclose(result.u, 0.0)
    assert result.relative_residual == 0.0


def test_warm_start_gives_the_cold_solution(rng):
    lower, upper = _box()
    allocator = ControlAllocator()
    phi = _random_phi(rng)
    u_prev = None
    for _ in range(100):
        phi = phi + 0.01 * rng.normal(size=phi.shape)
        tau = phi @ rng.uniform(-LIMIT, LIMIT, size=5)
        warm = allocator.allocate(AllocationProblem(phi, tau, lower, upper, u0=u_prev))
        cold = allocate(AllocationProblem(phi, tau, lower, upper))
        assert np.allclose(warm.u, cold.u, atol=1e-8)
        u_prev = warm.u


def test_bounds_need_not_contain_zero(rng):
    phi = _random_phi(rng)
    lower, upper = np.full(5, 0.1), np.full(5, 0.4)
    tau = phi @ rng.uniform(0.1, 0.4, size=5)
    result = allocate(AllocationProblem(phi, tau, lower, upper))
    assert result.status is AllocationStatus.EXACT
    assert np.all(result.u >= lower) and np.all(result.u <= upper)


def test_problem_validation():
    lower, upper = _box()
    with pytest.raises(DomainError):
        AllocationProblem(np.ones((3, 5)), np.zeros(2), lower, upper)
    with pytest.raises(DomainError):
        AllocationProblem(np.ones((3, 5)), np.zeros(3), upper, lower)
    with pytest.raises(AllocationError):
        allocate(AllocationProblem(np.full((3, 5), np.nan), np.zeros(3), lower, upper))
