# flight_elements/moment_set.py
"""Incremental attainable moment set.

The set of moment-coefficient increments reachable within one sample is the
image of the box of allowed deflection increments under the control
effectiveness matrix, a zonotope ``c + sum_k [-1, 1] g_k``. Facets are found
with the hyperplane shifting method: every normal is orthogonal to a
combination of (rank - 1) generators, and its offset is the support of the
zonotope along that normal.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.spatial as sp

from .errors import DomainError

logger = logging.getLogger(__name__)

# =============================
# CONSTANTS
# =============================
RANK_TOL = 1e-10
# dot product above which two unit normals are the same facet direction
DUPLICATE_DOT = 1.0 - 1e-10
IN_FACET_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class IncrementBounds:
    """Per-surface deflection increments reachable in one sample (rad)."""

    lower: np.ndarray
    upper: np.ndarray


def incremental_bounds(u0_deg, suite, dt):
    """Rate- and position-limited increments around the current deflections."""
    u0 = np.asarray(u0_deg, dtype=float)
    travel = suite.rate * dt
    upper = np.minimum(travel, suite.upper - u0)
    lower = np.maximum(-travel, suite.lower - u0)
    return IncrementBounds(lower=np.radians(lower), upper=np.radians(upper))


class MomentSetPolytope:
    """Zonotope in generator form with lazily derived facets.

    Instances are immutable; all derived data is cached on first use.
    """

    def __init__(self, center, generators, tolerance=1e-10):
        center = np.array(center, dtype=float).reshape(3)
        generators = np.array(generators, dtype=float).reshape(3, -1)
        center.setflags(write=False)
        generators.setflags(write=False)
        self.center = center
        self.generators = generators
        self.tolerance = tolerance

    def __repr__(self):
        return (f"MomentSetPolytope(rank={self.rank}, generators={self.generators.shape[1]}, "
                f"facets={len(self.offsets)})")

    # --- Geometry ---

    @cached_property
    def _active_generators(self):
        norms = np.linalg.norm(self.generators, axis=0)
        scale = norms.max() if norms.size else 0.0
        if scale == 0.0:
            return np.zeros((3, 0))
        return self.generators[:, norms > RANK_TOL * scale]

    @cached_property
    def _span(self):
        """(rank, basis of the generator span, basis of its complement)."""
        G = self._active_generators
        if G.shape[1] == 0:
            return 0, np.zeros((3, 0)), np.eye(3)
        U, s, _ = np.linalg.svd(G)
        rank = int(np.sum(s > RANK_TOL * s[0]))
        return rank, U[:, :rank], U[:, rank:]

    @property
    def rank(self):
        return self._span[0]

    @property
    def degenerate(self):
        return self.rank < 3

    @cached_property
    def _facets(self):
        rank, basis, _ = self._span
        G = self._active_generators
        if rank == 0:
            return np.zeros((0, 3)), np.zeros(0)

        local = basis.T @ G
        normals = []
        if rank == 1:
            normals.append(np.array([1.0]))
        else:
            for subset in itertools.combinations(range(local.shape[1]), rank - 1):
                W = local[:, subset]
                U, s, _ = np.linalg.svd(W)
                if s.size < rank - 1 or s[-1] <= RANK_TOL * max(s[0], 1e-300):
                    continue
                normal = U[:, -1]
                if normals and np.max(np.abs(np.array(normals) @ normal)) > DUPLICATE_DOT:
                    continue
                normals.append(normal)

        directions = np.array(normals) @ basis.T
        directions = np.vstack([directions, -directions])
        offsets = directions @ self.center + np.abs(directions @ G).sum(axis=1)
        logger.debug("Zonotope of rank %d: %d facets from %d generators", rank, len(offsets), G.shape[1])
        return directions, offsets

    @property
    def normals(self):
        return self._facets[0]

    @property
    def offsets(self):
        return self._facets[1]

    @cached_property
    def spread(self):
        """Largest support half-width over the facet normals."""
        if len(self.offsets) == 0:
            return 0.0
        return float(np.max(self.offsets - self.normals @ self.center))

    def _off_span_distance(self, point):
        complement = self._span[2]
        if complement.shape[1] == 0:
            return 0.0
        return float(np.linalg.norm(complement.T @ (point - self.center)))

    # --- Queries ---

    def contains(self, point):
        """Returns (inside, margin); margin is the smallest facet slack over ``spread``."""
        point = np.asarray(point, dtype=float).reshape(3)
        spread = self.spread
        off_span = self._off_span_distance(point)
        if len(self.offsets):
            slack = float(np.min(self.offsets - self.normals @ point))
            margin = slack / spread if spread > 0.0 else 0.0
        else:
            margin = 0.0
        if off_span > self.tolerance * max(spread, 1.0):
            if spread > 0.0:
                return False, min(margin, -off_span / spread)
            return False, -np.inf
        return margin >= -self.tolerance, margin

    def max_feasible_fraction(self, start, end):
        """Largest s in [0, 1] with start + s (end - start) inside the set."""
        start = np.asarray(start, dtype=float).reshape(3)
        direction = np.asarray(end, dtype=float).reshape(3) - start
        if not self.contains(start)[0]:
            return 0.0
        limit = 1.0
        if len(self.offsets):
            rate = self.normals @ direction
            room = self.offsets - self.normals @ start
            moving_out = rate > 0.0
            if np.any(moving_out):
                limit = min(limit, float(np.min(np.maximum(room[moving_out], 0.0) / rate[moving_out])))
        complement = self._span[2]
        if complement.shape[1]:
            drift = float(np.linalg.norm(complement.T @ direction))
            if drift > 0.0:
                limit = min(limit, self.tolerance * max(self.spread, 1.0) / drift)
        return max(0.0, limit)

    @cached_property
    def vertices(self):
        rank, basis, _ = self._span
        G = self._active_generators
        if rank == 0:
            return self.center.reshape(1, 3).copy()
        if rank == 3:
            points = []
            for normal in self.normals:
                projection = normal @ G
                in_facet = np.abs(projection) <= IN_FACET_TOL * np.linalg.norm(G, axis=0)
                base = self.center + G[:, ~in_facet] @ np.sign(projection[~in_facet])
                facet_generators = G[:, in_facet]
                for signs in itertools.product((-1.0, 1.0), repeat=facet_generators.shape[1]):
                    points.append(base + facet_generators @ np.array(signs))
            points = np.unique(np.round(np.array(points), 14), axis=0)
            hull = sp.ConvexHull(points)
            return points[np.sort(hull.vertices)]

        corners = np.array([
            self.center + G @ np.array(signs)
            for signs in itertools.product((-1.0, 1.0), repeat=G.shape[1])
        ])
        local = (corners - self.center) @ basis
        if rank == 1:
            keep = [int(np.argmin(local[:, 0])), int(np.argmax(local[:, 0]))]
        else:
            keep = sp.ConvexHull(local).vertices
        return corners[np.sort(np.unique(keep))]

    @cached_property
    def volume(self):
        G = self._active_generators
        if self.rank < 3:
            return 0.0
        total = 0.0
        for i, j, k in itertools.combinations(range(G.shape[1]), 3):
            total += abs(np.linalg.det(G[:, [i, j, k]]))
        return 8.0 * total

    def scaled(self, factor):
        return MomentSetPolytope(self.center, self.generators * factor, self.tolerance)

    def to_dict(self):
        return {
            "center": self.center.tolist(),
            "generators": self.generators.T.tolist(),
            "normals": self.normals.tolist(),
            "offsets": self.offsets.tolist(),
            "vertices": self.vertices.tolist(),
            "rank": self.rank,
            "degenerate": self.degenerate,
            "volume": self.volume,
        }


def build_iams(phi, bounds, tolerance=1e-10):
    """Image of the increment box under ``phi`` as a zonotope."""
    phi = np.asarray(phi, dtype=float)
    midpoint = 0.5 * (bounds.lower + bounds.upper)
    halfwidth = 0.5 * (bounds.upper - bounds.lower)
    polytope = MomentSetPolytope(phi @ midpoint, phi * halfwidth[None, :], tolerance)
    if polytope.degenerate:
        logger.debug("Incremental moment set is degenerate (rank %d)", polytope.rank)
    return polytope


def shrink(polytope, factor):
    """Scales the generators by ``factor`` about the center."""
    if not 0.0 < factor <= 1.0:
        raise DomainError(f"Shrink factor must lie in (0, 1], got {factor}")
    return polytope.scaled(factor)


def contains(polytope, demand):
    return polytope.contains(demand)
