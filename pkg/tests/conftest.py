"""Shared fixtures: memoized reference solves reused across test modules."""

import pytest

from plaplab.continuation import EpsSchedule, solve_singular_torsion
from plaplab.core import CoreConfig, solve_eigenpair
from plaplab.grids import build_grid


@pytest.fixture(scope="session")
def torsion_ref():
    """Factory for the singular reference profile, cached per parameter set."""
    cache = {}

    def get(p=2.0, alpha=0.5, n=255, lo=0.0, hi=1.0, tol=1e-10):
        key = (p, alpha, n, lo, hi, tol)
        if key not in cache:
            grid = build_grid(1, [lo, hi], n)
            cfg = CoreConfig(tol=tol)
            cache[key] = solve_singular_torsion(grid, p, alpha, EpsSchedule(), cfg)
        return cache[key]

    return get


@pytest.fixture(scope="session")
def eigen_ref():
    """Factory for first eigenpairs, cached per parameter set."""
    cache = {}

    def get(dim=1, n=511, p=2.0, lo=0.0, hi=1.0):
        key = (dim, n, p, lo, hi)
        if key not in cache:
            grid = build_grid(dim, [[lo, hi]] * dim, n)
            cache[key] = solve_eigenpair(grid, p)
        return cache[key]

    return get
