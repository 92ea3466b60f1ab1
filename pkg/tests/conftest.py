"""Shared fixtures: problem hierarchies built once per session."""

import numpy as np
import pytest

from inexact_mg import fem, multigrid as mg


def _setup(kind, levels, coarsest_m):
    spec = fem.ProblemSpec(kind, levels=levels, coarsest_m=coarsest_m)
    hierarchy = fem.build_hierarchy(spec)
    b = fem.assemble_load(spec.meshes[-1].m)
    reference = mg.reference_solution(hierarchy, b)
    return spec, hierarchy, b, reference


@pytest.fixture(scope="session")
def small_poisson():
    """3-level Poisson, meshes 4 -> 8 -> 16 (225 finest unknowns)."""
    return _setup("poisson", 3, 4)


@pytest.fixture(scope="session")
def small_jump():
    return _setup("jump", 3, 4)


@pytest.fixture(scope="session")
def desk_poisson():
    """4-level Poisson, coarsest mesh 40, finest 320 (101761 unknowns)."""
    return _setup("poisson", 4, 40)


@pytest.fixture(scope="session")
def desk_jump():
    return _setup("jump", 4, 40)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
