"""Shared fixtures: adaptive runs are expensive, so each configuration used
by the acceptance criteria executes once per session and is reused."""

import pytest

from mlsgfem import adapt, coeffs

_RUN_CACHE = {}


def get_run(problem, version, tol, **kw):
    key = (problem, version, tol, tuple(sorted(kw.items())))
    if key not in _RUN_CACHE:
        prob = coeffs.make_problem(problem)
        options = adapt.SolveOptions(version=version, tol=tol, **kw)
        _RUN_CACHE[key] = adapt.adaptive_solve(prob, options)
    return _RUN_CACHE[key]


@pytest.fixture(scope="session")
def adaptive_run():
    return get_run
