from __future__ import annotations

import numpy as np
import pytest

from artifact import kernels as kn
from artifact.model import InitialData
from artifact.solver import StateGrid, integrate, rhs


def test_default_mode_follows_environment(monkeypatch):
    monkeypatch.setenv("ARTIFACT_NO_NUMBA", "1")
    assert kn.default_mode() == "numpy"
    monkeypatch.delenv("ARTIFACT_NO_NUMBA")
    assert kn.default_mode() == ("numba" if kn.HAVE_NUMBA else "numpy")


def test_kernel_cache_reuses_compiled_set(example_model):
    a = kn.get_kernels(example_model, "numpy")
    b = kn.get_kernels(example_model.with_factors(example_model.factors), "numpy")
    assert a is b


@pytest.mark.skipif(not kn.HAVE_NUMBA, reason="numba not installed")
def test_numba_and_numpy_paths_agree(example_model):
    x = np.linspace(0, 1, 21)
    grid = StateGrid(1 + 0.3 * np.sin(3 * x), 1 + 0.2 * np.cos(2 * x))
    grid.u[0] = float(example_model.boundary_u(grid.v[0]))
    a = rhs(example_model, grid, U=grid.v[-1], mode="numba")
    b = rhs(example_model, grid, U=grid.v[-1], mode="numpy")
    np.testing.assert_allclose(a.u, b.u, rtol=1e-13, atol=1e-13)
    np.testing.assert_allclose(a.v, b.v, rtol=1e-13, atol=1e-13)
    ta = integrate(example_model, grid, float(grid.v[-1]), (0, 0.5), m=20, mode="numba")
    tb = integrate(example_model, grid, float(grid.v[-1]), (0, 0.5), m=20, mode="numpy")
    ga, gb = ta.state(0.5), tb.state(0.5)
    np.testing.assert_allclose(ga.u, gb.u, atol=1e-10)
    np.testing.assert_allclose(ga.v, gb.v, atol=1e-10)


def test_numpy_equilibrium(example_model):
    tr = integrate(example_model, InitialData.constant(1.0, 1.0), 1.0, (0.0, 1.0), m=20, mode="numpy")
    assert np.max(np.abs(tr.state(1.0).v - 1)) <= 1e-12
