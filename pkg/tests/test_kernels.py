"""Backend equivalence for the assembly kernel."""

import numpy as np
import pytest

from mlsgfem._kernels import BACKEND, _assembly_py

try:
    from mlsgfem._kernels import _assembly_cy
except ImportError:
    _assembly_cy = None


def test_some_backend_selected():
    assert BACKEND in ("cython", "numpy")


@pytest.mark.skipif(_assembly_cy is None, reason="extension not built")
@pytest.mark.parametrize("shape", [(1, 1, 1, 1), (7, 16, 4, 4), (33, 16, 5, 4), (128, 64, 5, 5)])
def test_backends_agree(shape):
    ne, nq, nr, nc = shape
    rng = np.random.default_rng(2)
    coef = rng.standard_normal((ne, nq))
    smat = rng.standard_normal((nq, nr, nc))
    a = _assembly_py.element_matrices(coef, smat)
    b = _assembly_cy.element_matrices(coef, smat)
    assert a.shape == (ne, nr, nc)
    scale = np.abs(a).max()
    assert np.abs(a - b).max() <= 1e-13 * scale


@pytest.mark.skipif(_assembly_cy is None, reason="extension not built")
def test_read_only_inputs_accepted(monkeypatch):
    coef = np.broadcast_to(np.ones(8), (5, 8))
    smat = np.zeros((8, 4, 4))
    smat[:, 0, 0] = 1.0
    out = _assembly_cy.element_matrices(coef, smat)
    assert out[0, 0, 0] == 8.0
