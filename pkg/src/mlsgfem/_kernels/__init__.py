"""Kernel backend selection.

The weighted element-matrix accumulation is the innermost loop of every
stiffness/load assembly.  Two implementations satisfy the same contract: a
Cython extension (serial fused loop) and a numpy formulation that lowers the
contraction to one GEMM.  On BLAS-backed numpy the GEMM version measures
~4x faster (see benchmarks/bench_kernels.py), so it is the default; set
``MLSGFEM_KERNEL=cython`` to select the compiled loop, or
``MLSGFEM_PURE_PYTHON=1`` to force the numpy path explicitly.
"""

import os

from . import _assembly_py

_choice = os.environ.get("MLSGFEM_KERNEL", "numpy").lower()
if os.environ.get("MLSGFEM_PURE_PYTHON", "0") == "1":
    _choice = "numpy"

if _choice == "cython":
    try:
        from . import _assembly_cy as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _assembly_py
        BACKEND = "numpy"
elif _choice == "numpy":
    _impl = _assembly_py
    BACKEND = "numpy"
else:
    raise ValueError(f"unknown MLSGFEM_KERNEL value {_choice!r}")

element_matrices = _impl.element_matrices

__all__ = ["element_matrices", "BACKEND"]
