"""Block SGFEM system: assembly cache, operator, preconditioner, PCG.

The system matrix has one block row/column per multi-index in J_P; block
(nu, mu) is sum_m G_m[nu, mu] K^m where K^m couples the Q1 spaces on the two
mode levels.  Only blocks with a nonzero coupling entry are ever formed, and
stiffness matrices are cached by (m, space kind/level pair) so recurring
levels across adaptive steps are assembled once.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import chaos, fem
from .chaos import IndexSet, active_dimension, coupling_entries
from .fem import BROKEN_Q2, Q1, make_space

_KIND_RANK = {Q1: 0, BROKEN_Q2: 1}


class MultilevelSpace:
    """Index set J_P with one Q1 mesh level per multi-index."""

    def __init__(self, index_set, levels, domain, level_cap=fem.MAX_LEVEL_DEFAULT):
        levels = tuple(int(l) for l in levels)
        if len(levels) != len(index_set):
            raise ValueError("one level per multi-index required")
        if chaos.MultiIndex.zero() not in index_set:
            raise ValueError("J_P must contain the zero multi-index")
        self.index_set = index_set
        self.levels = levels
        self.domain = domain
        self.level_cap = level_cap
        self.spaces = [make_space(l, Q1, domain, max_level=level_cap) for l in levels]
        dims = [s.ndof for s in self.spaces]
        self.offsets = np.concatenate([[0], np.cumsum(dims)]).astype(np.int64)
        self.ndof = int(self.offsets[-1])

    def level_of(self, mu):
        return self.levels[self.index_set.ordinal(mu)]

    def block_slice(self, i):
        return slice(int(self.offsets[i]), int(self.offsets[i + 1]))

    def __repr__(self):
        return (
            f"MultilevelSpace(card={len(self.index_set)}, levels={self.levels}, "
            f"ndof={self.ndof})"
        )


class BlockVector:
    """Coefficient vector over a multilevel space, stored flat."""

    def __init__(self, space, data=None):
        self.space = space
        if data is None:
            self.data = np.zeros(space.ndof)
        else:
            data = np.asarray(data, dtype=np.float64)
            if data.shape != (space.ndof,):
                raise ValueError("data length does not match the space")
            self.data = data

    def block(self, key):
        """View of the block for an ordinal or a multi-index."""
        i = key if isinstance(key, int) else self.space.index_set.ordinal(key)
        return self.data[self.space.block_slice(i)]

    def dot(self, other):
        other = other.data if isinstance(other, BlockVector) else other
        return float(self.data @ other)

    def copy(self):
        return BlockVector(self.space, self.data.copy())


def _as_flat(x):
    return x.data if isinstance(x, BlockVector) else np.asarray(x, dtype=np.float64)


# systems at or below this size are factorized; larger ones are solved by
# preconditioned CG (diagonal scaling for broken-Q2, geometric V-cycle for
# Q1), keeping peak memory bounded on desk hardware
DIRECT_SOLVE_LIMIT = 150_000


class _DirectSolver:
    """SPD solve through a cached sparse LU in symmetric mode."""

    def __init__(self, matrix, context):
        try:
            self._lu = spla.splu(
                matrix.tocsc(),
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )
        except RuntimeError as err:
            raise RuntimeError(
                f"factorization of the a0 operator failed on {context} "
                f"(is a0 positive?): {err}"
            ) from err

    def solve(self, b):
        return self._lu.solve(b)


class _CgSolver:
    """Deterministic preconditioned CG solve against a fixed operator."""

    def __init__(self, matrix, precond, rel_tol=1e-11, max_iter=500):
        self.matrix = matrix
        self.precond = precond
        self.rel_tol = rel_tol
        self.max_iter = max_iter

    def _solve_one(self, b):
        x, _ = pcg_solve(
            self.matrix, b, self.precond, rel_tol=self.rel_tol,
            max_iter=self.max_iter,
        )
        return x

    def solve(self, b):
        if b.ndim == 1:
            return self._solve_one(b)
        out = np.empty_like(b)
        for j in range(b.shape[1]):
            out[:, j] = self._solve_one(b[:, j])
        return out


class _Vcycle:
    """Geometric V(2,2) cycle on the a0-weighted Q1 hierarchy.

    Damped-Jacobi smoothing with symmetric pre/post sweeps makes one cycle a
    symmetric positive definite operation, usable directly as the mean-based
    preconditioner block and as a CG preconditioner for accurate solves.
    The coarse operators come from the same stiffness cache (direct assembly
    equals the Galerkin product for nested Q1 spaces).
    """

    def __init__(self, cache, level, coarse_level, omega=0.8):
        self.level = level
        self.coarse_level = coarse_level
        self.mats = {}
        self.dinv = {}
        self.prolong = {}
        for l in range(coarse_level, level + 1):
            k = cache.stiffness(0, Q1, l, Q1, l)
            self.mats[l] = k
            self.dinv[l] = omega / k.diagonal()
            if l > coarse_level:
                self.prolong[l] = fem.prolongation(
                    cache.space(Q1, l - 1), cache.space(Q1, l)
                )
        self.coarse = _DirectSolver(
            self.mats[coarse_level], f"q1 level {coarse_level}"
        )

    def _cycle(self, l, b):
        if l == self.coarse_level:
            return self.coarse.solve(b)
        k = self.mats[l]
        d = self.dinv[l]
        x = d * b
        x += d * (b - k @ x)
        r = b - k @ x
        p = self.prolong[l]
        x += p @ self._cycle(l - 1, p.T @ r)
        x += d * (b - k @ x)
        x += d * (b - k @ x)
        return x

    def apply(self, b):
        return self._cycle(self.level, b)


class AssemblyCache:
    """Per-run cache of stiffness blocks and a0-operator solvers.

    Keys are (m, row kind, row level, col kind, col level); the canonical
    orientation has the finer (and on level ties the higher-order) space as
    the row space, other orientations being stored transposes.
    """

    def __init__(
        self,
        coefficient,
        quad_order=4,
        level_cap=fem.MAX_LEVEL_DEFAULT,
        direct_limit=DIRECT_SOLVE_LIMIT,
    ):
        self.coefficient = coefficient
        self.domain = coefficient.domain
        self.quad_order = quad_order
        self.level_cap = level_cap
        self.direct_limit = direct_limit
        self._matrices = {}
        self._solvers = {}
        self._vcycles = {}
        self.assembled_keys = set()

    def space(self, kind, level):
        return make_space(level, kind, self.domain, max_level=self.level_cap)

    def stiffness(self, m, kind_row, lvl_row, kind_col, lvl_col):
        key = (m, kind_row, lvl_row, kind_col, lvl_col)
        mat = self._matrices.get(key)
        if mat is not None:
            return mat
        canonical = (lvl_row, _KIND_RANK[kind_row]) >= (lvl_col, _KIND_RANK[kind_col])
        if canonical:
            field = self.coefficient.field(m)
            row = self.space(kind_row, lvl_row)
            col = self.space(kind_col, lvl_col)
            mat = fem.assemble_stiffness(row, col, field, self.quad_order).matrix
            self.assembled_keys.add(key)
        else:
            mat = self.stiffness(m, kind_col, lvl_col, kind_row, lvl_row).T.tocsr()
        self._matrices[key] = mat
        return mat

    def prolongation_matrix(self, lvl_coarse, lvl_fine):
        key = ("prolong", lvl_coarse, lvl_fine)
        mat = self._matrices.get(key)
        if mat is None:
            mat = fem.prolongation(
                self.space(Q1, lvl_coarse), self.space(Q1, lvl_fine)
            )
            self._matrices[key] = mat
        return mat

    def _vcycle(self, level):
        vc = self._vcycles.get(level)
        if vc is None:
            coarse = level
            while coarse > 1 and self.space(Q1, coarse).ndof > self.direct_limit:
                coarse -= 1
            vc = _Vcycle(self, level, coarse)
            self._vcycles[level] = vc
        return vc

    def a0_solver(self, kind, level):
        """Accurate solve with the a0-weighted stiffness on one space."""
        key = (kind, level)
        solver = self._solvers.get(key)
        if solver is None:
            mat = self.stiffness(0, kind, level, kind, level)
            if mat.shape[0] <= self.direct_limit:
                solver = _DirectSolver(mat, f"{kind} level {level}")
            elif kind == BROKEN_Q2:
                # hierarchical-complement space: diagonal scaling keeps the
                # condition number level-independent (~10)
                dinv = 1.0 / mat.diagonal()
                solver = _CgSolver(mat, lambda r, d=dinv: d * r)
            else:
                vc = self._vcycle(level)
                solver = _CgSolver(mat, vc.apply)
            self._solvers[key] = solver
        return solver

    def a0_precond(self, level):
        """Fixed linear preconditioner action for one Q1 level block."""
        if self.space(Q1, level).ndof <= self.direct_limit:
            return self.a0_solver(Q1, level).solve
        return self._vcycle(level).apply


def operator_block_plan(space):
    """Nonzero-block triplets (nu ordinal, mu ordinal, m, coupling value)."""
    j_p = space.index_set
    plan = []
    for m in range(0, active_dimension(j_p) + 1):
        for i, j, g in coupling_entries(m, j_p, j_p):
            plan.append((i, j, m, g))
    return plan


def distinct_stiffness_triplets(space):
    """Distinct (m, finer level, coarser level) triplets behind the operator.

    This is the number of stiffness matrices a run must assemble for the
    final system, the quantity bounded by (1 + 2M) card(J_P).
    """
    trips = set()
    for i, j, m, _ in operator_block_plan(space):
        li, lj = space.levels[i], space.levels[j]
        trips.add((m, max(li, lj), min(li, lj)))
    return trips


class BlockOperator:
    """Symmetric block operator acting blockwise through cached stiffness.

    Off-diagonal blocks between different mesh levels are applied through
    the nestedness identity K(fine, coarse) = K(fine, fine) P, so only
    same-level stiffness matrices (shared across all block pairs of a level)
    and the cheap prolongation matrices are ever stored.
    """

    def __init__(self, space, coefficient, cache=None, quad_order=4):
        self.space = space
        self.cache = cache or AssemblyCache(
            coefficient, quad_order=quad_order, level_cap=space.level_cap
        )
        self.active_m = active_dimension(space.index_set)
        self._terms = []
        for i, j, m, g in operator_block_plan(space):
            li, lj = space.levels[i], space.levels[j]
            k = self.cache.stiffness(m, Q1, max(li, lj), Q1, max(li, lj))
            if li == lj:
                p = None
                mode = "same"
            elif li > lj:
                p = self.cache.prolongation_matrix(lj, li)
                mode = "up"  # v_i += g K (P x_j)
            else:
                p = self.cache.prolongation_matrix(li, lj)
                mode = "down"  # v_i += g P^T (K x_j)
            self._terms.append(
                (mode, space.block_slice(i), space.block_slice(j), g, k, p)
            )

    def matvec(self, x):
        flat = _as_flat(x)
        if flat.shape != (self.space.ndof,):
            raise ValueError("vector does not conform to the operator's space")
        out = np.zeros_like(flat)
        for mode, s_nu, s_mu, g, k, p in self._terms:
            if mode == "same":
                out[s_nu] += g * (k @ flat[s_mu])
            elif mode == "up":
                out[s_nu] += g * (k @ (p @ flat[s_mu]))
            else:
                out[s_nu] += g * (p.T @ (k @ flat[s_mu]))
        if isinstance(x, BlockVector):
            return BlockVector(self.space, out)
        return out

    def __matmul__(self, x):
        return self.matvec(x)

    def todense(self):
        """Dense matrix of the operator; for small oracles only."""
        out = np.zeros((self.space.ndof, self.space.ndof))
        for mode, s_nu, s_mu, g, k, p in self._terms:
            if mode == "same":
                out[s_nu, s_mu] += g * k.toarray()
            elif mode == "up":
                out[s_nu, s_mu] += g * (k @ p).toarray()
            else:
                out[s_nu, s_mu] += g * (p.T @ k).toarray()
        return out


def build_operator(space, coefficient, cache=None, quad_order=4):
    return BlockOperator(space, coefficient, cache=cache, quad_order=quad_order)


def mean_preconditioner(space, cache):
    """Block-diagonal action of the a0-weighted stiffness inverses.

    One factorization (or V-cycle hierarchy, above the direct-solve limit)
    per distinct level, shared across modes and with the error estimator
    through the cache.
    """
    actions = [cache.a0_precond(l) for l in space.levels]

    def apply(r):
        flat = _as_flat(r)
        out = np.empty_like(flat)
        for i, action in enumerate(actions):
            s = space.block_slice(i)
            out[s] = action(flat[s])
        if isinstance(r, BlockVector):
            return BlockVector(space, out)
        return out

    return apply


def pcg_solve(op, rhs, precond, rel_tol=1e-10, max_iter=500, x0=None, callback=None):
    """Preconditioned conjugate gradients on an SPD operator.

    Stops when the preconditioned residual norm falls below rel_tol times
    the preconditioned norm of the right-hand side.  Deterministic; raises
    when max_iter is exceeded.
    """
    matvec = op.matvec if hasattr(op, "matvec") else (lambda v: op @ v)
    space = rhs.space if isinstance(rhs, BlockVector) else None
    b = _as_flat(rhs)

    zb = _as_flat(precond(b))
    b_norm = np.sqrt(b @ zb)
    if b_norm == 0.0:
        x = np.zeros_like(b)
        return (BlockVector(space, x) if space else x), 0

    x = np.zeros_like(b) if x0 is None else _as_flat(x0).copy()
    r = b - _as_flat(matvec(x)) if x.any() else b.copy()
    z = _as_flat(precond(r))
    rz = r @ z
    tol = rel_tol * b_norm
    if np.sqrt(rz) <= tol:
        return (BlockVector(space, x) if space else x), 0
    p = z.copy()
    for k in range(1, max_iter + 1):
        ap = _as_flat(matvec(p))
        alpha = rz / (p @ ap)
        x += alpha * p
        r -= alpha * ap
        z = _as_flat(precond(r))
        rz_new = r @ z
        if callback is not None:
            callback(x)
        if np.sqrt(rz_new) <= tol:
            return (BlockVector(space, x) if space else x), k
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise RuntimeError(f"pcg failed to converge within {max_iter} iterations")


def assemble_rhs(space, f, quad_order=4):
    """Right-hand side: only the zero-mode block is nonzero.

    Testing against psi_nu integrates the nu-th polynomial against the
    constant 1, which vanishes except for nu = 0.
    """
    out = BlockVector(space)
    i0 = space.index_set.ordinal(chaos.MultiIndex.zero())
    out.data[space.block_slice(i0)] = fem.assemble_load(
        space.spaces[i0], f, quad_order
    )
    return out


def energy_norm_sq(u, rhs):
    """Squared discrete energy of a Galerkin solution: u . b."""
    return float(_as_flat(u) @ _as_flat(rhs))
