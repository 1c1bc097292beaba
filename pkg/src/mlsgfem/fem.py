"""Uniform square-mesh hierarchy with Q1 and broken-Q2 interior DOF spaces.

Meshes at level i partition the square domain into 2^i x 2^i equal square
cells and are nested under uniform refinement.  All spaces carry interior
degrees of freedom only (homogeneous Dirichlet boundary).  Stiffness blocks
between spaces on two nested meshes are integrated element-by-element on the
finer mesh, coarse basis functions being polynomial on every embedded fine
element.
"""

import functools
from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.sparse as sp

from ._kernels import element_matrices

Q1 = "q1"
BROKEN_Q2 = "broken_q2"

MAX_LEVEL_DEFAULT = 10

# elements processed per kernel call, bounds transient memory at fine levels
_CHUNK = 1 << 17


class LevelCapError(RuntimeError):
    """Raised when the mesh hierarchy cap would be exceeded."""


@dataclass(frozen=True)
class Domain:
    """Axis-aligned square: lower-left corner and side length."""

    x0: float
    y0: float
    side: float


UNIT_SQUARE = Domain(0.0, 0.0, 1.0)


@dataclass(frozen=True)
class MeshLevel:
    level: int
    domain: Domain

    @property
    def n(self):
        """Cells per side, 2^level."""
        return 1 << self.level

    @property
    def h(self):
        """Element width, side * 2^(-level)."""
        return self.domain.side / self.n


# local node offsets on the reference element, matching the 1-D Lagrange
# node positions used below (Q1 on {0,1}, Q2 on {0, 1/2, 1} in lattice units)
_OFFSETS = {
    Q1: ((0, 0), (1, 0), (0, 1), (1, 1)),
    BROKEN_Q2: ((1, 0), (0, 1), (1, 1), (2, 1), (1, 2)),
}
# dof lattice refinement relative to the element grid
_LATTICE_SCALE = {Q1: 1, BROKEN_Q2: 2}


def _lagrange_1d(kind, t):
    """Values and derivatives of the 1-D nodal basis, indexed by node slot."""
    t = np.asarray(t, dtype=np.float64)
    if kind == Q1:
        vals = np.stack([1.0 - t, t], axis=-1)
        ders = np.stack([-np.ones_like(t), np.ones_like(t)], axis=-1)
    else:
        vals = np.stack(
            [2 * t * t - 3 * t + 1, 4 * t - 4 * t * t, 2 * t * t - t], axis=-1
        )
        ders = np.stack([4 * t - 3, 4 - 8 * t, 4 * t - 1], axis=-1)
    return vals, ders


def shape_tables(kind, pts):
    """Reference values and gradients at pts in [0,1]^2.

    Returns (vals, grads) of shapes (npts, nloc) and (npts, nloc, 2).
    """
    pts = np.asarray(pts, dtype=np.float64)
    vx, dx = _lagrange_1d(kind, pts[:, 0])
    vy, dy = _lagrange_1d(kind, pts[:, 1])
    offsets = _OFFSETS[kind]
    nloc = len(offsets)
    vals = np.empty((len(pts), nloc))
    grads = np.empty((len(pts), nloc, 2))
    for l, (ox, oy) in enumerate(offsets):
        vals[:, l] = vx[:, ox] * vy[:, oy]
        grads[:, l, 0] = dx[:, ox] * vy[:, oy]
        grads[:, l, 1] = vx[:, ox] * dy[:, oy]
    return vals, grads


@functools.lru_cache(maxsize=None)
def _gauss_1d(q):
    x, w = np.polynomial.legendre.leggauss(q)
    return 0.5 * (x + 1.0), 0.5 * w


@functools.lru_cache(maxsize=None)
def _tensor_gauss(q):
    """Tensor Gauss-Legendre rule on [0,1]^2: points (q^2, 2), weights (q^2,).

    Point k combines 1-D nodes (k % q, k // q) for the (x, y) directions.
    """
    x, w = _gauss_1d(q)
    X, Y = np.meshgrid(x, x, indexing="xy")
    W = np.outer(w, w)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    return pts, W.ravel()


@functools.lru_cache(maxsize=16384)
def _shape_tables_offset(kind, q, s, ox, oy):
    """Reference tables at the quadrature points of one embedded sub-cell."""
    qp, _ = _tensor_gauss(q)
    return shape_tables(kind, (qp + np.array([ox, oy])) / s)


def _coef_factors(field, space_level_mesh, q):
    """1-D coefficient factor tables on a mesh, or None if not separable.

    Returns (fx, fy) of shape (cells per side, q) so that the coefficient at
    quadrature point (k % q, k // q) of cell (ex, ey) is
    fx[ex, k % q] * fy[ey, k // q].
    """
    if not hasattr(field, "factor_values"):
        return None
    mesh = space_level_mesh
    xq, _ = _gauss_1d(q)
    dom = mesh.domain
    n = mesh.n
    cells = np.arange(n)
    xs = dom.x0 + (cells[:, None] + xq[None, :]) * mesh.h
    ys = dom.y0 + (cells[:, None] + xq[None, :]) * mesh.h
    return field.factor_values(xs, ys)


def _coef_chunk(field, factors, dom, h, qp, exc, eyc, q):
    """Coefficient values at the quadrature points of a chunk of cells."""
    if factors is not None:
        fx, fy = factors
        return (fy[eyc][:, :, None] * fx[exc][:, None, :]).reshape(len(exc), q * q)
    x = dom.x0 + (exc[:, None] + qp[None, :, 0]) * h
    y = dom.y0 + (eyc[:, None] + qp[None, :, 1]) * h
    return _eval_field(field, x, y)


class FeSpace:
    """Interior-DOF finite element space on a uniform square mesh."""

    def __init__(self, mesh, kind):
        if kind not in (Q1, BROKEN_Q2):
            raise ValueError(f"unknown space kind {kind!r}")
        self.mesh = mesh
        self.kind = kind
        n = mesh.n
        s = _LATTICE_SCALE[kind]
        L = s * n + 1
        ids = np.full((L, L), -1, dtype=np.int32)
        mask = np.zeros((L, L), dtype=bool)
        mask[1 : L - 1, 1 : L - 1] = True
        if kind == BROKEN_Q2:
            # drop the Q1 vertex lattice so H1 and H2 intersect trivially
            mask[0::2, 0::2] = False
        count = int(mask.sum())
        ids[mask] = np.arange(count, dtype=np.int32)
        self._node_ids = ids
        self._node_mask = mask
        self.ndof = count

        offsets = _OFFSETS[kind]
        ex = np.tile(np.arange(n), n)
        ey = np.repeat(np.arange(n), n)
        dofs = np.empty((n * n, len(offsets)), dtype=np.int32)
        for l, (ox, oy) in enumerate(offsets):
            dofs[:, l] = ids[s * ey + oy, s * ex + ox]
        self.elem_dofs = dofs

    @property
    def level(self):
        return self.mesh.level

    @property
    def domain(self):
        return self.mesh.domain

    def dof_coords(self):
        """Physical coordinates of the DOFs, in numbering order."""
        s = _LATTICE_SCALE[self.kind]
        step = self.mesh.h / s
        jy, jx = np.nonzero(self._node_mask)
        dom = self.domain
        return np.column_stack([dom.x0 + jx * step, dom.y0 + jy * step])

    def vertex_ids(self):
        """DOF id per lattice node (-1 where none); Q1 lattice = vertices."""
        return self._node_ids

    def __repr__(self):
        return f"FeSpace({self.kind}, level={self.level}, ndof={self.ndof})"


@functools.lru_cache(maxsize=None)
def _space_cached(kind, level, domain):
    return FeSpace(MeshLevel(level, domain), kind)


def make_space(level, kind, domain=UNIT_SQUARE, max_level=MAX_LEVEL_DEFAULT):
    """Interior-DOF space of the given kind on the level mesh."""
    if level < 1:
        raise ValueError("level must be >= 1")
    if level > max_level:
        raise LevelCapError(f"level {level} exceeds hierarchy cap {max_level}")
    return _space_cached(kind, level, domain)


@dataclass(frozen=True)
class StiffnessMatrix:
    row_space: FeSpace
    col_space: FeSpace
    matrix: sp.csr_matrix
    m: int = -1  # coefficient id when assigned by the cache; -1 otherwise


def _eval_field(field, x, y):
    if callable(field):
        return np.broadcast_to(np.asarray(field(x, y), dtype=np.float64), x.shape)
    return np.full(x.shape, float(field))


def assemble_stiffness(test, trial, coeff, quad_order=4):
    """Galerkin matrix of the coeff-weighted gradient form.

    test and trial live on nested meshes of the same domain with
    test.level >= trial.level; each coarse (trial) element contains
    4^(level difference) fine (test) elements and the quadrature runs on the
    fine ones.  The transposed orientation is obtained by symmetry.
    """
    if test.domain != trial.domain:
        raise ValueError("test and trial spaces must share the domain")
    if trial.level > test.level:
        raise ValueError("trial level exceeds test level; orient the pair")
    matrix = _assemble_pair(test, trial, coeff, quad_order)
    return StiffnessMatrix(row_space=test, col_space=trial, matrix=matrix)


def _assemble_pair(row_space, col_space, coeff, quad_order):
    mesh_f = row_space.mesh
    nf = mesh_f.n
    hf = mesh_f.h
    hc = col_space.mesh.h
    delta = row_space.level - col_space.level
    s = 1 << delta
    nc_elems = col_space.mesh.n

    qp, w2 = _tensor_gauss(quad_order)
    nq = len(qp)
    _, grow = shape_tables(row_space.kind, qp)
    nloc_r = grow.shape[1]
    nloc_c = len(_OFFSETS[col_space.kind])
    # physical jacobian hf^2 and the two 1/h gradient scalings
    scale = (hf * hf) / (hf * hc)
    dom = mesh_f.domain
    factors = _coef_factors(coeff, mesh_f, quad_order)

    data_parts, row_parts, col_parts = [], [], []
    for oy in range(s):
        for ox in range(s):
            _, gcol = _shape_tables_offset(col_space.kind, quad_order, s, ox, oy)
            smat = np.einsum("q,qjd,qid->qji", w2, grow, gcol) * scale

            ex = np.arange(ox, nf, s)
            ey = np.arange(oy, nf, s)
            EX = np.tile(ex, len(ey))
            EY = np.repeat(ey, len(ex))
            for start in range(0, len(EX), _CHUNK):
                exc = EX[start : start + _CHUNK]
                eyc = EY[start : start + _CHUNK]
                coef = _coef_chunk(coeff, factors, dom, hf, qp, exc, eyc, quad_order)
                emat = element_matrices(coef, smat)

                rdofs = row_space.elem_dofs[eyc * nf + exc]
                cdofs = col_space.elem_dofs[(eyc >> delta) * nc_elems + (exc >> delta)]
                ne = len(exc)
                ri = np.broadcast_to(rdofs[:, :, None], (ne, nloc_r, nloc_c))
                ci = np.broadcast_to(cdofs[:, None, :], (ne, nloc_r, nloc_c))
                keep = (ri >= 0) & (ci >= 0)
                data_parts.append(emat[keep])
                row_parts.append(ri[keep])
                col_parts.append(ci[keep])

    coo = sp.coo_matrix(
        (np.concatenate(data_parts), (np.concatenate(row_parts), np.concatenate(col_parts))),
        shape=(row_space.ndof, col_space.ndof),
    )
    return coo.tocsr()


def assemble_flux_loads(test, source, fields, u, quad_order=4):
    """Tested weighted fluxes of a Q1 function, one per coefficient field:
    w[k][j] = int fields[k] grad(u_h) . grad(phi_j^test).

    u holds the coefficients of a function u_h in the Q1 source space; the
    test space may be Q1 or broken-Q2 on any nested mesh of the same domain
    (finer or coarser than the source).  Integration runs on the finer of
    the two meshes, where both bases are polynomial, so each result equals
    the mixed stiffness matrix times u without materializing that matrix.
    The geometry work (gathers and the gradient contraction) is shared
    across the fields.
    """
    if source.kind != Q1:
        raise ValueError("source must be a Q1 space")
    if test.domain != source.domain:
        raise ValueError("test and source spaces must share the domain")
    level = max(test.level, source.level)
    mesh = MeshLevel(level, test.domain)
    n = mesh.n
    h = mesh.h
    s_t = 1 << (level - test.level)
    s_s = 1 << (level - source.level)
    qp, w2 = _tensor_gauss(quad_order)
    dom = mesh.domain
    n_t = test.mesh.n
    n_s = source.mesh.n
    nq = len(qp)

    u = np.asarray(u, dtype=np.float64)
    out = np.zeros((len(fields), test.ndof))
    w2h2 = w2 * h * h
    all_factors = [_coef_factors(field, mesh, quad_order) for field in fields]
    # one of the two spaces lives on the integration mesh, so the offset
    # grid below has extent 1 in at least one factor
    for oy_t in range(s_t):
        for ox_t in range(s_t):
            _, gtest = _shape_tables_offset(test.kind, quad_order, s_t, ox_t, oy_t)
            gtest = gtest / test.mesh.h
            nloc_t = gtest.shape[1]
            # GEMM-shaped tables: (i, q*2) for the source gradients and
            # (q*2, j) for the tested contraction
            gt_mat = np.ascontiguousarray(gtest.transpose(0, 2, 1)).reshape(
                nq * 2, nloc_t
            )
            for oy_s in range(s_s):
                for ox_s in range(s_s):
                    _, gsrc = _shape_tables_offset(Q1, quad_order, s_s, ox_s, oy_s)
                    gsrc = gsrc / source.mesh.h
                    gs_mat = gsrc.transpose(1, 0, 2).reshape(gsrc.shape[1], nq * 2)
                    ex = np.arange(ox_t, n, s_t)
                    ex = ex[(ex - ox_s) % s_s == 0] if s_s > 1 else ex
                    ey = np.arange(oy_t, n, s_t)
                    ey = ey[(ey - oy_s) % s_s == 0] if s_s > 1 else ey
                    EX = np.tile(ex, len(ey))
                    EY = np.repeat(ey, len(ex))
                    for start in range(0, len(EX), _CHUNK):
                        exc = EX[start : start + _CHUNK]
                        eyc = EY[start : start + _CHUNK]

                        sdofs = source.elem_dofs[
                            ((eyc // s_s) * n_s) + (exc // s_s)
                        ]
                        u_loc = np.where(sdofs >= 0, u[np.maximum(sdofs, 0)], 0.0)
                        grad_u = (u_loc @ gs_mat).reshape(-1, nq, 2)
                        tdofs = test.elem_dofs[((eyc // s_t) * n_t) + (exc // s_t)]
                        keep = tdofs >= 0
                        kept_dofs = tdofs[keep]
                        for kf, field in enumerate(fields):
                            coef = _coef_chunk(
                                field, all_factors[kf], dom, h, qp, exc, eyc,
                                quad_order,
                            ) * w2h2
                            w_loc = (coef[:, :, None] * grad_u).reshape(
                                -1, nq * 2
                            ) @ gt_mat
                            out[kf] += np.bincount(
                                kept_dofs,
                                weights=w_loc[keep],
                                minlength=test.ndof,
                            )
    return out


def assemble_flux_load(test, source, coeff, u, quad_order=4):
    """Single-field version of assemble_flux_loads."""
    return assemble_flux_loads(test, source, [coeff], u, quad_order)[0]


def assemble_load(space, f, quad_order=4):
    """Load vector with entries int_D f phi_j dx by element quadrature."""
    mesh = space.mesh
    n = mesh.n
    h = mesh.h
    qp, w2 = _tensor_gauss(quad_order)
    vals, _ = shape_tables(space.kind, qp)
    svec = (w2[:, None] * vals) * (h * h)  # (nq, nloc)
    dom = mesh.domain

    out = np.zeros(space.ndof)
    ex_all = np.tile(np.arange(n), n)
    ey_all = np.repeat(np.arange(n), n)
    for start in range(0, n * n, _CHUNK):
        exc = ex_all[start : start + _CHUNK]
        eyc = ey_all[start : start + _CHUNK]
        x = dom.x0 + (exc[:, None] + qp[None, :, 0]) * h
        y = dom.y0 + (eyc[:, None] + qp[None, :, 1]) * h
        fv = _eval_field(f, x, y)
        evec = fv @ svec  # (ne, nloc)
        dofs = space.elem_dofs[eyc * n + exc]
        keep = dofs >= 0
        np.add.at(out, dofs[keep], evec[keep])
    return out


def prolongation(coarse, fine):
    """Sparse matrix expressing coarse Q1 hats in the fine Q1 basis.

    Columns hold the bilinear interpolation weights; for one level of
    refinement an interior coarse vertex column has the 9 weights
    {1, 1/2 x4, 1/4 x4}, truncated near the boundary.
    """
    if coarse.kind != Q1 or fine.kind != Q1:
        raise ValueError("prolongation is defined for Q1 spaces")
    if coarse.domain != fine.domain:
        raise ValueError("spaces must share the domain")
    if fine.level < coarse.level:
        raise ValueError("fine level must be >= coarse level")
    r = 1 << (fine.level - coarse.level)
    nc = coarse.mesh.n
    fine_ids = fine.vertex_ids()
    coarse_ids = coarse.vertex_ids()

    cx = np.tile(np.arange(1, nc), nc - 1)
    cy = np.repeat(np.arange(1, nc), nc - 1)
    cid = coarse_ids[cy, cx]

    offs = np.arange(-(r - 1), r)
    wts = 1.0 - np.abs(offs) / r
    data_parts, row_parts, col_parts = [], [], []
    for dy, wy in zip(offs, wts):
        for dx, wx in zip(offs, wts):
            fid = fine_ids[cy * r + dy, cx * r + dx]
            keep = fid >= 0
            data_parts.append(np.full(keep.sum(), wx * wy))
            row_parts.append(fid[keep])
            col_parts.append(cid[keep])
    coo = sp.coo_matrix(
        (np.concatenate(data_parts), (np.concatenate(row_parts), np.concatenate(col_parts))),
        shape=(fine.ndof, coarse.ndof),
    )
    return coo.tocsr()


def dump_matrix_market(path, matrix, comment=""):
    """Debug dump in Matrix Market coordinate format."""
    scipy.io.mmwrite(str(path), sp.coo_matrix(matrix), comment=comment)
