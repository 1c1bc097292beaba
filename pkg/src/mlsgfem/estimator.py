"""Two-part hierarchical energy error estimator.

The detail space pairs every primal mode with a broken-Q2 space on its own
mesh (spatial part) and every candidate neighbor index with one shared Q1
space (parametric part).  The mean-coefficient bilinear form decouples the
detail problem into independent SPD solves whose B0-norms aggregate into the
total estimate.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import chaos, fem
from .chaos import IndexSet, MultiIndex, active_dimension, coupling_entries
from .fem import BROKEN_Q2, Q1


def argavg_level(levels):
    """Smallest level with at least ceil(card/2) spaces at or below it."""
    levels = sorted(levels)
    if not levels:
        raise ValueError("empty level multiset")
    need = -(-len(levels) // 2)  # ceil division
    return levels[need - 1]


@dataclass(frozen=True)
class ComponentEstimates:
    """Per-component error estimates and detail-space dimensions."""

    spatial: dict  # mu in J_P -> (B0-norm estimate, dim of broken-Q2 space)
    parametric: dict  # nu in J_Q -> (B0-norm estimate, dim of shared Q1 space)
    bar_mu_level: int
    j_q: IndexSet


def spatial_components(u, space, coefficient, f, cache, quad_order=4):
    """Solve the decoupled detail problems on the broken-Q2 spaces.

    For each primal mode the residual of the full bilinear form is tested
    against the mode's broken-Q2 basis: mixed terms against the Q1 spaces of
    the mode itself and of its coupled neighbors within J_P are evaluated
    matrix-free by quadrature sweeps.
    """
    j_p = space.index_set
    m_active = active_dimension(j_p)
    flat = u.data

    rhs = {}
    for i, mu in enumerate(j_p):
        lvl = space.levels[i]
        det = cache.space(BROKEN_Q2, lvl)
        if mu == MultiIndex.zero():
            r = fem.assemble_load(det, f, quad_order)
        else:
            r = np.zeros(det.ndof)
        r -= fem.assemble_flux_load(
            det, space.spaces[i], coefficient.a0,
            flat[space.block_slice(i)], quad_order,
        )
        rhs[mu] = r
    for m in range(1, m_active + 1):
        for i, j, g in coupling_entries(m, j_p, j_p):
            mu = j_p[i]
            det = cache.space(BROKEN_Q2, space.levels[i])
            rhs[mu] -= g * fem.assemble_flux_load(
                det, space.spaces[j], coefficient.term(m),
                flat[space.block_slice(j)], quad_order,
            )

    out = {}
    for i, mu in enumerate(j_p):
        lvl = space.levels[i]
        fac = cache.a0_solver(BROKEN_Q2, lvl)
        e = fac.solve(rhs[mu])
        est_sq = max(float(e @ rhs[mu]), 0.0)
        out[mu] = (math.sqrt(est_sq), cache.space(BROKEN_Q2, lvl).ndof)
    return out


def parametric_components(u, space, coefficient, f, j_q, h_level, cache, quad_order=4):
    """Solve the decoupled detail problems on the shared Q1 space.

    One factorization of the a0-stiffness on the shared level serves every
    candidate index; the load functional vanishes on all of them, so the
    right-hand sides are pure coupling terms against the primal solution,
    evaluated matrix-free and shared across candidates coupled to the same
    primal mode.
    """
    j_p = space.index_set
    if any(nu in j_p for nu in j_q):
        raise ValueError("j_q must be disjoint from the primal index set")
    h_space = cache.space(Q1, h_level)
    flat = u.data

    n_q = len(j_q)
    out = {}
    if n_q == 0:
        return out
    rhs = np.zeros((h_space.ndof, n_q))
    # any coupled (nu, mu) pair differs in a position supported by nu
    m_cap = max((nu.max_support for nu in j_q), default=0)
    tasks = {}  # source mode ordinal -> [(m, candidate ordinal, coupling)]
    for m in range(1, m_cap + 1):
        for i, j, g in coupling_entries(m, j_q, j_p):
            tasks.setdefault(j, []).append((m, i, g))
    for j, items in tasks.items():
        ms = sorted({m for m, _, _ in items})
        fluxes = fem.assemble_flux_loads(
            h_space,
            space.spaces[j],
            [coefficient.term(m) for m in ms],
            flat[space.block_slice(j)],
            quad_order,
        )
        by_m = dict(zip(ms, fluxes))
        for m, i, g in items:
            rhs[:, i] -= g * by_m[m]

    fac = cache.a0_solver(Q1, h_level)
    sol = fac.solve(rhs)
    if sol.ndim == 1:
        sol = sol[:, None]
    for i, nu in enumerate(j_q):
        est_sq = max(float(sol[:, i] @ rhs[:, i]), 0.0)
        out[nu] = (math.sqrt(est_sq), h_space.ndof)
    return out


def estimate(u, space, coefficient, f, cache, delta_m=5, quad_order=4):
    """Full estimator sweep: build J_Q, solve both component families."""
    j_q = chaos.neighbor_set(space.index_set, delta_m)
    bar_level = argavg_level(space.levels)
    spatial = spatial_components(u, space, coefficient, f, cache, quad_order)
    parametric = parametric_components(
        u, space, coefficient, f, j_q, bar_level, cache, quad_order
    )
    return ComponentEstimates(
        spatial=spatial, parametric=parametric, bar_mu_level=bar_level, j_q=j_q
    )


def total_estimate(components):
    """eta: square root of the sum of squared component estimates."""
    total = sum(e * e for e, _ in components.spatial.values())
    total += sum(e * e for e, _ in components.parametric.values())
    return math.sqrt(total)


def effectivity(eta, energy_sq, reference_energy):
    """Ratio of the estimate to the reference-based energy error."""
    gap = reference_energy * reference_energy - energy_sq
    if gap <= 0:
        raise ValueError(
            "reference energy is not above the current energy; the reference "
            "run is stale or wrong"
        )
    return eta / math.sqrt(gap)
