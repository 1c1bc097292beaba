"""Adaptive driver: enrichment-index selection and the main loop.

Each step solves the primal system, estimates the error, and either stops or
performs exactly one enrichment: refine the meshes of a marked subset of
modes (spatial), or activate a marked subset of neighbor indices
(parametric).  The choice maximizes estimated error reduction per added
degree of freedom; no tuning parameters enter the decision.
"""

import time
from dataclasses import dataclass, field

from . import chaos, estimator, fem, system
from .chaos import IndexSet, MultiIndex, active_dimension
from .fem import Q1
from .system import AssemblyCache, BlockVector, MultilevelSpace

# argmax sets absorb floating-point ties within this relative window
_TIE_REL = 1e-12


@dataclass(frozen=True)
class EnrichmentDecision:
    refinement_type: str  # "spatial" | "parametric"
    marked: IndexSet
    diagnostics: dict


@dataclass
class StepRecord:
    step: int
    n_dof: int
    eta: float
    energy_sq: float
    refinement_type: str  # decision taken, or "none" on the final step
    n_marked: int
    card_jp: int
    active_m: int
    pcg_iters: int
    t_solve: float
    t_estimate: float
    bar_mu_level: int
    spatial_components: list = field(default_factory=list)
    parametric_components: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)


@dataclass
class SolveOptions:
    version: int = 1
    tol: float = 1e-3
    delta_m: int = 5
    initial_indices: tuple = ((), ((1, 1),))  # JSON-style sparse pairs
    initial_levels: tuple = (4, 4)
    quad_order: int = 4
    pcg_tol: float = 1e-10
    pcg_max_iter: int = 1000
    max_steps: int = 200
    max_dof: int = 2_000_000
    level_cap: int = 10


@dataclass
class AdaptiveResult:
    status: str  # "converged" | "max_steps" | "max_dof" | "level_cap"
    solution: BlockVector
    space: MultilevelSpace
    records: list
    eta: float
    energy_sq: float
    stiffness_matrix_count: int
    naive_bound: int


def _ratio_sets(components):
    """(index, est^2, ndof, ratio) rows in component order."""
    rows = []
    for mu, (est, ndof) in components.items():
        rows.append((mu, est * est, ndof, est * est / ndof))
    return rows


def _argmax_set(rows):
    delta = max(r[3] for r in rows)
    keep = [r for r in rows if r[3] >= delta * (1.0 - _TIE_REL)]
    return delta, keep


def _aggregate(rows):
    zeta = sum(r[1] for r in rows)
    n = sum(r[2] for r in rows)
    return zeta, n, (zeta / n if n else 0.0)


def _threshold_set(rows, cutoff):
    """Version 1 rule: everything strictly above the other side's maximum."""
    keep = [r for r in rows if r[3] > cutoff]
    if not keep:  # degenerate exact tie; fall back to the argmax set
        _, keep = _argmax_set(rows)
    return keep


def _mark_prefix(rows, cutoff):
    """Version 2 rule: longest ratio-sorted prefix with aggregate ratio
    above the other side's maximum (greedy bulk-chasing sweep)."""
    order = sorted(range(len(rows)), key=lambda i: (-rows[i][3], i))
    best = 0
    zeta = 0.0
    n = 0
    for length, i in enumerate(order, start=1):
        zeta += rows[i][1]
        n += rows[i][2]
        if zeta / n > cutoff:
            best = length
    if best == 0:
        _, keep = _argmax_set(rows)
        return keep
    return [rows[i] for i in sorted(order[:best])]


def _decide(version, spatial_est, parametric_est):
    rows_p = _ratio_sets(spatial_est)
    rows_q = _ratio_sets(parametric_est)
    if not rows_p or not rows_q:
        raise ValueError("both component families must be nonempty")
    delta_y1, argmax_p = _argmax_set(rows_p)
    delta_y2, argmax_q = _argmax_set(rows_q)

    if delta_y1 > delta_y2:
        bar_q = argmax_q
        bar_p = (
            _threshold_set(rows_p, delta_y2)
            if version == 1
            else _mark_prefix(rows_p, delta_y2)
        )
    else:
        bar_p = argmax_p
        bar_q = (
            _threshold_set(rows_q, delta_y1)
            if version == 1
            else _mark_prefix(rows_q, delta_y1)
        )

    zeta_w1, n_w1, r_w1 = _aggregate(bar_p)
    zeta_w2, n_w2, r_w2 = _aggregate(bar_q)
    if r_w1 > r_w2:
        refinement_type, marked_rows = "spatial", bar_p
    else:
        refinement_type, marked_rows = "parametric", bar_q
    marked = IndexSet([r[0] for r in marked_rows])
    diagnostics = {
        "delta_y1": delta_y1,
        "delta_y2": delta_y2,
        "zeta_w1": zeta_w1,
        "zeta_w2": zeta_w2,
        "n_w1": n_w1,
        "n_w2": n_w2,
        "r_w1": r_w1,
        "r_w2": r_w2,
        "bar_jp": [r[0] for r in bar_p],
        "bar_jq": [r[0] for r in bar_q],
    }
    return EnrichmentDecision(refinement_type, marked, diagnostics)


def enrichment_indices_v1(spatial_est, parametric_est):
    """Mark all components of the dominant side whose reduction ratio beats
    the other side's best; the other side keeps only its argmax set."""
    return _decide(1, spatial_est, parametric_est)


def enrichment_indices_v2(spatial_est, parametric_est):
    """As version 1, but the dominant side is marked by the greedy prefix
    sweep, which can only enlarge the version-1 set."""
    return _decide(2, spatial_est, parametric_est)


def apply_refinement(space, decision, bar_mu_level):
    """One enrichment step; the result strictly contains the old space."""
    if len(decision.marked) == 0:
        raise ValueError("empty marked set")
    j_p = space.index_set
    if decision.refinement_type == "spatial":
        levels = list(space.levels)
        for mu in decision.marked:
            levels[j_p.ordinal(mu)] += 1
        return MultilevelSpace(j_p, levels, space.domain, space.level_cap)
    by_index = dict(zip(j_p, space.levels))
    for nu in decision.marked:
        if nu in by_index:
            raise ValueError(f"marked index {nu} already active")
        by_index[nu] = bar_mu_level
    new_set = IndexSet.sorted_graded_lex(by_index.keys())
    new_levels = [by_index[mu] for mu in new_set]
    return MultilevelSpace(new_set, new_levels, space.domain, space.level_cap)


def transfer_solution(u, old_space, new_space):
    """Previous solution prolonged/zero-padded onto the enriched space."""
    out = BlockVector(new_space)
    old_map = {
        mu: (i, old_space.levels[i]) for i, mu in enumerate(old_space.index_set)
    }
    for j, mu in enumerate(new_space.index_set):
        hit = old_map.get(mu)
        if hit is None:
            continue
        i, old_lvl = hit
        new_lvl = new_space.levels[j]
        block = u.data[old_space.block_slice(i)]
        if new_lvl == old_lvl:
            out.data[new_space.block_slice(j)] = block
        else:
            p = fem.prolongation(old_space.spaces[i], new_space.spaces[j])
            out.data[new_space.block_slice(j)] = p @ block
    return out


def _initial_space(problem, options):
    indices = IndexSet(
        [MultiIndex.from_json(obj) for obj in options.initial_indices]
    )
    return MultilevelSpace(
        indices, options.initial_levels, problem.domain, options.level_cap
    )


def adaptive_solve(problem, options=None):
    """Run the adaptive loop on a test problem until eta < tol or a cap hits.

    Returns the final solution and one record per step; cap exhaustion is
    reported through the result status rather than raised.
    """
    options = options or SolveOptions()
    if options.version not in (1, 2):
        raise ValueError("version must be 1 or 2")
    coeff = problem.coefficient
    cache = AssemblyCache(
        coeff, quad_order=options.quad_order, level_cap=options.level_cap
    )
    space = _initial_space(problem, options)
    records = []
    u = None
    prev = None
    status = "max_steps"

    for k in range(options.max_steps + 1):
        if space.ndof > options.max_dof:
            if prev is None:
                raise ValueError("initial space already exceeds max_dof")
            status = "max_dof"
            space, u = prev  # report the last completed step's space
            break

        t0 = time.perf_counter()
        coeff.ensure_terms(active_dimension(space.index_set))
        op = system.build_operator(space, coeff, cache=cache)
        rhs = system.assemble_rhs(space, problem.load, options.quad_order)
        precond = system.mean_preconditioner(space, cache)
        x0 = transfer_solution(u, prev[0], space) if prev else None
        u, iters = system.pcg_solve(
            op,
            rhs,
            precond,
            rel_tol=options.pcg_tol,
            max_iter=options.pcg_max_iter,
            x0=x0,
        )
        t_solve = time.perf_counter() - t0

        t1 = time.perf_counter()
        comps = estimator.estimate(
            u,
            space,
            coeff,
            problem.load,
            cache,
            delta_m=options.delta_m,
            quad_order=options.quad_order,
        )
        eta = estimator.total_estimate(comps)
        t_estimate = time.perf_counter() - t1
        energy_sq = system.energy_norm_sq(u, rhs)

        record = StepRecord(
            step=k,
            n_dof=space.ndof,
            eta=eta,
            energy_sq=energy_sq,
            refinement_type="none",
            n_marked=0,
            card_jp=len(space.index_set),
            active_m=active_dimension(space.index_set),
            pcg_iters=iters,
            t_solve=t_solve,
            t_estimate=t_estimate,
            bar_mu_level=comps.bar_mu_level,
            spatial_components=[
                (mu, space.level_of(mu), est, ndof)
                for mu, (est, ndof) in comps.spatial.items()
            ],
            parametric_components=[
                (nu, comps.bar_mu_level, est, ndof)
                for nu, (est, ndof) in comps.parametric.items()
            ],
        )
        records.append(record)

        if eta < options.tol:
            status = "converged"
            break
        if k == options.max_steps:
            status = "max_steps"
            break

        decision = (
            enrichment_indices_v1(comps.spatial, comps.parametric)
            if options.version == 1
            else enrichment_indices_v2(comps.spatial, comps.parametric)
        )
        record.refinement_type = decision.refinement_type
        record.n_marked = len(decision.marked)
        record.diagnostics = decision.diagnostics
        try:
            new_space = apply_refinement(space, decision, comps.bar_mu_level)
        except fem.LevelCapError:
            status = "level_cap"
            break
        prev = (space, u)
        space = new_space

    trips = system.distinct_stiffness_triplets(space)
    m_final = active_dimension(space.index_set)
    return AdaptiveResult(
        status=status,
        solution=u,
        space=space,
        records=records,
        eta=records[-1].eta,
        energy_sq=records[-1].energy_sq,
        stiffness_matrix_count=len(trips),
        naive_bound=(1 + 2 * m_final) * len(space.index_set),
    )
