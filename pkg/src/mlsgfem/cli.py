"""Configuration, run driver and reporting.

A run writes three deterministic artifacts into the output directory:

steps.csv        one row per adaptive step (dofs, estimate, decision,
                 iteration counts, wall-clock stage timings)
modes.csv        final multi-index set with mesh level and element width
summary.json     final estimate, step count, structure statistics
components.json  per-step component estimates (mode, level, estimate, dofs)

Floats in the CSV files carry 17 significant digits.  Exit codes: 0 on
convergence, 1 on configuration errors, 2 when a safety cap was exhausted.
"""

import argparse
import csv
import dataclasses
import json
import math
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

import numpy as np

from . import adapt, coeffs
from .adapt import SolveOptions

_PROBLEMS = ("tp1", "tp2", "tp3", "tp4", "custom")


@dataclasses.dataclass
class RunConfig:
    problem: str = "tp3"
    version: int = 1
    tol: float = 2e-3
    delta_m: int = 5
    initial_indices: tuple = ((), ((1, 1),))
    initial_levels: tuple = (4, 4)
    quad_order: int = 4
    pcg_tol: float = 1e-10
    pcg_max_iter: int = 1000
    max_steps: int = 200
    max_dof: int = 2_000_000
    level_cap: int = 10
    out: str = "out"
    reference_energy: float = None
    custom_a0: float = 1.0
    custom_terms: tuple = ()

    def validate(self):
        if self.problem not in _PROBLEMS:
            raise ValueError(f"problem must be one of {_PROBLEMS}")
        if self.version not in (1, 2):
            raise ValueError("version must be 1 or 2")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.delta_m < 1:
            raise ValueError("delta_m must be >= 1")
        if len(self.initial_levels) != len(self.initial_indices):
            raise ValueError("initial_levels and initial_indices disagree")
        if self.problem == "custom" and not self.custom_terms:
            raise ValueError("custom problem requires custom_terms")
        return self

    def solve_options(self):
        return SolveOptions(
            version=self.version,
            tol=self.tol,
            delta_m=self.delta_m,
            initial_indices=self.initial_indices,
            initial_levels=tuple(self.initial_levels),
            quad_order=self.quad_order,
            pcg_tol=self.pcg_tol,
            pcg_max_iter=self.pcg_max_iter,
            max_steps=self.max_steps,
            max_dof=self.max_dof,
            level_cap=self.level_cap,
        )


def load_config(path=None, overrides=None):
    """Config from an optional TOML file, with flag overrides winning."""
    values = {}
    if path is not None:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
        custom = raw.pop("custom", {})
        if "a0" in custom:
            values["custom_a0"] = float(custom["a0"])
        if "terms" in custom:
            values["custom_terms"] = tuple(tuple(t) for t in custom["terms"])
        known = {f.name for f in dataclasses.fields(RunConfig)}
        for key, val in raw.items():
            if key not in known:
                raise ValueError(f"unknown config key {key!r}")
            values[key] = val
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    if "initial_indices" in values:
        values["initial_indices"] = tuple(
            tuple(tuple(p) for p in mu) for mu in values["initial_indices"]
        )
    if "initial_levels" in values:
        values["initial_levels"] = tuple(values["initial_levels"])
    return RunConfig(**values).validate()


def _make_problem(config):
    if config.problem == "custom":
        return coeffs.make_custom_problem(config.custom_a0, config.custom_terms)
    return coeffs.make_problem(config.problem)


def _fmt(x):
    return f"{x:.17g}"


def _mu_label(mu):
    return ";".join(f"{p}:{d}" for p, d in mu.entries)


def _write_steps_csv(path, records):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "k",
                "N_dof",
                "eta",
                "energy_sq",
                "refinement_type",
                "card_JP",
                "M",
                "n_marked",
                "pcg_iters",
                "t_solve_s",
                "t_estimate_s",
            ]
        )
        for r in records:
            writer.writerow(
                [
                    r.step,
                    r.n_dof,
                    _fmt(r.eta),
                    _fmt(r.energy_sq),
                    r.refinement_type,
                    r.card_jp,
                    r.active_m,
                    r.n_marked,
                    r.pcg_iters,
                    _fmt(r.t_solve),
                    _fmt(r.t_estimate),
                ]
            )


def _write_modes_csv(path, space):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mu", "level", "h"])
        for mu, lvl in zip(space.index_set, space.levels):
            h = space.domain.side * 2.0 ** (-lvl)
            writer.writerow([_mu_label(mu), lvl, _fmt(h)])


def _write_components_json(path, records):
    payload = []
    for r in records:
        payload.append(
            {
                "k": r.step,
                "bar_mu_level": r.bar_mu_level,
                "spatial": [
                    {"mu": mu.to_json(), "level": lvl, "estimate": est, "n_dof": nd}
                    for mu, lvl, est, nd in r.spatial_components
                ],
                "parametric": [
                    {"mu": mu.to_json(), "level": lvl, "estimate": est, "n_dof": nd}
                    for mu, lvl, est, nd in r.parametric_components
                ],
            }
        )
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def _summary(config, result):
    space = result.space
    level_counts = {}
    for lvl in sorted(space.levels):
        level_counts[str(lvl)] = level_counts.get(str(lvl), 0) + 1
    summary = {
        "problem": config.problem,
        "version": config.version,
        "tol": config.tol,
        "delta_m": config.delta_m,
        "status": result.status,
        "steps": len(result.records),
        "K": result.records[-1].step,
        "final_eta": result.eta,
        "energy": math.sqrt(max(result.energy_sq, 0.0)),
        "energy_sq": result.energy_sq,
        "n_dof": space.ndof,
        "card_jp": len(space.index_set),
        "active_m": result.records[-1].active_m,
        "mode_level_counts": level_counts,
        "stiffness_matrices": result.stiffness_matrix_count,
        "naive_bound": result.naive_bound,
    }
    if config.reference_energy is not None:
        summary["reference_energy"] = config.reference_energy
        gap = config.reference_energy**2 - result.energy_sq
        summary["final_error"] = math.sqrt(gap) if gap > 0 else None
    return summary


def run(config):
    """Execute one adaptive run and write the artifacts.

    Returns (exit_code, result).
    """
    problem = _make_problem(config)
    result = adapt.adaptive_solve(problem, config.solve_options())
    outdir = Path(config.out)
    outdir.mkdir(parents=True, exist_ok=True)
    _write_steps_csv(outdir / "steps.csv", result.records)
    _write_modes_csv(outdir / "modes.csv", result.space)
    _write_components_json(outdir / "components.json", result.records)
    with open(outdir / "summary.json", "w") as fh:
        json.dump(_summary(config, result), fh, indent=1)
        fh.write("\n")
    return (0 if result.status == "converged" else 2), result


def reference_run(problem, tight_tolerance, **options):
    """Energy sqrt(u . b) of a run at a tight tolerance, for effectivities."""
    config_fields = {f.name for f in dataclasses.fields(RunConfig)}
    config = RunConfig(
        problem=problem,
        tol=tight_tolerance,
        **{k: v for k, v in options.items() if k in config_fields},
    ).validate()
    prob = _make_problem(config)
    result = adapt.adaptive_solve(prob, config.solve_options())
    if result.status != "converged":
        raise RuntimeError(f"reference run did not converge: {result.status}")
    return math.sqrt(result.energy_sq)


def fit_slope(steps, tail_fraction=0.6):
    """Least-squares slope of log(eta) vs log(N_dof) over the trailing steps.

    steps is a steps.csv path or an iterable of (N_dof, eta) pairs.
    """
    if not 0 < tail_fraction <= 1:
        raise ValueError("tail_fraction must be in (0, 1]")
    if isinstance(steps, (str, Path)):
        rows = []
        with open(steps, newline="") as fh:
            for row in csv.DictReader(fh):
                rows.append((int(row["N_dof"]), float(row["eta"])))
    else:
        rows = [(int(n), float(eta)) for n, eta in steps]
    n_tail = max(int(math.ceil(tail_fraction * len(rows))), 0)
    tail = rows[len(rows) - n_tail :]
    if len(tail) < 4:
        raise ValueError("need at least 4 tail points to fit a slope")
    logn = np.log([r[0] for r in tail])
    loge = np.log([r[1] for r in tail])
    return float(np.polyfit(logn, loge, 1)[0])


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="mlsgfem",
        description="Adaptive multilevel stochastic Galerkin FEM runs",
    )
    parser.add_argument("--config", type=str, default=None, help="TOML config file")
    parser.add_argument("--problem", type=str, choices=_PROBLEMS, default=None)
    parser.add_argument("--version", type=int, choices=(1, 2), default=None)
    parser.add_argument("--tol", type=float, default=None, help="energy error tolerance")
    parser.add_argument("--delta-m", dest="delta_m", type=int, default=None)
    parser.add_argument("--max-dof", dest="max_dof", type=int, default=None)
    parser.add_argument("--max-steps", dest="max_steps", type=int, default=None)
    parser.add_argument("--out", type=str, default=None, help="output directory")
    parser.add_argument(
        "--reference-energy",
        dest="reference_energy",
        type=float,
        default=None,
        help="known reference energy, echoed into the summary",
    )
    parser.add_argument("--quad-order", dest="quad_order", type=int, default=None)
    parser.add_argument("--pcg-tol", dest="pcg_tol", type=float, default=None)
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    overrides = {
        k: v for k, v in vars(args).items() if k != "config" and v is not None
    }
    try:
        config = load_config(args.config, overrides)
    except (OSError, ValueError, tomllib.TOMLDecodeError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return 1
    code, result = run(config)
    print(
        f"{config.problem} v{config.version} tol={config.tol:g}: "
        f"status={result.status} steps={len(result.records)} "
        f"eta={result.eta:.6g} N_dof={result.space.ndof}"
    )
    return code


if __name__ == "__main__":
    sys.exit(main())
