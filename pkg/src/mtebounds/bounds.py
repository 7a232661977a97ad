"""Bound estimators: the convex-relaxation program, the threshold-selection
variant, the two nonparametric instrument bounds, and a desk-scale brute-force
bilinear oracle for tiny instances.

The population and sample paths share one assembly: population bounds feed
exact quadrature moments into the same rows that the empirical moments use.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace

import numpy as np

from . import solver
from .assemble import RestrictionSet, assemble_system, build_partition, make_layout
from .dgp import Dataset, MomentSet, empirical_moments
from .model import (
    BOUNDED,
    EMPTY,
    UNBOUNDED,
    BoundsResult,
    ConstraintSystem,
    EnvelopeBounds,
    InstrumentSpace,
    SolverFailure,
    SpecificationError,
    VPartition,
)
from .weights import TargetSpec, WeightSpec, weights_for

__all__ = [
    "cvr_bounds",
    "mst_bounds",
    "manski_bounds",
    "hv_bounds",
    "TinyProblem",
    "brute_force_bilinear",
    "tiny_to_system",
    "bounds_from_system",
]


def _as_moments(moments_or_dataset) -> MomentSet:
    if isinstance(moments_or_dataset, Dataset):
        return empirical_moments(moments_or_dataset)
    if isinstance(moments_or_dataset, MomentSet):
        return moments_or_dataset
    raise SpecificationError(
        f"expected a MomentSet or Dataset, got {type(moments_or_dataset).__name__}"
    )


def bounds_from_system(system: ConstraintSystem) -> BoundsResult:
    """Min and max of the first coordinate over the polytope."""
    lo = solver.solve_lp(system, "min")
    if lo.status == solver.INFEASIBLE:
        return BoundsResult(
            status=EMPTY,
            diagnostics={
                "certificate_violation": lo.certificate["violation"],
                "certificate": lo.certificate,
            },
        )
    if lo.status == solver.NUMERICAL_FAILURE:
        raise SolverFailure(f"lower bound solve failed: {lo.diagnostics}")
    hi = solver.solve_lp(system, "max")
    if hi.status == solver.NUMERICAL_FAILURE:
        raise SolverFailure(f"upper bound solve failed: {hi.diagnostics}")
    if lo.status == solver.UNBOUNDED or hi.status == solver.UNBOUNDED:
        return BoundsResult(status=UNBOUNDED, diagnostics={"sides": (lo.status, hi.status)})
    active_lo = [int(i) for i in np.where(system.residuals(lo.solution)[1] < 1e-7)[0]]
    active_hi = [int(i) for i in np.where(system.residuals(hi.solution)[1] < 1e-7)[0]]
    return BoundsResult(
        status=BOUNDED,
        lower=float(lo.value),
        upper=float(hi.value),
        argmin_eta=lo.solution,
        argmax_eta=hi.solution,
        diagnostics={
            "iterations": (lo.iterations, hi.iterations),
            "active_ineq_lower": active_lo,
            "active_ineq_upper": active_hi,
            "eq_multipliers": (lo.multipliers_eq, hi.multipliers_eq),
        },
    )


def cvr_bounds(
    moments_or_dataset,
    target: TargetSpec,
    restrictions: RestrictionSet | None = None,
    v_dim_assumed: int = 1,
    env: EnvelopeBounds | None = None,
    extra_knots=(),
    include_propensity: bool = False,
) -> BoundsResult:
    """Convex-relaxation bounds on the target over the moment polytope."""
    moments = _as_moments(moments_or_dataset)
    weights = weights_for(target, moments, moments.instruments)
    partition = build_partition(
        weights,
        v_dim_assumed,
        propensities=moments.propensities,
        include_propensity=include_propensity,
        extra_knots=extra_knots,
    )
    system = assemble_system(moments, weights, partition, restrictions, env)
    return bounds_from_system(system)


def mst_bounds(
    moments_or_dataset,
    target: TargetSpec,
    restrictions: RestrictionSet | None = None,
    extra_knots=(),
) -> BoundsResult:
    """Bounds under deterministic monotonicity of the treatment in the
    instrument: scalar heterogeneity, the propensity envelope degenerate to
    the threshold indicator on a propensity-refined partition. A certified
    empty outcome is a substantive misspecification finding."""
    moments = _as_moments(moments_or_dataset)
    restrictions = replace(restrictions or RestrictionSet.none(), deterministic_monotonicity=True)
    weights = weights_for(target, moments, moments.instruments)
    partition = build_partition(
        weights,
        v_dim=1,
        propensities=moments.propensities,
        include_propensity=True,
        extra_knots=extra_knots,
    )
    layout = make_layout(partition, moments.instruments)
    env = EnvelopeBounds.mst(layout, moments.propensities)
    system = assemble_system(moments, weights, partition, restrictions, env)
    return bounds_from_system(system)


def _bracket(cond, scale_lo, scale_hi, keep):
    lower = np.max(cond[keep] + scale_lo[keep])
    upper = np.min(cond[keep] + scale_hi[keep])
    return lower, upper


def manski_bounds(moments_or_dataset, y_bounds: tuple[float, float] = (0.0, 1.0)) -> BoundsResult:
    """Intersection bounds for the average effect from the instrument alone:
    per point, the unobserved potential-outcome mass is bracketed by the
    outcome range, then the brackets are intersected over the support."""
    moments = _as_moments(moments_or_dataset)
    y_lo, y_hi = y_bounds
    keep = moments.z_mass > 0
    p = moments.propensities
    l1, u1 = _bracket(moments.cond_yd, y_lo * (1 - p), y_hi * (1 - p), keep)
    l0, u0 = _bracket(moments.cond_y0d, y_lo * p, y_hi * p, keep)
    diag = {"ey1": (float(l1), float(u1)), "ey0": (float(l0), float(u0))}
    if l1 > u1 + 1e-9 or l0 > u0 + 1e-9:
        diag["reason"] = "potential-outcome brackets cross"
        return BoundsResult(status=EMPTY, diagnostics=diag)
    return BoundsResult(
        status=BOUNDED, lower=float(l1 - u0), upper=float(u1 - l0), diagnostics=diag
    )


def hv_bounds(moments_or_dataset, y_bounds: tuple[float, float] = (0.0, 1.0)) -> BoundsResult:
    """Instrument bounds evaluated only at the extreme propensity points, the
    form implied by a threshold-crossing selection model."""
    moments = _as_moments(moments_or_dataset)
    y_lo, y_hi = y_bounds
    keep = moments.z_mass > 0
    p = np.where(keep, moments.propensities, np.nan)
    at_max = keep & (p >= np.nanmax(p) - 1e-12)
    at_min = keep & (p <= np.nanmin(p) + 1e-12)
    l1, u1 = _bracket(moments.cond_yd, y_lo * (1 - p), y_hi * (1 - p), at_max)
    l0, u0 = _bracket(moments.cond_y0d, y_lo * p, y_hi * p, at_min)
    diag = {"ey1": (float(l1), float(u1)), "ey0": (float(l0), float(u0))}
    if l1 > u1 + 1e-9 or l0 > u0 + 1e-9:
        diag["reason"] = "potential-outcome brackets cross"
        return BoundsResult(status=EMPTY, diagnostics=diag)
    return BoundsResult(
        status=BOUNDED, lower=float(l1 - u0), upper=float(u1 - l0), diagnostics=diag
    )


# ---------------------------------------------------------------------------
# brute-force bilinear oracle (tiny instances only)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TinyProblem:
    """Small bilinear instance: cell volumes, point masses, target weights per
    (cell, z), moment values and coordinate envelopes."""

    vols: np.ndarray            # (KV,)
    z_mass: np.ndarray          # (KZ,)
    e_yd: np.ndarray
    e_y0d: np.ndarray
    e_d: np.ndarray
    w00: np.ndarray             # (KV, KZ)
    w01: np.ndarray
    w10: np.ndarray
    w11: np.ndarray
    m0_lo: np.ndarray           # (KV,)
    m0_up: np.ndarray
    m1_lo: np.ndarray
    m1_up: np.ndarray
    mD_lo: np.ndarray           # (KV, KZ)
    mD_up: np.ndarray
    shift: float = 0.0

    def __post_init__(self):
        for name in (
            "vols", "z_mass", "e_yd", "e_y0d", "e_d",
            "w00", "w01", "w10", "w11",
            "m0_lo", "m0_up", "m1_lo", "m1_up", "mD_lo", "mD_up",
        ):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))

    @property
    def n_cells(self) -> int:
        return self.vols.size

    @property
    def n_z(self) -> int:
        return self.z_mass.size

    @property
    def coefficient_count(self) -> int:
        return 2 * self.n_cells + self.n_cells * self.n_z


def _grids(lo: np.ndarray, up: np.ndarray, g: int):
    out = []
    for l, u in zip(np.ravel(lo), np.ravel(up)):
        out.append(np.array([l]) if u - l < 1e-15 else np.linspace(l, u, g))
    return out


def brute_force_bilinear(problem: TinyProblem, grid_resolution: int = 21, slack_scale: float = 1.0) -> BoundsResult:
    """Enumerate (m0, m1, mD) on the envelope grid with exact products.

    Survivors satisfy every moment row within a slack proportional to the
    grid spacing; the returned interval is the target range over survivors.
    Exactness of the products makes this an oracle for the bilinear truth,
    independent of any linear-programming relaxation. Given the propensity
    grid point, feasibility and the target separate additively between the
    m0 and m1 blocks, which is exploited for speed (the survivor set and the
    extrema are identical to the full joint enumeration).
    """
    if problem.coefficient_count > 12:
        raise SpecificationError(
            f"brute force limited to 12 coefficients, got {problem.coefficient_count}"
        )
    if grid_resolution > 41:
        raise SpecificationError(f"grid resolution limited to 41, got {grid_resolution}")
    kv, kz = problem.n_cells, problem.n_z
    vols, mass = problem.vols, problem.z_mass
    md_grids = _grids(problem.mD_lo, problem.mD_up, grid_resolution)
    m0_grids = _grids(problem.m0_lo, problem.m0_up, grid_resolution)
    m1_grids = _grids(problem.m1_lo, problem.m1_up, grid_resolution)
    h = max(
        (g[1] - g[0] if g.size > 1 else 0.0) for g in md_grids + m0_grids + m1_grids
    )
    slack = slack_scale * max(h, 1e-12) * np.maximum(mass, 1e-12)
    m0_combos = np.array(list(itertools.product(*m0_grids)))  # (N0, KV)
    m1_combos = np.array(list(itertools.product(*m1_grids)))
    best_lo, best_hi = np.inf, -np.inf
    n_feasible = 0
    for md_flat in itertools.product(*md_grids):
        md = np.asarray(md_flat).reshape(kv, kz)
        if np.any(np.abs(vols @ md * mass - problem.e_d) > slack):
            continue
        # treated side: sum_c vol m1_c md_cz mass_z = e_yd_z
        coef1 = (vols[:, None] * md) * mass[None, :]          # (KV, KZ)
        res1 = np.abs(m1_combos @ coef1 - problem.e_yd)       # (N1, KZ)
        ok1 = np.all(res1 <= slack, axis=1)
        if not np.any(ok1):
            continue
        coef0 = (vols[:, None] * (1.0 - md)) * mass[None, :]
        res0 = np.abs(m0_combos @ coef0 - problem.e_y0d)
        ok0 = np.all(res0 <= slack, axis=1)
        if not np.any(ok0):
            continue
        n_feasible += 1
        beta1 = ((1.0 - md) * problem.w10 + md * problem.w11) * mass[None, :]
        beta1 = vols * beta1.sum(axis=1)
        beta0 = ((1.0 - md) * problem.w00 + md * problem.w01) * mass[None, :]
        beta0 = vols * beta0.sum(axis=1)
        g1 = m1_combos[ok1] @ beta1
        g0 = m0_combos[ok0] @ beta0
        best_lo = min(best_lo, float(g0.min() + g1.min()))
        best_hi = max(best_hi, float(g0.max() + g1.max()))
    if n_feasible == 0:
        return BoundsResult(
            status=EMPTY,
            diagnostics={"reason": "no feasible grid point at this resolution", "grid_h": h},
        )
    return BoundsResult(
        status=BOUNDED,
        lower=best_lo + problem.shift,
        upper=best_hi + problem.shift,
        diagnostics={"grid_h": h, "feasible_propensity_points": n_feasible},
    )


def tiny_to_system(problem: TinyProblem, restrictions: RestrictionSet | None = None) -> ConstraintSystem:
    """Assemble the relaxation system for a tiny instance (containment checks)."""
    kv, kz = problem.n_cells, problem.n_z
    instruments = InstrumentSpace(
        points=tuple((float(l),) for l in range(kz)),
        probabilities=tuple(problem.z_mass),
    )
    knots = np.concatenate([[0.0], np.cumsum(problem.vols)])
    knots[-1] = 1.0
    partition = VPartition.from_knots(knots, dim=1)
    moments = MomentSet(
        instruments=instruments,
        z_mass=problem.z_mass,
        e_yd=problem.e_yd,
        e_y0d=problem.e_y0d,
        e_d=problem.e_d,
    )
    w = np.stack([problem.w00, problem.w01, problem.w10, problem.w11])  # (4, KV, KZ)

    def omega(v1, z_idx, _w=w, _p=partition):
        v1 = np.atleast_1d(v1)
        cells = [_p.cell_index_of([x]) for x in v1]
        return _w[:, cells, z_idx]

    varies = any(np.ptp(w[:, :, l]) > 0 for l in range(kz)) and kv > 1
    weights = WeightSpec(
        omega=omega,
        v_discontinuities=tuple(knots[1:-1]) if varies else (),
        depends_on_v=varies,
        shift=problem.shift,
    )
    layout = make_layout(partition, instruments)
    env = EnvelopeBounds(
        m0_lower=problem.m0_lo.reshape(kv, 1),
        m0_upper=problem.m0_up.reshape(kv, 1),
        m1_lower=problem.m1_lo.reshape(kv, 1),
        m1_upper=problem.m1_up.reshape(kv, 1),
        mD_lower=problem.mD_lo.reshape(kv, kz),
        mD_upper=problem.mD_up.reshape(kv, kz),
    )
    return assemble_system(moments, weights, partition, restrictions, env)
