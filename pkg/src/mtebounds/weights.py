"""Target parameters, their weight functions and spline-basis coefficients.

Each supported target is a weighted average of the five unknown functions;
``weights_for`` returns the four weight functions (w00, w01, w10, w11)
attached to the untreated/treated blocks, and ``target_coefficients`` turns
them into the coefficient vector t_star with ``eta1 = t_star' eta2 + shift``.

Weight conventions per (v, z):

    target = E_Z int [ m0D w00 + (m0 - m0D) w01 + (m1 - m1D) w10 + m1D w11 ] dv
             (+ an identified shift, used only by the policy-change target,
              whose bounds are bounds on the counterfactual mean shifted by
              the point-identified observed mean).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable

import numpy as np

from .model import BasisLayout, InstrumentSpace, SpecificationError, VPartition

if TYPE_CHECKING:  # pragma: no cover
    from .dgp import MomentSet

__all__ = ["TargetSpec", "WeightSpec", "weights_for", "target_coefficients", "TARGET_KINDS"]

TARGET_KINDS = (
    "avg_untreated",
    "avg_treated",
    "ate",
    "ate_given_x",
    "att",
    "atu",
    "generalized_late",
    "prte",
    "avg_selection_bias",
    "avg_selection_on_gain",
)


@dataclass(frozen=True)
class TargetSpec:
    """Which policy-relevant effect to bound, plus target-specific parameters."""

    kind: str
    v_lo: float | None = None          # generalized_late only, on the first axis
    v_hi: float | None = None
    x_star: tuple = ()                 # ate_given_x: union of discrete x labels

    def violations(self) -> list[str]:
        out = []
        if self.kind not in TARGET_KINDS:
            out.append(f"unknown target kind {self.kind!r}")
        if self.kind == "generalized_late":
            if self.v_lo is None or self.v_hi is None:
                out.append("generalized_late needs v_lo and v_hi")
            elif not (0.0 <= self.v_lo < self.v_hi <= 1.0):
                out.append("generalized_late needs 0 <= v_lo < v_hi <= 1")
        if self.kind == "ate_given_x" and not self.x_star:
            out.append("ate_given_x needs a nonempty x_star set")
        return out

    def require_valid(self) -> "TargetSpec":
        bad = self.violations()
        if bad:
            raise SpecificationError("; ".join(bad))
        return self


@dataclass(frozen=True)
class WeightSpec:
    """Evaluator for the four target weights plus structural metadata.

    ``omega(v1, z_idx)`` takes an array of first-axis points and an
    instrument index and returns the stacked weights, shape (4, len(v1)).
    ``shift`` is the identified constant added to the weighted average; in
    the sample it decomposes observation-wise as ``shift_obs``.
    """

    omega: Callable[[np.ndarray, int], np.ndarray]
    v_discontinuities: tuple[float, ...] = ()
    depends_on_v: bool = False
    shift: float = 0.0
    shift_obs: str = "none"  # none | minus_y
    kind: str = ""

    def at_cell(self, partition: VPartition, cell: int, z_idx: int) -> np.ndarray:
        """Cell integral of each weight (exact for cellwise-constant weights)."""
        mid = partition.cell_midpoint(cell)
        vol = partition.cell_volume(cell)
        return self.omega(np.atleast_1d(mid[0]), z_idx)[:, 0] * vol


def _const(w00, w01, w10, w11) -> Callable[[np.ndarray, int], np.ndarray]:
    row = np.array([w00, w01, w10, w11], dtype=float)

    def omega(v1, z_idx):
        v1 = np.atleast_1d(v1)
        return np.repeat(row[:, None], v1.size, axis=1)

    return omega


def weights_for(target: TargetSpec, moments: "MomentSet", instruments: InstrumentSpace) -> WeightSpec:
    """Weight functions for ``target``; identified denominators come from ``moments``."""
    target.require_valid()
    kind = target.kind
    if kind == "avg_untreated":
        return WeightSpec(_const(1, 1, 0, 0), kind=kind)
    if kind == "avg_treated":
        return WeightSpec(_const(0, 0, 1, 1), kind=kind)
    if kind == "ate":
        return WeightSpec(_const(-1, -1, 1, 1), kind=kind)
    if kind == "att":
        p1 = moments.p_d1
        if p1 <= 0:
            raise SpecificationError("att needs P(D=1) > 0")
        return WeightSpec(_const(0, -1 / p1, 0, 1 / p1), kind=kind)
    if kind == "atu":
        p0 = 1.0 - moments.p_d1
        if p0 <= 0:
            raise SpecificationError("atu needs P(D=0) > 0")
        return WeightSpec(_const(-1 / p0, 0, 1 / p0, 0), kind=kind)
    if kind == "avg_selection_bias":
        p1 = moments.p_d1
        p0 = 1.0 - p1
        if p1 <= 0 or p0 <= 0:
            raise SpecificationError("avg_selection_bias needs 0 < P(D=1) < 1")
        return WeightSpec(_const(-1 / p0, 1 / p1, 0, 0), kind=kind)
    if kind == "avg_selection_on_gain":
        p1 = moments.p_d1
        p0 = 1.0 - p1
        if p1 <= 0 or p0 <= 0:
            raise SpecificationError("avg_selection_on_gain needs 0 < P(D=1) < 1")
        return WeightSpec(_const(1 / p0, -1 / p1, -1 / p0, 1 / p1), kind=kind)
    if kind == "ate_given_x":
        labels = instruments.x_labels
        mass = moments.z_mass
        p_x = float(sum(mass[l] for l in range(instruments.n_z) if labels[l] in target.x_star))
        if p_x <= 0:
            raise SpecificationError("ate_given_x: P(X in x_star) is zero")

        def omega(v1, z_idx, _labels=labels, _sel=set(target.x_star), _p=p_x):
            v1 = np.atleast_1d(v1)
            w = (1.0 if _labels[z_idx] in _sel else 0.0) / _p
            return np.vstack([-w, -w, w, w]) * np.ones((4, v1.size))

        return WeightSpec(omega, kind=kind)
    if kind == "generalized_late":
        lo, hi = float(target.v_lo), float(target.v_hi)
        scale = 1.0 / (hi - lo)

        def omega(v1, z_idx, _lo=lo, _hi=hi, _s=scale):
            v1 = np.atleast_1d(v1)
            ind = ((v1 >= _lo) & (v1 <= _hi)).astype(float) * _s
            return np.vstack([-ind, -ind, ind, ind])

        return WeightSpec(omega, v_discontinuities=(lo, hi), depends_on_v=True, kind=kind)
    if kind == "prte":
        policy = instruments.policy_array
        if policy is None:
            raise SpecificationError("prte requires policy_probabilities on the instrument space")
        mass = np.asarray(moments.z_mass, dtype=float)
        if np.any((policy > 0) & (mass <= 0)):
            raise SpecificationError("prte: policy mass on an instrument value with zero mass")
        ratio = np.divide(policy, mass, out=np.zeros_like(policy), where=mass > 0)

        def omega(v1, z_idx, _r=ratio):
            v1 = np.atleast_1d(v1)
            r = _r[z_idx]
            return np.vstack([np.full(v1.size, r), np.zeros(v1.size), np.zeros(v1.size), np.full(v1.size, r)])

        # bounds for the counterfactual mean are shifted by the identified
        # observed mean so that eta1 carries the policy effect itself
        return WeightSpec(
            omega,
            shift=-moments.e_y,
            shift_obs="minus_y",
            kind=kind,
        )
    raise SpecificationError(f"unknown target kind {kind!r}")


def target_coefficients(
    weights: WeightSpec,
    partition: VPartition,
    layout: BasisLayout,
    instruments: InstrumentSpace,
    z_mass: np.ndarray | None = None,
) -> np.ndarray:
    """Coefficient vector t_star over eta2 with eta1 = t_star' eta2 + shift.

    Block structure: the m0 block collects the w01 cell integrals aggregated
    over instrument mass, the m1 block the w10 analog, the propensity block
    is zero, and the product blocks collect (w00 - w01) and (w11 - w10) per
    (cell, z) weighted by instrument mass.
    """
    mass = instruments.prob_array if z_mass is None else np.asarray(z_mass, dtype=float)
    for disc in weights.v_discontinuities:
        knots = np.asarray(partition.knots_per_axis[0])
        if np.min(np.abs(knots - disc)) > 1e-9:
            raise SpecificationError(
                f"weight discontinuity {disc} is not aligned with a partition knot"
            )
    t = np.zeros(layout.dim_eta2)
    full = np.zeros(layout.dim_eta)  # scratch with eta1 slot, sliced off at the end
    for c in range(partition.n_cells):
        for l in range(instruments.n_z):
            w00, w01, w10, w11 = weights.at_cell(partition, c, l)
            j = instruments.x_index_of_z(l)
            full[layout.index("m0", c, j)] += mass[l] * w01
            full[layout.index("m1", c, j)] += mass[l] * w10
            full[layout.index("m0D", c, l)] += mass[l] * (w00 - w01)
            full[layout.index("m1D", c, l)] += mass[l] * (w11 - w10)
    t[:] = full[1:]
    return t
