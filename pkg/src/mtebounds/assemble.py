"""Assembly of the feasible polytope: partition construction, moment equality
rows, pointwise bilinear-relaxation rows, envelope rows and shape rows.

Row order is canonical and shared between the population and the sample
variants (the inference layer depends on it):

    equalities:   eta1 definition; then per kept instrument point the
                  treated-outcome, untreated-outcome and treatment rows;
    inequalities: envelope rows for m0, m1, mD (lower/upper per coefficient);
                  four product-relaxation rows per (cell, z) for m0D, then
                  for m1D; shape rows last.

The relaxation rows are imposed pointwise per (cell, x, z) on the spline
coefficients rather than aggregated; pointwise rows are valid, at least as
tight, and their aggregates are recoverable as row sums.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .dgp import Dataset, MomentSet, empirical_moments
from .model import (
    BasisLayout,
    ConstraintSystem,
    EnvelopeBounds,
    InstrumentSpace,
    SpecificationError,
    VPartition,
)
from .weights import TargetSpec, WeightSpec, target_coefficients, weights_for

__all__ = [
    "IvLikeSet",
    "RestrictionSet",
    "build_partition",
    "assemble_population",
    "assemble_sample",
    "assemble_system",
    "WObservations",
]


@dataclass(frozen=True)
class IvLikeSet:
    """Indicator weighting functions 1{Z = z} over (a subset of) the support."""

    instruments: InstrumentSpace
    indices: tuple[int, ...]

    @classmethod
    def full(cls, instruments: InstrumentSpace) -> "IvLikeSet":
        return cls(instruments=instruments, indices=tuple(range(instruments.n_z)))

    @property
    def count(self) -> int:
        return len(self.indices)

    def violations(self) -> list[str]:
        out = []
        if len(set(self.indices)) != len(self.indices):
            out.append("duplicate indicator indices")
        if any(i < 0 or i >= self.instruments.n_z for i in self.indices):
            out.append("indicator index outside the instrument support")
        return out


@dataclass(frozen=True)
class RestrictionSet:
    """Shape restrictions switched on as linear rows.

    ``mtr`` is the pointwise monotone-treatment-response family, ``mts`` the
    two aggregate monotone-treatment-selection rows; combining both gives the
    intersected restriction set. Deterministic monotonicity is realized via a
    degenerate propensity envelope, which makes stochastic-monotonicity rows
    redundant (they are not added).
    """

    mtr: bool = False
    mtr_at_mean: bool = False
    mts: bool = False
    stochastic_monotonicity: bool = False
    deterministic_monotonicity: bool = False

    NAMES = ("none", "r1", "r2", "r3")

    @classmethod
    def none(cls) -> "RestrictionSet":
        return cls()

    @classmethod
    def from_name(cls, name: str) -> "RestrictionSet":
        key = name.strip().lower()
        if key in ("none", ""):
            return cls()
        if key == "r1":
            return cls(mtr=True)
        if key == "r2":
            return cls(mts=True)
        if key == "r3":
            return cls(mtr=True, mts=True)
        raise SpecificationError(f"unknown restriction set {name!r}")

    @property
    def name(self) -> str:
        if self.mtr and self.mts:
            return "r3"
        if self.mtr:
            return "r1"
        if self.mts:
            return "r2"
        if not (self.mtr_at_mean or self.stochastic_monotonicity or self.deterministic_monotonicity):
            return "none"
        return "custom"


# ---------------------------------------------------------------------------
# partition construction
# ---------------------------------------------------------------------------


def build_partition(
    weights: WeightSpec,
    v_dim: int,
    propensities=None,
    include_propensity: bool = False,
    extra_knots=(),
    min_gap: float = 1e-9,
) -> VPartition:
    """Knot set {0, 1}, optionally the propensity values, the weight
    discontinuities and any requested refinement; the same knots on each axis."""
    knots = [0.0, 1.0]
    if include_propensity:
        if propensities is None:
            raise SpecificationError("propensity values required for the refined partition")
        knots.extend(float(p) for p in propensities)
    knots.extend(float(d) for d in weights.v_discontinuities)
    knots.extend(float(k) for k in extra_knots)
    knots = [min(max(k, 0.0), 1.0) for k in knots]
    knots.sort()
    dedup = [knots[0]]
    for k in knots[1:]:
        if k - dedup[-1] > min_gap:
            dedup.append(k)
    dedup[0], dedup[-1] = 0.0, 1.0
    return VPartition.from_knots(dedup, dim=v_dim)


def make_layout(partition: VPartition, instruments: InstrumentSpace) -> BasisLayout:
    return BasisLayout(partition=partition.require_valid(), instruments=instruments.require_valid())


# ---------------------------------------------------------------------------
# row builders (each returns rows, rhs, labels)
# ---------------------------------------------------------------------------


def _equality_rows(
    layout: BasisLayout,
    iv_set: IvLikeSet,
    moments: MomentSet,
    t_star: np.ndarray,
    shift: float,
):
    d = layout.dim_eta
    vols = layout.partition.volumes
    rows, rhs, labels = [], [], []
    row0 = np.zeros(d)
    row0[0] = 1.0
    row0[1:] = -t_star
    rows.append(row0)
    rhs.append(shift)
    labels.append("eta1_def")
    kept = []
    for l in iv_set.indices:
        if moments.z_mass[l] <= 0:
            warnings.warn(
                f"instrument value {iv_set.instruments.points[l]} has zero mass; its moment rows are dropped",
                stacklevel=3,
            )
            continue
        kept.append(l)
    for block, moment, tag in (
        ("m1D", moments.e_yd, "yd"),
        ("m0D", moments.e_y0d, "y0d"),
        ("mD", moments.e_d, "d"),
    ):
        for l in kept:
            row = np.zeros(d)
            for c in range(layout.n_cells):
                row[layout.index(block, c, l)] = vols[c] * moments.z_mass[l]
            rows.append(row)
            rhs.append(float(moment[l]))
            labels.append(f"{tag}[z{l}]")
    return rows, rhs, labels


def _envelope_rows(layout: BasisLayout, env: EnvelopeBounds):
    d = layout.dim_eta
    rows, rhs, labels = [], [], []
    for func, lo, up in (("m0", env.m0_lower, env.m0_upper), ("m1", env.m1_lower, env.m1_upper)):
        for c in range(layout.n_cells):
            for j in range(layout.n_x):
                k = layout.index(func, c, j)
                r = np.zeros(d); r[k] = -1.0
                rows.append(r); rhs.append(-float(lo[c, j])); labels.append(f"{func}_lo[{c},{j}]")
                r = np.zeros(d); r[k] = 1.0
                rows.append(r); rhs.append(float(up[c, j])); labels.append(f"{func}_up[{c},{j}]")
    for c in range(layout.n_cells):
        for l in range(layout.n_z):
            k = layout.index("mD", c, l)
            r = np.zeros(d); r[k] = -1.0
            rows.append(r); rhs.append(-float(env.mD_lower[c, l])); labels.append(f"mD_lo[{c},{l}]")
            r = np.zeros(d); r[k] = 1.0
            rows.append(r); rhs.append(float(env.mD_upper[c, l])); labels.append(f"mD_up[{c},{l}]")
    return rows, rhs, labels


def _mccormick_rows(layout: BasisLayout, env: EnvelopeBounds):
    """Four product-envelope rows per (cell, z) for each product block.

    The untreated block bounds m0 * (1 - mD) using the reversed propensity
    envelope; the treated block bounds m1 * mD directly.
    """
    d = layout.dim_eta
    instr = layout.instruments
    rows, rhs, labels = [], [], []
    for c in range(layout.n_cells):
        for l in range(layout.n_z):
            j = instr.x_index_of_z(l)
            a = layout.index("m0", c, j)
            b = layout.index("m1", c, j)
            p = layout.index("mD", c, l)
            q = layout.index("m0D", c, l)
            r_ = layout.index("m1D", c, l)
            L0, U0 = env.m0_lower[c, j], env.m0_upper[c, j]
            L1, U1 = env.m1_lower[c, j], env.m1_upper[c, j]
            DL, DU = env.mD_lower[c, l], env.mD_upper[c, l]
            quads = [
                # m0D >= L0 (1-p) + m0 (1-DU) - L0 (1-DU)
                ({a: 1 - DU, p: -L0, q: -1.0}, -L0 * DU, "m0D_ge_LDu"),
                ({a: 1 - DL, p: -U0, q: -1.0}, -U0 * DL, "m0D_ge_UDl"),
                ({a: -(1 - DU), p: U0, q: 1.0}, U0 * DU, "m0D_le_UDu"),
                ({a: -(1 - DL), p: L0, q: 1.0}, L0 * DL, "m0D_le_LDl"),
                # m1D >= L1 p + m1 DL - L1 DL
                ({b: DL, p: L1, r_: -1.0}, L1 * DL, "m1D_ge_LL"),
                ({b: DU, p: U1, r_: -1.0}, U1 * DU, "m1D_ge_UU"),
                ({b: -DL, p: -U1, r_: 1.0}, -U1 * DL, "m1D_le_UL"),
                ({b: -DU, p: -L1, r_: 1.0}, -L1 * DU, "m1D_le_LU"),
            ]
            for coef, rb, tag in quads:
                row = np.zeros(d)
                for k, v in coef.items():
                    row[k] += v
                rows.append(row)
                rhs.append(float(rb))
                labels.append(f"{tag}[{c},{l}]")
    return rows, rhs, labels


def _cover_pairs(instruments: InstrumentSpace) -> list[tuple[int, int]]:
    """(hi, lo) pairs with z_hi >= z_lo componentwise, transitive reduction."""
    pts = [np.asarray(p) for p in instruments.points]

    def geq(i, j):
        return i != j and np.all(pts[i] >= pts[j]) and np.any(pts[i] > pts[j])

    pairs = []
    n = len(pts)
    for i in range(n):
        for j in range(n):
            if geq(i, j) and not any(geq(i, k) and geq(k, j) for k in range(n)):
                pairs.append((i, j))
    return pairs


def _shape_rows(layout: BasisLayout, restrictions: RestrictionSet, moments: MomentSet):
    d = layout.dim_eta
    instr = layout.instruments
    vols = layout.partition.volumes
    rows, rhs, labels = [], [], []
    if restrictions.mtr:
        for c in range(layout.n_cells):
            for j in range(layout.n_x):
                row = np.zeros(d)
                row[layout.index("m0", c, j)] = 1.0
                row[layout.index("m1", c, j)] = -1.0
                rows.append(row); rhs.append(0.0); labels.append(f"mtr[{c},{j}]")
        # response monotonicity carried to the product scale: (m1 - m0) mD >= 0
        # written on the coefficient blocks as m1D + m0D - m0 >= 0
        for c in range(layout.n_cells):
            for l in range(layout.n_z):
                row = np.zeros(d)
                row[layout.index("m0", c, instr.x_index_of_z(l))] = 1.0
                row[layout.index("m0D", c, l)] = -1.0
                row[layout.index("m1D", c, l)] = -1.0
                rows.append(row); rhs.append(0.0); labels.append(f"mtr_prod[{c},{l}]")
    if restrictions.mtr_at_mean:
        for j in range(layout.n_x):
            row = np.zeros(d)
            for c in range(layout.n_cells):
                row[layout.index("m0", c, j)] = vols[c]
                row[layout.index("m1", c, j)] = -vols[c]
            rows.append(row); rhs.append(0.0); labels.append(f"mtr_mean[{j}]")
    if restrictions.mts:
        p1 = moments.p_d1
        if not (0 < p1 < 1):
            raise SpecificationError("selection-monotonicity rows need 0 < P(D=1) < 1")
        row = np.zeros(d)
        for c in range(layout.n_cells):
            for l in range(layout.n_z):
                row[layout.index("m1", c, instr.x_index_of_z(l))] += vols[c] * moments.z_mass[l]
                row[layout.index("m1D", c, l)] -= vols[c] * moments.z_mass[l]
        rows.append(row)
        rhs.append(moments.e_y_d1 * (1.0 - p1))
        labels.append("mts_treated")
        row = np.zeros(d)
        for c in range(layout.n_cells):
            for l in range(layout.n_z):
                row[layout.index("m0", c, instr.x_index_of_z(l))] -= vols[c] * moments.z_mass[l]
                row[layout.index("m0D", c, l)] += vols[c] * moments.z_mass[l]
        rows.append(row)
        rhs.append(-moments.e_y_d0 * p1)
        labels.append("mts_untreated")
    if restrictions.stochastic_monotonicity and not restrictions.deterministic_monotonicity:
        for hi, lo in _cover_pairs(instr):
            for c in range(layout.n_cells):
                row = np.zeros(d)
                row[layout.index("mD", c, lo)] = 1.0
                row[layout.index("mD", c, hi)] = -1.0
                rows.append(row); rhs.append(0.0); labels.append(f"stoch_mono[{c},{hi}>={lo}]")
    return rows, rhs, labels


# ---------------------------------------------------------------------------
# system assembly
# ---------------------------------------------------------------------------


def assemble_system(
    moments: MomentSet,
    weights: WeightSpec,
    partition: VPartition,
    restrictions: RestrictionSet | None = None,
    env: EnvelopeBounds | None = None,
    iv_set: IvLikeSet | None = None,
) -> ConstraintSystem:
    """Build the full constraint system from a moment set and weight spec."""
    restrictions = restrictions or RestrictionSet.none()
    instruments = moments.instruments
    layout = make_layout(partition, instruments)
    env = env if env is not None else EnvelopeBounds.default(layout)
    bad = env.violations()
    if bad:
        raise SpecificationError("; ".join(bad))
    iv_set = iv_set or IvLikeSet.full(instruments)
    t_star = target_coefficients(weights, partition, layout, instruments, z_mass=moments.z_mass)
    eq_rows, eq_rhs, eq_labels = _equality_rows(layout, iv_set, moments, t_star, weights.shift)
    in_rows, in_rhs, in_labels = _envelope_rows(layout, env)
    mc_rows, mc_rhs, mc_labels = _mccormick_rows(layout, env)
    sh_rows, sh_rhs, sh_labels = _shape_rows(layout, restrictions, moments)
    in_rows += mc_rows + sh_rows
    in_rhs += mc_rhs + sh_rhs
    in_labels += mc_labels + sh_labels
    d = layout.dim_eta
    return ConstraintSystem(
        a_eq=np.array(eq_rows).reshape(-1, d),
        b_eq=np.array(eq_rhs),
        a_ineq=np.array(in_rows).reshape(-1, d),
        b_ineq=np.array(in_rhs),
        lb=np.full(d, -np.inf),
        ub=np.full(d, np.inf),
        layout=layout,
        eq_labels=tuple(eq_labels),
        ineq_labels=tuple(in_labels),
    )


def assemble_population(
    moments: MomentSet,
    target: TargetSpec,
    restrictions: RestrictionSet | None = None,
    v_dim_assumed: int = 1,
    env: EnvelopeBounds | None = None,
    extra_knots=(),
    include_propensity: bool = False,
) -> ConstraintSystem:
    weights = weights_for(target, moments, moments.instruments)
    partition = build_partition(
        weights,
        v_dim_assumed,
        propensities=moments.propensities,
        include_propensity=include_propensity,
        extra_knots=extra_knots,
    )
    return assemble_system(moments, weights, partition, restrictions, env)


# ---------------------------------------------------------------------------
# sample variant with the per-observation row decomposition
# ---------------------------------------------------------------------------


@dataclass
class WObservations:
    """Per-observation constraint rows, grouped by the (z, y, d) pattern.

    Equality rows are stochastic (they depend on the observation); envelope,
    relaxation and shape rows are constant across observations and therefore
    carry zero sampling variance. Group means reproduce the assembled sample
    system exactly.
    """

    n: int
    keys: list[tuple[int, int, int]]
    counts: np.ndarray
    eq_blocks: np.ndarray   # (groups, n_eq, dim + 1), last column is the rhs entry
    ineq_block: np.ndarray  # (n_ineq, dim + 1)

    @property
    def weightsum(self) -> np.ndarray:
        return self.counts / self.n

    def mean_eq(self) -> tuple[np.ndarray, np.ndarray]:
        mean = np.tensordot(self.weightsum, self.eq_blocks, axes=(0, 0))
        return mean[:, :-1], mean[:, -1]

    def g_by_group(self, eta: np.ndarray) -> np.ndarray:
        """g_j(W, eta) for every row, per group; shape (groups, n_eq + n_ineq)."""
        eta = np.asarray(eta, dtype=float)
        g_eq = self.eq_blocks[:, :, :-1] @ eta - self.eq_blocks[:, :, -1]
        g_in = self.ineq_block[:, :-1] @ eta - self.ineq_block[:, -1]
        return np.hstack([g_eq, np.repeat(g_in[None, :], len(self.keys), axis=0)])

    def sigma_hat(self, lam: np.ndarray, eta: np.ndarray) -> float:
        """sqrt of (1/n) sum_i (lam' g(W_i, eta))^2 via the group decomposition."""
        s = self.g_by_group(eta) @ np.asarray(lam, dtype=float)
        return float(np.sqrt(np.sum(self.weightsum * s ** 2)))

    def lam_w_var_trace(self, lam: np.ndarray) -> float:
        """Trace of the sample covariance of the vector lam' W_i."""
        lam = np.asarray(lam, dtype=float)
        n_eq = self.eq_blocks.shape[1]
        x = np.tensordot(self.eq_blocks, lam[:n_eq], axes=(1, 0))
        x += self.ineq_block.T @ lam[n_eq:]
        mean = self.weightsum @ x
        second = self.weightsum @ (x ** 2)
        return float(np.sum(second - mean ** 2))

    def w_for_group(self, key: tuple[int, int, int]) -> np.ndarray:
        gi = self.keys.index(key)
        return np.vstack([self.eq_blocks[gi], self.ineq_block])


def _observation_tstar(
    weights: WeightSpec, layout: BasisLayout, z_idx: int
) -> np.ndarray:
    """Per-observation analog of the target coefficient vector."""
    part = layout.partition
    instr = layout.instruments
    t = np.zeros(layout.dim_eta)
    for c in range(part.n_cells):
        w00, w01, w10, w11 = weights.at_cell(part, c, z_idx)
        j = instr.x_index_of_z(z_idx)
        t[layout.index("m0", c, j)] += w01
        t[layout.index("m1", c, j)] += w10
        t[layout.index("m0D", c, z_idx)] += w00 - w01
        t[layout.index("m1D", c, z_idx)] += w11 - w10
    return t[1:]


def assemble_sample(
    dataset: Dataset,
    target: TargetSpec,
    restrictions: RestrictionSet | None = None,
    v_dim_assumed: int = 1,
    env: EnvelopeBounds | None = None,
    extra_knots=(),
    include_propensity: bool = False,
) -> tuple[ConstraintSystem, WObservations]:
    """Sample analog of the population system plus its W_i decomposition."""
    if dataset.n == 0:
        raise SpecificationError("empty dataset")
    moments = empirical_moments(dataset)
    weights = weights_for(target, moments, moments.instruments)
    partition = build_partition(
        weights,
        v_dim_assumed,
        propensities=moments.propensities,
        include_propensity=include_propensity,
        extra_knots=extra_knots,
    )
    system = assemble_system(moments, weights, partition, restrictions, env)
    layout = system.layout
    vols = partition.volumes
    kept = [l for l in range(moments.instruments.n_z) if moments.z_mass[l] > 0]
    groups = sorted(dataset.group_counts().items())
    keys = [k for k, _ in groups]
    counts = np.array([c for _, c in groups], dtype=float)
    d = layout.dim_eta
    n_eq = system.n_eq
    eq_blocks = np.zeros((len(keys), n_eq, d + 1))
    for gi, (z, yv, dv) in enumerate(keys):
        block = eq_blocks[gi]
        block[0, 0] = 1.0
        block[0, 1:d] = -_observation_tstar(weights, layout, z)
        if weights.shift_obs == "minus_y":
            block[0, d] = -float(yv)
        row = 1
        for tag, val, func in (("yd", yv * dv, "m1D"), ("y0d", yv * (1 - dv), "m0D"), ("d", dv, "mD")):
            for l in kept:
                if l == z:
                    for c in range(layout.n_cells):
                        block[row, layout.index(func, c, l)] = vols[c]
                    block[row, d] = float(val)
                row += 1
    ineq_block = np.hstack([system.a_ineq, system.b_ineq[:, None]])
    w_obs = WObservations(
        n=dataset.n, keys=keys, counts=counts, eq_blocks=eq_blocks, ineq_block=ineq_block
    )
    return system, w_obs
