"""Core value objects shared across the pipeline.

Everything here is an immutable container plus validation. The conventions
fixed in this module (cell ordering, coefficient layout, row ordering of
constraint systems) are relied on by the assembler, the solvers and the
inference machinery, so they are documented once here:

* heterogeneity cells are products of per-axis intervals; the first interval
  on each axis is closed, later ones are half-open ``(lo, hi]``;
* the coefficient vector is ``eta = (eta1, m0-block, m1-block, mD-block,
  m0D-block, m1D-block)`` with cells varying slowest inside each block;
* equality rows come before inequality rows, in the order produced by the
  assembler.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "SpecificationError",
    "SolverFailure",
    "QuadratureError",
    "VPartition",
    "InstrumentSpace",
    "BasisLayout",
    "MtrCoefficients",
    "EnvelopeBounds",
    "ConstraintSystem",
    "BoundsResult",
    "ValidationReport",
    "validate_spec",
    "BOUNDED",
    "EMPTY",
    "UNBOUNDED",
]

BOUNDED = "bounded"
EMPTY = "empty"
UNBOUNDED = "unbounded"

_KNOT_TOL = 1e-12


class SpecificationError(ValueError):
    """An input object violates its declared invariants."""


class SolverFailure(RuntimeError):
    """An optimization backend could not certify a solution."""


class QuadratureError(RuntimeError):
    """Numerical integration did not reach the requested tolerance."""


# ---------------------------------------------------------------------------
# partition of the heterogeneity space
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VPartition:
    """Product partition of [0,1]^K into axis-aligned cells.

    ``knots_per_axis[a]`` is the increasing knot list of axis ``a`` starting
    at 0 and ending at 1. Cells are enumerated in row-major order over the
    per-axis interval indices (first axis slowest).
    """

    knots_per_axis: tuple[tuple[float, ...], ...]

    @classmethod
    def from_knots(cls, knots: Iterable[float], dim: int = 1) -> "VPartition":
        """Same knot list on every axis (the product construction)."""
        ks = tuple(float(k) for k in knots)
        return cls(knots_per_axis=tuple(ks for _ in range(dim)))

    @property
    def dim(self) -> int:
        return len(self.knots_per_axis)

    @property
    def intervals_per_axis(self) -> tuple[int, ...]:
        return tuple(len(k) - 1 for k in self.knots_per_axis)

    @property
    def n_cells(self) -> int:
        out = 1
        for m in self.intervals_per_axis:
            out *= m
        return out

    def cell_indices(self) -> list[tuple[int, ...]]:
        return list(itertools.product(*(range(m) for m in self.intervals_per_axis)))

    def cell_bounds(self, cell: int) -> tuple[tuple[float, float], ...]:
        """Per-axis (lo, hi) of the ``cell``-th cell."""
        idx = self.cell_indices()[cell]
        return tuple(
            (self.knots_per_axis[a][i], self.knots_per_axis[a][i + 1])
            for a, i in enumerate(idx)
        )

    def cell_volume(self, cell: int) -> float:
        vol = 1.0
        for lo, hi in self.cell_bounds(cell):
            vol *= hi - lo
        return vol

    @property
    def volumes(self) -> np.ndarray:
        return np.array([self.cell_volume(c) for c in range(self.n_cells)])

    def cell_midpoint(self, cell: int) -> np.ndarray:
        return np.array([(lo + hi) / 2.0 for lo, hi in self.cell_bounds(cell)])

    def cell_index_of(self, v: Sequence[float]) -> int:
        """Cell containing ``v``; boundaries resolve to (lo, hi] except [k0, k1]."""
        v = np.atleast_1d(np.asarray(v, dtype=float))
        if v.shape[0] != self.dim:
            raise SpecificationError(
                f"point has dimension {v.shape[0]}, partition has {self.dim}"
            )
        per_axis = []
        for a, knots in enumerate(self.knots_per_axis):
            i = int(np.searchsorted(np.asarray(knots), v[a], side="left")) - 1
            per_axis.append(min(max(i, 0), len(knots) - 2))
        flat = 0
        for a, m in enumerate(self.intervals_per_axis):
            flat = flat * m + per_axis[a]
        return flat

    def violations(self) -> list[str]:
        out = []
        for a, knots in enumerate(self.knots_per_axis):
            ks = np.asarray(knots, dtype=float)
            if ks.size < 2:
                out.append(f"axis {a}: needs at least two knots")
                continue
            if abs(ks[0]) > _KNOT_TOL or abs(ks[-1] - 1.0) > _KNOT_TOL:
                out.append(f"axis {a}: knots must start at 0 and end at 1")
            if np.any(np.diff(ks) <= 0):
                out.append(f"axis {a}: knots not increasing")
            if np.any((ks < -_KNOT_TOL) | (ks > 1 + _KNOT_TOL)):
                out.append(f"axis {a}: knot outside [0, 1]")
        if not out and abs(self.volumes.sum() - 1.0) > 1e-12:
            out.append("cell volumes do not sum to 1")
        return out

    def require_valid(self) -> "VPartition":
        bad = self.violations()
        if bad:
            raise SpecificationError("; ".join(bad))
        return self


# ---------------------------------------------------------------------------
# instrument support
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InstrumentSpace:
    """Finite instrument support with point masses and an optional policy law.

    ``points`` are tuples (one or two discrete components). ``x_labels``
    optionally tags each point with the covariate value it carries; by
    default all points share a single dummy covariate.
    """

    points: tuple[tuple[float, ...], ...]
    probabilities: tuple[float, ...]
    policy_probabilities: tuple[float, ...] | None = None
    x_labels: tuple = ()

    def __post_init__(self):
        pts = tuple(tuple(float(c) for c in np.atleast_1d(p)) for p in self.points)
        object.__setattr__(self, "points", pts)
        object.__setattr__(
            self, "probabilities", tuple(float(p) for p in self.probabilities)
        )
        if self.policy_probabilities is not None:
            object.__setattr__(
                self,
                "policy_probabilities",
                tuple(float(p) for p in self.policy_probabilities),
            )
        if not self.x_labels:
            object.__setattr__(self, "x_labels", tuple(0 for _ in pts))

    @property
    def n_z(self) -> int:
        return len(self.points)

    @property
    def prob_array(self) -> np.ndarray:
        return np.asarray(self.probabilities)

    @property
    def policy_array(self) -> np.ndarray | None:
        if self.policy_probabilities is None:
            return None
        return np.asarray(self.policy_probabilities)

    @property
    def x_values(self) -> tuple:
        seen: dict = {}
        for lab in self.x_labels:
            seen.setdefault(lab, None)
        return tuple(seen.keys())

    @property
    def n_x(self) -> int:
        return len(self.x_values)

    def x_index_of_z(self, z_idx: int) -> int:
        return self.x_values.index(self.x_labels[z_idx])

    def violations(self) -> list[str]:
        out = []
        p = self.prob_array
        if len(self.points) != p.size:
            out.append("points and probabilities have different lengths")
            return out
        if np.any(p < -_KNOT_TOL):
            out.append("negative instrument probability")
        if abs(p.sum() - 1.0) > 1e-12:
            out.append(f"instrument mass sums to {p.sum():.12g}, not 1")
        if len({len(pt) for pt in self.points}) > 1:
            out.append("instrument points have mixed dimensions")
        if len(set(self.points)) != len(self.points):
            out.append("duplicate instrument points")
        if len(self.x_labels) != len(self.points):
            out.append("x_labels length differs from points")
        q = self.policy_array
        if q is not None:
            if q.size != p.size:
                out.append("policy mass defined on a different support")
            else:
                if np.any(q < -_KNOT_TOL):
                    out.append("negative policy probability")
                if abs(q.sum() - 1.0) > 1e-12:
                    out.append(f"policy mass sums to {q.sum():.12g}, not 1")
                if np.any((q > _KNOT_TOL) & (p <= _KNOT_TOL)):
                    out.append("policy mass on a point with zero original mass")
        return out

    def require_valid(self) -> "InstrumentSpace":
        bad = self.violations()
        if bad:
            raise SpecificationError("; ".join(bad))
        return self


# ---------------------------------------------------------------------------
# coefficient layout
# ---------------------------------------------------------------------------

FUNCTIONS = ("m0", "m1", "mD", "m0D", "m1D")


@dataclass(frozen=True)
class BasisLayout:
    """Index map between (function, cell, x-or-z value) and coefficient slots.

    Position 0 of the full vector is the target value ``eta1``; the five
    constant-spline blocks follow. ``m0``/``m1`` entries are indexed by
    (cell, x), the treated/untreated product blocks and the propensity block
    by (cell, z).
    """

    partition: VPartition
    instruments: InstrumentSpace

    @property
    def n_cells(self) -> int:
        return self.partition.n_cells

    @property
    def n_x(self) -> int:
        return self.instruments.n_x

    @property
    def n_z(self) -> int:
        return self.instruments.n_z

    @property
    def block_sizes(self) -> dict[str, int]:
        kv, kx, kz = self.n_cells, self.n_x, self.n_z
        return {"m0": kv * kx, "m1": kv * kx, "mD": kv * kz, "m0D": kv * kz, "m1D": kv * kz}

    @property
    def block_offsets(self) -> dict[str, int]:
        out, pos = {}, 1  # slot 0 is eta1
        for f in FUNCTIONS:
            out[f] = pos
            pos += self.block_sizes[f]
        return out

    @property
    def dim_eta(self) -> int:
        return 1 + sum(self.block_sizes.values())

    @property
    def dim_eta2(self) -> int:
        return self.dim_eta - 1

    def index(self, func: str, cell: int, value: int) -> int:
        """Coefficient slot in the full eta vector."""
        if func not in FUNCTIONS:
            raise KeyError(func)
        width = self.n_x if func in ("m0", "m1") else self.n_z
        if not (0 <= cell < self.n_cells and 0 <= value < width):
            raise IndexError((func, cell, value))
        return self.block_offsets[func] + cell * width + value

    def unindex(self, pos: int) -> tuple[str, int, int]:
        if not (1 <= pos < self.dim_eta):
            raise IndexError(pos)
        for f in reversed(FUNCTIONS):
            off = self.block_offsets[f]
            if pos >= off:
                width = self.n_x if f in ("m0", "m1") else self.n_z
                rel = pos - off
                return f, rel // width, rel % width
        raise IndexError(pos)

    def block_slice(self, func: str) -> slice:
        off = self.block_offsets[func]
        return slice(off, off + self.block_sizes[func])


@dataclass(frozen=True)
class MtrCoefficients:
    """Finite-dimensional representation (eta1, eta2) on a constant-spline basis."""

    eta1: float
    eta2: np.ndarray
    layout: BasisLayout

    def __post_init__(self):
        object.__setattr__(self, "eta2", np.asarray(self.eta2, dtype=float))
        if self.eta2.shape != (self.layout.dim_eta2,):
            raise SpecificationError(
                f"eta2 has length {self.eta2.size}, layout expects {self.layout.dim_eta2}"
            )

    @property
    def full(self) -> np.ndarray:
        return np.concatenate([[self.eta1], self.eta2])

    def block(self, func: str) -> np.ndarray:
        sl = self.layout.block_slice(func)
        return self.full[sl]

    def feasibility_violations(self, y_bounds: tuple[float, float] = (0.0, 1.0)) -> list[str]:
        y_lo, y_hi = y_bounds
        out = []
        for f in ("m0", "m1", "m0D", "m1D"):
            b = self.block(f)
            if np.any(b < y_lo - 1e-9) or np.any(b > y_hi + 1e-9):
                out.append(f"{f} block outside [{y_lo}, {y_hi}]")
        d = self.block("mD")
        if np.any(d < -1e-9) or np.any(d > 1 + 1e-9):
            out.append("mD block outside [0, 1]")
        return out


# ---------------------------------------------------------------------------
# envelope bounds feeding the bilinear relaxation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnvelopeBounds:
    """Known cellwise lower/upper envelopes for (m0, m1) and the propensity."""

    m0_lower: np.ndarray  # (n_cells, n_x)
    m0_upper: np.ndarray
    m1_lower: np.ndarray
    m1_upper: np.ndarray
    mD_lower: np.ndarray  # (n_cells, n_z)
    mD_upper: np.ndarray

    def __post_init__(self):
        for name in ("m0_lower", "m0_upper", "m1_lower", "m1_upper", "mD_lower", "mD_upper"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))

    @classmethod
    def default(cls, layout: BasisLayout, y_bounds: tuple[float, float] = (0.0, 1.0)) -> "EnvelopeBounds":
        """No prior information: m_d in [y_L, y_U], propensity in [0, 1]."""
        kv, kx, kz = layout.n_cells, layout.n_x, layout.n_z
        y_lo, y_hi = y_bounds
        full = np.full((kv, kx), float(y_lo)), np.full((kv, kx), float(y_hi))
        return cls(
            m0_lower=full[0].copy(), m0_upper=full[1].copy(),
            m1_lower=full[0].copy(), m1_upper=full[1].copy(),
            mD_lower=np.zeros((kv, kz)), mD_upper=np.ones((kv, kz)),
        )

    @classmethod
    def mst(
        cls,
        layout: BasisLayout,
        propensities: Sequence[float],
        y_bounds: tuple[float, float] = (0.0, 1.0),
    ) -> "EnvelopeBounds":
        """Threshold-crossing mode: the propensity envelope degenerates.

        Under a scalar threshold selection model the propensity given the
        heterogeneity stratum is the indicator 1{P(D=1|z) >= v}, so on a
        partition whose first-axis knots include every P(D=1|z) the cellwise
        envelope collapses to 0/1. A propensity interior to a first-axis
        interval means the partition was not refined and is rejected.
        """
        base = cls.default(layout, y_bounds)
        part = layout.partition
        lo = np.zeros((layout.n_cells, layout.n_z))
        for c in range(layout.n_cells):
            a, b = part.cell_bounds(c)[0]
            for l, p in enumerate(propensities):
                if p >= b - _KNOT_TOL:
                    lo[c, l] = 1.0
                elif p > a + _KNOT_TOL:
                    raise SpecificationError(
                        f"propensity {p} interior to first-axis interval ({a}, {b})"
                    )
        return cls(
            m0_lower=base.m0_lower, m0_upper=base.m0_upper,
            m1_lower=base.m1_lower, m1_upper=base.m1_upper,
            mD_lower=lo, mD_upper=lo.copy(),
        )

    def violations(self, y_bounds: tuple[float, float] = (0.0, 1.0)) -> list[str]:
        y_lo, y_hi = y_bounds
        out = []
        for lo, up, name in (
            (self.m0_lower, self.m0_upper, "m0"),
            (self.m1_lower, self.m1_upper, "m1"),
            (self.mD_lower, self.mD_upper, "mD"),
        ):
            if np.any(lo > up + 1e-12):
                out.append(f"{name} envelope has lower > upper")
        for arr, name in ((self.mD_lower, "mD_lower"), (self.mD_upper, "mD_upper")):
            if np.any(arr < -1e-12) or np.any(arr > 1 + 1e-12):
                out.append(f"{name} outside [0, 1]")
        for arr, name in (
            (self.m0_lower, "m0_lower"), (self.m0_upper, "m0_upper"),
            (self.m1_lower, "m1_lower"), (self.m1_upper, "m1_upper"),
        ):
            if np.any(arr < y_lo - 1e-12) or np.any(arr > y_hi + 1e-12):
                out.append(f"{name} outside [{y_lo}, {y_hi}]")
        return out

    @property
    def is_degenerate_mD(self) -> bool:
        return bool(np.all(self.mD_lower == self.mD_upper))


# ---------------------------------------------------------------------------
# assembled constraint system
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstraintSystem:
    """Linear description of the feasible polytope in eta.

    ``a_eq eta = b_eq`` stacked over the eta1-definition row and the moment
    rows; ``a_ineq eta <= b_ineq`` over envelope, relaxation and shape rows;
    ``lb``/``ub`` are per-coordinate box bounds (infinite when the rows
    already bound a coordinate).
    """

    a_eq: np.ndarray
    b_eq: np.ndarray
    a_ineq: np.ndarray
    b_ineq: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    layout: BasisLayout | None = None
    eq_labels: tuple[str, ...] = ()
    ineq_labels: tuple[str, ...] = ()

    def __post_init__(self):
        for name in ("a_eq", "b_eq", "a_ineq", "b_ineq", "lb", "ub"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        a_eq = self.a_eq.reshape(-1, self.dim) if self.a_eq.size else self.a_eq.reshape(0, self.dim)
        a_in = self.a_ineq.reshape(-1, self.dim) if self.a_ineq.size else self.a_ineq.reshape(0, self.dim)
        object.__setattr__(self, "a_eq", a_eq)
        object.__setattr__(self, "a_ineq", a_in)

    @property
    def dim(self) -> int:
        if self.a_eq.ndim == 2 and self.a_eq.shape[1] > 0:
            return self.a_eq.shape[1]
        if self.a_ineq.ndim == 2 and self.a_ineq.shape[1] > 0:
            return self.a_ineq.shape[1]
        return self.lb.size

    @property
    def n_eq(self) -> int:
        return self.a_eq.shape[0]

    @property
    def n_ineq(self) -> int:
        return self.a_ineq.shape[0]

    def violations(self) -> list[str]:
        out = []
        for arr, name in (
            (self.a_eq, "a_eq"), (self.b_eq, "b_eq"),
            (self.a_ineq, "a_ineq"), (self.b_ineq, "b_ineq"),
        ):
            if arr.size and not np.all(np.isfinite(arr)):
                out.append(f"{name} has non-finite entries")
        if self.a_eq.shape[0] != self.b_eq.size:
            out.append("a_eq/b_eq row mismatch")
        if self.a_ineq.shape[0] != self.b_ineq.size:
            out.append("a_ineq/b_ineq row mismatch")
        if self.lb.size != self.dim or self.ub.size != self.dim:
            out.append("box bounds length differs from column count")
        if self.layout is not None and self.dim != self.layout.dim_eta:
            out.append("column count differs from layout dimension")
        return out

    def residuals(self, eta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(equality residuals, inequality slacks b - A eta)."""
        eta = np.asarray(eta, dtype=float)
        r_eq = self.a_eq @ eta - self.b_eq if self.n_eq else np.zeros(0)
        s_in = self.b_ineq - self.a_ineq @ eta if self.n_ineq else np.zeros(0)
        return r_eq, s_in

    def lp_dump(self) -> str:
        """Plain-text interchange dump for external-solver cross-checks."""
        lines = [f"columns {self.dim}", f"rows_eq {self.n_eq}", f"rows_ineq {self.n_ineq}"]
        for i in range(self.n_eq):
            label = self.eq_labels[i] if i < len(self.eq_labels) else f"eq{i}"
            coef = " ".join(f"{v:.17g}" for v in self.a_eq[i])
            lines.append(f"E {label} {coef} = {self.b_eq[i]:.17g}")
        for i in range(self.n_ineq):
            label = self.ineq_labels[i] if i < len(self.ineq_labels) else f"ineq{i}"
            coef = " ".join(f"{v:.17g}" for v in self.a_ineq[i])
            lines.append(f"L {label} {coef} <= {self.b_ineq[i]:.17g}")
        bounds = " ".join(f"{lo:.17g}:{hi:.17g}" for lo, hi in zip(self.lb, self.ub))
        lines.append(f"B {bounds}")
        return "\n".join(lines) + "\n"

    def with_extra_ineq(self, row: np.ndarray, rhs: float, label: str = "extra") -> "ConstraintSystem":
        row = np.asarray(row, dtype=float).reshape(1, -1)
        return ConstraintSystem(
            a_eq=self.a_eq,
            b_eq=self.b_eq,
            a_ineq=np.vstack([self.a_ineq, row]) if self.n_ineq else row,
            b_ineq=np.append(self.b_ineq, float(rhs)),
            lb=self.lb,
            ub=self.ub,
            layout=self.layout,
            eq_labels=self.eq_labels,
            ineq_labels=self.ineq_labels + (label,),
        )


@dataclass(frozen=True)
class BoundsResult:
    """Interval (or certified-empty) outcome of a bounding method."""

    status: str  # bounded / empty / unbounded
    lower: float | None = None
    upper: float | None = None
    argmin_eta: np.ndarray | None = None
    argmax_eta: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.status == BOUNDED:
            if self.lower is None or self.upper is None:
                raise SpecificationError("bounded result needs both endpoints")
            if self.lower > self.upper + 1e-9:
                raise SpecificationError(
                    f"lower {self.lower} exceeds upper {self.upper}"
                )

    @property
    def width(self) -> float | None:
        if self.status != BOUNDED:
            return None
        return self.upper - self.lower

    def to_record(self, **extra) -> dict:
        rec = dict(extra)
        rec["status"] = self.status
        rec["lower"] = None if self.lower is None else float(self.lower)
        rec["upper"] = None if self.upper is None else float(self.upper)
        return rec


# ---------------------------------------------------------------------------
# specification validation (report-returning, never throws)
# ---------------------------------------------------------------------------


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def extend(self, prefix: str, items: Iterable[str]) -> None:
        self.violations.extend(f"{prefix}: {v}" for v in items)


def validate_spec(dgp=None, partition: VPartition | None = None, target=None) -> ValidationReport:
    """Collect invariant violations across a generative spec, a partition and
    a target description. Returns a report; never raises."""
    report = ValidationReport()
    if partition is not None:
        report.extend("partition", partition.violations())
    if dgp is not None:
        report.extend("dgp", dgp.violations())
        report.extend("instruments", dgp.instruments.violations())
    if target is not None:
        report.extend("target", target.violations())
        if getattr(target, "kind", None) == "prte":
            instr = dgp.instruments if dgp is not None else None
            if instr is not None and instr.policy_probabilities is None:
                report.violations.append("target: prte requires policy_probabilities")
    return report
