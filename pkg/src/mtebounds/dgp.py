"""Generative designs: Bernstein response surfaces, two selection models,
closed-form propensities, exact population moments and seeded sampling.

Outcomes are binary: Y = D 1[m1(V) > eps1] + (1-D) 1[m0(V) > eps0] with
independent uniform errors, so m_d is both the response surface and the
conditional mean of the potential outcome. Two selection models are bundled:

* ``local_departure``: D = 1[p(Z) + (0.75 - p(Z)) sigma U >= h(V)] with
  p(z) = 0.35 + 0.325 z - 0.075 z^2 and h(v) = v (scalar) or max(v1, v2);
* ``random_coefficient``: D = 1[0.2 z1 + sigma U z2 - v >= 0] (scalar) or
  D = 1[(0.6 - v1) z1 + sigma U z2 - 0.5 v2 >= 0] (two-dimensional),

with U standard normal, which gives the propensities in closed form through
the normal CDF.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from scipy.special import comb, ndtr

from . import quadrature
from .model import InstrumentSpace, SpecificationError, VPartition, BasisLayout, MtrCoefficients
from .weights import TargetSpec, weights_for

__all__ = [
    "DgpSpec",
    "Dataset",
    "MomentSet",
    "LOCAL_DEPARTURE",
    "RANDOM_COEFFICIENT",
    "local_departure_dgp",
    "random_coefficient_dgp",
    "bernstein_eval",
    "bernstein_mean",
    "propensity",
    "mtr",
    "population_moments",
    "cell_averages",
    "true_coefficients",
    "true_target",
    "sample",
    "empirical_moments",
]

LOCAL_DEPARTURE = "local_departure"
RANDOM_COEFFICIENT = "random_coefficient"

THETA0_1D = (0.6, 0.4, 0.3)
THETA1_1D = (0.75, 0.5, 0.3)
THETA0_2D = (0.7, 0.5, 0.5, 0.3, 0.2, 0.1, 0.1, 0.0, 0.0)
THETA1_2D = (0.85, 0.65, 0.5, 0.5, 0.45, 0.3, 0.2, 0.1, 0.1)


def _p_local(z: np.ndarray) -> np.ndarray:
    return 0.35 + 0.325 * z - 0.075 * z ** 2


# ---------------------------------------------------------------------------
# Bernstein basis
# ---------------------------------------------------------------------------


def bernstein_eval(v, coeffs, degree: int = 2):
    """Evaluate a (tensor) Bernstein expansion at points of [0,1]^K.

    ``coeffs`` has length (degree+1)^K; for K = 2 the first index runs over
    the first coordinate (slowest). ``v`` may be a scalar, a 1-d array of
    scalar points, or an (n, K) array.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    m = degree + 1
    if coeffs.size == m:
        k_dim = 1
    elif coeffs.size == m * m:
        k_dim = 2
    else:
        raise SpecificationError(
            f"coefficient vector of length {coeffs.size} does not match degree {degree} in 1 or 2 dimensions"
        )
    pts = np.asarray(v, dtype=float)
    scalar = pts.ndim == 0
    if pts.ndim <= 1 and k_dim == 1:
        pts = np.atleast_1d(pts)[:, None]
    elif pts.ndim == 1 and k_dim == 2:
        pts = pts[None, :]
        scalar = True
    if pts.ndim != 2 or pts.shape[1] != k_dim:
        raise SpecificationError(f"points of shape {np.shape(v)} do not match dimension {k_dim}")
    ks = np.arange(m)
    bino = comb(degree, ks)

    def basis(x):
        return bino[None, :] * x[:, None] ** ks[None, :] * (1 - x[:, None]) ** (degree - ks)[None, :]

    if k_dim == 1:
        out = basis(pts[:, 0]) @ coeffs
    else:
        b1 = basis(pts[:, 0])
        b2 = basis(pts[:, 1])
        out = np.einsum("ni,nj,ij->n", b1, b2, coeffs.reshape(m, m))
    return float(out[0]) if scalar else out


def bernstein_mean(coeffs, degree: int = 2) -> float:
    """Integral over the unit cube: each basis polynomial integrates to 1/(degree+1) per axis."""
    return float(np.mean(np.asarray(coeffs, dtype=float)))


# ---------------------------------------------------------------------------
# generative specification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DgpSpec:
    v_dim: int
    theta0: tuple[float, ...]
    theta1: tuple[float, ...]
    treatment_model: str
    sigma: float
    instruments: InstrumentSpace

    def __post_init__(self):
        object.__setattr__(self, "theta0", tuple(float(t) for t in self.theta0))
        object.__setattr__(self, "theta1", tuple(float(t) for t in self.theta1))

    def violations(self) -> list[str]:
        out = []
        if self.v_dim not in (1, 2):
            out.append(f"v_dim must be 1 or 2, got {self.v_dim}")
        want = 3 if self.v_dim == 1 else 9
        for name, th in (("theta0", self.theta0), ("theta1", self.theta1)):
            if len(th) != want:
                out.append(f"{name} has length {len(th)}, expected {want}")
            elif any(t < 0 or t > 1 for t in th):
                out.append(f"{name} coefficients outside [0, 1]")
        if self.treatment_model not in (LOCAL_DEPARTURE, RANDOM_COEFFICIENT):
            out.append(f"unknown treatment model {self.treatment_model!r}")
        if not self.sigma > 0:
            out.append(f"sigma must be positive, got {self.sigma}")
        if self.treatment_model == LOCAL_DEPARTURE:
            for z in self.instruments.points:
                if _p_local(z[0]) >= 0.75:
                    out.append(f"local departure needs p(z) < 0.75, violated at z={z[0]}")
        if self.treatment_model == RANDOM_COEFFICIENT:
            for z in self.instruments.points:
                if len(z) != 2:
                    out.append("random coefficient model needs two instrument components")
                    break
                if z[1] == 0:
                    out.append("random coefficient model needs z2 != 0")
                    break
        return out

    def require_valid(self) -> "DgpSpec":
        bad = self.violations()
        if bad:
            raise SpecificationError("; ".join(bad))
        return self


def local_departure_instruments() -> InstrumentSpace:
    return InstrumentSpace(
        points=((0.0,), (1.0,), (2.0,)),
        probabilities=(0.5, 0.4, 0.1),
        policy_probabilities=(1 / 3, 1 / 3, 1 / 3),
    )


def random_coefficient_instruments() -> InstrumentSpace:
    z1 = [(0.0, 0.5), (1.0, 0.4), (2.0, 0.1)]
    z2 = [(0.5, 0.7), (1.0, 0.3)]
    points, probs, policy = [], [], []
    for a, pa in z1:
        for b, pb in z2:
            points.append((a, b))
            probs.append(pa * pb)
            policy.append((1 / 3) * pb)  # uniform first component, unchanged second
    return InstrumentSpace(
        points=tuple(points), probabilities=tuple(probs), policy_probabilities=tuple(policy)
    )


def local_departure_dgp(v_dim: int, sigma: float) -> DgpSpec:
    theta0 = THETA0_1D if v_dim == 1 else THETA0_2D
    theta1 = THETA1_1D if v_dim == 1 else THETA1_2D
    return DgpSpec(
        v_dim=v_dim,
        theta0=theta0,
        theta1=theta1,
        treatment_model=LOCAL_DEPARTURE,
        sigma=sigma,
        instruments=local_departure_instruments(),
    )


def random_coefficient_dgp(v_dim: int, sigma: float) -> DgpSpec:
    theta0 = THETA0_1D if v_dim == 1 else THETA0_2D
    theta1 = THETA1_1D if v_dim == 1 else THETA1_2D
    return DgpSpec(
        v_dim=v_dim,
        theta0=theta0,
        theta1=theta1,
        treatment_model=RANDOM_COEFFICIENT,
        sigma=sigma,
        instruments=random_coefficient_instruments(),
    )


def dgp_factory(model: str, v_dim: int, sigma: float) -> DgpSpec:
    if model in (LOCAL_DEPARTURE, "local"):
        return local_departure_dgp(v_dim, sigma)
    if model in (RANDOM_COEFFICIENT, "random"):
        return random_coefficient_dgp(v_dim, sigma)
    raise SpecificationError(f"unknown treatment model {model!r}")


# ---------------------------------------------------------------------------
# structural functions
# ---------------------------------------------------------------------------


def mtr(dgp: DgpSpec, d: int, v) -> np.ndarray:
    """Marginal treatment response m_d(v)."""
    theta = dgp.theta1 if d == 1 else dgp.theta0
    return bernstein_eval(v, theta)


def propensity(dgp: DgpSpec, v, z_point) -> np.ndarray:
    """Propensity conditional on the heterogeneity stratum, m_D(v, z)."""
    if dgp.sigma <= 0:
        raise SpecificationError(f"sigma must be positive, got {dgp.sigma}")
    z = tuple(np.atleast_1d(z_point))
    pts = np.asarray(v, dtype=float)
    scalar = pts.ndim == 0 or (pts.ndim == 1 and dgp.v_dim == 2)
    if pts.ndim == 0:
        pts = pts[None, None]
    elif pts.ndim == 1:
        pts = pts[None, :] if dgp.v_dim == 2 else pts[:, None]
    if pts.shape[1] != dgp.v_dim:
        raise SpecificationError(f"points of shape {np.shape(v)} do not match v_dim {dgp.v_dim}")
    if dgp.treatment_model == LOCAL_DEPARTURE:
        p = _p_local(z[0])
        h = pts[:, 0] if dgp.v_dim == 1 else np.maximum(pts[:, 0], pts[:, 1])
        arg = (h - p) / ((0.75 - p) * dgp.sigma)
    else:
        z1, z2 = z[0], z[1]
        if z2 == 0:
            raise SpecificationError("random coefficient model needs z2 != 0")
        if dgp.v_dim == 1:
            arg = (pts[:, 0] - 0.2 * z1) / (dgp.sigma * z2)
        else:
            arg = (0.5 * pts[:, 1] - (0.6 - pts[:, 0]) * z1) / (dgp.sigma * z2)
    out = 1.0 - ndtr(arg)
    return float(out[0]) if scalar else out


def _has_max_kink(dgp: DgpSpec) -> bool:
    return dgp.treatment_model == LOCAL_DEPARTURE and dgp.v_dim == 2


# ---------------------------------------------------------------------------
# moments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MomentSet:
    """E[YD 1{Z=z}], E[Y(1-D) 1{Z=z}], E[D 1{Z=z}] per instrument point,
    population-exact or sample-estimated, with the matching point masses."""

    instruments: InstrumentSpace
    z_mass: np.ndarray
    e_yd: np.ndarray
    e_y0d: np.ndarray
    e_d: np.ndarray
    source: str = "population"
    n: int | None = None

    def __post_init__(self):
        for name in ("z_mass", "e_yd", "e_y0d", "e_d"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))

    @property
    def p_d1(self) -> float:
        return float(self.e_d.sum())

    @property
    def e_y(self) -> float:
        return float(self.e_yd.sum() + self.e_y0d.sum())

    @property
    def e_y_d1(self) -> float:
        return float(self.e_yd.sum() / self.p_d1)

    @property
    def e_y_d0(self) -> float:
        return float(self.e_y0d.sum() / (1.0 - self.p_d1))

    @property
    def propensities(self) -> np.ndarray:
        """P(D=1 | Z=z); zero-mass points report 0."""
        return np.divide(
            self.e_d, self.z_mass, out=np.zeros_like(self.e_d), where=self.z_mass > 0
        )

    @property
    def cond_yd(self) -> np.ndarray:
        return np.divide(self.e_yd, self.z_mass, out=np.zeros_like(self.e_yd), where=self.z_mass > 0)

    @property
    def cond_y0d(self) -> np.ndarray:
        return np.divide(self.e_y0d, self.z_mass, out=np.zeros_like(self.e_y0d), where=self.z_mass > 0)

    @property
    def cond_y(self) -> np.ndarray:
        return self.cond_yd + self.cond_y0d


def _moment_integrand(dgp: DgpSpec, z_point):
    th0, th1 = dgp.theta0, dgp.theta1

    def f(pts):
        m0 = bernstein_eval(pts, th0)
        m1 = bernstein_eval(pts, th1)
        mD = propensity(dgp, pts, z_point)
        return np.column_stack([m1 * mD, m0 * (1 - mD), mD])

    return f


def population_moments(dgp: DgpSpec, tol: float = 1e-9) -> MomentSet:
    """Exact moments per instrument point by adaptive tensor quadrature."""
    dgp.require_valid()
    bounds = [(0.0, 1.0)] * dgp.v_dim
    kink = _has_max_kink(dgp)
    e_yd, e_y0d, e_d = [], [], []
    for l, z in enumerate(dgp.instruments.points):
        vals = quadrature.integrate_adaptive(
            _moment_integrand(dgp, z), bounds, tol=tol, maxkink=kink
        )
        mass = dgp.instruments.probabilities[l]
        e_yd.append(mass * vals[0])
        e_y0d.append(mass * vals[1])
        e_d.append(mass * vals[2])
    return MomentSet(
        instruments=dgp.instruments,
        z_mass=dgp.instruments.prob_array,
        e_yd=e_yd,
        e_y0d=e_y0d,
        e_d=e_d,
    )


def cell_averages(dgp: DgpSpec, partition: VPartition, tol: float = 1e-9) -> dict[str, np.ndarray]:
    """Cell averages of the five structural functions on ``partition``.

    These are exactly the constant-spline coefficients of the projected truth,
    used as an oracle for the moment rows.
    """
    if partition.dim != dgp.v_dim:
        raise SpecificationError("partition dimension differs from the heterogeneity dimension")
    n_c, n_z = partition.n_cells, dgp.instruments.n_z
    kink = _has_max_kink(dgp)
    m0 = np.zeros(n_c)
    m1 = np.zeros(n_c)
    mD = np.zeros((n_c, n_z))
    m0D = np.zeros((n_c, n_z))
    m1D = np.zeros((n_c, n_z))
    for c in range(n_c):
        cell = partition.cell_bounds(c)
        vol = partition.cell_volume(c)

        def f_m(pts):
            return np.column_stack([bernstein_eval(pts, dgp.theta0), bernstein_eval(pts, dgp.theta1)])

        vals = quadrature.integrate_adaptive(f_m, cell, tol=tol)
        m0[c], m1[c] = vals / vol
        for l, z in enumerate(dgp.instruments.points):
            vals = quadrature.integrate_adaptive(
                _moment_integrand(dgp, z), cell, tol=tol, maxkink=kink
            )
            m1D[c, l] = vals[0] / vol
            m0D[c, l] = vals[1] / vol
            mD[c, l] = vals[2] / vol
    return {"m0": m0, "m1": m1, "mD": mD, "m0D": m0D, "m1D": m1D}


def true_coefficients(
    dgp: DgpSpec,
    layout: BasisLayout,
    target: TargetSpec | None = None,
    tol: float = 1e-9,
) -> MtrCoefficients:
    """Project the true functions on the layout; eta1 is the true target value."""
    avg = cell_averages(dgp, layout.partition, tol=tol)
    eta2 = np.zeros(layout.dim_eta2)
    full = np.zeros(layout.dim_eta)
    for c in range(layout.n_cells):
        for j in range(layout.n_x):
            full[layout.index("m0", c, j)] = avg["m0"][c]
            full[layout.index("m1", c, j)] = avg["m1"][c]
        for l in range(layout.n_z):
            full[layout.index("mD", c, l)] = avg["mD"][c, l]
            full[layout.index("m0D", c, l)] = avg["m0D"][c, l]
            full[layout.index("m1D", c, l)] = avg["m1D"][c, l]
    eta2[:] = full[1:]
    eta1 = 0.0 if target is None else true_target(dgp, target, tol=tol)
    return MtrCoefficients(eta1=eta1, eta2=eta2, layout=layout)


def true_target(dgp: DgpSpec, target: TargetSpec, moments: MomentSet | None = None, tol: float = 1e-9) -> float:
    """Population value of the target by quadrature of its weight expression."""
    mom = moments if moments is not None else population_moments(dgp, tol=tol)
    w = weights_for(target, mom, dgp.instruments)
    knots = sorted({0.0, 1.0, *w.v_discontinuities})
    kink = _has_max_kink(dgp)
    total = w.shift
    for l, z in enumerate(dgp.instruments.points):
        mass = mom.z_mass[l]
        if mass <= 0:
            continue
        for a, b in zip(knots, knots[1:]):
            bounds = [(a, b)] + [(0.0, 1.0)] * (dgp.v_dim - 1)

            def f(pts, _z=z):
                m0 = bernstein_eval(pts, dgp.theta0)
                m1 = bernstein_eval(pts, dgp.theta1)
                mD = propensity(dgp, pts, _z)
                m0d = m0 * (1 - mD)
                m1d = m1 * mD
                return np.column_stack([m0d, m0 - m0d, m1 - m1d, m1d])

            parts = quadrature.integrate_adaptive(f, bounds, tol=tol, maxkink=kink)
            w4 = w.omega(np.array([(a + b) / 2.0]), l)[:, 0]
            total += mass * float(parts @ w4)
    return float(total)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Dataset:
    """i.i.d. draws of (Y, D, Z); Z stored as indices into the instrument support."""

    y: np.ndarray
    d: np.ndarray
    z_idx: np.ndarray
    instruments: InstrumentSpace
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "y", np.asarray(self.y, dtype=np.int8))
        object.__setattr__(self, "d", np.asarray(self.d, dtype=np.int8))
        object.__setattr__(self, "z_idx", np.asarray(self.z_idx, dtype=np.int64))

    @property
    def n(self) -> int:
        return self.y.size

    def z_values(self) -> np.ndarray:
        return np.asarray(self.instruments.points)[self.z_idx]

    def to_csv(self) -> str:
        z = self.z_values()
        k = z.shape[1]
        head = "y,d," + ",".join(f"z{i+1}" for i in range(k))
        buf = io.StringIO()
        buf.write(head + "\n")
        for i in range(self.n):
            zs = ",".join(f"{z[i, j]:g}" for j in range(k))
            buf.write(f"{int(self.y[i])},{int(self.d[i])},{zs}\n")
        return buf.getvalue()

    def group_counts(self) -> dict[tuple[int, int, int], int]:
        """Counts of the distinct (z index, y, d) patterns."""
        key = (self.z_idx.astype(np.int64) * 4 + self.y.astype(np.int64) * 2 + self.d).astype(np.int64)
        uniq, counts = np.unique(key, return_counts=True)
        return {(int(k // 4), int((k % 4) // 2), int(k % 2)): int(c) for k, c in zip(uniq, counts)}


def sample(dgp: DgpSpec, n: int, seed) -> Dataset:
    """Deterministic draw of ``n`` observations given ``seed``.

    Seeds feed a splittable generator; replication harnesses derive
    per-replication seeds by spawning from a master sequence.
    """
    dgp.require_valid()
    if n < 1:
        raise SpecificationError(f"sample size must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    instr = dgp.instruments
    z_idx = rng.choice(instr.n_z, size=n, p=instr.prob_array)
    v = rng.random((n, dgp.v_dim))
    u = rng.standard_normal(n)
    eps0 = rng.random(n)
    eps1 = rng.random(n)
    zpts = np.asarray(instr.points)[z_idx]
    if dgp.treatment_model == LOCAL_DEPARTURE:
        p = _p_local(zpts[:, 0])
        h = v[:, 0] if dgp.v_dim == 1 else np.maximum(v[:, 0], v[:, 1])
        d = (p + (0.75 - p) * dgp.sigma * u - h >= 0).astype(np.int8)
    else:
        z1, z2 = zpts[:, 0], zpts[:, 1]
        if dgp.v_dim == 1:
            index = 0.2 * z1 + dgp.sigma * u * z2 - v[:, 0]
        else:
            index = (0.6 - v[:, 0]) * z1 + dgp.sigma * u * z2 - 0.5 * v[:, 1]
        d = (index >= 0).astype(np.int8)
    m1v = bernstein_eval(v, dgp.theta1)
    m0v = bernstein_eval(v, dgp.theta0)
    y = np.where(d == 1, m1v > eps1, m0v > eps0).astype(np.int8)
    return Dataset(y=y, d=d, z_idx=z_idx, instruments=instr, seed=seed if isinstance(seed, int) else None)


def empirical_moments(dataset: Dataset) -> MomentSet:
    """Sample analogs of the moment set (unconditional means per point)."""
    n = dataset.n
    if n == 0:
        raise SpecificationError("empty dataset")
    n_z = dataset.instruments.n_z
    e_yd = np.zeros(n_z)
    e_y0d = np.zeros(n_z)
    e_d = np.zeros(n_z)
    mass = np.zeros(n_z)
    for (z, yv, dv), cnt in dataset.group_counts().items():
        mass[z] += cnt
        e_yd[z] += cnt * yv * dv
        e_y0d[z] += cnt * yv * (1 - dv)
        e_d[z] += cnt * dv
    return MomentSet(
        instruments=dataset.instruments,
        z_mass=mass / n,
        e_yd=e_yd / n,
        e_y0d=e_y0d / n,
        e_d=e_d / n,
        source="sample",
        n=n,
    )
