"""Linear and regularized-quadratic solves over a constraint system.

``solve_lp`` wraps the HiGHS simplex/IPM behind the row-order contract used
by the rest of the pipeline: objective ``min/max e_1' eta`` (or any supplied
coefficient vector), multipliers returned in the original row order with the
inner-minimization sign convention

    c + 2 mu eta + A_eq' lam_eq + A_ineq' lam_ineq = 0,   lam_ineq >= 0.

Infeasibility is only ever reported together with a Farkas-type certificate
(y_eq, y_ineq >= 0) with A_eq' y_eq + A_ineq' y_ineq = 0 and
b_eq' y_eq + b_ineq' y_ineq < 0; without a certificate the outcome is a
numerical failure, never a silent empty set.

``solve_regularized`` solves min(+-e_1' eta + mu ||eta||^2) with a primal
active-set method; strict convexity makes the optimizer unique. Exact
negation pairs among the inequality rows (degenerate envelopes) are detected
and pinned as equalities so the working set stays well behaved.

All row data are rescaled to unit max-norm before solving and every reported
quantity is mapped back to the original scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .model import ConstraintSystem, SolverFailure

__all__ = [
    "SolveOutcome",
    "solve_lp",
    "solve_regularized",
    "solve_lp_with_extra_row",
    "OPTIMAL",
    "INFEASIBLE",
    "UNBOUNDED",
    "NUMERICAL_FAILURE",
]

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL_FAILURE = "numerical_failure"

_FEAS_TOL = 1e-8
_CERT_TOL = 1e-9


@dataclass
class SolveOutcome:
    status: str
    value: float | None = None
    solution: np.ndarray | None = None
    multipliers_eq: np.ndarray | None = None
    multipliers_ineq: np.ndarray | None = None
    bound_multipliers: tuple[np.ndarray, np.ndarray] | None = None
    iterations: int = 0
    complementarity_residual: float | None = None
    certificate: dict | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def multipliers(self) -> np.ndarray | None:
        """Full multiplier vector aligned with [equality rows; inequality rows]."""
        if self.multipliers_eq is None or self.multipliers_ineq is None:
            return None
        return np.concatenate([self.multipliers_eq, self.multipliers_ineq])

    def kkt_report(self) -> str:
        lines = [f"status {self.status}"]
        for key, val in sorted(self.diagnostics.items()):
            lines.append(f"{key} {val}")
        if self.complementarity_residual is not None:
            lines.append(f"complementarity {self.complementarity_residual:.3e}")
        return "\n".join(lines) + "\n"


def _row_scales(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape[0] == 0:
        return np.ones(0)
    s = np.maximum(np.max(np.abs(a), axis=1), np.abs(b))
    s[s < 1e-12] = 1.0
    return s


@dataclass
class _Scaled:
    a_eq: np.ndarray
    b_eq: np.ndarray
    a_in: np.ndarray
    b_in: np.ndarray
    s_eq: np.ndarray
    s_in: np.ndarray
    lb: np.ndarray
    ub: np.ndarray


def _scale(system: ConstraintSystem) -> _Scaled:
    s_eq = _row_scales(system.a_eq, system.b_eq)
    s_in = _row_scales(system.a_ineq, system.b_ineq)
    return _Scaled(
        a_eq=system.a_eq / s_eq[:, None] if s_eq.size else system.a_eq,
        b_eq=system.b_eq / s_eq if s_eq.size else system.b_eq,
        a_in=system.a_ineq / s_in[:, None] if s_in.size else system.a_ineq,
        b_in=system.b_ineq / s_in if s_in.size else system.b_ineq,
        s_eq=s_eq,
        s_in=s_in,
        lb=system.lb,
        ub=system.ub,
    )


def _objective(system: ConstraintSystem, objective, direction: str) -> np.ndarray:
    if objective is None:
        c = np.zeros(system.dim)
        c[0] = 1.0
    else:
        c = np.asarray(objective, dtype=float)
        if c.shape != (system.dim,):
            raise SolverFailure(f"objective length {c.size} != {system.dim} columns")
    if direction not in ("min", "max"):
        raise SolverFailure(f"direction must be 'min' or 'max', got {direction!r}")
    return -c if direction == "max" else c.copy()


def _complementarity(lam_in: np.ndarray, slack: np.ndarray) -> float:
    if lam_in.size == 0:
        return 0.0
    return float(np.max(np.abs(lam_in * slack)))


def _farkas_certificate(system: ConstraintSystem, sc: _Scaled) -> dict | None:
    """Search for a normalized infeasibility certificate by an auxiliary LP."""
    d = system.dim
    g_rows, g_rhs, g_kind = [], [], []
    if sc.a_in.size:
        g_rows.append(sc.a_in)
        g_rhs.append(sc.b_in)
        g_kind.extend(("ineq", i) for i in range(sc.a_in.shape[0]))
    lb_idx = np.where(np.isfinite(sc.lb))[0]
    ub_idx = np.where(np.isfinite(sc.ub))[0]
    if lb_idx.size:
        rows = np.zeros((lb_idx.size, d))
        rows[np.arange(lb_idx.size), lb_idx] = -1.0
        g_rows.append(rows)
        g_rhs.append(-sc.lb[lb_idx])
        g_kind.extend(("lb", int(k)) for k in lb_idx)
    if ub_idx.size:
        rows = np.zeros((ub_idx.size, d))
        rows[np.arange(ub_idx.size), ub_idx] = 1.0
        g_rows.append(rows)
        g_rhs.append(sc.ub[ub_idx])
        g_kind.extend(("ub", int(k)) for k in ub_idx)
    g = np.vstack(g_rows) if g_rows else np.zeros((0, d))
    h = np.concatenate(g_rhs) if g_rhs else np.zeros(0)
    n_eq, n_g = sc.a_eq.shape[0], g.shape[0]
    n_var = 2 * n_eq + n_g
    if n_var == 0:
        return None
    # columns: y_eq+ | y_eq- | w ; constraints: A_eq'(y+ - y-) + G'w = 0, sum = 1
    a_cert = np.zeros((d + 1, n_var))
    if n_eq:
        a_cert[:d, :n_eq] = sc.a_eq.T
        a_cert[:d, n_eq : 2 * n_eq] = -sc.a_eq.T
    if n_g:
        a_cert[:d, 2 * n_eq :] = g.T
    a_cert[d, :] = 1.0
    b_cert = np.zeros(d + 1)
    b_cert[d] = 1.0
    c_cert = np.concatenate([sc.b_eq, -sc.b_eq, h])
    res = linprog(c_cert, A_eq=a_cert, b_eq=b_cert, bounds=(0, None), method="highs")
    if res.status != 0 or res.fun is None or res.fun >= -_CERT_TOL:
        return None
    y = res.x
    y_eq = (y[:n_eq] - y[n_eq : 2 * n_eq]) / sc.s_eq if n_eq else np.zeros(0)
    w = y[2 * n_eq :]
    y_in = np.zeros(system.n_ineq)
    y_lb = np.zeros(d)
    y_ub = np.zeros(d)
    for (kind, idx), wi in zip(g_kind, w):
        if kind == "ineq":
            y_in[idx] = wi / sc.s_in[idx]
        elif kind == "lb":
            y_lb[idx] = wi
        else:
            y_ub[idx] = wi
    return {
        "y_eq": y_eq,
        "y_ineq": y_in,
        "y_lb": y_lb,
        "y_ub": y_ub,
        "violation": float(-res.fun),
    }


def solve_lp(
    system: ConstraintSystem,
    direction: str = "min",
    objective=None,
) -> SolveOutcome:
    """Optimize a linear objective (default: the first coordinate) over the polytope."""
    c = _objective(system, objective, direction)
    sign = -1.0 if direction == "max" else 1.0
    sc = _scale(system)
    bounds = [
        (lo if np.isfinite(lo) else None, hi if np.isfinite(hi) else None)
        for lo, hi in zip(sc.lb, sc.ub)
    ]
    opts = {"primal_feasibility_tolerance": 1e-9, "dual_feasibility_tolerance": 1e-9}
    res = None
    for method in ("highs", "highs-ds", "highs-ipm"):
        res = linprog(
            c,
            A_ub=sc.a_in if sc.a_in.size else None,
            b_ub=sc.b_in if sc.a_in.size else None,
            A_eq=sc.a_eq if sc.a_eq.size else None,
            b_eq=sc.b_eq if sc.a_eq.size else None,
            bounds=bounds,
            method=method,
            options=opts if method != "highs-ipm" else None,
        )
        if res.status in (0, 2, 3):
            break
    if res is None or res.status not in (0, 2, 3):
        return SolveOutcome(status=NUMERICAL_FAILURE, diagnostics={"message": getattr(res, "message", "")})
    if res.status == 2:
        cert = _farkas_certificate(system, sc)
        if cert is None:
            return SolveOutcome(
                status=NUMERICAL_FAILURE,
                diagnostics={"message": "declared infeasible but no certificate found"},
            )
        return SolveOutcome(status=INFEASIBLE, certificate=cert, iterations=int(getattr(res, "nit", 0)))
    if res.status == 3:
        return SolveOutcome(status=UNBOUNDED, iterations=int(getattr(res, "nit", 0)))
    x = res.x
    lam_eq = np.zeros(system.n_eq)
    lam_in = np.zeros(system.n_ineq)
    if system.n_eq and res.eqlin is not None:
        lam_eq = -np.asarray(res.eqlin.marginals) / sc.s_eq
    if system.n_ineq and res.ineqlin is not None:
        lam_in = -np.asarray(res.ineqlin.marginals) / sc.s_in
    low_mult = np.asarray(res.lower.marginals) if res.lower is not None else np.zeros(system.dim)
    up_mult = -np.asarray(res.upper.marginals) if res.upper is not None else np.zeros(system.dim)
    _, slack = system.residuals(x)
    r_eq, _ = system.residuals(x)
    outcome = SolveOutcome(
        status=OPTIMAL,
        value=float(sign * res.fun),
        solution=x,
        multipliers_eq=lam_eq,
        multipliers_ineq=np.maximum(lam_in, 0.0),
        bound_multipliers=(low_mult, up_mult),
        iterations=int(getattr(res, "nit", 0)),
        complementarity_residual=_complementarity(lam_in, slack),
        diagnostics={
            "primal_feas": float(np.max(np.abs(r_eq)) if r_eq.size else 0.0),
            "min_slack": float(np.min(slack) if slack.size else 0.0),
        },
    )
    return outcome


def solve_lp_with_extra_row(
    system: ConstraintSystem,
    extra_row: tuple[np.ndarray, float] | None,
    objective_coordinate: int,
    direction: str = "min",
) -> SolveOutcome:
    """Optimize a single coordinate over the polytope cut by one extra half-space."""
    if not (0 <= objective_coordinate < system.dim):
        raise SolverFailure(f"coordinate {objective_coordinate} outside 0..{system.dim - 1}")
    cut = system if extra_row is None else system.with_extra_ineq(extra_row[0], extra_row[1])
    obj = np.zeros(system.dim)
    obj[objective_coordinate] = 1.0
    out = solve_lp(cut, direction=direction, objective=obj)
    if out.status == OPTIMAL and extra_row is not None:
        # multipliers of the cut system carry one extra row; keep it in diagnostics
        out.diagnostics["extra_row_multiplier"] = float(out.multipliers_ineq[-1])
        out.multipliers_ineq = out.multipliers_ineq[:-1]
    return out


# ---------------------------------------------------------------------------
# strictly convex regularized program, primal active set
# ---------------------------------------------------------------------------


def _negation_pairs(a: np.ndarray, b: np.ndarray) -> list[tuple[int, int]]:
    """Indices (i, j), i < j, with row_j = -row_i exactly (within rounding)."""
    seen: dict[bytes, int] = {}
    pairs = []
    used = set()
    for i in range(a.shape[0]):
        key = np.round(np.concatenate([a[i], [b[i]]]), 12).tobytes()
        neg = np.round(np.concatenate([-a[i], [-b[i]]]), 12).tobytes()
        if neg in seen and seen[neg] not in used:
            j = seen[neg]
            pairs.append((j, i))
            used.add(i)
            used.add(j)
        elif key not in seen:
            seen[key] = i
    return pairs


def _working_multipliers(a_act: np.ndarray, g: np.ndarray, n_eq_rows: int, tol: float):
    """Multipliers solving A_act' lam = -g; accepted when the working-set part
    can be taken nonnegative. Degenerate working sets may hide a valid
    nonnegative solution from the min-norm one, so a sign-constrained
    least-squares pass is tried before rejecting."""
    if a_act.shape[0] == 0:
        return np.zeros(0), True
    lam, *_ = np.linalg.lstsq(a_act.T, -g, rcond=None)
    if lam.size == n_eq_rows or np.min(lam[n_eq_rows:]) >= -1e-9:
        return lam, True
    from scipy.optimize import lsq_linear

    lo = np.concatenate([np.full(n_eq_rows, -np.inf), np.zeros(lam.size - n_eq_rows)])
    hi = np.full(lam.size, np.inf)
    res = lsq_linear(a_act.T, -g, bounds=(lo, hi), tol=1e-14)
    residual = np.max(np.abs(a_act.T @ res.x + g))
    if residual <= max(tol, 1e-9 * (1.0 + np.max(np.abs(g)))):
        return res.x, True
    return lam, False


def _feasible_start(system: ConstraintSystem, c_lin: np.ndarray):
    out = solve_lp(system, "min", objective=c_lin)
    if out.status == OPTIMAL:
        return out.solution, None
    if out.status == UNBOUNDED:
        out = solve_lp(system, "min", objective=np.zeros(system.dim))
        if out.status == OPTIMAL:
            return out.solution, None
    return None, out


def solve_regularized(
    system: ConstraintSystem,
    direction: str = "min",
    mu: float = 1e-4,
    start: np.ndarray | None = None,
    max_iter: int | None = None,
) -> SolveOutcome:
    """Solve min(+-e_1' eta + mu ||eta||^2); for ``max`` the reported value is
    the negated inner minimum so it estimates the upper support point."""
    if mu <= 0:
        raise SolverFailure(f"regularization weight must be positive, got {mu}")
    c = _objective(system, None, direction)
    sign = -1.0 if direction == "max" else 1.0
    sc = _scale(system)
    d = system.dim
    # fold finite box bounds into inequality rows for the working-set logic
    rows = [sc.a_in] if sc.a_in.size else []
    rhs = [sc.b_in] if sc.a_in.size else []
    kinds: list[tuple[str, int]] = [("ineq", i) for i in range(sc.a_in.shape[0])]
    for k in np.where(np.isfinite(sc.lb))[0]:
        r = np.zeros(d); r[k] = -1.0
        rows.append(r[None, :]); rhs.append(np.array([-sc.lb[k]])); kinds.append(("lb", int(k)))
    for k in np.where(np.isfinite(sc.ub))[0]:
        r = np.zeros(d); r[k] = 1.0
        rows.append(r[None, :]); rhs.append(np.array([sc.ub[k]])); kinds.append(("ub", int(k)))
    a_in = np.vstack(rows) if rows else np.zeros((0, d))
    b_in = np.concatenate(rhs) if rhs else np.zeros(0)

    pairs = _negation_pairs(a_in, b_in)
    paired = {i for ij in pairs for i in ij}
    pin_rows = np.array([a_in[i] for i, _ in pairs]).reshape(-1, d)
    pin_rhs = np.array([b_in[i] for i, _ in pairs])
    free_idx = [i for i in range(a_in.shape[0]) if i not in paired]
    a_free = a_in[free_idx] if free_idx else np.zeros((0, d))
    b_free = b_in[free_idx] if free_idx else np.zeros(0)

    # feasibility of the equality part rides on the start point; search
    # directions stay in its null space, so only the row matrix is needed
    a_e = np.vstack([sc.a_eq, pin_rows]) if sc.a_eq.size or pin_rows.size else np.zeros((0, d))

    if start is None:
        x, fail = _feasible_start(system, c)
        if x is None:
            return fail
    else:
        x = np.asarray(start, dtype=float).copy()

    if max_iter is None:
        max_iter = 200 + 20 * (d + a_free.shape[0])
    working: list[int] = [
        i for i in range(a_free.shape[0]) if b_free[i] - a_free[i] @ x <= 1e-10
    ]
    n_eq_rows = a_e.shape[0]
    it = 0
    converged = False
    final_lam = None
    while it < max_iter:
        it += 1
        g = c + 2.0 * mu * x
        a_act = np.vstack([a_e, a_free[working]]) if (n_eq_rows or working) else np.zeros((0, d))
        if a_act.shape[0]:
            nu, *_ = np.linalg.lstsq(a_act @ a_act.T, a_act @ g, rcond=None)
            proj_grad = g - a_act.T @ nu
        else:
            proj_grad = g
        stat_tol = 1e-10 * (1.0 + np.max(np.abs(g)))
        if np.max(np.abs(proj_grad)) <= stat_tol:
            # stationary on the working set; look for valid multipliers
            lam_all, accepted = _working_multipliers(a_act, g, n_eq_rows, stat_tol)
            if accepted:
                converged = True
                final_lam = lam_all
                break
            drop = int(np.argmin(lam_all[n_eq_rows:]))
            working.pop(drop)
            continue
        p = -proj_grad / (2.0 * mu)
        alpha = 1.0
        blocker = -1
        cand = [i for i in range(a_free.shape[0]) if i not in working]
        if cand:
            ac = a_free[cand]
            denom = ac @ p
            slack = b_free[cand] - ac @ x
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(denom > 1e-12, slack / denom, np.inf)
            ratio = np.maximum(ratio, 0.0)
            imin = int(np.argmin(ratio))
            if ratio[imin] < alpha:
                alpha = float(ratio[imin])
                blocker = cand[imin]
        x = x + alpha * p
        if blocker >= 0 and alpha < 1.0:
            working.append(blocker)
    if not converged:
        return SolveOutcome(
            status=NUMERICAL_FAILURE,
            diagnostics={"message": f"active set did not converge in {max_iter} iterations"},
        )
    lam_all = final_lam if final_lam is not None else np.zeros(0)
    # map multipliers back to the original rows, unscaled
    lam_eq = np.zeros(system.n_eq)
    lam_in_full = np.zeros(a_in.shape[0])
    n_sys_eq = system.n_eq
    if n_sys_eq:
        lam_eq = lam_all[:n_sys_eq] / sc.s_eq
    for slot, (i, j) in enumerate(pairs):
        nu = lam_all[n_sys_eq + slot]
        lam_in_full[i] = max(nu, 0.0)
        lam_in_full[j] = max(-nu, 0.0)
    for slot, row_idx in enumerate(working):
        lam_in_full[free_idx[row_idx]] = max(lam_all[n_eq_rows + slot], 0.0)
    lam_in = np.zeros(system.n_ineq)
    low_mult = np.zeros(d)
    up_mult = np.zeros(d)
    for pos, (kind, idx) in enumerate(kinds):
        if kind == "ineq":
            lam_in[idx] = lam_in_full[pos] / sc.s_in[idx]
        elif kind == "lb":
            low_mult[idx] = lam_in_full[pos]
        else:
            up_mult[idx] = lam_in_full[pos]
    inner_value = float(c @ x + mu * x @ x)
    _, slack = system.residuals(x)
    r_eq, _ = system.residuals(x)
    kkt = c + 2 * mu * x
    if system.n_eq:
        kkt = kkt + system.a_eq.T @ lam_eq
    if system.n_ineq:
        kkt = kkt + system.a_ineq.T @ lam_in
    kkt = kkt - low_mult + up_mult
    return SolveOutcome(
        status=OPTIMAL,
        value=float(sign * inner_value),
        solution=x,
        multipliers_eq=lam_eq,
        multipliers_ineq=lam_in,
        bound_multipliers=(low_mult, up_mult),
        iterations=it,
        complementarity_residual=_complementarity(lam_in, slack),
        diagnostics={
            "primal_feas": float(np.max(np.abs(r_eq)) if r_eq.size else 0.0),
            "min_slack": float(np.min(slack) if slack.size else 0.0),
            "stationarity": float(np.max(np.abs(kkt))),
            "mu": float(mu),
        },
    )
