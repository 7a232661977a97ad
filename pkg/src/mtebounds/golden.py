"""Golden reference values for the bundled study designs (tables 3 to 10).

Each table fixes a selection model and a target; cells vary the heterogeneity
dimension (panel), the departure scale sigma, the bounding method and the
shape-restriction set. Intervals are recorded at the three published decimals
and compared at tolerance 5e-3 per endpoint; "empty" records a certified
infeasibility. Version 1 of the reference data.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

from .assemble import RestrictionSet
from .bounds import cvr_bounds, hv_bounds, manski_bounds, mst_bounds
from .dgp import dgp_factory, population_moments, true_target
from .model import BoundsResult, SpecificationError
from .weights import TargetSpec

__all__ = [
    "TABLE_IDS",
    "TOLERANCE",
    "TRUE_ATE",
    "TRUE_PRTE",
    "table_info",
    "table_cells",
    "compute_cell",
    "run_table",
]

TABLE_IDS = (3, 4, 5, 6, 7, 8, 9, 10)
TOLERANCE = 5e-3
SIGMAS = (0.1, 0.5, 0.9)

# captions of tables 3/4 (panel a/b)
TRUE_ATE = {1: 0.083, 2: 0.139}
# second rows of tables 5/6 and cell parentheses of 9/10, per sigma
TRUE_PRTE = {
    ("local", 1): (0.005, 0.006, 0.006),
    ("local", 2): (0.011, 0.010, 0.008),
    ("random", 1): (0.009, 0.006, 0.004),
    ("random", 2): (0.011, 0.006, 0.004),
}

EMPTY = "empty"

# ATE interval per (model, v_dim, sigma): manski / hv / cvr columns
_ATE_MANSKI = {
    ("local", 1): [(-0.188, 0.462), (-0.196, 0.457), (-0.217, 0.460)],
    ("local", 2): [(-0.071, 0.564), (-0.100, 0.571), (-0.155, 0.583)],
    ("random", 1): [(-0.181, 0.437), (-0.228, 0.439), (-0.269, 0.451)],
    ("random", 2): [(-0.030, 0.534), (-0.145, 0.564), (-0.230, 0.570)],
}
_ATE_HV = {
    ("local", 1): _ATE_MANSKI[("local", 1)],
    ("local", 2): _ATE_MANSKI[("local", 2)],
    ("random", 1): [(-0.183, 0.437), (-0.229, 0.439), (-0.269, 0.451)],
    ("random", 2): [(-0.030, 0.534), (-0.155, 0.564), (-0.247, 0.570)],
}
_ATE_CVR = {
    ("local", 1): _ATE_MANSKI[("local", 1)],
    ("local", 2): _ATE_MANSKI[("local", 2)],
    ("random", 1): _ATE_MANSKI[("random", 1)],
    ("random", 2): [(-0.030, 0.534), (-0.145, 0.564), (-0.231, 0.570)],
}
# shape-restricted cvr columns of tables 7/8: r1 / r2 / r3 per sigma
_ATE_R1 = {
    ("local", 1): [(0.000, 0.462), (0.000, 0.457), (0.000, 0.460)],
    ("local", 2): [(0.000, 0.564), (0.000, 0.571), (0.000, 0.583)],
    ("random", 1): [(0.000, 0.437), (0.000, 0.439), (0.000, 0.451)],
    ("random", 2): [(0.000, 0.534), (0.000, 0.564), (0.000, 0.570)],
}
_ATE_R2 = {
    ("local", 1): [(-0.188, 0.257), (-0.196, 0.242), (-0.217, 0.220)],
    ("local", 2): [(-0.071, 0.371), (-0.100, 0.351), (-0.155, 0.316)],
    ("random", 1): [(-0.181, 0.263), (-0.228, 0.217), (-0.269, 0.174)],
    ("random", 2): [(-0.030, 0.316), (-0.145, 0.273), (-0.231, 0.229)],
}
_ATE_R3 = {
    ("local", 1): [(0.000, 0.257), (0.000, 0.242), (0.000, 0.220)],
    ("local", 2): [(0.000, 0.371), (0.000, 0.351), (0.000, 0.316)],
    ("random", 1): [(0.000, 0.263), (0.000, 0.217), (0.000, 0.174)],
    ("random", 2): [(0.000, 0.316), (0.000, 0.273), (0.000, 0.229)],
}


@dataclass(frozen=True)
class TableCell:
    table: int
    v_dim: int
    sigma: float
    method: str           # manski | hv | mst | cvr
    restrictions: str     # none | r1 | r2 | r3
    expected: tuple[float, float] | str


def table_info(table_id: int) -> dict:
    if table_id not in TABLE_IDS:
        raise SpecificationError(f"unknown table {table_id}; choose one of {TABLE_IDS}")
    model = "local" if table_id in (3, 5, 7, 9) else "random"
    target = "ate" if table_id in (3, 4, 7, 8) else "prte"
    shaped = table_id in (7, 8, 9, 10)
    return {"model": model, "target": target, "shaped": shaped}


def _point(v: float) -> tuple[float, float]:
    return (v, v)


def table_cells(table_id: int) -> list[TableCell]:
    info = table_info(table_id)
    model = info["model"]
    cells: list[TableCell] = []
    for v_dim in (1, 2):
        for si, sigma in enumerate(SIGMAS):
            key = (model, v_dim)
            if table_id in (3, 4):
                cells.append(TableCell(table_id, v_dim, sigma, "manski", "none", _ATE_MANSKI[key][si]))
                cells.append(TableCell(table_id, v_dim, sigma, "hv", "none", _ATE_HV[key][si]))
                mst_exp = _ATE_MANSKI[key][si] if model == "local" else EMPTY
                cells.append(TableCell(table_id, v_dim, sigma, "mst", "none", mst_exp))
                cells.append(TableCell(table_id, v_dim, sigma, "cvr", "none", _ATE_CVR[key][si]))
            elif table_id in (5, 6):
                point = _point(TRUE_PRTE[key][si])
                mst_exp = point if model == "local" else EMPTY
                cells.append(TableCell(table_id, v_dim, sigma, "mst", "none", mst_exp))
                cells.append(TableCell(table_id, v_dim, sigma, "cvr", "none", point))
            elif table_id in (7, 8):
                cells.append(TableCell(table_id, v_dim, sigma, "manski", "none", _ATE_MANSKI[key][si]))
                cells.append(TableCell(table_id, v_dim, sigma, "hv", "none", _ATE_HV[key][si]))
                cells.append(TableCell(table_id, v_dim, sigma, "cvr", "none", _ATE_CVR[key][si]))
                cells.append(TableCell(table_id, v_dim, sigma, "cvr", "r1", _ATE_R1[key][si]))
                cells.append(TableCell(table_id, v_dim, sigma, "cvr", "r2", _ATE_R2[key][si]))
                cells.append(TableCell(table_id, v_dim, sigma, "cvr", "r3", _ATE_R3[key][si]))
            else:  # 9, 10
                point = _point(TRUE_PRTE[key][si])
                for restr in ("none", "r1", "r2", "r3"):
                    cells.append(TableCell(table_id, v_dim, sigma, "cvr", restr, point))
    return cells


@lru_cache(maxsize=64)
def cached_moments(model: str, v_dim: int, sigma: float):
    return population_moments(dgp_factory(model, v_dim, sigma))


@lru_cache(maxsize=64)
def cached_true_target(model: str, v_dim: int, sigma: float, kind: str) -> float:
    dgp = dgp_factory(model, v_dim, sigma)
    return true_target(dgp, TargetSpec(kind), moments=cached_moments(model, v_dim, sigma))


def compute_cell(model: str, target_kind: str, cell: TableCell) -> BoundsResult:
    moments = cached_moments(model, cell.v_dim, cell.sigma)
    target = TargetSpec(target_kind)
    if cell.method == "manski":
        return manski_bounds(moments)
    if cell.method == "hv":
        return hv_bounds(moments)
    if cell.method == "mst":
        return mst_bounds(moments, target, RestrictionSet.from_name(cell.restrictions))
    if cell.method == "cvr":
        return cvr_bounds(
            moments,
            target,
            RestrictionSet.from_name(cell.restrictions),
            v_dim_assumed=cell.v_dim,
        )
    raise SpecificationError(f"unknown method {cell.method!r}")


def _cell_ok(result: BoundsResult, expected, tol: float = TOLERANCE) -> bool:
    if expected == EMPTY:
        return result.status == "empty"
    if result.status != "bounded":
        return False
    lo, hi = expected
    return abs(result.lower - lo) <= tol and abs(result.upper - hi) <= tol


def run_table(table_id: int) -> list[dict]:
    """Compute every cell of the table and diff against the stored values."""
    info = table_info(table_id)
    rows = []
    for cell in table_cells(table_id):
        result = compute_cell(info["model"], info["target"], cell)
        rows.append(
            {
                "table": table_id,
                "model": info["model"],
                "target": info["target"],
                "v_dim": cell.v_dim,
                "sigma": cell.sigma,
                "method": cell.method,
                "restrictions": cell.restrictions,
                "expected": cell.expected,
                "status": result.status,
                "lower": result.lower,
                "upper": result.upper,
                "ok": _cell_ok(result, cell.expected),
            }
        )
    return rows
