import numpy as np
import pytest

from mtebounds import (
    BasisLayout,
    BoundsResult,
    ConstraintSystem,
    EnvelopeBounds,
    InstrumentSpace,
    MtrCoefficients,
    SpecificationError,
    VPartition,
    local_departure_dgp,
    validate_spec,
)
from mtebounds.model import FUNCTIONS
from mtebounds.weights import TargetSpec


def test_partition_volumes_sum_to_one():
    part = VPartition.from_knots([0, 0.35, 0.6, 0.7, 1], dim=1)
    assert part.n_cells == 4
    assert abs(part.volumes.sum() - 1.0) < 1e-12

    part2 = VPartition.from_knots([0, 0.3, 1], dim=2)
    assert part2.n_cells == 4
    assert abs(part2.volumes.sum() - 1.0) < 1e-12
    assert part2.intervals_per_axis == (2, 2)


def test_partition_cell_lookup_boundaries():
    part = VPartition.from_knots([0, 0.35, 0.6, 1], dim=1)
    # first interval closed on both ends, later ones (lo, hi]
    assert part.cell_index_of([0.0]) == 0
    assert part.cell_index_of([0.35]) == 0
    assert part.cell_index_of([0.3500001]) == 1
    assert part.cell_index_of([0.6]) == 1
    assert part.cell_index_of([1.0]) == 2


def test_partition_violations():
    bad = VPartition.from_knots([0, 0.7, 0.6, 1], dim=1)
    msgs = bad.violations()
    assert any("not increasing" in m for m in msgs)
    with pytest.raises(SpecificationError):
        bad.require_valid()
    assert not VPartition.from_knots([0, 0.5, 1], dim=2).violations()


def test_instrument_mass_violation():
    instr = InstrumentSpace(points=((0,), (1,), (2,)), probabilities=(0.5, 0.4, 0.2))
    msgs = instr.violations()
    assert any("sums to 1.1" in m for m in msgs)


def test_policy_support_violation():
    instr = InstrumentSpace(
        points=((0,), (1,)), probabilities=(1.0, 0.0), policy_probabilities=(0.5, 0.5)
    )
    assert any("zero original mass" in m for m in instr.violations())


def test_layout_bijection_and_dimension():
    part = VPartition.from_knots([0, 0.5, 1], dim=1)
    instr = InstrumentSpace(points=((0,), (1,), (2,)), probabilities=(0.5, 0.4, 0.1))
    layout = BasisLayout(partition=part, instruments=instr)
    assert layout.dim_eta == 1 + 2 * 2 * 1 + 3 * 2 * 3
    seen = set()
    for f in FUNCTIONS:
        width = layout.n_x if f in ("m0", "m1") else layout.n_z
        for c in range(layout.n_cells):
            for v in range(width):
                pos = layout.index(f, c, v)
                assert layout.unindex(pos) == (f, c, v)
                seen.add(pos)
    assert seen == set(range(1, layout.dim_eta))


def test_mtr_coefficients_validation():
    part = VPartition.from_knots([0, 1], dim=1)
    instr = InstrumentSpace(points=((0,),), probabilities=(1.0,))
    layout = BasisLayout(partition=part, instruments=instr)
    with pytest.raises(SpecificationError):
        MtrCoefficients(eta1=0.0, eta2=np.zeros(3), layout=layout)
    eta2 = np.array([0.2, 0.8, 0.5, 0.1, 0.4])
    coefs = MtrCoefficients(eta1=0.6, eta2=eta2, layout=layout)
    assert coefs.feasibility_violations() == []
    bad = MtrCoefficients(eta1=0.0, eta2=eta2 + 2.0, layout=layout)
    assert bad.feasibility_violations()


def test_envelope_default_and_mst():
    part = VPartition.from_knots([0, 0.35, 0.6, 0.7, 1], dim=1)
    instr = InstrumentSpace(points=((0,), (1,), (2,)), probabilities=(0.5, 0.4, 0.1))
    layout = BasisLayout(partition=part, instruments=instr)
    env = EnvelopeBounds.default(layout)
    assert not env.violations()
    assert not env.is_degenerate_mD

    mst = EnvelopeBounds.mst(layout, propensities=[0.35, 0.6, 0.7])
    assert mst.is_degenerate_mD
    # cell k treated under z iff the propensity reaches the cell's upper edge
    expect = np.array(
        [[1, 1, 1], [0, 1, 1], [0, 0, 1], [0, 0, 0]], dtype=float
    )
    assert np.array_equal(mst.mD_lower, expect)
    with pytest.raises(SpecificationError):
        EnvelopeBounds.mst(layout, propensities=[0.5, 0.6, 0.7])


def test_validate_spec_reports():
    dgp = local_departure_dgp(1, 0.1)
    part = VPartition.from_knots([0, 0.5, 1], dim=1)
    report = validate_spec(dgp=dgp, partition=part, target=TargetSpec("ate"))
    assert report.ok

    bad_part = VPartition.from_knots([0, 0.7, 0.6, 1], dim=1)
    report = validate_spec(dgp=dgp, partition=bad_part)
    assert not report.ok
    assert any("not increasing" in v for v in report.violations)

    from dataclasses import replace

    bad_dgp = replace(
        dgp,
        instruments=InstrumentSpace(points=((0,), (1,), (2,)), probabilities=(0.5, 0.4, 0.2)),
    )
    report = validate_spec(dgp=bad_dgp)
    assert any("sums to 1.1" in v for v in report.violations)


def test_constraint_system_checks_and_dump():
    sys_ = ConstraintSystem(
        a_eq=np.array([[1.0, -0.5]]),
        b_eq=np.array([0.0]),
        a_ineq=np.array([[0.0, 1.0], [0.0, -1.0]]),
        b_ineq=np.array([1.0, 0.0]),
        lb=np.array([-np.inf, -np.inf]),
        ub=np.array([np.inf, np.inf]),
    )
    assert sys_.violations() == []
    dump = sys_.lp_dump()
    assert "columns 2" in dump and "rows_eq 1" in dump and "rows_ineq 2" in dump

    bad = ConstraintSystem(
        a_eq=np.array([[np.nan, 0.0]]),
        b_eq=np.array([0.0]),
        a_ineq=np.zeros((0, 2)),
        b_ineq=np.zeros(0),
        lb=np.zeros(2),
        ub=np.ones(2),
    )
    assert any("non-finite" in v for v in bad.violations())


def test_bounds_result_invariant():
    with pytest.raises(SpecificationError):
        BoundsResult(status="bounded", lower=1.0, upper=0.0)
    res = BoundsResult(status="bounded", lower=-0.1, upper=0.2)
    assert res.width == pytest.approx(0.3)
    assert BoundsResult(status="empty").width is None
