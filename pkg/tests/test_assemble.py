import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtebounds import (
    Dataset,
    EnvelopeBounds,
    IvLikeSet,
    RestrictionSet,
    SpecificationError,
    assemble_sample,
    assemble_system,
    build_partition,
    empirical_moments,
    local_departure_dgp,
    make_layout,
    random_coefficient_dgp,
    sample,
    true_coefficients,
    weights_for,
)
from mtebounds.weights import TargetSpec


def _system_for(moments, target, restrictions=None, v_dim=1, extra_knots=(), mst=False):
    ws = weights_for(target, moments, moments.instruments)
    part = build_partition(
        ws,
        v_dim,
        propensities=moments.propensities,
        include_propensity=mst,
        extra_knots=extra_knots,
    )
    env = None
    if mst:
        layout = make_layout(part, moments.instruments)
        env = EnvelopeBounds.mst(layout, moments.propensities)
    return assemble_system(moments, ws, part, restrictions, env)


class TestPartitionConstruction:
    def test_mst_partition_from_propensities(self, moments_cache):
        mom = moments_cache("local", 1, 0.1)
        ws = weights_for(TargetSpec("ate"), mom, mom.instruments)
        part = build_partition(ws, 1, propensities=mom.propensities, include_propensity=True)
        assert part.n_cells == 4
        assert np.allclose(part.knots_per_axis[0], [0, 0.35, 0.6, 0.7, 1], atol=1e-6)

    def test_cvr_ate_single_cell(self, moments_cache):
        mom = moments_cache("local", 1, 0.1)
        ws = weights_for(TargetSpec("ate"), mom, mom.instruments)
        part = build_partition(ws, 1)
        assert part.n_cells == 1

    def test_generalized_late_knots(self, moments_cache):
        mom = moments_cache("local", 1, 0.1)
        ws = weights_for(TargetSpec("generalized_late", v_lo=0.3, v_hi=0.8), mom, mom.instruments)
        knots = build_partition(ws, 1).knots_per_axis[0]
        assert 0.3 in knots and 0.8 in knots

    def test_product_partition_shares_knots(self, moments_cache):
        mom = moments_cache("local", 2, 0.1)
        ws = weights_for(TargetSpec("ate"), mom, mom.instruments)
        part = build_partition(ws, 2, extra_knots=(0.4,))
        assert part.knots_per_axis[0] == part.knots_per_axis[1]
        assert part.n_cells == 4


class TestEqualityRows:
    def test_row_count(self, moments_cache):
        mom = moments_cache("local", 1, 0.1)
        sys_ = _system_for(mom, TargetSpec("ate"))
        assert sys_.n_eq == 1 + 3 * 3
        assert sys_.eq_labels[0] == "eta1_def"
        # eta1-definition row: coefficient 1 on eta1, -t_star on the rest
        assert sys_.a_eq[0, 0] == 1.0

    def test_truth_satisfies_all_rows(self, moments_cache):
        for model, v_dim in (("local", 1), ("random", 1), ("local", 2)):
            mom = moments_cache(model, v_dim, 0.5)
            dgp = (local_departure_dgp if model == "local" else random_coefficient_dgp)(v_dim, 0.5)
            target = TargetSpec("ate")
            sys_ = _system_for(mom, target, v_dim=v_dim, extra_knots=(0.5,))
            truth = true_coefficients(dgp, sys_.layout, target=target)
            r_eq, slack = sys_.residuals(truth.full)
            assert np.max(np.abs(r_eq)) < 1e-8
            assert np.min(slack) > -1e-8

    def test_truth_satisfies_shape_rows(self, moments_cache):
        mom = moments_cache("local", 1, 0.5)
        dgp = local_departure_dgp(1, 0.5)
        target = TargetSpec("ate")
        sys_ = _system_for(mom, target, restrictions=RestrictionSet(mtr=True), extra_knots=(0.5,))
        truth = true_coefficients(dgp, sys_.layout, target=target)
        _, slack = sys_.residuals(truth.full)
        assert np.min(slack) > -1e-8

    def test_zero_mass_instrument_dropped(self):
        instr = local_departure_dgp(1, 0.5).instruments
        # dataset never draws z = 2
        y = np.array([1, 0, 1, 0]); d = np.array([1, 1, 0, 0]); z = np.array([0, 1, 0, 1])
        data = Dataset(y=y, d=d, z_idx=z, instruments=instr)
        with pytest.warns(UserWarning, match="zero mass"):
            sys_, _ = assemble_sample(data, TargetSpec("ate"))
        assert sys_.n_eq == 1 + 3 * 2


class TestShapeRows:
    def test_r1_row_count(self, moments_cache):
        mom = moments_cache("local", 1, 0.1)
        base = _system_for(mom, TargetSpec("ate"), extra_knots=(0.35, 0.6, 0.7))
        shaped = _system_for(
            mom, TargetSpec("ate"), restrictions=RestrictionSet(mtr=True), extra_knots=(0.35, 0.6, 0.7)
        )
        assert shaped.n_ineq - base.n_ineq == 4 + 4 * 3

    def test_r3_is_union_of_rows(self, moments_cache):
        mom = moments_cache("local", 1, 0.1)
        r1 = _system_for(mom, TargetSpec("ate"), restrictions=RestrictionSet.from_name("r1"))
        r2 = _system_for(mom, TargetSpec("ate"), restrictions=RestrictionSet.from_name("r2"))
        r3 = _system_for(mom, TargetSpec("ate"), restrictions=RestrictionSet.from_name("r3"))
        base = _system_for(mom, TargetSpec("ate"))
        assert (r1.n_ineq - base.n_ineq) + (r2.n_ineq - base.n_ineq) == r3.n_ineq - base.n_ineq
        shape_rows_r3 = r3.a_ineq[base.n_ineq :]
        stacked = np.vstack([r1.a_ineq[base.n_ineq :], r2.a_ineq[base.n_ineq :]])
        assert np.allclose(shape_rows_r3, stacked)

    def test_stochastic_monotonicity_rows(self, moments_cache):
        mom = moments_cache("random", 1, 0.5)
        restr = RestrictionSet(stochastic_monotonicity=True)
        sys_ = _system_for(mom, TargetSpec("ate"), restrictions=restr)
        labels = [l for l in sys_.ineq_labels if l.startswith("stoch_mono")]
        # cover pairs of the 3 x 2 product order: 7 relations, 1 cell
        assert len(labels) == 7
        skip = RestrictionSet(stochastic_monotonicity=True, deterministic_monotonicity=True)
        sys2 = _system_for(mom, TargetSpec("ate"), restrictions=skip)
        assert not [l for l in sys2.ineq_labels if l.startswith("stoch_mono")]

    def test_truth_satisfies_stochastic_monotonicity(self, moments_cache):
        # the local-departure propensity is increasing in the instrument at
        # every heterogeneity stratum, so the cell averages inherit the order
        mom = moments_cache("local", 1, 0.9)
        dgp = local_departure_dgp(1, 0.9)
        restr = RestrictionSet(stochastic_monotonicity=True)
        sys_ = _system_for(mom, TargetSpec("ate"), restrictions=restr, extra_knots=(0.3, 0.6))
        truth = true_coefficients(dgp, sys_.layout, target=TargetSpec("ate"))
        rows = [i for i, l in enumerate(sys_.ineq_labels) if l.startswith("stoch_mono")]
        _, slack = sys_.residuals(truth.full)
        assert slack[rows].min() > -1e-10

    def test_mts_needs_interior_treatment_share(self):
        instr = local_departure_dgp(1, 0.5).instruments
        from mtebounds import MomentSet

        mom = MomentSet(
            instruments=instr,
            z_mass=np.array([0.5, 0.4, 0.1]),
            e_yd=np.zeros(3),
            e_y0d=np.array([0.2, 0.1, 0.02]),
            e_d=np.zeros(3),
        )
        with pytest.raises(SpecificationError):
            _system_for(mom, TargetSpec("ate"), restrictions=RestrictionSet(mts=True))


class TestMcCormickRows:
    def _random_feasible_etas(self, layout, env, n, rng):
        kv, kx, kz = layout.n_cells, layout.n_x, layout.n_z
        m0 = env.m0_lower + (env.m0_upper - env.m0_lower) * rng.random((n, kv, kx))
        m1 = env.m1_lower + (env.m1_upper - env.m1_lower) * rng.random((n, kv, kx))
        md = env.mD_lower + (env.mD_upper - env.mD_lower) * rng.random((n, kv, kz))
        etas = np.zeros((n, layout.dim_eta))
        for c in range(kv):
            for j in range(kx):
                etas[:, layout.index("m0", c, j)] = m0[:, c, j]
                etas[:, layout.index("m1", c, j)] = m1[:, c, j]
            for l in range(kz):
                j = layout.instruments.x_index_of_z(l)
                etas[:, layout.index("mD", c, l)] = md[:, c, l]
                etas[:, layout.index("m0D", c, l)] = m0[:, c, j] * (1 - md[:, c, l])
                etas[:, layout.index("m1D", c, l)] = m1[:, c, j] * md[:, c, l]
        return etas

    def test_exact_products_satisfy_every_row(self, moments_cache, rng):
        mom = moments_cache("local", 1, 0.1)
        ws = weights_for(TargetSpec("ate"), mom, mom.instruments)
        part = build_partition(ws, 1, extra_knots=(0.35, 0.7))
        layout = make_layout(part, mom.instruments)
        env = EnvelopeBounds.default(layout)
        sys_ = assemble_system(mom, ws, part, None, env)
        mc_rows = [i for i, l in enumerate(sys_.ineq_labels) if l.startswith(("m0D_", "m1D_"))]
        etas = self._random_feasible_etas(layout, env, 10_000, rng)
        slack = sys_.b_ineq[mc_rows] - etas @ sys_.a_ineq[mc_rows].T
        assert slack.min() > -1e-10

    def test_exact_products_with_tight_envelopes(self, moments_cache, rng):
        # informative (non-default) envelopes around a reference point
        mom = moments_cache("local", 1, 0.1)
        ws = weights_for(TargetSpec("ate"), mom, mom.instruments)
        part = build_partition(ws, 1, extra_knots=(0.5,))
        layout = make_layout(part, mom.instruments)
        base = EnvelopeBounds.default(layout)
        lo = rng.random((layout.n_cells, layout.n_z)) * 0.4
        env = EnvelopeBounds(
            m0_lower=base.m0_lower + 0.1, m0_upper=base.m0_upper - 0.2,
            m1_lower=base.m1_lower + 0.05, m1_upper=base.m1_upper - 0.1,
            mD_lower=lo, mD_upper=lo + 0.5,
        )
        sys_ = assemble_system(mom, ws, part, None, env)
        mc_rows = [i for i, l in enumerate(sys_.ineq_labels) if l.startswith(("m0D_", "m1D_"))]
        etas = self._random_feasible_etas(layout, env, 5_000, rng)
        slack = sys_.b_ineq[mc_rows] - etas @ sys_.a_ineq[mc_rows].T
        assert slack.min() > -1e-10

    @settings(max_examples=200, deadline=None)
    @given(
        a=st.floats(0, 1), b=st.floats(0, 1), p=st.floats(0, 1),
        la=st.floats(0, 1), ua=st.floats(0, 1),
        lp=st.floats(0, 1), up=st.floats(0, 1),
    )
    def test_pointwise_envelope_validity(self, a, b, p, la, ua, lp, up):
        # shrink the box around the point, then the eight product inequalities hold
        lo_a, up_a = min(la, a), max(ua, a)
        lo_p, up_p = min(lp, p), max(up, p)
        q = a * (1 - p)
        assert q >= lo_a * (1 - p) + a * (1 - up_p) - lo_a * (1 - up_p) - 1e-12
        assert q >= up_a * (1 - p) + a * (1 - lo_p) - up_a * (1 - lo_p) - 1e-12
        assert q <= up_a * (1 - p) + a * (1 - up_p) - up_a * (1 - up_p) + 1e-12
        assert q <= lo_a * (1 - p) + a * (1 - lo_p) - lo_a * (1 - lo_p) + 1e-12
        r = b * p
        lo_b, up_b = min(la, b), max(ua, b)
        assert r >= lo_b * p + b * lo_p - lo_b * lo_p - 1e-12
        assert r >= up_b * p + b * up_p - up_b * up_p - 1e-12
        assert r <= up_b * p + b * lo_p - up_b * lo_p + 1e-12
        assert r <= lo_b * p + b * up_p - lo_b * up_p + 1e-12

    def test_degenerate_envelope_forces_products(self, moments_cache):
        # with the propensity pinned, only eta with m1D = m1 * mD stays feasible
        mom = moments_cache("local", 1, 0.1)
        ws = weights_for(TargetSpec("ate"), mom, mom.instruments)
        part = build_partition(ws, 1, propensities=mom.propensities, include_propensity=True)
        layout = make_layout(part, mom.instruments)
        env = EnvelopeBounds.mst(layout, mom.propensities)
        sys_ = assemble_system(mom, ws, part, None, env)
        rng = np.random.default_rng(5)
        eta = np.zeros(layout.dim_eta)
        for c in range(layout.n_cells):
            m0, m1 = rng.random(), rng.random()
            eta[layout.index("m0", c, 0)] = m0
            eta[layout.index("m1", c, 0)] = m1
            for l in range(layout.n_z):
                pin = env.mD_lower[c, l]
                eta[layout.index("mD", c, l)] = pin
                eta[layout.index("m0D", c, l)] = m0 * (1 - pin)
                eta[layout.index("m1D", c, l)] = m1 * pin
        mc_rows = [i for i, l in enumerate(sys_.ineq_labels) if l.startswith(("m0D_", "m1D_", "mD_"))]
        _, slack = sys_.residuals(eta)
        assert slack[mc_rows].min() > -1e-12
        # perturbing a product coordinate violates the collapsed envelope
        eta_bad = eta.copy()
        eta_bad[layout.index("m1D", 0, 0)] += 0.05
        _, slack_bad = sys_.residuals(eta_bad)
        assert slack_bad[mc_rows].min() < -1e-3


class TestSampleAssembly:
    def test_duplicated_dataset_invariance(self):
        dgp = local_departure_dgp(1, 0.5)
        data = sample(dgp, 300, 11)
        dup = Dataset(
            y=np.tile(data.y, 2), d=np.tile(data.d, 2),
            z_idx=np.tile(data.z_idx, 2), instruments=data.instruments,
        )
        s1, _ = assemble_sample(data, TargetSpec("ate"))
        s2, _ = assemble_sample(dup, TargetSpec("ate"))
        assert np.allclose(s1.a_eq, s2.a_eq) and np.allclose(s1.b_eq, s2.b_eq)
        assert np.allclose(s1.a_ineq, s2.a_ineq) and np.allclose(s1.b_ineq, s2.b_ineq)

    def test_single_observation_system_is_w1(self):
        instr = local_departure_dgp(1, 0.5).instruments
        data = Dataset(y=np.array([1]), d=np.array([1]), z_idx=np.array([0]), instruments=instr)
        with pytest.warns(UserWarning):
            sys_, wobs = assemble_sample(data, TargetSpec("ate"))
        w1 = wobs.w_for_group((0, 1, 1))
        assert np.allclose(w1[: sys_.n_eq, :-1], sys_.a_eq)
        assert np.allclose(w1[: sys_.n_eq, -1], sys_.b_eq)
        assert np.allclose(w1[sys_.n_eq :, :-1], sys_.a_ineq)

    def test_group_means_reproduce_system(self):
        dgp = random_coefficient_dgp(1, 0.5)
        data = sample(dgp, 500, 21)
        sys_, wobs = assemble_sample(data, TargetSpec("prte"))
        a_mean, b_mean = wobs.mean_eq()
        assert np.allclose(a_mean, sys_.a_eq, atol=1e-12)
        assert np.allclose(b_mean, sys_.b_eq, atol=1e-12)

    def test_large_sample_matches_population(self, moments_cache):
        dgp = local_departure_dgp(1, 0.5)
        mom = moments_cache("local", 1, 0.5)
        data = sample(dgp, 1_000_000, 4)
        hat = empirical_moments(data)
        sys_pop = _system_for(mom, TargetSpec("ate"), extra_knots=(0.5,))
        sys_hat = _system_for(hat, TargetSpec("ate"), extra_knots=(0.5,))
        # coefficients carry the point masses; compare within binomial noise
        se = 4 * np.sqrt(0.25 / data.n)
        assert np.max(np.abs(sys_pop.a_eq - sys_hat.a_eq)) < se
        assert np.max(np.abs(sys_pop.b_eq - sys_hat.b_eq)) < se

    def test_iv_like_subset(self, moments_cache):
        mom = moments_cache("local", 1, 0.1)
        ws = weights_for(TargetSpec("ate"), mom, mom.instruments)
        part = build_partition(ws, 1)
        sub = IvLikeSet(instruments=mom.instruments, indices=(0, 2))
        sys_ = assemble_system(mom, ws, part, iv_set=sub)
        assert sys_.n_eq == 1 + 3 * 2
        assert not IvLikeSet.full(mom.instruments).violations()
        assert IvLikeSet(instruments=mom.instruments, indices=(0, 0)).violations()
