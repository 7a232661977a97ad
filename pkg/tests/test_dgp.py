import numpy as np
import pytest

from mtebounds import (
    InstrumentSpace,
    SpecificationError,
    bernstein_eval,
    bernstein_mean,
    cell_averages,
    cvr_bounds,
    dgp_factory,
    empirical_moments,
    local_departure_dgp,
    propensity,
    random_coefficient_dgp,
    sample,
    true_target,
)
from mtebounds.dgp import THETA0_1D, _p_local
from mtebounds.model import VPartition
from mtebounds.quadrature import integrate_adaptive
from mtebounds.weights import TargetSpec


class TestBernstein:
    def test_endpoint_values(self):
        assert bernstein_eval(0.0, THETA0_1D) == pytest.approx(0.6)
        assert bernstein_eval(1.0, THETA0_1D) == pytest.approx(0.3)

    def test_partition_of_unity(self, rng):
        v = rng.random(50)
        assert np.allclose(bernstein_eval(v, [0.7, 0.7, 0.7]), 0.7, atol=1e-14)
        v2 = rng.random((50, 2))
        assert np.allclose(bernstein_eval(v2, np.full(9, 0.4)), 0.4, atol=1e-14)

    def test_mean_is_coefficient_average(self):
        # each degree-2 basis polynomial integrates to 1/3 per axis
        quad = integrate_adaptive(lambda p: bernstein_eval(p, THETA0_1D), [(0, 1)], tol=1e-12)
        assert quad == pytest.approx((0.6 + 0.4 + 0.3) / 3, abs=1e-12)
        assert bernstein_mean(THETA0_1D) == pytest.approx(1.3 / 3)

    def test_tensor_corner_ordering(self):
        # first index runs over v1: value at a corner picks the matching coefficient
        th = np.arange(9) / 10.0
        assert bernstein_eval(np.array([[0.0, 0.0]]), th)[0] == pytest.approx(th[0])
        assert bernstein_eval(np.array([[0.0, 1.0]]), th)[0] == pytest.approx(th[2])
        assert bernstein_eval(np.array([[1.0, 0.0]]), th)[0] == pytest.approx(th[6])
        assert bernstein_eval(np.array([[1.0, 1.0]]), th)[0] == pytest.approx(th[8])

    def test_dimension_mismatch(self):
        with pytest.raises(SpecificationError):
            bernstein_eval(0.5, [0.1, 0.2])
        with pytest.raises(SpecificationError):
            bernstein_eval(np.zeros((3, 2)), THETA0_1D)


class TestPropensity:
    def test_median_point(self):
        dgp = local_departure_dgp(1, 0.5)
        assert propensity(dgp, _p_local(0.0), (0.0,)) == pytest.approx(0.5, abs=1e-14)

    def test_deep_tail(self):
        dgp = local_departure_dgp(1, 0.1)
        # argument (1 - 0.7) / (0.05 * 0.1) = 60 standard deviations
        assert propensity(dgp, 1.0, (2.0,)) < 1e-12

    def test_random_coefficient_median(self):
        dgp = random_coefficient_dgp(1, 0.7)
        assert propensity(dgp, 0.2 * 2.0, (2.0, 1.0)) == pytest.approx(0.5, abs=1e-14)

    def test_errors(self):
        from dataclasses import replace

        dgp = replace(local_departure_dgp(1, 0.5), sigma=-1.0)
        with pytest.raises(SpecificationError):
            propensity(dgp, 0.5, (0.0,))
        rc = random_coefficient_dgp(1, 0.5)
        with pytest.raises(SpecificationError):
            propensity(rc, 0.5, (1.0, 0.0))

    def test_monotone_in_heterogeneity(self):
        dgp = local_departure_dgp(1, 0.5)
        v = np.linspace(0, 1, 30)
        for z in dgp.instruments.points:
            m = propensity(dgp, v, z)
            assert np.all(np.diff(m) <= 1e-14)
            assert np.all((m >= 0) & (m <= 1))

    @pytest.mark.parametrize(
        "maker,v,z,sigma",
        [
            (local_departure_dgp, (0.2,), (0.0,), 0.1),
            (local_departure_dgp, (0.61,), (1.0,), 0.1),
            (local_departure_dgp, (0.35,), (0.0,), 0.5),
            (random_coefficient_dgp, (0.3,), (1.0, 1.0), 0.5),
            (random_coefficient_dgp, (0.2, 0.4), (1.0, 0.5), 0.1),
        ],
    )
    def test_against_monte_carlo_oracle(self, maker, v, z, sigma):
        # 1e7 simulated treatment decisions at the conditioning point
        v_dim = len(v)
        dgp = maker(v_dim, sigma)
        formula = propensity(dgp, np.array(v), z)
        rng = np.random.default_rng(hash((v, z, sigma)) % 2 ** 32)
        n = 10_000_000
        u = rng.standard_normal(n)
        if dgp.treatment_model == "local_departure":
            p = _p_local(z[0])
            h = v[0] if v_dim == 1 else max(v)
            mc = np.mean(p + (0.75 - p) * sigma * u - h >= 0)
        elif v_dim == 1:
            mc = np.mean(0.2 * z[0] + sigma * u * z[1] - v[0] >= 0)
        else:
            mc = np.mean((0.6 - v[0]) * z[0] + sigma * u * z[1] - 0.5 * v[1] >= 0)
        se = np.sqrt(max(formula * (1 - formula), 1e-12) / n)
        assert abs(formula - mc) <= 4 * se


class TestPopulationMoments:
    def test_adding_up_identity(self, moments_cache):
        for model in ("local", "random"):
            for v_dim in (1, 2):
                dgp = dgp_factory(model, v_dim, 0.5)
                mom = moments_cache(model, v_dim, 0.5)
                for l, z in enumerate(dgp.instruments.points):
                    kink = model == "local" and v_dim == 2

                    def f(pts, _z=z):
                        m0 = bernstein_eval(pts, dgp.theta0)
                        m1 = bernstein_eval(pts, dgp.theta1)
                        mD = propensity(dgp, pts, _z)
                        return m1 * mD + m0 * (1 - mD)

                    e_y_z = dgp.instruments.probabilities[l] * integrate_adaptive(
                        f, [(0, 1)] * v_dim, tol=1e-10, maxkink=kink
                    )
                    assert mom.e_yd[l] + mom.e_y0d[l] == pytest.approx(float(e_y_z), abs=1e-8)

    def test_treatment_mass_adds_up(self, moments_cache):
        mom = moments_cache("local", 1, 0.1)
        dgp = local_departure_dgp(1, 0.1)
        total = sum(
            dgp.instruments.probabilities[l]
            * integrate_adaptive(lambda p, _z=z: propensity(dgp, p, _z), [(0, 1)], tol=1e-10)
            for l, z in enumerate(dgp.instruments.points)
        )
        assert mom.p_d1 == pytest.approx(float(total), abs=1e-10)

    def test_against_simulation_oracle(self, moments_cache):
        mom = moments_cache("local", 1, 0.1)
        dgp = local_departure_dgp(1, 0.1)
        data = sample(dgp, 10_000_000, 424242)
        hat = empirical_moments(data)
        for got, est in (
            (mom.e_yd, hat.e_yd),
            (mom.e_y0d, hat.e_y0d),
            (mom.e_d, hat.e_d),
        ):
            se = np.sqrt(np.maximum(got * (1 - got), 1e-12) / data.n)
            assert np.all(np.abs(got - est) <= 4 * se)


class TestTrueTarget:
    def test_ate_equals_bernstein_mean(self):
        ate = TargetSpec("ate")
        v1 = true_target(local_departure_dgp(1, 0.1), ate)
        assert v1 == pytest.approx(bernstein_mean((0.75, 0.5, 0.3)) - bernstein_mean(THETA0_1D), abs=1e-10)
        assert v1 == pytest.approx(0.083, abs=1e-3)
        v2 = true_target(local_departure_dgp(2, 0.1), ate)
        assert v2 == pytest.approx(0.139, abs=1e-3)

    def test_prte_identity(self, moments_cache):
        # counterfactual-mean shift equals the mass-reweighted observed means
        for model, v_dim in (("local", 1), ("random", 2)):
            dgp = dgp_factory(model, v_dim, 0.5)
            mom = moments_cache(model, v_dim, 0.5)
            direct = float(np.sum((np.asarray(dgp.instruments.policy_probabilities) - mom.z_mass) * mom.cond_y))
            assert true_target(dgp, TargetSpec("prte"), moments=mom) == pytest.approx(direct, abs=1e-9)

    def test_prte_requires_policy(self, moments_cache):
        dgp = local_departure_dgp(1, 0.1)
        from dataclasses import replace

        bare = replace(
            dgp,
            instruments=InstrumentSpace(points=((0,), (1,), (2,)), probabilities=(0.5, 0.4, 0.1)),
        )
        with pytest.raises(SpecificationError):
            true_target(bare, TargetSpec("prte"))

    def test_selection_bias_sign_oracle(self, moments_cache):
        # treated-minus-untreated mean of the untreated response, from first principles
        dgp = local_departure_dgp(1, 0.5)
        mom = moments_cache("local", 1, 0.5)
        num1, num0 = 0.0, 0.0
        for l, z in enumerate(dgp.instruments.points):
            f = lambda p, _z=z: bernstein_eval(p, dgp.theta0) * propensity(dgp, p, _z)
            num1 += dgp.instruments.probabilities[l] * float(integrate_adaptive(f, [(0, 1)], tol=1e-10))
        num0 = mom.e_y0d.sum()  # E[Y(1-D)] = E[m0 (1 - mD)] by the outcome model
        direct = num1 / mom.p_d1 - num0 / (1 - mom.p_d1)
        got = true_target(dgp, TargetSpec("avg_selection_bias"), moments=mom)
        assert got == pytest.approx(direct, abs=1e-9)

    def test_generalized_late_full_interval_is_ate(self):
        dgp = local_departure_dgp(1, 0.5)
        g = true_target(dgp, TargetSpec("generalized_late", v_lo=0.0, v_hi=1.0))
        a = true_target(dgp, TargetSpec("ate"))
        assert g == pytest.approx(a, abs=1e-10)


class TestSampling:
    def test_deterministic(self):
        dgp = random_coefficient_dgp(2, 0.5)
        a = sample(dgp, 500, 77).to_csv()
        b = sample(dgp, 500, 77).to_csv()
        assert a == b
        assert a.splitlines()[0] == "y,d,z1,z2"
        assert sample(local_departure_dgp(1, 0.1), 5, 1).to_csv().splitlines()[0] == "y,d,z1"

    def test_sample_propensity_matches_population(self, moments_cache):
        dgp = local_departure_dgp(1, 0.5)
        mom = moments_cache("local", 1, 0.5)
        data = sample(dgp, 1_000_000, 2024)
        hat = empirical_moments(data)
        se = np.sqrt(mom.e_d * (1 - mom.e_d) / data.n)
        assert np.all(np.abs(hat.e_d - mom.e_d) <= 4 * se)

    def test_equal_thetas_give_zero_effect(self):
        from dataclasses import replace

        dgp = replace(local_departure_dgp(1, 0.5), theta1=THETA0_1D)
        assert true_target(dgp, TargetSpec("ate")) == pytest.approx(0.0, abs=1e-12)
        data = sample(dgp, 100_000, 3)
        res = cvr_bounds(data, TargetSpec("ate"), v_dim_assumed=1)
        assert res.lower <= 0.0 <= res.upper

    def test_sample_size_validation(self):
        with pytest.raises(SpecificationError):
            sample(local_departure_dgp(1, 0.5), 0, 1)


class TestCellAverages:
    def test_single_cell_matches_global(self, moments_cache):
        dgp = local_departure_dgp(1, 0.1)
        mom = moments_cache("local", 1, 0.1)
        avg = cell_averages(dgp, VPartition.from_knots([0, 1], dim=1))
        assert avg["m0"][0] == pytest.approx(bernstein_mean(dgp.theta0), abs=1e-10)
        assert np.allclose(avg["m1D"][0] * mom.z_mass, mom.e_yd, atol=1e-9)

    def test_refinement_aggregates(self):
        dgp = random_coefficient_dgp(1, 0.5)
        coarse = cell_averages(dgp, VPartition.from_knots([0, 1], dim=1))
        part = VPartition.from_knots([0, 0.3, 1], dim=1)
        fine = cell_averages(dgp, part)
        vols = part.volumes
        assert float(vols @ fine["mD"]@ np.eye(fine["mD"].shape[1])[:, 0]) == pytest.approx(
            float(coarse["mD"][0, 0]), abs=1e-9
        )
        assert float(vols @ fine["m0"]) == pytest.approx(float(coarse["m0"][0]), abs=1e-10)

    def test_dimension_mismatch(self):
        with pytest.raises(SpecificationError):
            cell_averages(local_departure_dgp(2, 0.5), VPartition.from_knots([0, 1], dim=1))
