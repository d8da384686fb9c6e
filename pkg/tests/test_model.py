import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from epismc.model import (NEVER, EventHistory, FmdCE, Homogeneous, Individual, ModelError,
                          Params, Population, PoissonPlusOne, SpatialExp, gq_hazard, gq_pmf,
                          hazard_table, kernel_prob, state_at)
from epismc.simulate import SimConfig, generate


def two_points(d, covariates=None):
    return Population([1, 2], [(0.0, 0.0), (d, 0.0)], covariates)


class TestKernels:
    def test_spatial_at_zero_distance(self):
        assert kernel_prob(SpatialExp(0.025, 15.0), two_points(0.0), 0, 1) == pytest.approx(0.025)

    def test_spatial_vanishes_far_away(self):
        assert kernel_prob(SpatialExp(0.025, 15.0), two_points(1e3), 0, 1) == 0.0

    def test_fmd_empty_farm(self):
        pop = two_points(0.1, {"sheep": [0.0, 10.0], "cattle": [0.0, 5.0]})
        assert kernel_prob(FmdCE(1e-3, 2.0, 2.0, 0.5, 0.5, 1.0), pop, 0, 1) == 0.0

    def test_fmd_value(self):
        pop = two_points(0.3, {"sheep": [4.0, 9.0], "cattle": [1.0, 0.0]})
        spec = FmdCE(0.1, 2.0, 3.0, 0.5, 0.5, 2.0)
        rate = 0.1 * (4 + 2 * 1) ** 0.5 * (9 + 3 * 0) ** 0.5 * math.exp(-2.0 * 0.3)
        assert kernel_prob(spec, pop, 0, 1) == pytest.approx(1 - math.exp(-rate), rel=1e-14)

    def test_matrix_agrees_with_pairwise(self):
        pop = Population.uniform_square(6, np.random.default_rng(0), 2.0)
        spec = SpatialExp(0.3, 2.0)
        m = spec.matrix(pop)
        for k in range(6):
            for l in range(6):
                if k != l:
                    assert m[k, l] == pytest.approx(kernel_prob(spec, pop, k, l), rel=1e-14)
        assert np.all(np.diag(m) == 0)

    def test_invalid_parameters(self):
        with pytest.raises(ModelError):
            kernel_prob(Homogeneous(1.5), two_points(0.0), 0, 1)
        with pytest.raises(ModelError):
            kernel_prob(SpatialExp(0.1, -1.0), two_points(0.0), 0, 1)

    @given(p=st.floats(0, 1), gamma=st.floats(0, 50), d1=st.floats(0, 5), d2=st.floats(0, 5))
    def test_spatial_bounded_and_monotone(self, p, gamma, d1, d2):
        spec = SpatialExp(p, gamma)
        near, far = sorted([d1, d2])
        a = kernel_prob(spec, two_points(near), 0, 1)
        b = kernel_prob(spec, two_points(far), 0, 1)
        assert 0.0 <= b <= a <= 1.0


class TestPeriod:
    def test_pmf_at_one(self):
        assert gq_pmf(PoissonPlusOne(3.0), 1) == pytest.approx(math.exp(-3.0), rel=1e-14)
        assert gq_pmf(PoissonPlusOne(3.0), 1) == pytest.approx(0.0497871, abs=1e-7)

    def test_pmf_outside_support(self):
        assert gq_pmf(PoissonPlusOne(3.0), 0) == 0.0

    def test_normalisation(self):
        assert abs(sum(gq_pmf(PoissonPlusOne(5.0), q) for q in range(1, 201)) - 1) < 1e-12

    @pytest.mark.parametrize("a", [0.5, 3.0, 7.0])
    def test_hazard_at_one(self, a):
        assert gq_hazard(PoissonPlusOne(a), 1) == pytest.approx(math.exp(-a), rel=1e-13)

    def test_hazard_by_direct_summation(self):
        # g(6) / sum_{j >= 6} g(j) with the tail summed term by term
        d = PoissonPlusOne(4.0)
        tail = math.fsum(math.exp(-4.0) * 4.0 ** (j - 1) / math.factorial(j - 1)
                         for j in range(6, 120))
        expected = math.exp(-4.0) * 4.0 ** 5 / math.factorial(5) / tail
        assert gq_hazard(d, 6) == pytest.approx(expected, rel=1e-12)

    def test_hazard_table_matches_scalar(self):
        d = PoissonPlusOne(3.0)
        h = hazard_table(d, 30)
        assert h[0] == 0.0
        for q in range(1, 30):
            assert h[q] == pytest.approx(gq_hazard(d, q), rel=1e-10)

    @given(a=st.floats(0.05, 20), q=st.integers(1, 80))
    def test_hazard_is_probability(self, a, q):
        assert 0.0 <= gq_hazard(PoissonPlusOne(a), q) <= 1.0

    def test_invalid_mean(self):
        with pytest.raises(ModelError):
            gq_pmf(PoissonPlusOne(0.0), 1)

    def test_sample_support(self):
        x = PoissonPlusOne(2.0).sample(np.random.default_rng(0), 10_000)
        assert x.min() >= 1
        assert x.mean() == pytest.approx(3.0, abs=0.05)


class TestStateAt:
    def test_empty_history(self):
        st_ = state_at(EventHistory.empty(3), 5)
        assert st_.S == {0, 1, 2} and not (st_.I or st_.N or st_.R)

    def test_single_case_timeline(self):
        # infected on day 1 (first infectious day), Q = 3, removed 2 days after notification
        h = EventHistory([1], [4], [6])
        assert state_at(h, 0).S == {0}
        assert all(state_at(h, s).I == {0} for s in (1, 2, 3))
        assert all(state_at(h, s).N == {0} for s in (4, 5))
        assert state_at(h, 6).R == {0} and state_at(h, 50).R == {0}

    def test_partition_on_simulated_histories(self):
        cfg = SimConfig(60, SpatialExp(0.05, 10.0), PoissonPlusOne(2.0), kappa=0.3,
                        removal_delay=2, side=0.4, seed=11, min_final_size=5)
        h = generate(cfg).history
        for s in range(int(h.infection.min()) - 1, 40):
            d = state_at(h, s)
            parts = [d.S, d.I, d.N, d.R]
            assert sum(len(p) for p in parts) == 60
            assert set().union(*parts) == set(range(60))

    def test_inconsistent_history(self):
        with pytest.raises(ModelError):
            state_at(EventHistory([3], [2], [NEVER]), 0)
        with pytest.raises(ModelError):
            state_at(EventHistory([1], [4], [3]), 0)
        with pytest.raises(ModelError):
            state_at(EventHistory([1], [NEVER], [3]), 0)


class TestPopulation:
    def test_round_trip(self, tmp_path):
        pop = Population([5, 7, 9], [(0, 0), (1, 0.5), (2, 2)], {"sheep": [1, 2, 3]})
        pop.to_csv(tmp_path / "p.csv")
        back = Population.from_csv(tmp_path / "p.csv")
        assert np.array_equal(back.ids, pop.ids)
        assert np.array_equal(back.coords, pop.coords)
        assert np.array_equal(back.covariate("sheep"), pop.covariate("sheep"))
        assert np.array_equal(back.covariate("cattle"), np.zeros(3))

    def test_from_individuals(self):
        pop = Population.from_individuals([Individual(1, (0.0, 0.0), {"sheep": 3.0}),
                                           Individual(2, (3.0, 4.0))])
        assert pop.distance(0, 1) == 5.0
        assert pop.covariate("sheep").tolist() == [3.0, 0.0]
        assert pop.index(2) == 1

    def test_rejects_bad_input(self):
        with pytest.raises(ModelError):
            Population([1, 1], [(0, 0), (1, 1)])
        with pytest.raises(ModelError):
            Population([1, 2], [(0, 0), (1, 1)], {"sheep": [1, -1]})
        with pytest.raises(KeyError):
            Population([1], [(0, 0)]).index(3)


def test_params_vector_round_trip():
    p = Params(FmdCE(1.0, 2.0, 3.0, 0.4, 0.5, 6.0), 0.2, PoissonPlusOne(4.0))
    assert p.names == ("beta0", "beta1", "beta2", "chi1", "chi2", "gamma", "kappa", "a")
    assert p.with_vector(p.vector()) == p
    with pytest.raises(ModelError):
        Params(Homogeneous(0.1), 1.5).validate()
