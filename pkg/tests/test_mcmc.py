import math

import numpy as np
import pytest

from epismc.likelihood import (Augmentation, Gamma, Observation, PriorSpec, Uniform,
                               log_likelihood, validate)
from epismc.mcmc import (S_D, ChainState, McmcConfig, McmcTuning, Problem, adapt, freeze,
                         initial_augmentation, run_mcmc, start_chain, update_lambda,
                         update_notified_times, update_occult_count, update_occult_times,
                         update_zeta, zeta_mode)
from epismc.model import NEVER, Params, PoissonPlusOne, SpatialExp
from epismc.oracle import enumerate_exact, occult_count

from conftest import homogeneous, line_population, tv


class TestFreeze:
    def test_identity_example(self):
        out = freeze(np.eye(2), 0.05, 0.1, "identity")
        assert np.allclose(out, (0.95 + 0.005) * S_D / 2 * np.eye(2), rtol=0, atol=1e-15)

    def test_diagonal_regulariser_scales_with_b(self):
        b = np.array([[4e-4, 1e-4], [1e-4, 9.0]])
        out = freeze(b, 0.05, 0.1, "diagonal")
        expected = 0.95 * S_D / 2 * b + 0.005 * S_D / 2 * np.diag(np.diag(b))
        assert np.allclose(out, expected, rtol=1e-14)

    def test_singular_input_gives_positive_definite(self):
        b = np.array([[1.0, 1.0], [1.0, 1.0]])
        for reg in ("identity", "diagonal"):
            np.linalg.cholesky(freeze(b, regulariser=reg))
        np.linalg.cholesky(freeze(np.array([[1.0, 2.0], [2.0, 1.0]])))

    def test_unknown_regulariser(self):
        with pytest.raises(ValueError):
            freeze(np.eye(2), regulariser="ridge")


def test_adapt_decreases_on_rejection():
    t = McmcTuning(np.eye(1))
    values = [t.alpha]
    for _ in range(5):
        adapt(t, False)
        values.append(t.alpha)
    assert all(b < a for a, b in zip(values, values[1:]))
    adapt(t, True)
    assert t.alpha > values[-1]


def chain(tiny, priors=None, seed=0):
    pop, obs, params = tiny
    problem = Problem(pop, obs, params, priors or PriorSpec({"p_contact": Uniform(0, 1)}))
    tuning = McmcTuning(np.eye(1) * 0.01)
    return start_chain(problem, params, tuning, np.random.default_rng(seed))


class TestMoves:
    def test_cache_stays_exact(self, tiny):
        state = chain(tiny, PriorSpec({"p_contact": Uniform(0, 1), "a": Gamma(2.0, 1.0)}))
        for _ in range(300):
            update_lambda(state)
            update_zeta(state, "gibbs")
            update_notified_times(state, 1)
            update_occult_times(state, 2)
            update_occult_count(state)
            state.check_cache(1e-9)
            validate(state.problem.obs, state.aug)

    def test_lambda_stays_in_support(self, tiny):
        state = chain(tiny)
        state.tuning.sigma = np.eye(1) * 4.0  # most proposals leave [0, 1]
        for _ in range(200):
            update_lambda(state)
            assert 0.0 <= state.theta[0] <= 1.0

    def test_zeta_conjugacy(self):
        # one case with n - i = 4 under a Gamma(1, 1) prior: Gamma(4, 2) full conditional
        pop = line_population(1)
        obs = Observation(6, [5], [5])
        params = homogeneous(0.3, 1.0)
        problem = Problem(pop, obs, params, PriorSpec({"a": Gamma(1.0, 1.0)}))
        state = ChainState(problem, params, Augmentation([1]), McmcTuning(np.zeros((0, 0))),
                           np.random.default_rng(1))
        draws = np.empty(20_000)
        for j in range(len(draws)):
            update_zeta(state, "gibbs")
            draws[j] = state.theta[-1]
        assert draws.mean() == pytest.approx(2.0, abs=0.03)
        assert draws.var() == pytest.approx(1.0, abs=0.05)

    def test_zeta_fixed(self, tiny):
        state = chain(tiny)
        before = state.theta.copy()
        update_zeta(state, "fixed")
        assert np.array_equal(state.theta, before)

    def test_occult_times_without_occults(self):
        pop = line_population(2)
        obs = Observation(3, [2, 3], [2, 3])
        params = homogeneous(0.5, 1.0)
        problem = Problem(pop, obs, params, PriorSpec())
        state = ChainState(problem, params, Augmentation([0, 1]), McmcTuning(np.zeros((0, 0))),
                           np.random.default_rng(0))
        assert update_occult_times(state) < 0
        assert state.inf.tolist() == [0, 1]

    def test_occult_count_cannot_exceed_susceptibles(self):
        pop = line_population(2)
        obs = Observation(3, [2, NEVER], [2, NEVER])
        params = homogeneous(0.5, 1.0)
        problem = Problem(pop, obs, params, PriorSpec())
        state = ChainState(problem, params, Augmentation([0, NEVER]),
                           McmcTuning(np.zeros((0, 0)), e_u=3), np.random.default_rng(0))
        for _ in range(200):
            update_occult_count(state)
            assert occult_count(state.inf, obs) <= 1

    def test_zeta_mode_selection(self, tiny):
        pop, obs, params = tiny
        cfg = McmcConfig()
        assert zeta_mode(Problem(pop, obs, params, PriorSpec()), cfg) == zeta_mode(
            Problem(pop, obs, params, PriorSpec()), McmcConfig(zeta="fixed"))
        with pytest.raises(ValueError):
            zeta_mode(Problem(pop, obs, params, PriorSpec({"a": Uniform(0, 5)})),
                      McmcConfig(zeta="gibbs"))


def test_initial_augmentation_is_valid(small_problem):
    problem = small_problem(8)
    rng = np.random.default_rng(0)
    for _ in range(20):
        aug = initial_augmentation(problem, problem.template, rng, 3)
        validate(problem.obs, aug)


def test_run_lengths_and_output(small_problem):
    problem = small_problem(6)
    cfg = McmcConfig(burn_in=500, n_samples=40, thin=5)
    res = run_mcmc(problem, cfg, np.random.default_rng(0))
    assert res.sweeps == 500 + 40 * 5
    assert res.theta.shape == (40, 4) and res.infection.shape == (40, len(problem.pop))
    for j in range(40):
        occ = np.where((res.infection[j] <= 6) & (problem.obs.notification > 6),
                       res.notification[j], NEVER)
        aug = Augmentation(res.infection[j], occ)
        params = problem.template.with_vector(res.theta[j])
        assert log_likelihood(problem.obs, aug, params, problem.pop) == pytest.approx(
            res.loglik[j], rel=1e-9)


def test_default_study_lengths():
    cfg = McmcConfig()
    assert cfg.burn_in + cfg.n_samples * cfg.thin == 60_000


def test_augmentation_marginals_short_run(tiny):
    # a shorter version of the exactness check run in the acceptance suite
    pop, obs, params = tiny
    exact = enumerate_exact(obs, pop, params)
    res = run_mcmc(Problem(pop, obs, params, PriorSpec()),
                   McmcConfig(burn_in=2000, n_samples=100_000, thin=1), np.random.default_rng(3))
    for k in range(4):
        emp = {}
        for v in res.infection[:, k].tolist():
            emp[v] = emp.get(v, 0) + 1 / len(res.infection)
        assert tv(emp, exact.marginal(lambda c: int(c[k]))) < 0.03
