"""
Acceptance criteria, each run at its stated tolerance.

Every test records one PASS/FAIL line (printed at the end of the pytest
session) before asserting, so a failing criterion is reported with its
measured values.  The whole module takes roughly half an hour on one core.
"""
import math
import os
import time

import numpy as np
import pytest

from epismc.likelihood import Observation, PriorSpec, log_likelihood
from epismc.mcmc import S_D, McmcConfig, Problem, freeze, run_mcmc
from epismc.model import NEVER, PoissonPlusOne, gq_pmf, hazard_table
from epismc.oracle import enumerate_exact, forward_enumerate, history_to_data, occult_count
from epismc.simulate import generate, last_day, observe
from epismc.smc import (SmcConfig, SmcTuning, adjust_hazard, adjust_uniform,
                        hazard_selection_prob, incremental_log_weight, init, run_smc, smc_step)
from epismc.study import run_study, sinr_desk, sir_desk, study_priors, study_template

from conftest import homogeneous, line_population, record, tv

pytestmark = pytest.mark.acceptance


# --------------------------------------------------------------------------
# 1. likelihood against forward enumeration of the process


def test_criterion_1_likelihood_matches_forward_enumeration():
    # compile outside the timed region
    log_likelihood(*history_to_data(next(iter(forward_enumerate(
        line_population(1), homogeneous(), 0, 0, 1))), 1), homogeneous(), line_population(1))
    tick = time.perf_counter()
    worst, histories = 0.0, 0
    for n in (1, 2, 3):
        pop = line_population(n)
        for p, kappa, delay in ((0.3, 0.0, 0), (0.6, 0.5, 1), (0.45, 0.2, 2)):
            params = homogeneous(p, 1.7, kappa)
            for t in range(0, 5):
                for tau in range(-1, t + 1):
                    for nu in range(n):
                        for hist, prob in forward_enumerate(pop, params, nu, tau, t,
                                                            delay).items():
                            obs, aug = history_to_data(hist, t, delay)
                            ll = log_likelihood(obs, aug, params, pop)
                            worst = max(worst, abs(math.exp(ll) - prob))
                            histories += 1
    seconds = time.perf_counter() - tick
    ok = worst < 1e-8 and seconds < 10
    record(1, ok, f"{histories} histories, max |L - P| = {worst:.2e} (< 1e-8), "
                  f"{seconds:.1f} s (< 10 s)")
    assert ok


# --------------------------------------------------------------------------
# 2. MCMC augmentation marginals against exact enumeration


def test_criterion_2_mcmc_matches_enumeration():
    pop = line_population(4)
    params = homogeneous(0.3, 1.5)
    obs = Observation(4, [0, 2, NEVER, NEVER], [0, 2, NEVER, NEVER])
    exact = enumerate_exact(obs, pop, params)
    tick = time.perf_counter()
    res = run_mcmc(Problem(pop, obs, params, PriorSpec({})),
                   McmcConfig(burn_in=5000, n_samples=10 ** 6, thin=1), np.random.default_rng(5))
    seconds = time.perf_counter() - tick
    inf = res.infection
    N = len(inf)

    def empirical(values):
        keys, counts = np.unique(values, axis=0, return_counts=True)
        return {(tuple(k) if np.ndim(k) else int(k)): c / N for k, c in zip(keys.tolist(), counts)}

    dists = {f"i_{k}": tv(empirical(inf[:, k]), exact.marginal(lambda c, k=k: int(c[k])))
             for k in range(4)}
    dists["u_t"] = tv(empirical(res.occult), exact.marginal(lambda c: occult_count(c, obs)))
    joint = tv(empirical(inf), exact.marginal(lambda c: tuple(c.tolist())))
    worst = max(dists.values())
    ok = worst < 0.02 and seconds < 120
    record(2, ok, f"max marginal TV {worst:.4f} (< 0.02; joint {joint:.4f}), "
                  f"{N} sweeps in {seconds:.0f} s (< 120 s)")
    assert ok


# --------------------------------------------------------------------------
# 3 and 7. the desk-scale SIR study


@pytest.fixture(scope="module")
def sir_study():
    tick = time.perf_counter()
    result = run_study(sir_desk(1), seed=0)
    return result, time.perf_counter() - tick


def test_criterion_3_smc_agrees_with_mcmc(sir_study):
    result, seconds = sir_study
    quantities = ["p_contact", "gamma", "u_t"]
    worst = {}
    for strategy in ("uniform", "hazard"):
        rows = result.comparison(strategy, quantities)
        worst[strategy] = max(rows, key=lambda r: abs(r.z))
        for r in rows:
            print(f"  {strategy:8s} day {r.day:2d} {r.quantity:9s} smc {r.mean_a:.4g} "
                  f"mcmc {r.mean_b:.4g} z {r.z:+.2f}")
    ok = all(abs(w.z) < 3 for w in worst.values()) and seconds < 1800
    detail = "; ".join(f"{s}: max |z| {abs(w.z):.2f} ({w.quantity}, day {w.day})"
                       for s, w in worst.items())
    record(3, ok, f"{detail} (< 3) over days {sorted(result.mcmc)}, {seconds / 60:.1f} min "
                  f"(< 30 min)")
    assert ok


def test_criterion_7_acceptance_rates(sir_study):
    result, _ = sir_study
    rates = {(t, k): s.extras[f"acc_{k}"] for t, s in result.mcmc.items()
             for k in ("lambda", "notified")}
    bad = {key: v for key, v in rates.items() if not 0.15 <= v <= 0.35}
    lam = [v for (t, k), v in rates.items() if k == "lambda"]
    blk = [v for (t, k), v in rates.items() if k == "notified"]
    ok = not bad
    record(7, ok, f"lambda RWM {min(lam):.3f}-{max(lam):.3f}, notified block "
                  f"{min(blk):.3f}-{max(blk):.3f} over {len(result.mcmc)} post-burn-in runs "
                  f"(in [0.15, 0.35])" + (f"; outside: {bad}" if bad else ""))
    assert ok


# --------------------------------------------------------------------------
# 4. adjustment weight against the exact filter


def filtered(n, p, a, notif, t, weight, n_particles, seed, strategy="uniform"):
    pop = line_population(n)
    params = homogeneous(p, a)
    nt = np.array(notif, dtype=np.int64)
    obs = Observation(t, np.where(nt <= t, nt, NEVER), np.where(nt <= t, nt, NEVER))
    before = enumerate_exact(obs.until(t - 1), pop, params)
    after = enumerate_exact(obs, pop, params)
    key = lambda c: tuple(np.where(c <= t - 1, c, NEVER).tolist())
    target = after.marginal(key)
    rng = np.random.default_rng(seed)
    particles = before.sample(rng, n_particles)
    logw = np.empty(n_particles)
    for j, inf in enumerate(particles):
        if strategy == "uniform":
            rep = adjust_uniform(inf, obs.notification, t, rng, weight)
        else:
            rep = adjust_hazard(inf, obs.notification, t, rng, a, weight=weight)
        logw[j] = incremental_log_weight(inf, obs.notification, t, a, rep)
    w = np.exp(logw - logw[np.isfinite(logw)].max())
    w[~np.isfinite(logw)] = 0.0
    w /= w.sum()
    emp = {}
    for inf, wj in zip(particles, w):
        emp[key(inf)] = emp.get(key(inf), 0.0) + wj
    return tv(emp, target)


def test_criterion_4_adjustment_weight():
    tick = time.perf_counter()
    instance = (5, 0.5, 0.5, [0, 1, 2, NEVER, NEVER], 2)
    exact = filtered(*instance, "total", 10 ** 4, seed=0)
    control = filtered(*instance, "none", 10 ** 4, seed=0)
    seconds = time.perf_counter() - tick
    ok = exact < 0.05 and control >= 0.05 and seconds < 300
    record(4, ok, f"TV {exact:.4f} (< 0.05) with the binomial weight, {control:.4f} (>= 0.05) "
                  f"with A_t = 1, 10^4 particles, {seconds:.0f} s (< 300 s)")
    assert ok


# --------------------------------------------------------------------------
# 5. hazard-proportional selection law


def test_criterion_5_hazard_selection_law():
    """Each day-t case takes the infection day of an occult case chosen in
    a random order of the cases.  The chance of a final assignment is the
    sequential hazard-proportional product averaged over those orders."""
    import itertools

    a, t, trials = 2.0, 6, 10 ** 5
    table = hazard_table(PoissonPlusOne(a), 20)
    rng = np.random.default_rng(11)
    worst, checked, failures = 0.0, 0, []
    for u in range(1, 5):
        days = list(range(t - 1, t - 1 - u, -1))  # distinct hazards
        hz = [table[t - d] for d in days]
        for v in range(1, min(2, u) + 1):
            freq = {}
            base = np.array(days + [NEVER] * v, dtype=np.int64)
            notif = np.array([NEVER] * u + [t] * v, dtype=np.int64)
            for _ in range(trials):
                inf = base.copy()
                adjust_hazard(inf, notif, t, rng, a, table)
                donors = tuple(days.index(int(inf[u + k])) for k in range(v))
                freq[donors] = freq.get(donors, 0) + 1
            for donors in itertools.permutations(range(u), v):
                orders = list(itertools.permutations(range(v)))
                p = sum(hazard_selection_prob(hz, [donors[k] for k in order])
                        for order in orders) / len(orders)
                f = freq.get(donors, 0) / trials
                if p == 1.0:  # a single possible assignment
                    z = 0.0 if f == 1.0 else math.inf
                else:
                    z = abs(f - p) / math.sqrt(p * (1 - p) / trials)
                worst = max(worst, z)
                checked += 1
                if z >= 3:
                    failures.append((u, v, donors, round(z, 2)))
    ok = not failures
    record(5, ok, f"{checked} assignments over u <= 4, v <= 2, {trials} trials each: "
                  f"max deviation {worst:.2f} SE (< 3)" + (f"; {failures}" if failures else ""))
    assert ok


# --------------------------------------------------------------------------
# 6. degeneracy on the desk-scale SINR outbreak


def test_criterion_6_unique_particles():
    sim = sinr_desk(1)
    ds = generate(sim)
    end = last_day(ds.history)
    base = Problem(ds.pop, observe(ds.history, 3), study_template(sim), study_priors(sim))
    unique = {}
    tick = time.perf_counter()
    run_smc(lambda t: base.at(observe(ds.history, t)), 3, end,
            SmcConfig(n_particles=1000, n_p=50, seed=0),
            McmcConfig(burn_in=10_000, n_samples=1000, thin=50),
            lambda t, ps, d: unique.__setitem__(t, d.unique) if d else None)
    seconds = time.perf_counter() - tick
    day = min(unique, key=unique.get)
    ok = unique[day] >= 100
    record(6, ok, f"min unique {unique[day]} of 1000 on day {day} (>= 100), median "
                  f"{int(np.median(list(unique.values())))}, days 4-{end}, {seconds / 60:.1f} min")
    assert ok


# --------------------------------------------------------------------------
# 8. parallel determinism and scaling


def test_criterion_8_parallel_determinism_and_scaling():
    sim = sir_desk(1)
    ds = generate(sim)
    base = Problem(ds.pop, observe(ds.history, 3), study_template(sim), study_priors(sim))
    ps, mt = init(base, McmcConfig(burn_in=10_000, n_samples=1000, thin=50), seed=0)
    out = {}
    for workers in (1, 4):
        cfg = SmcConfig(n_particles=1000, n_p=50, workers=workers, seed=0)
        new, diag, _ = smc_step(ps.copy(), base.at(observe(ds.history, 4)), cfg,
                                SmcTuning(m=mt.m, m_u=mt.m_u))
        out[workers] = (new, diag.seconds["jitter"])
    (a, t1), (b, t4) = out[1], out[4]
    same = all(np.array_equal(getattr(a, k), getattr(b, k))
               for k in ("theta", "inf", "notif", "lineage"))
    ratio = t4 / t1
    ok = same and ratio <= 0.45
    record(8, ok, f"outputs {'identical' if same else 'DIFFER'} for 1 and 4 workers; jitter "
                  f"{t1:.1f} s vs {t4:.1f} s, ratio {ratio:.2f} (<= 0.45) on "
                  f"{os.cpu_count()} CPU(s)")
    assert ok


# --------------------------------------------------------------------------
# 9. numerics


def test_criterion_9_numerics():
    sums = {a: math.fsum(gq_pmf(PoissonPlusOne(a), q) for q in range(1, 400))
            for a in (3.0, 4.0, 5.0, 7.0)}
    worst_sum = max(abs(s - 1) for s in sums.values())
    worst_freeze = 0.0
    for d in (1, 2, 3, 4):
        sigma = freeze(np.eye(d), 0.05, 0.1, "identity")
        expected = 0.955 * S_D / d * np.eye(d)
        worst_freeze = max(worst_freeze, float(np.max(np.abs(sigma - expected))))
    ok = worst_sum <= 1e-12 and worst_freeze <= 1e-15
    record(9, ok, f"max |sum g_Q - 1| {worst_sum:.1e} (<= 1e-12) for a in 3,4,5,7; freeze(I) "
                  f"vs 0.955*2.38^2/d max error {worst_freeze:.1e}")
    assert ok
