"""
MCMC-within-SMC: move a particle approximation of the posterior from day
``t - 1`` to day ``t`` as one more day of notifications and removals
arrives.

Each day-step

1. drops the imputed notification days of occult cases,
2. adjusts every particle so that the day's newly notified cases carry
   infection days taken over from occult cases (uniformly or by hazard),
3. weights by the adjustment weight times the probability of exactly the
   day's notifications,
4. resamples multinomially,
5. propagates: draws day-``t`` infections and fresh occult notification
   days,
6. jitters every particle with ``n_p`` MCMC sweeps whose random-walk
   covariance is built from the previous day's particle cloud.

Per-particle work runs on a thread pool; every particle draws from its
own counter-based stream keyed by (seed, day, phase, index) so results do
not depend on the number of workers.
"""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from . import _core
from .diagnostics import degeneracy_metrics
from .likelihood import Augmentation, Observation, kernel_data
from .mcmc import (McmcConfig, McmcTuning, Problem, freeze, run_mcmc, zeta_mode, _fsettings,
                   _isettings)
from .model import NEVER, Params, PoissonPlusOne, hazard_table

log = logging.getLogger(__name__)

TAG_ADJUST, TAG_PROPAGATE, TAG_RESAMPLE, TAG_INIT = 0, 1, 2, 3
_DAY_OFFSET = 1 << 20


class StepFailure(RuntimeError):
    """Every particle has zero weight."""


def particle_rng(seed: int, day: int, tag: int, idx: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(day) + _DAY_OFFSET, tag, int(idx)))
    return np.random.Generator(np.random.Philox(ss))


# --------------------------------------------------------------------------
# containers


@dataclass
class Particle:
    """One particle viewed as model objects."""

    params: Params
    aug: Augmentation
    log_weight: float
    lineage: int
    stream: tuple


@dataclass
class ParticleSet:
    """``N`` particles stored column-wise.

    ``notif`` holds observed notification days and, for occult cases,
    imputed ones (``NEVER`` while integrated out).
    """

    t: int
    theta: np.ndarray
    inf: np.ndarray
    notif: np.ndarray
    logw: np.ndarray
    lineage: np.ndarray
    names: tuple

    def __len__(self):
        return len(self.theta)

    def particle(self, j: int, template: Params, obs: Observation, seed: int = 0) -> Particle:
        occ = np.where(obs.notification <= self.t, NEVER, self.notif[j])
        occ = np.where(self.inf[j] <= self.t, occ, NEVER)
        return Particle(template.with_vector(self.theta[j]), Augmentation(self.inf[j].copy(), occ),
                        float(self.logw[j]), int(self.lineage[j]), (seed, self.t, int(j)))

    def occult_counts(self, obs: Observation) -> np.ndarray:
        not_notified = obs.notification > self.t
        return np.sum((self.inf <= self.t) & not_notified[None, :], axis=1)

    def copy(self) -> "ParticleSet":
        return ParticleSet(self.t, self.theta.copy(), self.inf.copy(), self.notif.copy(),
                           self.logw.copy(), self.lineage.copy(), self.names)


@dataclass
class AdjustmentReport:
    """What the adjustment did to one particle.

    ``m`` is the number of cases notified on the day, ``v`` those among
    them without an infection day in the particle, ``u`` the occult count
    before adjustment and ``b`` the number of identities switched.
    """

    m: int
    v: int
    u: int
    b: int
    log_a: float
    strategy: str
    dead: bool = False


@dataclass
class StepDiagnostics:
    day: int
    unique: int
    ess: float
    dead: int
    mean: dict
    sd: dict
    occult_mean: float
    acceptance: dict
    m: float
    m_u: float
    seconds: dict = field(default_factory=dict)


@dataclass
class SmcConfig:
    """Settings of the day-step.

    ``strategy`` is ``"uniform"`` or ``"hazard"``.  ``weighting`` is
    ``"incremental"`` (adjustment weight times day-``t`` observation
    factor), ``"ratio"`` (incremental times :func:`transmission_ratio`,
    which corrects the adjustment for non-homogeneous kernels at the cost
    of much more variable weights) or ``"full"`` (adjustment weight times
    the complete posterior density of the adjusted particle).
    ``adjust_weight`` selects the
    adjustment weight (see :func:`adjust_uniform` and
    :func:`adjust_hazard`): ``"total"`` is exact for homogeneous mixing,
    ``"selection"`` depends only on the switches made, ``"none"``
    disables the correction.
    """

    n_particles: int = 1000
    n_p: int = 25
    strategy: str = "uniform"
    workers: int = 1
    seed: int = 0
    weighting: str = "incremental"
    adjust_weight: str = "total"
    e_u: int = 3
    retune_gain: float = 1.0
    xi: float = 0.05
    alpha_tilde: float = 0.1
    regulariser: str = "diagonal"


@dataclass
class SmcTuning:
    """Block sizes carried from day to day."""

    m: float = 1.0
    m_u: float = 1.0
    e_u: int = 3


# --------------------------------------------------------------------------
# per-particle operations


def _log_comb(n, k):
    if k < 0 or k > n:
        return -math.inf
    return float(special.gammaln(n + 1) - special.gammaln(k + 1) - special.gammaln(n - k + 1))


def _prepare(inf, obs_notif, t):
    """Occult cases on day ``t - 1`` and the day-``t`` notifications."""
    new = np.flatnonzero(obs_notif == t)
    occult = np.flatnonzero((inf <= t - 1) & (obs_notif >= t))
    return new, occult


def adjust_uniform(inf: np.ndarray, obs_notif: np.ndarray, t: int,
                   rng: np.random.Generator, weight: str = "total") -> AdjustmentReport:
    """Give each of the day's notified cases an infection day, in place.

    Cases that are not infected in the particle take over the infection
    day of an occult case chosen uniformly without replacement, in a
    random order of the cases; the chosen occult case becomes
    susceptible.  The occult count is unchanged.
    """
    new, occult = _prepare(inf, obs_notif, t)
    m, u = len(new), len(occult)
    lacking = [k for k in new if inf[k] > t - 1]
    v = len(lacking)
    if m > u:
        return AdjustmentReport(m, v, u, 0, -math.inf, "uniform", dead=True)
    new_set = set(new.tolist())
    pool = [k for k in occult.tolist() if k not in new_set]
    for k in rng.permutation(np.array(lacking, dtype=np.int64)):
        j = int(rng.integers(len(pool)))
        o = pool.pop(j)
        inf[k] = inf[o]
        inf[o] = NEVER
    if weight == "total":
        log_a = _log_comb(u, m)
    elif weight == "selection":
        log_a = _log_comb(u, v)
    elif weight == "none":
        log_a = 0.0
    else:
        raise ValueError(f"unknown adjustment weight {weight!r}")
    return AdjustmentReport(m, v, u, v, log_a, "uniform")


def hazard_selection_prob(hazards, picks) -> float:
    """Probability of picking ``picks`` in order, each drawn with probability
    proportional to hazard among those not yet picked."""
    remaining = list(range(len(hazards)))
    prob = 1.0
    for p in picks:
        tot = sum(hazards[j] for j in remaining)
        prob *= hazards[p] / tot
        remaining.remove(p)
    return prob


def adjust_hazard(inf: np.ndarray, obs_notif: np.ndarray, t: int, rng: np.random.Generator,
                  a: float, table: np.ndarray | None = None,
                  weight: str = "total") -> AdjustmentReport:
    """As :func:`adjust_uniform`, but each occult case is chosen with
    probability proportional to its hazard ``h_Q(t - i)`` of being notified
    on day ``t``.

    With ``q`` the probability of the choices made, the weight is

    * ``"total"``: ``C(u, m) q_unif / q``, where ``q_unif`` is the
      probability uniform selection would have given the same choices.
      This is the uniform-selection weight reweighted to hazard selection,
      and it is exact for homogeneous mixing.
    * ``"selection"``: ``1 / q``.  It differs from ``"total"`` by a factor
      common to all particles whenever every case notified on the day
      lacks an infection day, and is approximate otherwise.
    * ``"none"``: 1.
    """
    new, occult = _prepare(inf, obs_notif, t)
    m, u = len(new), len(occult)
    lacking = [k for k in new if inf[k] > t - 1]
    v = len(lacking)
    if m > u:
        return AdjustmentReport(m, v, u, 0, -math.inf, "hazard", dead=True)
    new_set = set(new.tolist())
    pool = [k for k in occult.tolist() if k not in new_set]
    if table is None:
        span = max((t - int(inf[k]) for k in pool), default=1) + 2
        table = hazard_table(_period(a), span)
    log_q = 0.0
    log_q_unif = 0.0
    for k in rng.permutation(np.array(lacking, dtype=np.int64)):
        h = np.array([table[min(t - int(inf[o]), len(table) - 1)] for o in pool])
        w = h / h.sum()
        j = int(rng.choice(len(pool), p=w))
        log_q += math.log(w[j])
        log_q_unif -= math.log(len(pool))
        o = pool.pop(j)
        inf[k] = inf[o]
        inf[o] = NEVER
    if weight == "total":
        log_a = _log_comb(u, m) + log_q_unif - log_q
    elif weight == "selection":
        log_a = -log_q
    elif weight == "none":
        log_a = 0.0
    else:
        raise ValueError(f"unknown adjustment weight {weight!r}")
    return AdjustmentReport(m, v, u, v, log_a, "hazard")


def _period(a):
    return PoissonPlusOne(float(a))


def incremental_log_weight(inf: np.ndarray, obs_notif: np.ndarray, t: int, a: float,
                           report: AdjustmentReport) -> float:
    """``log A_t`` plus the log-probability of exactly the day-``t`` notifications."""
    if report.dead:
        return -math.inf
    return report.log_a + float(_core.observation_factor(inf, obs_notif, t, a))


def transmission_ratio(theta, inf_before, inf_after, notif, rem, t, problem: Problem) -> float:
    """Log ratio of the day-``t`` transmission likelihoods of two infection vectors.

    An adjustment hands infection days from occult cases to newly notified
    ones.  Under homogeneous mixing the likelihood up to the previous day
    only depends on how many individuals were infected each day, so the
    ratio is 0; with a spatial or covariate kernel it is not, and the
    adjusted particle must be reweighted by it.
    """
    kd = kernel_data(problem.pop)
    n = len(inf_before)
    LQ = np.empty((n, n))
    LN = np.empty((n, n))
    _core.fill_log_matrices(problem.template.kernel.code, theta, kd.dist, kd.sheep, kd.cattle,
                            LQ, LN)
    lp = np.empty(n)
    after = _core.trans_full(t, inf_after, notif, rem, LQ, LN, lp)
    if after == -math.inf:
        return -math.inf
    return float(after - _core.trans_full(t, inf_before, notif, rem, LQ, LN, lp))


def resample(logw: np.ndarray, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Multinomial resampling; returns ancestor indices."""
    logw = np.asarray(logw, dtype=float)
    size = len(logw) if size is None else size
    if not np.any(np.isfinite(logw)):
        raise StepFailure("all particles have zero weight")
    w = np.exp(logw - np.max(logw[np.isfinite(logw)]))
    w[~np.isfinite(logw)] = 0.0
    w /= w.sum()
    return np.sort(rng.choice(len(w), size=size, replace=True, p=w))


def propagate(theta, inf, notif, rem, t, problem: Problem, rng) -> int:
    """Day-``t`` infections and notification days beyond ``t``, in place."""
    kd = kernel_data(problem.pop)
    return int(_core.propagate(rng, theta, problem.template.kernel.code, kd.dist, kd.sheep,
                               kd.cattle, inf, notif, rem, t))


def jitter(theta, inf, notif, problem: Problem, sigma, tuning: SmcTuning, n_p: int,
           mcmc_config: McmcConfig, rng) -> np.ndarray:
    """``n_p`` MCMC sweeps on one particle, in place.  Returns the acceptance counts."""
    counts = np.zeros((5, 2), dtype=np.int64)
    if n_p <= 0:
        return counts
    kd = kernel_data(problem.pop)
    free = problem.free_lambda
    pcode, pp1, pp2 = problem.prior_arrays()
    iset = _isettings(problem, mcmc_config, zeta_mode(problem, mcmc_config), n_p, n_p, 0)
    mt = McmcTuning(sigma, m=tuning.m, m_u=tuning.m_u, e_u=tuning.e_u)
    fset = _fsettings(problem, mt, mcmc_config)
    rem = problem.removal_array()
    cache = np.zeros(3)
    empty = np.zeros((0, len(theta)))
    _core.run_chain(rng, iset, fset, theta, free, np.ascontiguousarray(sigma),
                    np.ones(len(free)), problem.template.kernel.code, kd.dist, kd.sheep,
                    kd.cattle, pcode, pp1, pp2, inf, notif, rem, cache, empty,
                    np.zeros((0, 3)), np.zeros((0, 0), dtype=np.int64),
                    np.zeros((0, 0), dtype=np.int64), counts)
    return counts


# --------------------------------------------------------------------------
# the day-step


def _map(workers, fn, n):
    if workers <= 1:
        return [fn(j) for j in range(n)]
    chunks = np.array_split(np.arange(n), workers * 4)
    with ThreadPoolExecutor(max_workers=workers) as ex:
        parts = ex.map(lambda idx: [fn(int(j)) for j in idx], chunks)
    return [r for part in parts for r in part]


def proposal_covariance(particles: ParticleSet, problem: Problem, config: SmcConfig) -> np.ndarray:
    free = problem.free_lambda
    if not len(free):
        return np.zeros((0, 0))
    x = particles.theta[:, free]
    sigma_b = np.atleast_2d(np.cov(x, rowvar=False))
    return freeze(sigma_b, config.xi, config.alpha_tilde, config.regulariser)


def _summaries(particles, problem, obs):
    mean = dict(zip(particles.names, particles.theta.mean(axis=0).tolist()))
    sd = dict(zip(particles.names, particles.theta.std(axis=0, ddof=1).tolist()
                  if len(particles) > 1 else [0.0] * len(particles.names)))
    return mean, sd, float(particles.occult_counts(obs).mean())


def smc_step(particles: ParticleSet, problem: Problem, config: SmcConfig, tuning: SmcTuning,
             mcmc_config: McmcConfig | None = None):
    """Advance ``particles`` (posterior at ``t - 1``) to ``problem.obs.t``.

    Returns the new equally weighted particles, the diagnostics and the
    adjustment reports.
    """
    mcmc_config = mcmc_config or McmcConfig(e_u=config.e_u)
    obs = problem.obs
    t = obs.t
    if particles.t != t - 1:
        raise ValueError(f"particles are for day {particles.t}, data for day {t}")
    N = len(particles)
    obs_notif = np.where(obs.notification <= t, obs.notification, NEVER).astype(np.int64)
    rem = problem.removal_array()
    clock = {}
    tick = time.perf_counter()

    sigma = proposal_covariance(particles, problem, config)
    # marginalise the occult notification days
    inf = particles.inf.copy()
    notif = np.where(obs_notif[None, :] <= t - 1, obs_notif[None, :], NEVER).repeat(N, axis=0)
    theta = particles.theta.copy()

    notif_prev = np.where(obs_notif <= t - 1, obs_notif, NEVER).astype(np.int64)
    rem_prev = np.where(rem <= t - 1, rem, NEVER).astype(np.int64)

    def adjust_one(j):
        rng = particle_rng(config.seed, t, TAG_ADJUST, j)
        before = inf[j].copy() if config.weighting == "ratio" else None
        if config.strategy == "uniform":
            rep = adjust_uniform(inf[j], obs_notif, t, rng, config.adjust_weight)
        elif config.strategy == "hazard":
            rep = adjust_hazard(inf[j], obs_notif, t, rng, theta[j, -1],
                                weight=config.adjust_weight)
        else:
            raise ValueError(f"unknown strategy {config.strategy!r}")
        if config.weighting in ("incremental", "ratio"):
            lw = incremental_log_weight(inf[j], obs_notif, t, theta[j, -1], rep)
            if before is not None and rep.b and np.isfinite(lw):
                lw += transmission_ratio(theta[j], before, inf[j], notif_prev, rem_prev, t - 1,
                                         problem)
        elif config.weighting == "full":
            lw = rep.log_a + _full_log_posterior(theta[j], inf[j], obs_notif, rem, t, problem) \
                if not rep.dead else -math.inf
        else:
            raise ValueError(f"unknown weighting {config.weighting!r}")
        return rep, lw

    out = _map(config.workers, adjust_one, N)
    reports = [r for r, _ in out]
    logw = np.array([w for _, w in out])
    clock["adjust"] = time.perf_counter() - tick
    tick = time.perf_counter()

    idx = resample(logw, particle_rng(config.seed, t, TAG_RESAMPLE, 0), N)
    metrics = degeneracy_metrics(logw, idx)
    unique, step_ess, dead = metrics.unique, metrics.ess, metrics.dead
    theta, inf = theta[idx].copy(), inf[idx].copy()
    notif = notif[idx].copy()
    notif[:, :] = np.where(obs_notif <= t, obs_notif, NEVER)[None, :]
    lineage = particles.lineage[idx].copy()
    clock["resample"] = time.perf_counter() - tick
    tick = time.perf_counter()

    counts_all = np.zeros((5, 2), dtype=np.int64)

    def move_one(j):
        rng = particle_rng(config.seed, t, TAG_PROPAGATE, j)
        propagate(theta[j], inf[j], notif[j], rem, t, problem, rng)
        return jitter(theta[j], inf[j], notif[j], problem, sigma, tuning, config.n_p,
                      mcmc_config, rng)

    for c in _map(config.workers, move_one, N):
        counts_all += c
    clock["jitter"] = time.perf_counter() - tick

    new = ParticleSet(t, theta, inf, notif, np.zeros(N), lineage, particles.names)
    acc = {name: (counts_all[k, 1] / counts_all[k, 0] if counts_all[k, 0] else math.nan)
           for k, name in enumerate(("lambda", "zeta", "notified", "occult_times", "occult_count"))}
    _retune(tuning, acc, obs, t, config.retune_gain, int(new.occult_counts(obs).max(initial=0)))
    mean, sd, occ = _summaries(new, problem, obs)
    diag = StepDiagnostics(t, unique, step_ess, dead, mean, sd, occ, acc, tuning.m, tuning.m_u,
                           clock)
    return new, diag, reports


def _retune(tuning: SmcTuning, acc: dict, obs: Observation, t: int, gain: float,
            max_occult: int) -> None:
    """Nudge the block sizes toward 25% acceptance for the next day."""
    n_notified = max(int(np.sum(obs.notification <= t)), 1)
    if np.isfinite(acc["notified"]):
        tuning.m = float(np.clip(tuning.m * math.exp(gain * (acc["notified"] - 0.25) * 4),
                                 1.0, n_notified))
    if np.isfinite(acc["occult_times"]):
        tuning.m_u = float(np.clip(tuning.m_u * math.exp(gain * (acc["occult_times"] - 0.25) * 4),
                                   1.0, max(max_occult, 1)))


def _full_log_posterior(theta, inf, obs_notif, rem, t, problem: Problem) -> float:
    kd = kernel_data(problem.pop)
    n = len(inf)
    LQ = np.empty((n, n))
    LN = np.empty((n, n))
    _core.fill_log_matrices(problem.template.kernel.code, theta, kd.dist, kd.sheep, kd.cattle,
                            LQ, LN)
    # the adjusted particle lives on days up to t - 1 with day-t notifications known
    notif_prev = np.where(obs_notif <= t, obs_notif, NEVER).astype(np.int64)
    rem_prev = np.where(rem <= t - 1, rem, NEVER).astype(np.int64)
    tr = _core.trans_full(t - 1, inf, notif_prev, rem_prev, LQ, LN, np.empty(n))
    per = _core.period_part(inf, notif_prev, t, theta[-1])
    pcode, pp1, pp2 = problem.prior_arrays()
    return float(tr + per + _core.log_prior(theta, pcode, pp1, pp2))


# --------------------------------------------------------------------------
# initialisation and full runs


def init(problem: Problem, mcmc_config: McmcConfig, seed: int = 0,
         init_params: Params | None = None) -> tuple[ParticleSet, McmcTuning]:
    """Initial equally weighted particles from a thinned MCMC run at day ``T``."""
    rng = particle_rng(seed, problem.obs.t, TAG_INIT, 0)
    res = run_mcmc(problem, mcmc_config, rng, init_params)
    N = len(res.theta)
    ps = ParticleSet(problem.obs.t, res.theta.copy(), res.infection.copy(),
                     res.notification.copy(), np.zeros(N), np.arange(N), problem.names)
    return ps, res.tuning


def run_smc(problem_at, first_day: int, last_day: int, config: SmcConfig,
            mcmc_config: McmcConfig, callback=None):
    """Initialise at ``first_day`` and step through ``last_day``.

    ``problem_at(t)`` returns the :class:`~epismc.mcmc.Problem` with data
    up to day ``t``.  ``callback(t, particles, diagnostics)`` is called
    after every day, including the initial one (with ``None`` diagnostics).
    """
    problem = problem_at(first_day)
    particles, mt = init(problem, mcmc_config, config.seed)
    tuning = SmcTuning(m=mt.m, m_u=mt.m_u, e_u=config.e_u)
    history = []
    if callback:
        callback(first_day, particles, None)
    for t in range(first_day + 1, last_day + 1):
        particles, diag, _ = smc_step(particles, problem_at(t), config, tuning, mcmc_config)
        history.append(diag)
        log.info("day %d: unique %d, ESS %.1f, dead %d", t, diag.unique, diag.ess, diag.dead)
        if callback:
            callback(t, particles, diag)
    return particles, history
