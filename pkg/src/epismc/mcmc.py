"""
Data-augmented MCMC for the joint posterior of parameters and infection days.

One sweep updates, in order: the transmission parameters (Gaussian random
walk), the Poisson mean of the infectious period (conjugate Gibbs draw,
random walk, or held fixed), a random block of ``m`` notified-case
infection days (independence sampler from the period law), a block of
``m_U`` occult (infection, notification) pairs, and the number of occult
cases (add or delete up to ``e_u``).  The heavy lifting happens in
:mod:`epismc._core`; this module holds the bookkeeping.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _core
from .likelihood import (Augmentation, Gamma, Observation, PriorSpec, kernel_data,
                         log_likelihood)
from .model import NEVER, Params, Population

log = logging.getLogger(__name__)

MOVES = ("lambda", "zeta", "notified", "occult_times", "occult_count")
S_D = 2.38 ** 2


class InitializationError(RuntimeError):
    """No valid starting augmentation could be built."""


@dataclass(frozen=True)
class Problem:
    """What stays fixed while sampling: population, data, parameter template, priors.

    Parameters whose prior is :class:`~epismc.likelihood.Fixed` keep the
    value in ``template``.
    """

    pop: Population
    obs: Observation
    template: Params
    priors: PriorSpec

    @property
    def names(self):
        return self.template.names

    @property
    def free_lambda(self) -> np.ndarray:
        """Indices of the free transmission parameters (everything but ``a``)."""
        names = self.names
        return np.array([j for j, k in enumerate(names[:-1])
                         if k in self.priors.free(names)], dtype=np.int64)

    @property
    def a_free(self) -> bool:
        return "a" in self.priors.free(self.names)

    def prior_arrays(self):
        return self.priors.arrays(self.names)

    def removal_array(self):
        t = self.obs.t
        return np.where(self.obs.removal <= t, self.obs.removal, NEVER).astype(np.int64)

    def notification_array(self):
        t = self.obs.t
        return np.where(self.obs.notification <= t, self.obs.notification, NEVER).astype(np.int64)

    def at(self, obs: Observation) -> "Problem":
        return Problem(self.pop, obs, self.template, self.priors)


@dataclass
class McmcTuning:
    """Proposal settings; ``sigma`` is the covariance of the lambda random walk."""

    sigma: np.ndarray
    alpha: float = 1.0
    m: float = 1.0
    m_u: float = 1.0
    e_u: int = 3
    a_step: float = 0.3
    counts: np.ndarray = field(default_factory=lambda: np.zeros((5, 2), dtype=np.int64))

    def acceptance(self) -> dict[str, float]:
        c = self.counts
        return {name: (c[j, 1] / c[j, 0] if c[j, 0] else math.nan) for j, name in enumerate(MOVES)}

    def copy(self) -> "McmcTuning":
        return McmcTuning(self.sigma.copy(), self.alpha, self.m, self.m_u, self.e_u,
                          self.a_step, self.counts.copy())


@dataclass
class McmcConfig:
    """Run lengths and tuning constants.

    ``burn_in`` adaptive sweeps are followed by ``n_samples * thin``
    sweeps of which every ``thin``-th is kept.  ``zeta`` is ``"gibbs"``
    (needs a Gamma prior on ``a``), ``"rwm"`` or ``"fixed"``; ``"auto"``
    picks Gibbs when the prior allows and fixed when ``a`` has no prior.
    """

    burn_in: int = 10_000
    n_samples: int = 1_000
    thin: int = 50
    e_u: int = 3
    zeta: str = "auto"
    gain: float = 0.02
    sigma_every: int = 200
    xi: float = 0.05
    alpha_tilde: float = 0.1
    regulariser: str = "diagonal"
    initial_occults: int = 2
    max_init_attempts: int = 1000


ZETA_MODES = {"fixed": _core.ZETA_FIXED, "gibbs": _core.ZETA_GIBBS, "rwm": _core.ZETA_RWM}


def zeta_mode(problem: Problem, config: McmcConfig) -> int:
    mode = config.zeta
    if mode == "auto":
        if not problem.a_free:
            mode = "fixed"
        else:
            mode = "gibbs" if isinstance(problem.priors.get("a"), Gamma) else "rwm"
    if mode == "gibbs" and not isinstance(problem.priors.get("a"), Gamma):
        raise ValueError("the Gibbs update of a needs a Gamma prior on a")
    return ZETA_MODES[mode]


def freeze(sigma_b: np.ndarray, xi: float = 0.05, alpha_tilde: float = 0.1,
           regulariser: str = "diagonal") -> np.ndarray:
    """Proposal covariance ``(1 - xi) s_d B + xi alpha_tilde s_d R`` with ``s_d = 2.38^2 / d``.

    ``R`` is the identity (``regulariser="identity"``) or the diagonal of
    ``B`` (``"diagonal"``), which keeps the safety term on the scale of
    each parameter.  A non-positive-definite ``B`` is replaced by its
    diagonal before mixing.
    """
    sigma_b = np.atleast_2d(np.asarray(sigma_b, dtype=float))
    d = sigma_b.shape[0]
    if d == 0:
        return sigma_b.copy()
    s_d = S_D / d
    diag = np.clip(np.diag(sigma_b), 1e-300, None)
    try:
        np.linalg.cholesky(sigma_b)
    except np.linalg.LinAlgError:
        sigma_b = np.diag(diag)
    if regulariser == "identity":
        reg = np.eye(d)
    elif regulariser == "diagonal":
        reg = np.diag(diag)
    else:
        raise ValueError(f"unknown regulariser {regulariser!r}")
    return (1.0 - xi) * s_d * sigma_b + xi * alpha_tilde * s_d * reg


# --------------------------------------------------------------------------
# chain state and single moves


class ChainState:
    """A single chain: parameters, augmentation and cached posterior terms."""

    def __init__(self, problem: Problem, params: Params, aug: Augmentation,
                 tuning: McmcTuning, rng: np.random.Generator):
        self.problem = problem
        self.theta = params.vector().astype(float)
        self.inf = aug.infection.astype(np.int64).copy()
        self.notif = np.where(problem.obs.notification <= problem.obs.t,
                              problem.obs.notification, aug.occult_notification).astype(np.int64)
        self.rem = problem.removal_array()
        self.tuning = tuning
        self.rng = rng
        n = len(problem.pop)
        kd = kernel_data(problem.pop)
        self._kd = kd
        self.LQ = np.empty((n, n))
        self.LN = np.empty((n, n))
        self.LQ2 = np.empty((n, n))
        self.LN2 = np.empty((n, n))
        self.lp = np.empty(n)
        self.work = np.empty((8, n + 1), dtype=np.int64)
        self.prop = np.empty_like(self.theta)
        self.pcode, self.pp1, self.pp2 = problem.prior_arrays()
        self.cache = np.zeros(3)
        self.refresh()

    @property
    def params(self) -> Params:
        return self.problem.template.with_vector(self.theta)

    @property
    def aug(self) -> Augmentation:
        t = self.problem.obs.t
        occ_n = np.where((self.inf <= t) & (self.notif > t), self.notif, NEVER)
        return Augmentation(self.inf.copy(), occ_n)

    @property
    def log_posterior(self) -> float:
        return float(self.cache.sum())

    def refresh(self) -> None:
        """Recompute the cached terms from scratch."""
        kd, t = self._kd, self.problem.obs.t
        _core.fill_log_matrices(self.problem.template.kernel.code, self.theta, kd.dist,
                                kd.sheep, kd.cattle, self.LQ, self.LN)
        self.cache[0] = _core.trans_full(t, self.inf, self.notif, self.rem, self.LQ, self.LN, self.lp)
        self.cache[1] = _core.g_total(self.inf, self.notif, t, self.theta[-1])
        self.cache[2] = _core.log_prior(self.theta, self.pcode, self.pp1, self.pp2)

    def check_cache(self, tol: float = 1e-9) -> None:
        """Assert that the cached posterior matches a fresh evaluation."""
        ll = log_likelihood(self.problem.obs, self.aug, self.params, self.problem.pop)
        lp = self.problem.priors.logpdf(self.params)
        cached = self.log_posterior
        if not (abs(cached - (ll + lp)) <= tol * max(1.0, abs(cached))):
            raise AssertionError(f"cached log posterior {cached} != {ll + lp}")

    def _count(self, move: int, result) -> None:
        if result is None or result < 0:
            return
        self.tuning.counts[move, 0] += 1
        self.tuning.counts[move, 1] += int(result)


def update_lambda(state: ChainState) -> bool:
    """Random-walk Metropolis step on the free transmission parameters."""
    free = state.problem.free_lambda
    if not len(free):
        return False
    chol = np.linalg.cholesky(state.tuning.sigma)
    kd = state._kd
    ok = _core.move_lambda(state.rng, chol, free, state.theta, state.prop,
                           state.problem.template.kernel.code, kd.dist, kd.sheep, kd.cattle,
                           state.pcode, state.pp1, state.pp2, state.LQ, state.LN, state.LQ2,
                           state.LN2, state.inf, state.notif, state.rem, state.problem.obs.t,
                           state.cache, state.lp)
    state._count(_core.C_LAMBDA, ok)
    return bool(ok)


def update_zeta(state: ChainState, mode: str = "gibbs") -> None:
    """Update the Poisson mean ``a`` of the infectious period."""
    t = state.problem.obs.t
    if mode == "fixed":
        return
    if mode == "gibbs":
        prior = state.problem.priors.get("a")
        _core.gibbs_a(state.rng, state.theta, state.inf, state.notif, t, prior.shape,
                      prior.rate, state.pcode, state.pp1, state.pp2, state.cache)
        state._count(_core.C_ZETA, 1)
    else:
        ok = _core.rwm_a(state.rng, state.tuning.a_step, state.theta, state.inf, state.notif,
                         t, state.pcode, state.pp1, state.pp2, state.cache)
        state._count(_core.C_ZETA, ok)


def update_notified_times(state: ChainState, m: int | None = None) -> int:
    """Block independence-sampler update of notified cases' infection days."""
    m = int(round(state.tuning.m)) if m is None else m
    r = _core.move_notified(state.rng, m, state.theta[-1], state.inf, state.notif, state.rem,
                            state.problem.obs.t, state.LQ, state.LN, state.cache, state.lp,
                            state.work)
    state._count(_core.C_NOTIFIED, r)
    return int(r)


def update_occult_times(state: ChainState, m_u: int | None = None) -> int:
    """Block update of occult cases' infection and notification days."""
    m_u = int(round(state.tuning.m_u)) if m_u is None else m_u
    r = _core.move_occult_times(state.rng, m_u, state.theta[-1], state.inf, state.notif,
                                state.rem, state.problem.obs.t, state.LQ, state.LN,
                                state.cache, state.lp, state.work)
    state._count(_core.C_OCC_TIMES, r)
    return int(r)


def update_occult_count(state: ChainState) -> int:
    """Add or remove up to ``e_u`` occult cases."""
    r = _core.move_occult_count(state.rng, state.tuning.e_u, state.theta[-1], state.inf,
                                state.notif, state.rem, state.problem.obs.t, state.LQ,
                                state.LN, state.cache, state.lp, state.work)
    state._count(_core.C_OCC_COUNT, r)
    return int(r)


def adapt(tuning: McmcTuning, accepted: bool, gain: float = 0.02) -> None:
    """Robbins-Monro style scale update aiming at 25% acceptance."""
    tuning.alpha *= math.exp(gain * ((1.0 if accepted else 0.0) - 0.25))


# --------------------------------------------------------------------------
# initial augmentation


def _covered_days(inf, notif, rem, kappa_positive):
    """Days on which a new infection can appear, given current cases."""
    days = set()
    for i, n, r in zip(inf, notif, rem):
        if i >= NEVER:
            continue
        last = n if n < NEVER else i + 10_000
        days.update(range(int(i) + 1, int(last) + 1))
        if kappa_positive and n < NEVER:
            end = r if r < NEVER else n + 10_000
            days.update(range(int(n) + 1, int(min(end, n + 10_000)) + 1))
    return days


def initial_augmentation(problem: Problem, params: Params, rng: np.random.Generator,
                         n_occult: int = 2) -> Augmentation:
    """A random augmentation in which every infection has a possible source.

    Notified cases are processed in order of notification; each draws an
    infectious period from the period law and its infection day is moved
    to the nearest day on which some earlier case was infectious when the
    draw lands elsewhere.  ``n_occult`` occult cases are added the same
    way.
    """
    obs = problem.obs
    t = obs.t
    n = len(obs)
    a = params.period.a
    kappa_pos = params.kappa > 0
    inf = np.full(n, NEVER, dtype=np.int64)
    notif = problem.notification_array().copy()
    rem = problem.removal_array()
    order = sorted(obs.notified.tolist(), key=lambda k: (obs.notification[k], rng.random()))
    for j, k in enumerate(order):
        q = int(rng.poisson(a)) + 1
        if j == 0:
            inf[k] = notif[k] - max(q, 2)
            continue
        want = notif[k] - q
        days = [d for d in _covered_days(inf, notif, rem, kappa_pos) if d <= notif[k] - 1]
        if not days:
            raise InitializationError("no day with an infectious source before a notification")
        inf[k] = want if want in days else min(days, key=lambda d: (abs(d - want), rng.random()))
    sus = np.flatnonzero(inf == NEVER)
    n_occult = min(n_occult, len(sus)) if len(order) else 0
    for k in rng.choice(sus, size=n_occult, replace=False) if n_occult else []:
        days = [d for d in _covered_days(inf, notif, rem, kappa_pos) if d <= t]
        if not days:
            break
        q = int(rng.poisson(a)) + 1
        h = int(rng.integers(0, q))
        want = t - h
        i = want if want in days else min(days, key=lambda d: (abs(d - want), rng.random()))
        inf[k] = i
        for _ in range(1000):
            if i + q > t:
                break
            q = int(rng.poisson(a)) + 1
        notif[k] = max(i + q, t + 1)
    occ_n = np.where((inf <= t) & (obs.notification > t), notif, NEVER)
    return Augmentation(inf, occ_n)


def start_chain(problem: Problem, params: Params, tuning: McmcTuning,
                rng: np.random.Generator, config: McmcConfig | None = None) -> ChainState:
    """Build a chain with a valid starting augmentation."""
    config = config or McmcConfig()
    for attempt in range(config.max_init_attempts):
        try:
            aug = initial_augmentation(problem, params, rng,
                                       config.initial_occults if attempt < 10 else 0)
        except InitializationError:
            continue
        state = ChainState(problem, params, aug, tuning, rng)
        if np.isfinite(state.log_posterior):
            if attempt:
                log.info("initial augmentation found after %d repairs", attempt)
            return state
    raise InitializationError(
        f"no augmentation with positive probability after {config.max_init_attempts} attempts")


# --------------------------------------------------------------------------
# full runs


@dataclass
class McmcResult:
    """Thinned output of a chain: one row per kept sweep."""

    names: tuple
    theta: np.ndarray
    loglik: np.ndarray
    occult: np.ndarray
    tau: np.ndarray
    infection: np.ndarray
    notification: np.ndarray
    tuning: McmcTuning
    burn_in_tuning: McmcTuning
    thin: int
    sweeps: int

    def mean(self) -> dict[str, float]:
        out = {k: float(v) for k, v in zip(self.names, self.theta.mean(axis=0))}
        out["u_t"] = float(self.occult.mean())
        return out

    def write_trace(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sweep", *self.names, "loglik", "u_t", "tau"])
            for j in range(len(self.theta)):
                w.writerow([(j + 1) * self.thin, *(repr(float(x)) for x in self.theta[j]),
                            repr(float(self.loglik[j])), int(self.occult[j]), int(self.tau[j])])


def _isettings(problem, config, zeta, nsweep, thin, adapt_flag):
    iset = np.zeros(8, dtype=np.int64)
    iset[_core.S_KIND] = problem.template.kernel.code
    iset[_core.S_ZETA] = zeta
    iset[_core.S_EU] = config.e_u
    iset[_core.S_NSWEEP] = nsweep
    iset[_core.S_THIN] = thin
    iset[_core.S_ADAPT] = adapt_flag
    iset[_core.S_T] = problem.obs.t
    iset[_core.S_SIGMA_EVERY] = config.sigma_every
    return iset


def _fsettings(problem, tuning, config):
    fset = np.zeros(7)
    fset[_core.F_ALPHA] = tuning.alpha
    fset[_core.F_M] = tuning.m
    fset[_core.F_MU] = tuning.m_u
    fset[_core.F_ASTEP] = tuning.a_step
    prior_a = problem.priors.get("a")
    if isinstance(prior_a, Gamma):
        fset[_core.F_SHAPE0], fset[_core.F_RATE0] = prior_a.shape, prior_a.rate
    fset[_core.F_GAIN] = config.gain
    return fset


def sweep_block(state: ChainState, config: McmcConfig, nsweep: int, thin: int = 1,
                adapt_flag: bool = False, record_aug: bool = False, scale0=None):
    """Run ``nsweep`` compiled sweeps on ``state``; returns the stored rows."""
    problem = state.problem
    zeta = zeta_mode(problem, config)
    free = problem.free_lambda
    n = len(problem.pop)
    nout = nsweep // thin
    out_theta = np.zeros((nout, len(state.theta)))
    out_stats = np.zeros((nout, 3))
    width = n if record_aug else 0
    out_inf = np.zeros((nout, width), dtype=np.int64)
    out_notif = np.zeros((nout, width), dtype=np.int64)
    tuning = state.tuning
    if scale0 is None:
        scale0 = np.sqrt(np.clip(np.diag(tuning.sigma), 1e-300, None))
    sigma = np.ascontiguousarray(tuning.sigma, dtype=float).copy()
    iset = _isettings(problem, config, zeta, nsweep, thin, int(adapt_flag))
    fset = _fsettings(problem, tuning, config)
    kd = state._kd
    counts = np.zeros((5, 2), dtype=np.int64)
    k = _core.run_chain(state.rng, iset, fset, state.theta, free, sigma,
                        np.asarray(scale0, dtype=float), problem.template.kernel.code,
                        kd.dist, kd.sheep, kd.cattle, state.pcode, state.pp1, state.pp2,
                        state.inf, state.notif, state.rem, state.cache, out_theta, out_stats,
                        out_inf, out_notif, counts)
    tuning.counts += counts
    tuning.alpha = float(fset[_core.F_ALPHA])
    tuning.m = float(fset[_core.F_M])
    tuning.m_u = float(fset[_core.F_MU])
    if adapt_flag:
        tuning.sigma = sigma
    else:
        state.refresh()
    return out_theta[:k], out_stats[:k], out_inf[:k], out_notif[:k]


def default_scale(problem: Problem, params: Params) -> np.ndarray:
    """Initial random-walk scales: a tenth of each starting value."""
    theta = params.vector()
    return np.array([0.1 * max(abs(theta[j]), 1e-3) for j in problem.free_lambda])


def run_mcmc(problem: Problem, config: McmcConfig, rng: np.random.Generator,
             init: Params | None = None) -> McmcResult:
    """Adaptive burn-in followed by ``n_samples`` thinned draws.

    During burn-in the random-walk scale ``alpha`` and the block sizes
    adapt toward 25% acceptance and the proposal shape is learned from the
    draws.  The proposal is then frozen with :func:`freeze` using the
    burn-in covariance of the second half of the burn-in.
    """
    params = init or problem.template
    free = problem.free_lambda
    d = len(free)
    scale0 = default_scale(problem, params)
    tuning = McmcTuning(np.diag(scale0 ** 2), e_u=config.e_u)
    state = start_chain(problem, params, tuning, rng, config)
    if config.burn_in > 0:
        sweep_block(state, config, config.burn_in, thin=max(config.burn_in, 1),
                    adapt_flag=True, scale0=scale0)
    burn_tuning = tuning.copy()
    if d:
        tuning.sigma = freeze(tuning.sigma, config.xi, config.alpha_tilde, config.regulariser)
    tuning.counts = np.zeros((5, 2), dtype=np.int64)
    theta, stats_, inf, notif = sweep_block(state, config, config.n_samples * config.thin,
                                            thin=config.thin, record_aug=True)
    return McmcResult(problem.names, theta, stats_[:, 0], stats_[:, 1].astype(int),
                      stats_[:, 2].astype(int), inf, notif, tuning, burn_tuning,
                      config.thin, config.burn_in + config.n_samples * config.thin)
