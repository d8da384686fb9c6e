"""
Brute-force references for tiny populations.

``forward_enumerate`` walks every branch of the epidemic process itself,
with no reference to the likelihood code, and returns the probability of
every history up to a horizon.  ``enumerate_exact`` sums the likelihood
over every augmentation compatible with an observation and normalises,
giving the exact posterior of the latent infection days for fixed
parameters.  Both are exponential in the population size and only meant
for testing the samplers.
"""
from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass
from typing import Callable, Hashable

import numba as nb
import numpy as np
from scipy import stats

from . import _core
from .likelihood import Augmentation, Observation, kernel_data
from .model import NEVER, Params, Population, kernel_prob

#: marker for "notification falls after the horizon"
OCCULT = NEVER + 1


class EnumerationTooLarge(RuntimeError):
    """The requested enumeration exceeds the configured bound."""


# --------------------------------------------------------------------------
# forward enumeration of the process


def forward_enumerate(pop: Population, params: Params, nu: int, tau: int, t: int,
                      removal_delay: int = 0) -> dict[tuple, float]:
    """Probabilities of all histories up to day ``t``.

    The process starts with individual ``nu`` infected on day ``tau`` and
    everyone else susceptible.  Notified cases are removed exactly
    ``removal_delay`` days after notification (``0`` gives SIR).

    Returns a mapping from ``((i_0, n_0), (i_1, n_1), ...)`` to the
    probability of that history, where ``i`` is ``NEVER`` for individuals
    still susceptible on day ``t`` and ``n`` is :data:`OCCULT` for cases
    whose notification falls after ``t``.
    """
    n = len(pop)
    a = params.period.a
    p = np.zeros((n, n))
    for k in range(n):
        for l in range(n):
            if k != l:
                p[k, l] = kernel_prob(params.kernel, pop, k, l)

    @functools.lru_cache(maxsize=None)
    def period_branches(day):
        # (notification day or OCCULT, probability) for infection on ``day``
        out = [(day + q, float(stats.poisson.pmf(q - 1, a))) for q in range(1, t - day + 1)]
        out.append((OCCULT, float(stats.poisson.sf(t - day - 1, a))))
        return tuple(out)

    start = [(NEVER, NEVER)] * n
    result: dict[tuple, float] = {}
    frontier = []
    for nd, pr in period_branches(tau):
        state = list(start)
        state[nu] = (tau, nd)
        frontier.append((tuple(state), pr))
    for s in range(tau, t):
        nxt = []
        for state, pr in frontier:
            escape = np.ones(n)
            for k, (ik, nk) in enumerate(state):
                if ik > s:
                    continue
                if nk == OCCULT or s < nk:
                    w = 1.0
                elif s < nk + removal_delay:
                    w = params.kappa
                else:
                    continue
                for l in range(n):
                    if l != k:
                        escape[l] *= 1.0 - w * p[k, l]
            sus = [l for l in range(n) if state[l][0] == NEVER]
            for r in range(len(sus) + 1):
                for newly in itertools.combinations(sus, r):
                    pr_inf = pr
                    for l in sus:
                        pr_inf *= (1.0 - escape[l]) if l in newly else escape[l]
                    if pr_inf == 0.0:
                        continue
                    options = [period_branches(s + 1) for _ in newly]
                    for combo in itertools.product(*options):
                        new_state = list(state)
                        pr_new = pr_inf
                        for l, (nd, pq) in zip(newly, combo):
                            new_state[l] = (s + 1, nd)
                            pr_new *= pq
                        if pr_new > 0.0:
                            nxt.append((tuple(new_state), pr_new))
        frontier = nxt
    for state, pr in frontier:
        result[state] = result.get(state, 0.0) + pr
    return result


def history_to_data(history: tuple, t: int, removal_delay: int = 0):
    """Split a forward-enumerated history into an Observation and an Augmentation."""
    n = len(history)
    inf = np.array([h[0] for h in history], dtype=np.int64)
    notif = np.full(n, NEVER, dtype=np.int64)
    rem = np.full(n, NEVER, dtype=np.int64)
    for k, (_, nk) in enumerate(history):
        if nk not in (NEVER, OCCULT):
            notif[k] = nk
            if nk + removal_delay <= t:
                rem[k] = nk + removal_delay
    return Observation(t, notif, rem), Augmentation(inf)


# --------------------------------------------------------------------------
# exact posterior by enumeration of augmentations


@dataclass
class ExactPosterior:
    """Normalised posterior over infection-day vectors.

    ``configs[j]`` holds the infection day of every individual (``NEVER``
    if uninfected by the horizon); occult notification days are integrated
    out.  ``log_weight`` is the unnormalised log posterior.
    """

    configs: np.ndarray
    prob: np.ndarray
    log_weight: np.ndarray
    t: int

    def marginal(self, key: Callable[[np.ndarray], Hashable]) -> dict:
        out: dict = {}
        for cfg, p in zip(self.configs, self.prob):
            k = key(cfg)
            out[k] = out.get(k, 0.0) + p
        return out

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        idx = rng.choice(len(self.prob), size=size, p=self.prob)
        return self.configs[idx]

    def mean(self, fn: Callable[[np.ndarray], float]) -> float:
        return float(sum(p * fn(c) for c, p in zip(self.configs, self.prob)))


@nb.njit(cache=True)
def _trans_many(configs, t, notif, rem, LQ, LN):
    out = np.empty(configs.shape[0])
    lp = np.empty(configs.shape[1])
    for j in range(configs.shape[0]):
        out[j] = _core.trans_full(t, configs[j].copy(), notif, rem, LQ, LN, lp)
    return out


def enumerate_exact(obs: Observation, pop: Population, params: Params,
                    max_configs: int = 10 ** 7, tail_eps: float = 1e-15) -> ExactPosterior:
    """Exact posterior of the infection days given ``obs`` and fixed ``params``.

    Infection days are enumerated back to the point where the period law
    leaves less than ``tail_eps`` of probability.  Raises
    :class:`EnumerationTooLarge` if more than ``max_configs``
    configurations would be needed.
    """
    t = obs.t
    a = params.period.a
    depth = int(stats.poisson.isf(tail_eps, a)) + 2
    ranges = []
    for k in range(len(obs)):
        nk = obs.notification[k]
        if nk <= t:
            ranges.append(np.arange(nk - depth, nk))
        else:
            ranges.append(np.concatenate([[NEVER], np.arange(t - depth + 1, t + 1)]))
    total = math.prod(len(r) for r in ranges)
    if total > max_configs:
        raise EnumerationTooLarge(f"{total} configurations exceed the bound {max_configs}")
    grids = np.meshgrid(*ranges, indexing="ij")
    configs = np.stack([g.ravel() for g in grids], axis=1).astype(np.int64)
    # period factors: g_Q for notified cases, survival beyond t for occults
    logp = np.zeros(len(configs))
    for k in range(len(obs)):
        col = configs[:, k]
        nk = obs.notification[k]
        if nk <= t:
            logp += stats.poisson.logpmf(nk - col - 1, a)
        else:
            occ = col < NEVER
            logp[occ] += stats.poisson.logsf(t - col[occ] - 1, a)
    # the compiled transmission term for every configuration
    keep = np.isfinite(logp)
    configs, logp = configs[keep], logp[keep]
    LQ, LN = kernel_data(pop).log_matrices(params)
    notif = np.where(obs.notification <= t, obs.notification, NEVER).astype(np.int64)
    rem = np.where(obs.removal <= t, obs.removal, NEVER).astype(np.int64)
    logp = logp + _trans_many(configs, t, notif, rem, LQ, LN)
    keep = np.isfinite(logp)
    configs, logp = configs[keep], logp[keep]
    if not len(configs):
        raise ValueError("observation has zero probability under these parameters")
    w = np.exp(logp - logp.max())
    return ExactPosterior(configs, w / w.sum(), logp, t)


def occult_count(cfg: np.ndarray, obs: Observation) -> int:
    return int(np.sum((cfg <= obs.t) & (obs.notification > obs.t)))
