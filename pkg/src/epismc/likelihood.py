"""
Augmented-data likelihood, avoidance probabilities and posterior density.

Everything is evaluated in the log domain; ``-inf`` is an ordinary value
meaning "impossible under the model", while malformed inputs raise
:class:`ConsistencyError`.

An occult individual (infected by the horizon ``t`` but not notified) may
carry an imputed notification day ``> t``; if it is left as ``NEVER`` it is
integrated out and contributes ``log P(Q > t - i)`` instead of
``log g_Q(n - i)``.
"""
from __future__ import annotations

import math
import weakref
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import special

from . import _core
from .model import (NEVER, DayState, ModelError, Params, Population, kernel_prob)


class ConsistencyError(ModelError):
    """Observation and augmentation do not describe a valid history."""


# --------------------------------------------------------------------------
# data containers


@dataclass
class Observation:
    """Notification and removal days seen up to and including day ``t``.

    Arrays are indexed by position in the population; ``NEVER`` marks
    "not (yet) observed".
    """

    t: int
    notification: np.ndarray
    removal: np.ndarray

    def __post_init__(self):
        self.notification = np.asarray(self.notification, dtype=np.int64)
        self.removal = np.asarray(self.removal, dtype=np.int64)
        if self.notification.shape != self.removal.shape:
            raise ConsistencyError("notification and removal arrays differ in shape")
        if np.any((self.notification < NEVER) & (self.notification > self.t)):
            raise ConsistencyError("notification after the horizon")
        if np.any((self.removal < NEVER) & (self.removal > self.t)):
            raise ConsistencyError("removal after the horizon")
        if np.any((self.removal < NEVER) & (self.removal < self.notification)):
            raise ConsistencyError("removal before notification")

    @classmethod
    def empty(cls, n: int, t: int = 0) -> "Observation":
        return cls(t, np.full(n, NEVER), np.full(n, NEVER))

    def __len__(self):
        return len(self.notification)

    @property
    def notified(self) -> np.ndarray:
        return np.flatnonzero(self.notification <= self.t)

    def notified_on(self, day: int) -> np.ndarray:
        return np.flatnonzero(self.notification == day)

    def removed_on(self, day: int) -> np.ndarray:
        return np.flatnonzero(self.removal == day)

    def until(self, t: int) -> "Observation":
        """The same data truncated at an earlier (or later) horizon."""
        n = np.where(self.notification <= t, self.notification, NEVER)
        r = np.where(self.removal <= t, self.removal, NEVER)
        return Observation(t, n, r)

    def first_day(self) -> int:
        return int(self.notification.min()) if len(self.notified) else NEVER


@dataclass
class Augmentation:
    """Latent infection days plus imputed notification days of occult cases."""

    infection: np.ndarray
    occult_notification: np.ndarray = None

    def __post_init__(self):
        self.infection = np.asarray(self.infection, dtype=np.int64)
        if self.occult_notification is None:
            self.occult_notification = np.full(len(self.infection), NEVER)
        self.occult_notification = np.asarray(self.occult_notification, dtype=np.int64)

    @property
    def tau(self) -> int:
        return int(self.infection.min()) if len(self.infection) else NEVER

    @property
    def nu(self) -> int:
        """Position of the earliest infection (the initial infective)."""
        return int(np.argmin(self.infection))

    def occult(self, obs: Observation) -> np.ndarray:
        return np.flatnonzero((self.infection <= obs.t) & (obs.notification > obs.t))

    def copy(self) -> "Augmentation":
        return Augmentation(self.infection.copy(), self.occult_notification.copy())


def validate(obs: Observation, aug: Augmentation) -> None:
    """Raise :class:`ConsistencyError` unless ``aug`` completes ``obs``."""
    i, n_obs = aug.infection, obs.notification
    if i.shape != n_obs.shape or aug.occult_notification.shape != n_obs.shape:
        raise ConsistencyError("augmentation and observation differ in size")
    t = obs.t
    notified = n_obs <= t
    if np.any(notified & (i >= n_obs)):
        bad = np.flatnonzero(notified & (i >= n_obs))
        raise ConsistencyError(f"notified individuals without an earlier infection day: {bad.tolist()}")
    if np.any((i < NEVER) & (i > t)):
        raise ConsistencyError("infection day after the horizon")
    occ_n = aug.occult_notification
    occult = (i <= t) & ~notified
    imputed = occ_n < NEVER
    if np.any(imputed & ~occult):
        raise ConsistencyError("imputed notification on a non-occult individual")
    if np.any(imputed & (occ_n <= t)):
        raise ConsistencyError("imputed notification must fall after the horizon")


def notification_days(obs: Observation, aug: Augmentation) -> np.ndarray:
    return np.where(obs.notification <= obs.t, obs.notification, aug.occult_notification)


# --------------------------------------------------------------------------
# priors


@dataclass(frozen=True)
class Fixed:
    code = _core.P_FIXED
    args = (0.0, 0.0)


@dataclass(frozen=True)
class Uniform:
    lo: float = 0.0
    hi: float = 1.0
    code = _core.P_UNIFORM

    @property
    def args(self):
        return (self.lo, self.hi)

    def sample(self, rng, size=None):
        return rng.uniform(self.lo, self.hi, size)


Uniform01 = Uniform


@dataclass(frozen=True)
class Exponential:
    mean: float
    code = _core.P_EXPONENTIAL

    @property
    def args(self):
        return (self.mean, 0.0)

    def sample(self, rng, size=None):
        return rng.exponential(self.mean, size)


@dataclass(frozen=True)
class Gamma:
    shape: float
    rate: float
    code = _core.P_GAMMA

    @property
    def args(self):
        return (self.shape, self.rate)

    @property
    def mean(self):
        return self.shape / self.rate

    def sample(self, rng, size=None):
        return rng.gamma(self.shape, 1.0 / self.rate, size)


@dataclass(frozen=True)
class PriorSpec:
    """Independent priors by parameter name; unnamed parameters are fixed."""

    priors: Mapping[str, object] = field(default_factory=dict)

    def get(self, name):
        return self.priors.get(name, Fixed())

    def arrays(self, names):
        """Numeric codes and arguments for the compiled evaluator."""
        code = np.array([self.get(k).code for k in names], dtype=np.int64)
        p1 = np.array([self.get(k).args[0] for k in names], dtype=float)
        p2 = np.array([self.get(k).args[1] for k in names], dtype=float)
        return code, p1, p2

    def free(self, names):
        return [k for k in names if not isinstance(self.get(k), Fixed)]

    def logpdf(self, params: Params) -> float:
        code, p1, p2 = self.arrays(params.names)
        return float(_core.log_prior(params.vector(), code, p1, p2))


# --------------------------------------------------------------------------
# kernel data in the layout the compiled code expects


class KernelData:
    """Distances and covariates of a population, ready for the compiled kernels."""

    def __init__(self, pop: Population):
        self.n = len(pop)
        self.dist = np.ascontiguousarray(pop.distances)
        self.sheep = np.ascontiguousarray(pop.covariate("sheep"), dtype=float)
        self.cattle = np.ascontiguousarray(pop.covariate("cattle"), dtype=float)

    def log_matrices(self, params: Params):
        LQ = np.empty((self.n, self.n))
        LN = np.empty((self.n, self.n))
        _core.fill_log_matrices(params.kernel.code, params.vector(), self.dist,
                                self.sheep, self.cattle, LQ, LN)
        return LQ, LN


_kernel_cache: "weakref.WeakKeyDictionary[Population, KernelData]" = weakref.WeakKeyDictionary()


def kernel_data(pop: Population) -> KernelData:
    kd = _kernel_cache.get(pop)
    if kd is None:
        kd = _kernel_cache[pop] = KernelData(pop)
    return kd


# --------------------------------------------------------------------------
# likelihood pieces


def avoidance_log(state: DayState, l: int, params: Params, pop: Population) -> float:
    """``log P_s(l)``: the chance that susceptible ``l`` escapes infection on day ``s``."""
    if l not in state.S:
        raise ValueError(f"individual {l} is not susceptible on day {state.day}")
    total = 0.0
    for k in state.I:
        p = kernel_prob(params.kernel, pop, k, l)
        total += math.log1p(-p) if p < 1.0 else -math.inf
    for k in state.N:
        p = params.kappa * kernel_prob(params.kernel, pop, k, l)
        total += math.log1p(-p) if p < 1.0 else -math.inf
    return total


def _log_g(a, q):
    q = np.asarray(q, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = -a + (q - 1.0) * math.log(a) - special.gammaln(q)
    return np.where(q >= 1, out, -np.inf)


def _log_survival(a, q):
    """``log P(Q > q)``."""
    q = np.asarray(q, dtype=float)
    with np.errstate(divide="ignore"):
        out = np.log(special.pdtrc(np.maximum(q - 1.0, 0.0), a))
    return np.where(q >= 1, out, 0.0)


def _period_part(obs, aug, a):
    return float(_core.period_part(aug.infection, notification_days(obs, aug), obs.t, a))


def _arrays(obs, aug):
    nd = notification_days(obs, aug)
    rem = np.where(obs.removal <= obs.t, obs.removal, NEVER)
    return aug.infection.copy(), nd.copy(), rem


def transmission_log(obs, aug, params, pop) -> float:
    """Log of the escape and infection factors of the likelihood."""
    inf, notif, rem = _arrays(obs, aug)
    LQ, LN = kernel_data(pop).log_matrices(params)
    return float(_core.trans_full(obs.t, inf, notif, rem, LQ, LN, np.empty(len(inf))))


def log_likelihood(obs: Observation, aug: Augmentation, params: Params, pop: Population) -> float:
    """Log-density of the observed data and the augmentation given ``params``."""
    validate(obs, aug)
    params.validate()
    if not np.any(aug.infection < NEVER):
        return 0.0 if not len(obs.notified) else -math.inf
    return transmission_log(obs, aug, params, pop) + _period_part(obs, aug, params.period.a)


def day_increment_log(obs: Observation, aug: Augmentation, params: Params,
                      pop: Population, s: int) -> float:
    """Log contribution of the transition from day ``s`` to day ``s + 1``.

    It combines the day-``s`` escape and infection factors with the
    infectious-period factors revealed on day ``s + 1``: a hazard
    ``h_Q(s + 1 - i)`` for each case notified on ``s + 1`` and a survival
    factor ``1 - h_Q(s + 1 - i)`` for every other case still infectious.
    On the last day (``s = t - 1``) occult cases with an imputed
    notification also convert their survival into ``g_Q(n - i)``.
    Summed over ``s = tau - 1 .. t - 1`` this telescopes to
    :func:`log_likelihood`.
    """
    validate(obs, aug)
    t = obs.t
    if s > t - 1 or s < aug.tau - 1:
        return 0.0
    inf, notif, rem = _arrays(obs, aug)
    LQ, LN = kernel_data(pop).log_matrices(params)
    total = float(_core.day_term(s, aug.tau, inf, notif, rem, LQ, LN, np.empty(len(inf))))
    total += _period_increment(inf, notif, s, params.period.a)
    if s == t - 1:
        occ = (inf <= t) & (notif > t) & (notif < NEVER)
        total += float(np.sum(_log_g(params.period.a, notif[occ] - inf[occ])
                              - _log_survival(params.period.a, t - inf[occ])))
    return total


def _period_increment(inf, notif, s, a):
    """Hazard factors for cases infectious on day ``s``."""
    active = (inf <= s) & (notif > s)
    q = s + 1 - inf[active]
    ends = notif[active] == s + 1
    log_tail = _log_survival(a, q - 1)  # log P(Q >= q)
    out = np.where(ends, _log_g(a, q) - log_tail, _log_survival(a, q) - log_tail)
    return float(np.sum(out))


def observation_log_factor(obs: Observation, aug: Augmentation, params: Params) -> float:
    """Log-probability of exactly the day-``t`` notifications given the state at ``t - 1``.

    ``aug`` describes infections up to day ``t - 1``; every case notified on
    day ``t`` must already be infected, otherwise the factor is ``-inf``.
    """
    t = obs.t
    i = aug.infection
    new = obs.notification == t
    if np.any(new & (i > t - 1)):
        return -math.inf
    active = (i <= t - 1) & (obs.notification >= t)
    q = t - i[active]
    a = params.period.a
    log_tail = _log_survival(a, q - 1)
    out = np.where(new[active], _log_g(a, q) - log_tail, _log_survival(a, q) - log_tail)
    return float(np.sum(out))


def log_posterior(obs: Observation, aug: Augmentation, params: Params,
                  pop: Population, priors: PriorSpec) -> float:
    """Unnormalised log posterior density of ``params`` and ``aug``."""
    lp = priors.logpdf(params)
    if lp == -math.inf:
        return -math.inf
    try:
        params.validate()
    except ModelError:
        return -math.inf
    return lp + log_likelihood(obs, aug, params, pop)


__all__ = [
    "ConsistencyError", "Observation", "Augmentation", "validate", "notification_days",
    "Fixed", "Uniform", "Uniform01", "Exponential", "Gamma", "PriorSpec", "KernelData",
    "kernel_data", "avoidance_log", "transmission_log", "log_likelihood",
    "day_increment_log", "observation_log_factor", "log_posterior",
]
