"""
Domain types for the discrete-time S -> I -> N -> R epidemic.

Day convention used throughout the package: an individual with infection
day ``i`` and notification day ``n`` is susceptible up to day ``i - 1``,
infectious on days ``i .. n - 1`` (so the infectious period is
``Q = n - i``), notified on days ``n .. r - 1`` and removed from day ``r``
onwards.  Infectious contacts made on day ``s`` produce infections with
infection day ``s + 1``.  For an SIR epidemic ``r == n``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import ClassVar, Sequence

import numpy as np
from scipy import stats

#: Sentinel day meaning "has not happened (by the horizon)".
NEVER = 1 << 40

# numba-side kernel codes
HOMOGENEOUS, SPATIAL_EXP, FMD_CE = 0, 1, 2


class ModelError(ValueError):
    """Invalid model parameters or inconsistent event times."""


@dataclass(frozen=True)
class Individual:
    id: int
    location: tuple[float, float]
    covariates: dict[str, float] = field(default_factory=dict)


class Population:
    """Closed population with locations and non-negative covariates.

    Individuals are addressed by position ``0 .. n - 1`` internally; the
    external ``ids`` are kept for I/O.
    """

    def __init__(self, ids, coords, covariates=None):
        ids = np.asarray(ids, dtype=np.int64)
        coords = np.asarray(coords, dtype=float).reshape(-1, 2)
        if len(ids) != len(coords):
            raise ModelError("ids and coords differ in length")
        if len(np.unique(ids)) != len(ids):
            raise ModelError("duplicate individual ids")
        if not np.all(np.isfinite(coords)):
            raise ModelError("non-finite coordinates")
        covariates = {k: np.asarray(v, dtype=float) for k, v in (covariates or {}).items()}
        for name, values in covariates.items():
            if values.shape != (len(ids),):
                raise ModelError(f"covariate {name!r} has wrong length")
            if not np.all(np.isfinite(values)) or np.any(values < 0):
                raise ModelError(f"covariate {name!r} must be finite and non-negative")
        self.ids = ids
        self.coords = coords
        self.covariates = covariates
        self._index = {int(k): j for j, k in enumerate(ids)}

    @classmethod
    def from_individuals(cls, individuals: Sequence[Individual]) -> "Population":
        names = sorted({k for ind in individuals for k in ind.covariates})
        cov = {k: [ind.covariates.get(k, 0.0) for ind in individuals] for k in names}
        return cls([ind.id for ind in individuals], [ind.location for ind in individuals], cov)

    @classmethod
    def uniform_square(cls, n: int, rng: np.random.Generator, side: float = 1.0) -> "Population":
        return cls(np.arange(1, n + 1), rng.uniform(0.0, side, size=(n, 2)))

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def individuals(self) -> list[Individual]:
        return [
            Individual(int(k), (float(x), float(y)),
                       {name: float(v[j]) for name, v in self.covariates.items()})
            for j, (k, (x, y)) in enumerate(zip(self.ids, self.coords))
        ]

    def index(self, ident: int) -> int:
        try:
            return self._index[int(ident)]
        except KeyError:
            raise KeyError(f"unknown individual id {ident}") from None

    @cached_property
    def distances(self) -> np.ndarray:
        diff = self.coords[:, None, :] - self.coords[None, :, :]
        return np.sqrt((diff ** 2).sum(axis=-1))

    def distance(self, k: int, l: int) -> float:
        return float(np.hypot(*(self.coords[k] - self.coords[l])))

    def covariate(self, name: str) -> np.ndarray:
        return self.covariates.get(name, np.zeros(len(self)))

    def to_csv(self, path) -> None:
        names = list(self.covariates)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "x", "y", *names])
            for j, k in enumerate(self.ids):
                w.writerow([int(k), repr(float(self.coords[j, 0])), repr(float(self.coords[j, 1])),
                            *(repr(float(self.covariates[c][j])) for c in names)])

    @classmethod
    def from_csv(cls, path) -> "Population":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[:3] != ["id", "x", "y"]:
                raise ModelError(f"{path}: header must start with id,x,y")
            rows = [r for r in reader if r]
        ids = [int(r[0]) for r in rows]
        coords = [(float(r[1]), float(r[2])) for r in rows]
        cov = {name: [float(r[3 + j]) for r in rows] for j, name in enumerate(header[3:])}
        return cls(ids, coords, cov)


# --------------------------------------------------------------------------
# transmission kernels


@dataclass(frozen=True)
class KernelSpec:
    """Base class; subclasses list their parameters in ``names``."""

    names: ClassVar[tuple[str, ...]] = ()
    code: ClassVar[int] = -1

    def values(self) -> np.ndarray:
        return np.array([getattr(self, k) for k in self.names], dtype=float)

    @classmethod
    def from_values(cls, values) -> "KernelSpec":
        return cls(*(float(v) for v in values))

    def validate(self) -> None:
        raise NotImplementedError

    def matrix(self, pop: Population) -> np.ndarray:
        """Daily contact probabilities ``p[k, l]`` with a zero diagonal."""
        raise NotImplementedError


@dataclass(frozen=True)
class Homogeneous(KernelSpec):
    """Every pair makes contact with probability ``p_contact`` (= 1 - p)."""

    p_contact: float
    names: ClassVar[tuple[str, ...]] = ("p_contact",)
    code: ClassVar[int] = HOMOGENEOUS

    def validate(self):
        if not 0.0 <= self.p_contact <= 1.0:
            raise ModelError("p_contact must lie in [0, 1]")

    def matrix(self, pop):
        p = np.full((len(pop), len(pop)), self.p_contact)
        np.fill_diagonal(p, 0.0)
        return p


@dataclass(frozen=True)
class SpatialExp(KernelSpec):
    """``p_kl = p_contact * exp(-gamma * d(k, l))``."""

    p_contact: float
    gamma: float
    names: ClassVar[tuple[str, ...]] = ("p_contact", "gamma")
    code: ClassVar[int] = SPATIAL_EXP

    def validate(self):
        if not 0.0 <= self.p_contact <= 1.0:
            raise ModelError("p_contact must lie in [0, 1]")
        if not self.gamma >= 0.0:
            raise ModelError("gamma must be non-negative")

    def matrix(self, pop):
        p = self.p_contact * np.exp(-self.gamma * pop.distances)
        np.fill_diagonal(p, 0.0)
        return p


def _size_power(base: np.ndarray, expo: float) -> np.ndarray:
    # 0**0 == 1 is numpy's convention already; an empty farm carries no mass
    out = np.power(base, expo)
    out[base == 0.0] = 0.0
    return out


@dataclass(frozen=True)
class FmdCE(KernelSpec):
    """Cambridge-Edinburgh style farm kernel.

    ``p_kl = 1 - exp(-beta0 (s_k + beta1 c_k)^chi1 (s_l + beta2 c_l)^chi2 exp(-gamma d))``
    with sheep ``s`` and cattle ``c`` taken from the population covariates.
    """

    beta0: float
    beta1: float
    beta2: float
    chi1: float
    chi2: float
    gamma: float
    names: ClassVar[tuple[str, ...]] = ("beta0", "beta1", "beta2", "chi1", "chi2", "gamma")
    code: ClassVar[int] = FMD_CE

    def validate(self):
        if not all(v >= 0.0 for v in self.values()):
            raise ModelError("all FmdCE parameters must be non-negative")

    def rates(self, pop):
        s, c = pop.covariate("sheep"), pop.covariate("cattle")
        infect = _size_power(s + self.beta1 * c, self.chi1)
        suscept = _size_power(s + self.beta2 * c, self.chi2)
        return self.beta0 * infect[:, None] * suscept[None, :] * np.exp(-self.gamma * pop.distances)

    def matrix(self, pop):
        p = -np.expm1(-self.rates(pop))
        np.fill_diagonal(p, 0.0)
        return p


KERNELS = {cls.__name__: cls for cls in (Homogeneous, SpatialExp, FmdCE)}


def kernel_prob(spec: KernelSpec, pop: Population, k: int, l: int) -> float:
    """Daily probability that ``k`` makes infectious contact with ``l``.

    ``k`` and ``l`` are positional indices into ``pop``.
    """
    if k == l:
        raise ValueError("kernel_prob needs two distinct individuals")
    spec.validate()
    if isinstance(spec, Homogeneous):
        return spec.p_contact
    d = pop.distance(k, l)
    if isinstance(spec, SpatialExp):
        return spec.p_contact * math.exp(-spec.gamma * d)
    if isinstance(spec, FmdCE):
        s, c = pop.covariate("sheep"), pop.covariate("cattle")
        bk = s[k] + spec.beta1 * c[k]
        bl = s[l] + spec.beta2 * c[l]
        if bk == 0.0 or bl == 0.0:
            return 0.0
        rate = spec.beta0 * bk ** spec.chi1 * bl ** spec.chi2 * math.exp(-spec.gamma * d)
        return -math.expm1(-rate)
    raise TypeError(f"unsupported kernel {type(spec).__name__}")


# --------------------------------------------------------------------------
# infectious period


TAIL_EPS = 1e-14


@dataclass(frozen=True)
class PoissonPlusOne:
    """Infectious period ``Q = Po(a) + 1`` on ``{1, 2, ...}``."""

    a: float

    def validate(self):
        if not self.a > 0:
            raise ModelError("Poisson mean must be positive")

    @cached_property
    def qmax(self) -> int:
        """Smallest q with ``P(Q <= q) >= 1 - 1e-14``."""
        return int(stats.poisson.ppf(1.0 - TAIL_EPS, self.a)) + 1

    def sample(self, rng: np.random.Generator, size=None):
        return rng.poisson(self.a, size=size) + 1


def gq_pmf(dist: PoissonPlusOne, q: int) -> float:
    dist.validate()
    if q < 1:
        return 0.0
    return float(stats.poisson.pmf(q - 1, dist.a))


def gq_logpmf(dist: PoissonPlusOne, q) -> np.ndarray:
    q = np.asarray(q)
    return np.where(q >= 1, stats.poisson.logpmf(q - 1, dist.a), -np.inf)


def _tail(dist: PoissonPlusOne, q: int) -> float:
    # P(Q >= q) by direct summation of the pmf
    total, j = 0.0, q
    while True:
        term = gq_pmf(dist, j)
        total += term
        if j > dist.a and term < 1e-17 * total:
            return total
        j += 1


def gq_hazard(dist: PoissonPlusOne, q: int) -> float:
    """``g_Q(q) / P(Q >= q)``; 1 beyond the truncation point."""
    dist.validate()
    if q < 1:
        raise ModelError("hazard is defined on q >= 1 only")
    if q > dist.qmax:
        return 1.0
    return gq_pmf(dist, q) / _tail(dist, q)


def hazard_table(dist: PoissonPlusOne, size: int) -> np.ndarray:
    """Vectorised hazards ``h[q]`` for ``q = 0 .. size - 1`` (``h[0] = 0``)."""
    q = np.arange(size)
    pmf = stats.poisson.pmf(q - 1, dist.a)
    tail = stats.poisson.sf(q - 2, dist.a)  # P(Q >= q) = P(Po >= q - 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        h = np.where(tail > 0, pmf / tail, 1.0)
    h[0] = 0.0
    h[q > dist.qmax] = 1.0
    return np.clip(h, 0.0, 1.0)


# --------------------------------------------------------------------------
# parameters and histories


@dataclass(frozen=True)
class Params:
    """Model parameters: transmission kernel, notified infectivity, period law."""

    kernel: KernelSpec
    kappa: float = 0.0
    period: PoissonPlusOne = PoissonPlusOne(3.0)

    def validate(self):
        self.kernel.validate()
        self.period.validate()
        if not 0.0 <= self.kappa <= 1.0:
            raise ModelError("kappa must lie in [0, 1]")

    @property
    def names(self) -> tuple[str, ...]:
        return (*self.kernel.names, "kappa", "a")

    def vector(self) -> np.ndarray:
        return np.concatenate([self.kernel.values(), [self.kappa, self.period.a]])

    def with_vector(self, theta) -> "Params":
        k = len(self.kernel.names)
        return Params(type(self.kernel).from_values(theta[:k]), float(theta[k]),
                      PoissonPlusOne(float(theta[k + 1])))


@dataclass
class EventHistory:
    """Per-individual infection, notification and removal days (NEVER if absent)."""

    infection: np.ndarray
    notification: np.ndarray
    removal: np.ndarray
    initial: int = -1

    def __post_init__(self):
        self.infection = np.asarray(self.infection, dtype=np.int64)
        self.notification = np.asarray(self.notification, dtype=np.int64)
        self.removal = np.asarray(self.removal, dtype=np.int64)

    @classmethod
    def empty(cls, n: int) -> "EventHistory":
        return cls(np.full(n, NEVER), np.full(n, NEVER), np.full(n, NEVER))

    def __len__(self):
        return len(self.infection)

    @property
    def infected(self) -> np.ndarray:
        return np.flatnonzero(self.infection < NEVER)

    def validate(self) -> None:
        i, n, r = self.infection, self.notification, self.removal
        has_n = n < NEVER
        if np.any(has_n & (i >= n)):
            raise ModelError("every notification must follow its infection")
        if np.any((r < NEVER) & ~has_n):
            raise ModelError("removal without notification")
        if np.any(has_n & (r < n)):
            raise ModelError("removal precedes notification")

    def final_size(self) -> int:
        return int(np.sum(self.infection < NEVER))


@dataclass(frozen=True)
class DayState:
    day: int
    S: frozenset
    I: frozenset
    N: frozenset
    R: frozenset


def state_at(history: EventHistory, s: int) -> DayState:
    """Compartment membership on day ``s`` (positional indices)."""
    history.validate()
    i, n, r = history.infection, history.notification, history.removal
    S = i > s
    I = (i <= s) & (s < n)
    N = (n <= s) & (s < r)
    R = r <= s
    idx = lambda mask: frozenset(int(k) for k in np.flatnonzero(mask))
    return DayState(s, idx(S), idx(I), idx(N), idx(R))
