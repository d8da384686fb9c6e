"""
Forward simulation of the discrete-time epidemic and daily observation feeds.

Randomness is drawn from one stream per simulated day, keyed by the seed
and the day, so a run restarted from a mid-epidemic snapshot continues
exactly as the original did.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .likelihood import Observation, kernel_data
from .model import NEVER, EventHistory, KernelSpec, Params, PoissonPlusOne, Population

log = logging.getLogger(__name__)


@dataclass
class SimConfig:
    """Settings for simulated outbreaks.

    ``removal_delay`` is the fixed number of days between notification and
    removal (``0`` gives an SIR epidemic).  The population is placed
    uniformly on a square of side ``side`` unless one is passed to
    :func:`generate`.  Runs whose final size is below ``min_final_size``
    are discarded and re-simulated.
    """

    n_pop: int
    kernel: KernelSpec
    period: PoissonPlusOne = field(default_factory=lambda: PoissonPlusOne(3.0))
    kappa: float = 0.0
    removal_delay: int = 0
    side: float = 1.0
    seed: int = 0
    min_final_size: int = 1
    max_attempts: int = 10_000
    max_days: int = 100_000

    def __post_init__(self):
        if self.n_pop < 1:
            raise ValueError("population size must be at least 1")
        if self.removal_delay < 0:
            raise ValueError("removal delay must be non-negative")

    @property
    def params(self) -> Params:
        return Params(self.kernel, self.kappa, self.period)


def _day_rng(seed, replicate, day):
    # day streams are offset so that day -1 (start-up draws) is distinct
    return np.random.default_rng([int(seed), int(replicate), int(day) + 1])


def simulate(config: SimConfig, pop: Population, replicate: int = 0,
             start: EventHistory | None = None, start_day: int = 0) -> EventHistory:
    """Run one outbreak to extinction.

    The initial infective is chosen uniformly and infected on day 0; the
    calendar is then shifted so that the first notification falls on day
    0.  With ``start`` given, the run instead continues from that history
    (in unshifted days) at day ``start_day`` and no shift is applied.
    """
    params = config.params
    params.validate()
    n = len(pop)
    LQ, LN = kernel_data(pop).log_matrices(params)
    d = config.removal_delay
    if start is None:
        rng = _day_rng(config.seed, replicate, -1)
        inf = np.full(n, NEVER, dtype=np.int64)
        notif = inf.copy()
        rem = inf.copy()
        nu = int(rng.integers(n))
        q = int(params.period.sample(rng))
        inf[nu], notif[nu], rem[nu] = 0, q, q + d
        s = 0
    else:
        inf = start.infection.copy()
        notif = start.notification.copy()
        rem = start.removal.copy()
        nu = start.initial
        s = start_day
    while True:
        if s > config.max_days:
            raise RuntimeError("outbreak did not end within max_days")
        infectious = (inf <= s) & (s < notif)
        notified = (notif <= s) & (s < rem)
        pending = np.any((inf > s) & (inf < NEVER))
        if not infectious.any() and not notified.any() and not pending:
            break
        rng = _day_rng(config.seed, replicate, s)
        sus = np.flatnonzero(inf > s)
        if infectious.any() or notified.any():
            lp = LQ[infectious].sum(axis=0) + LN[notified].sum(axis=0)
            p_inf = -np.expm1(lp[sus])
            hit = sus[rng.random(len(sus)) < p_inf]
            q = params.period.sample(rng, size=len(hit))
            inf[hit] = s + 1
            notif[hit] = s + 1 + q
            rem[hit] = notif[hit] + d
        s += 1
    hist = EventHistory(inf, notif, rem, initial=nu)
    if start is None:
        hist = shift(hist, -int(notif[notif < NEVER].min()))
    return hist


def shift(history: EventHistory, offset: int) -> EventHistory:
    """Add ``offset`` to every finite day."""
    def mv(x):
        return np.where(x < NEVER, x + offset, NEVER)
    return EventHistory(mv(history.infection), mv(history.notification), mv(history.removal),
                        history.initial)


@dataclass
class Dataset:
    pop: Population
    history: EventHistory
    rejected: int = 0
    replicate: int = 0


def generate(config: SimConfig, pop: Population | None = None) -> Dataset:
    """Simulate until an outbreak reaches ``min_final_size``.

    The population, if not given, is drawn once from the master seed; each
    attempt uses its own replicate stream.
    """
    if pop is None:
        pop = Population.uniform_square(config.n_pop, np.random.default_rng([config.seed, 1 << 30]),
                                        config.side)
    for rep in range(config.max_attempts):
        hist = simulate(config, pop, replicate=rep)
        if hist.final_size() >= config.min_final_size:
            if rep:
                log.info("rejected %d outbreaks smaller than %d", rep, config.min_final_size)
            return Dataset(pop, hist, rejected=rep, replicate=rep)
    raise RuntimeError(f"no outbreak reached size {config.min_final_size} "
                       f"in {config.max_attempts} attempts")


def observe(history: EventHistory, t: int) -> Observation:
    """Notification and removal days on or before day ``t``."""
    n = np.where(history.notification <= t, history.notification, NEVER)
    r = np.where(history.removal <= t, history.removal, NEVER)
    return Observation(int(t), n, r)


def last_day(history: EventHistory) -> int:
    """Day of the final observed event."""
    days = np.concatenate([history.notification, history.removal])
    return int(days[days < NEVER].max())


# --------------------------------------------------------------------------
# files


def _fmt(x):
    return "" if x >= NEVER else str(int(x))


def write_truth(path, history: EventHistory, pop: Population) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "i", "n", "r"])
        for j, ident in enumerate(pop.ids):
            w.writerow([int(ident), _fmt(history.infection[j]), _fmt(history.notification[j]),
                        _fmt(history.removal[j])])


def read_truth(path, pop: Population) -> EventHistory:
    hist = EventHistory.empty(len(pop))
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            j = pop.index(int(row["id"]))
            for key, arr in (("i", hist.infection), ("n", hist.notification), ("r", hist.removal)):
                if row[key] != "":
                    arr[j] = int(row[key])
    hist.initial = int(np.argmin(hist.infection))
    return hist


def events(history: EventHistory, pop: Population, t: int | None = None):
    """Rows ``(day, id, event)`` sorted by day, notifications first."""
    rows = []
    for j, ident in enumerate(pop.ids):
        for day, tag in ((history.notification[j], "N"), (history.removal[j], "R")):
            if day < NEVER and (t is None or day <= t):
                rows.append((int(day), int(ident), tag))
    rows.sort(key=lambda r: (r[0], r[2] != "N", r[1]))
    return rows


def write_events(path, history: EventHistory, pop: Population, t: int | None = None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["day", "id", "event"])
        w.writerows(events(history, pop, t))


def analytic_pair_infection(p_contact: float, period: PoissonPlusOne) -> float:
    """Probability that one infective infects its only neighbour: ``1 - E[(1 - p)^Q]``."""
    a = period.a
    # E[x^Q] for Q = Po(a) + 1 is x * exp(a (x - 1))
    x = 1.0 - p_contact
    return 1.0 - x * math.exp(a * (x - 1.0))
