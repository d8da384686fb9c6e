"""
Posterior functionals, degeneracy metrics and SMC-versus-MCMC comparison.

A day's posterior is reduced to a :class:`DaySummary`: for every quantity
(free parameters and the occult count ``u_t``) a mean, standard deviation,
Monte Carlo standard error and quantiles.  Summaries round-trip through
``summary_t.csv`` so that runs written to disk by the command line tool
can be compared later.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

QUANTILES = (0.025, 0.25, 0.5, 0.75, 0.975)
SUMMARY_HEADER = ["quantity", "mean", "sd", "se", "q025", "q250", "q500", "q750", "q975"]


class AlignmentError(ValueError):
    """Two runs do not report the same days or quantities."""


@dataclass(frozen=True)
class FunctionalEstimate:
    """Estimate of a posterior expectation ``E[phi]`` on one day.

    ``k`` records the jitter sweep at which the particles were measured
    (``None`` once the day-step is complete).
    """

    name: str
    value: float
    se: float
    day: int
    k: int | None = None

    def __post_init__(self):
        if not self.se >= 0:
            raise ValueError("standard error must be non-negative")


def _values(particles, phi) -> np.ndarray:
    if callable(phi):
        if hasattr(particles, "theta"):
            return np.array([phi(particles.theta[j], particles.inf[j], particles.notif[j])
                             for j in range(len(particles))], dtype=float)
        return np.array([phi(x) for x in particles], dtype=float)
    if isinstance(phi, str):
        return np.asarray(particles.theta[:, list(particles.names).index(phi)], dtype=float)
    raise TypeError("phi must be a callable or a parameter name")


def estimate_functional(particles, phi, name: str | None = None, day: int | None = None,
                        k: int | None = None, se: str = "iid") -> FunctionalEstimate:
    """Equally weighted particle average of ``phi``.

    Parameters
    ----------
    particles : ParticleSet or sequence
        With a :class:`~epismc.smc.ParticleSet`, ``phi`` is either a
        parameter name or a callable ``phi(theta, inf, notif)``.  With a
        plain sequence, ``phi`` is applied to each element.
    se : {"iid", "unique"}
        ``"iid"`` divides the particle standard deviation by ``sqrt(N)``.
        Particles sharing an ancestor are positively correlated, so this
        understates the error after heavy resampling; ``"unique"`` divides
        by the square root of the number of distinct particles instead.
    """
    x = _values(particles, phi)
    if x.size == 0:
        raise ValueError("no particles")
    if not np.all(np.isfinite(x)):
        raise ValueError("functional is not finite on every particle")
    n_eff = x.size
    if se == "unique":
        rows = np.column_stack([particles.theta, particles.inf]) if hasattr(particles, "theta") \
            else x[:, None]
        n_eff = len(np.unique(rows, axis=0))
    elif se != "iid":
        raise ValueError(f"unknown standard error method {se!r}")
    sd = float(x.std(ddof=1)) if x.size > 1 else 0.0
    label = name or (phi if isinstance(phi, str) else getattr(phi, "__name__", "phi"))
    t = day if day is not None else getattr(particles, "t", -1)
    return FunctionalEstimate(label, float(x.mean()), sd / math.sqrt(n_eff), int(t), k)


def batch_means_se(x, batches: int = 20) -> float:
    """Standard error of the mean of a correlated series by batch means."""
    x = np.asarray(x, dtype=float)
    b = min(batches, len(x))
    if b < 2:
        return 0.0
    size = len(x) // b
    means = x[: size * b].reshape(b, size).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(b))


@dataclass(frozen=True)
class Degeneracy:
    unique: int
    ess: float
    dead: int


def ess(logw) -> float:
    """Effective sample size of normalised weights ``exp(logw)``."""
    logw = np.asarray(logw, dtype=float)
    live = np.isfinite(logw)
    if not live.any():
        return 0.0
    w = np.exp(logw[live] - logw[live].max())
    return float(w.sum() ** 2 / np.sum(w * w))


def degeneracy_metrics(logw, ancestors) -> Degeneracy:
    """Distinct resampled ancestors, ESS before resampling and dead particles."""
    logw = np.asarray(logw, dtype=float)
    return Degeneracy(int(len(np.unique(ancestors))), ess(logw), int(np.sum(~np.isfinite(logw))))


# --------------------------------------------------------------------------
# per-day summaries


@dataclass
class Quantity:
    mean: float
    sd: float
    se: float
    quantiles: tuple


@dataclass
class DaySummary:
    """Posterior summary of one day from either sampler."""

    day: int
    quantities: dict = field(default_factory=dict)
    u_distribution: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def write(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(SUMMARY_HEADER)
            for name, q in self.quantities.items():
                w.writerow([name, _num(q.mean), _num(q.sd), _num(q.se)]
                           + [_num(v) for v in q.quantiles])
            for k, p in sorted(self.u_distribution.items()):
                w.writerow([f"P(u_t={k})", _num(p)] + [""] * 7)
            for key, v in self.extras.items():
                w.writerow([key, _num(v)] + [""] * 7)

    @classmethod
    def read(cls, path, day: int | None = None) -> "DaySummary":
        out = cls(day if day is not None else _day_from_path(path))
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                name = row["quantity"]
                if name.startswith("P(u_t="):
                    out.u_distribution[int(name[6:-1])] = float(row["mean"])
                elif row["sd"] == "":
                    out.extras[name] = float(row["mean"])
                else:
                    out.quantities[name] = Quantity(
                        float(row["mean"]), float(row["sd"]), float(row["se"]),
                        tuple(float(row[c]) for c in SUMMARY_HEADER[4:]))
        return out


def _num(x) -> str:
    return repr(float(x))


def _day_from_path(path) -> int:
    stem = Path(path).parent.name
    if not stem.startswith("day_"):
        raise ValueError(f"cannot infer the day from {path}")
    return int(stem[4:])


def _quantity(x, se) -> Quantity:
    x = np.asarray(x, dtype=float)
    sd = float(x.std(ddof=1)) if len(x) > 1 else 0.0
    return Quantity(float(x.mean()), sd, float(se), tuple(np.quantile(x, QUANTILES).tolist()))


def summarize_samples(day: int, columns: Mapping[str, np.ndarray], occult, se: str = "iid",
                      n_eff: float | None = None, extras: Mapping | None = None) -> DaySummary:
    """Summary of equally weighted draws.

    ``se`` is ``"iid"`` (``sd / sqrt(n_eff or N)``) or ``"batch"`` (batch
    means, for a correlated MCMC trace).
    """
    out = DaySummary(int(day))
    occult = np.asarray(occult)
    for name, x in list(columns.items()) + [("u_t", occult)]:
        x = np.asarray(x, dtype=float)
        if se == "batch":
            err = batch_means_se(x)
        elif se == "iid":
            err = (x.std(ddof=1) if len(x) > 1 else 0.0) / math.sqrt(n_eff or len(x))
        else:
            raise ValueError(f"unknown standard error method {se!r}")
        out.quantities[name] = _quantity(x, err)
    counts = np.bincount(occult.astype(np.int64)) / len(occult)
    out.u_distribution = {k: float(p) for k, p in enumerate(counts) if p > 0}
    out.extras = dict(extras or {})
    return out


def density_grid(columns: Mapping[str, np.ndarray], bins: int = 50):
    """Histogram density per quantity as rows ``(quantity, lo, hi, density)``."""
    rows = []
    for name, x in columns.items():
        x = np.asarray(x, dtype=float)
        lo, hi = float(x.min()), float(x.max())
        if hi <= lo:
            hi = lo + 1e-12
        dens, edges = np.histogram(x, bins=bins, range=(lo, hi), density=True)
        rows.extend((name, float(edges[i]), float(edges[i + 1]), float(d))
                    for i, d in enumerate(dens))
    return rows


def write_density(path, columns: Mapping[str, np.ndarray], bins: int = 50) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["quantity", "lo", "hi", "density"])
        for name, lo, hi, d in density_grid(columns, bins):
            w.writerow([name, _num(lo), _num(hi), _num(d)])


# --------------------------------------------------------------------------
# sampler summaries


def mcmc_summary(res, problem) -> DaySummary:
    """Summary of a thinned chain, with batch-means standard errors."""
    free = problem.priors.free(problem.names)
    cols = {k: res.theta[:, j] for j, k in enumerate(res.names) if k in free}
    acc = res.tuning.acceptance()
    extras = {f"acc_{k}": v for k, v in acc.items() if np.isfinite(v)}
    return summarize_samples(problem.obs.t, cols, res.occult, se="batch", extras=extras)


def smc_summary(ps, problem, diag=None, se: str = "ancestors") -> DaySummary:
    """Summary of an equally weighted particle set.

    With ``se="ancestors"`` the standard error divides by the square root
    of the number of distinct ancestors drawn at the day's resampling
    rather than ``N``, allowing for particles that share an ancestor.
    Without day-step diagnostics the particles are taken to be the
    initial, chain-ordered MCMC draws and batch means are used instead.
    ``se="iid"`` always divides by ``sqrt(N)``.
    """
    free = problem.priors.free(problem.names)
    cols = {k: ps.theta[:, j] for j, k in enumerate(ps.names) if k in free}
    n_eff = None
    if se == "ancestors":
        if diag is None:
            se = "batch"
        else:
            n_eff, se = diag.unique, "iid"
    extras = {}
    if diag is not None:
        extras = {"ess": diag.ess, "unique": diag.unique, "dead": diag.dead}
        extras.update({f"acc_{k}": v for k, v in diag.acceptance.items() if np.isfinite(v)})
    return summarize_samples(ps.t, cols, ps.occult_counts(problem.obs), se=se, n_eff=n_eff,
                             extras=extras)


# --------------------------------------------------------------------------
# comparison


@dataclass(frozen=True)
class ComparisonRow:
    day: int
    quantity: str
    mean_a: float
    mean_b: float
    se_a: float
    se_b: float

    @property
    def z(self) -> float:
        """Difference of means in combined standard errors."""
        se = math.hypot(self.se_a, self.se_b)
        diff = self.mean_a - self.mean_b
        if se == 0:
            return 0.0 if diff == 0 else math.copysign(math.inf, diff)
        return diff / se


def compare_runs(a: Mapping[int, DaySummary], b: Mapping[int, DaySummary],
                 quantities=None) -> list[ComparisonRow]:
    """Row per day and quantity comparing run ``a`` with run ``b``.

    Both runs must report the same days; ``quantities`` defaults to every
    quantity present in both.
    """
    if set(a) != set(b):
        raise AlignmentError(f"days differ: {sorted(set(a) ^ set(b))}")
    rows = []
    for day in sorted(a):
        qa, qb = a[day].quantities, b[day].quantities
        names = quantities or [q for q in qa if q in qb]
        for name in names:
            if name not in qa or name not in qb:
                raise AlignmentError(f"day {day}: quantity {name!r} missing")
            rows.append(ComparisonRow(day, name, qa[name].mean, qb[name].mean,
                                      qa[name].se, qb[name].se))
    return rows


def write_comparison(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["day", "quantity", "mean_smc", "mean_mcmc", "se_smc", "se_mcmc", "z"])
        for r in rows:
            w.writerow([r.day, r.quantity, _num(r.mean_a), _num(r.mean_b), _num(r.se_a),
                        _num(r.se_b), _num(r.z)])


def read_run(directory) -> dict[int, DaySummary]:
    """Every ``day_<t>/summary_<t>.csv`` below ``directory``."""
    out = {}
    for path in sorted(Path(directory).glob("day_*/summary_*.csv")):
        s = DaySummary.read(path)
        out[s.day] = s
    if not out:
        raise FileNotFoundError(f"no day summaries under {directory}")
    return out


def monitor(values_by_sweep: Mapping[int, np.ndarray], name: str, day: int):
    """Estimates of one functional at several jitter sweeps ``k``."""
    return [FunctionalEstimate(name, float(np.mean(v)),
                               float(np.std(v, ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0,
                               day, k)
            for k, v in sorted(values_by_sweep.items())]
