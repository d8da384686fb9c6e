"""
Day-by-day analysis runs with per-day outputs, checkpoints and a manifest.

Layout of an output directory::

    manifest.json             configuration, seeds, inputs and versions
    timing.csv                wall-clock seconds per day and phase
    day_<t>/summary_<t>.csv   posterior summary (see diagnostics.DaySummary)
    day_<t>/density_<t>.csv   histogram densities per quantity
    day_<t>/particles_<t>.csv particle checkpoint
    day_<t>/aug_<t>.csv       augmentation sidecar of the checkpoint
    day_<t>/state_<t>.json    lineage and block sizes for resuming

Summaries depend only on the inputs, the configuration and the seed, so a
rerun from the same manifest reproduces them byte for byte.  Timings live
in a separate file for that reason.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import platform
from importlib import metadata
from pathlib import Path

import numpy as np

from . import __version__, diagnostics, feeds
from .config import RunConfig
from .mcmc import run_mcmc
from .model import Population
from .smc import TAG_INIT, ParticleSet, SmcTuning, StepFailure, particle_rng, smc_step

log = logging.getLogger(__name__)

EXIT_OK, EXIT_STEP_FAILURE = 0, 3


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _versions() -> dict:
    out = {"python": platform.python_version(), "epismc": __version__}
    for pkg in ("numpy", "scipy", "numba"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def write_manifest(out, config: RunConfig, inputs: dict, command: dict) -> Path:
    manifest = {
        "command": command,
        "config": config.resolved(),
        "seed": config.seed,
        "inputs": {k: {"path": str(Path(v).resolve()), "sha256": _sha256(v)}
                   for k, v in inputs.items()},
        "versions": _versions(),
    }
    path = Path(out) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return path


def read_manifest(path) -> dict:
    return json.loads(Path(path).read_text())


def _columns(ps, problem):
    free = problem.priors.free(problem.names)
    cols = {k: ps.theta[:, j] for j, k in enumerate(ps.names) if k in free}
    cols["u_t"] = ps.occult_counts(problem.obs).astype(float)
    return cols


def write_day(out, ps, problem, summary, pop, tuning: SmcTuning) -> Path:
    d = feeds.day_dir(out, ps.t)
    summary.write(d / f"summary_{ps.t}.csv")
    diagnostics.write_density(d / f"density_{ps.t}.csv", _columns(ps, problem))
    feeds.write_particles(d, ps.t, ps, pop, {"m": tuning.m, "m_u": tuning.m_u, "e_u": tuning.e_u})
    return d


def _append_timing(out, day, seconds: dict) -> None:
    path = Path(out) / "timing.csv"
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(["day", "phase", "seconds"])
        for phase, s in seconds.items():
            w.writerow([day, phase, f"{s:.4f}"])


def latest_checkpoint(out, first: int, last: int) -> int | None:
    """Latest day in ``first..last`` with a complete checkpoint."""
    for t in range(last, first - 1, -1):
        d = Path(out) / f"day_{t}"
        if all((d / f"{k}_{t}.{ext}").exists()
               for k, ext in (("particles", "csv"), ("aug", "csv"), ("state", "json"))):
            return t
    return None


def run_initial(config: RunConfig, pop: Population, feed: feeds.EventFeed, out, day: int):
    """MCMC at ``day``: writes the chain trace and the initial particles."""
    problem = config.problem(pop, feed.observation(day))
    rng = particle_rng(config.seed, day, TAG_INIT, 0)
    res = run_mcmc(problem, config.mcmc, rng)
    N = len(res.theta)
    ps = ParticleSet(day, res.theta.copy(), res.infection.copy(), res.notification.copy(),
                     np.zeros(N), np.arange(N), problem.names)
    tuning = SmcTuning(m=res.tuning.m, m_u=res.tuning.m_u, e_u=config.mcmc.e_u)
    d = write_day(out, ps, problem, diagnostics.mcmc_summary(res, problem), pop, tuning)
    res.write_trace(d / f"trace_{day}.csv")
    return ps, tuning, res


def orchestrate(config: RunConfig, pop: Population, feed: feeds.EventFeed, out,
                from_day: int | None = None, to_day: int | None = None, resume: bool = True,
                callback=None) -> int:
    """Initialise at ``from_day`` and filter through ``to_day``.

    With ``resume`` the run restarts from the latest checkpoint found in
    ``out``.  Returns :data:`EXIT_OK`, or :data:`EXIT_STEP_FAILURE` if every
    particle died on some day; outputs for earlier days are kept.
    """
    first = config.from_day if from_day is None else from_day
    last = to_day if to_day is not None else config.to_day
    if last is None:
        last = feed.last_day if feed.last_day is not None else first
    if last < first:
        raise ValueError(f"to_day {last} precedes from_day {first}")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    start = latest_checkpoint(out, first, last) if resume else None
    if start is None:
        log.info("initialising with MCMC on day %d", first)
        ps, tuning, _ = run_initial(config, pop, feed, out, first)
        start = first
    else:
        log.info("resuming from the checkpoint of day %d", start)
        ps, state = feeds.read_particles(out / f"day_{start}", start, pop)
        tuning = SmcTuning(m=state["m"], m_u=state["m_u"], e_u=state["e_u"])
    if callback:
        callback(start, ps, None)
    for t in range(start + 1, last + 1):
        problem = config.problem(pop, feed.observation(t))
        try:
            ps, diag, _ = smc_step(ps, problem, config.smc, tuning, config.mcmc)
        except StepFailure as exc:
            log.error("day %d: %s", t, exc)
            return EXIT_STEP_FAILURE
        write_day(out, ps, problem, diagnostics.smc_summary(ps, problem, diag), pop, tuning)
        _append_timing(out, t, diag.seconds)
        log.info("day %d: unique %d, ESS %.1f, dead %d", t, diag.unique, diag.ess, diag.dead)
        if callback:
            callback(t, ps, diag)
    return EXIT_OK

