"""
Simulation-study pipeline: simulate an outbreak, filter it day by day with
SMC and check the filter against long MCMC runs on selected days.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import compare_runs, mcmc_summary, smc_summary
from .likelihood import Gamma, PriorSpec, Uniform
from .mcmc import McmcConfig, Problem, run_mcmc
from .model import Params, PoissonPlusOne, SpatialExp
from .simulate import Dataset, SimConfig, generate, last_day, observe
from .smc import SmcConfig, particle_rng, run_smc

log = logging.getLogger(__name__)


def sir_desk(seed: int = 1, n_pop: int = 100) -> SimConfig:
    """Spatial SIR outbreak with the density of the 500-individual study design."""
    return SimConfig(n_pop, SpatialExp(0.025, 15.0), PoissonPlusOne(3.0), kappa=0.0,
                     removal_delay=0, side=math.sqrt(n_pop / 500), seed=seed, min_final_size=10)


def sinr_desk(seed: int = 1, n_pop: int = 100) -> SimConfig:
    """Spatial SINR outbreak (notified cases infectious at rate 0.2 for 4 days)."""
    return SimConfig(n_pop, SpatialExp(0.015, 10.0), PoissonPlusOne(4.0), kappa=0.2,
                     removal_delay=4, side=math.sqrt(n_pop / 300), seed=seed, min_final_size=10)


def study_priors(config: SimConfig) -> PriorSpec:
    """Uniform contact and kappa priors, gamma-distributed decay, known period."""
    gamma = Gamma(2.25, 0.25) if config.removal_delay else Gamma(1.69, 0.13)
    priors = {"p_contact": Uniform(0.0, 1.0), "gamma": gamma}
    if config.removal_delay:
        priors["kappa"] = Uniform(0.0, 1.0)
    return PriorSpec(priors)


def study_template(config: SimConfig) -> Params:
    """Starting values away from the truth; ``a`` fixed at its true value."""
    kappa = 0.5 if config.removal_delay else 0.0
    return Params(SpatialExp(0.05, 13.0), kappa, PoissonPlusOne(config.period.a))


@dataclass
class StudyResult:
    dataset: Dataset
    smc: dict = field(default_factory=dict)
    mcmc: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    seconds: dict = field(default_factory=dict)

    def comparison(self, strategy: str, quantities=None):
        days = sorted(self.mcmc)
        return compare_runs({d: self.smc[strategy][d] for d in days}, self.mcmc, quantities)


def run_study(sim: SimConfig, first_day: int = 3, every: int = 5,
              strategies=("uniform", "hazard"), smc: SmcConfig | None = None,
              mcmc: McmcConfig | None = None, golden: McmcConfig | None = None,
              seed: int = 0, last: int | None = None) -> StudyResult:
    """Filter one simulated outbreak and run golden chains every ``every`` days.

    Golden chains start on ``first_day`` and every ``every`` days after,
    up to the last observed event (or ``last``).
    """
    ds = generate(sim)
    end = last_day(ds.history) if last is None else min(last, last_day(ds.history))
    if end < first_day:
        raise ValueError(f"outbreak ends on day {end}, before day {first_day}")
    priors, template = study_priors(sim), study_template(sim)
    base = Problem(ds.pop, observe(ds.history, first_day), template, priors)
    problems = {t: base.at(observe(ds.history, t)) for t in range(first_day, end + 1)}
    smc = smc or SmcConfig(n_particles=500, n_p=25, seed=seed)
    mcmc = mcmc or McmcConfig(burn_in=10_000, n_samples=smc.n_particles, thin=50)
    golden = golden or McmcConfig(burn_in=10_000, n_samples=1000, thin=50)
    out = StudyResult(ds)

    for strategy in strategies:
        cfg = SmcConfig(**{**smc.__dict__, "strategy": strategy})
        summaries, diags = {}, {}

        def keep(t, ps, diag):
            summaries[t] = smc_summary(ps, problems[t], diag)
            diags[t] = diag

        tick = time.perf_counter()
        run_smc(problems.__getitem__, first_day, end, cfg, mcmc, keep)
        out.seconds[strategy] = time.perf_counter() - tick
        out.smc[strategy], out.diagnostics[strategy] = summaries, diags
        log.info("%s SMC finished in %.1f s", strategy, out.seconds[strategy])

    tick = time.perf_counter()
    for t in range(first_day, end + 1, every):
        rng = particle_rng(seed + 1, t, 9, 0)
        res = run_mcmc(problems[t], golden, rng)
        out.mcmc[t] = mcmc_summary(res, problems[t])
    out.seconds["mcmc"] = time.perf_counter() - tick
    return out
