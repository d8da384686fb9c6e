"""
Real-time analysis of a synthetic foot-and-mouth style outbreak among
farms holding sheep and cattle.

A farm population is drawn at random, an outbreak is simulated with the
size-and-distance farm kernel, and the posterior of the transmission
parameters is updated day by day as notifications arrive.  Run with

    python demos/mini_fmd.py [--farms 150] [--particles 300]
"""
import argparse
import logging

import numpy as np

from epismc.likelihood import Gamma, PriorSpec
from epismc.mcmc import McmcConfig, Problem
from epismc.model import FmdCE, Params, Population, PoissonPlusOne
from epismc.simulate import SimConfig, generate, last_day, observe
from epismc.smc import SmcConfig, run_smc


def farms(n, rng):
    coords = rng.random((n, 2)) * 10.0  # km
    sheep = np.round(rng.gamma(0.6, 300.0, n))
    cattle = np.round(rng.gamma(0.6, 120.0, n))
    return Population(np.arange(1, n + 1), coords, {"sheep": sheep, "cattle": cattle})


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--farms", type=int, default=150)
    ap.add_argument("--particles", type=int, default=300)
    ap.add_argument("--days", type=int, default=9, help="analyse up to this day")
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    # notified farms stay infectious at a reduced rate until culled a day later
    truth = FmdCE(beta0=2e-4, beta1=2.0, beta2=2.0, chi1=0.5, chi2=0.5, gamma=0.6)
    sim = SimConfig(args.farms, truth, PoissonPlusOne(3.0), kappa=0.3, removal_delay=1,
                    seed=args.seed, min_final_size=15)
    ds = generate(sim, farms(args.farms, np.random.default_rng(args.seed)))
    end = min(args.days, last_day(ds.history))
    obs = observe(ds.history, end)
    print(f"{ds.history.final_size()} farms infected in total; "
          f"{len(obs.notified)} notified and {int(np.sum(obs.removal <= end))} culled by day {end}")

    # the size exponents and species weights are held at their true values
    template = Params(FmdCE(1e-3, 2.0, 2.0, 0.5, 0.5, 1.0), 0.3, PoissonPlusOne(3.0))
    priors = PriorSpec({"beta0": Gamma(1.0, 2000.0), "gamma": Gamma(1.0, 1.0)})
    base = Problem(ds.pop, observe(ds.history, 3), template, priors)

    print(f"{'day':>3} {'notified':>8} {'beta0':>10} {'gamma':>7} {'occult':>6} {'(true)':>6} {'unique':>6}")

    def report(t, ps, diag):
        j0, jg = ps.names.index("beta0"), ps.names.index("gamma")
        notified = int(np.sum(ds.history.notification <= t))
        unique = diag.unique if diag else len(ps)
        occult = ps.occult_counts(observe(ds.history, t)).mean()
        true_occult = int(np.sum((ds.history.infection <= t) & (ds.history.notification > t)))
        print(f"{t:3d} {notified:8d} {ps.theta[:, j0].mean():10.2e} "
              f"{ps.theta[:, jg].mean():7.3f} {occult:6.2f} {true_occult:6d} {unique:6d}")

    run_smc(lambda t: base.at(observe(ds.history, t)), 3, end,
            SmcConfig(n_particles=args.particles, n_p=10, seed=0),
            McmcConfig(burn_in=5000, n_samples=args.particles, thin=20), report)
    print(f"true values: beta0 {truth.beta0:.2e}, gamma {truth.gamma:.3f}")


if __name__ == "__main__":
    main()
