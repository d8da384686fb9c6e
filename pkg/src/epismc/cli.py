"""Command line entry point ``epi-smc``."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import diagnostics, feeds, pipeline
from .config import ConfigError, RunConfig
from .model import ModelError, Population
from .simulate import generate, write_events, write_truth

log = logging.getLogger("epismc")


def _load_config(args) -> RunConfig:
    if getattr(args, "manifest", None):
        return RunConfig.from_text(pipeline.read_manifest(args.manifest)["config"])
    if not args.config:
        return RunConfig.from_text("")
    return RunConfig.load(args.config)


def cmd_simulate(args) -> int:
    config = _load_config(args)
    sim = config.simulate
    if args.seed is not None:
        sim = dataclasses.replace(sim, seed=args.seed)
    ds = generate(sim)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ds.pop.to_csv(out / "population.csv")
    write_truth(out / "truth.csv", ds.history, ds.pop)
    write_events(out / "events.csv", ds.history, ds.pop)
    print(f"final size {ds.history.final_size()} of {len(ds.pop)}; "
          f"{ds.rejected} smaller outbreaks rejected; files in {out}")
    return 0


def _data(args):
    pop = Population.from_csv(args.population)
    feed = feeds.load_events(args.events, pop)
    return pop, feed


def cmd_init(args) -> int:
    config = _load_config(args)
    config = config.with_overrides({"mcmc": {"N": args.samples}, "run": {"seed": args.seed}})
    pop, feed = _data(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pipeline.write_manifest(out, config, {"population": args.population, "events": args.events},
                            {"name": "init", "days": args.day})
    for day in args.day:
        _, _, res = pipeline.run_initial(config, pop, feed, out, day)
        acc = res.tuning.acceptance()
        print(f"day {day}: " + ", ".join(f"{k} {v:.4g}" for k, v in res.mean().items())
              + "; acceptance " + ", ".join(f"{k} {v:.2f}" for k, v in acc.items() if v == v))
    return 0


def _apply_run_flags(config: RunConfig, args) -> RunConfig:
    return config.with_overrides({
        "smc": {"strategy": args.strategy, "np": args.np, "particles": args.particles,
                "workers": args.workers, "from_day": args.from_day, "to_day": args.to_day},
        "mcmc": {"N": args.particles},
    })


def cmd_run(args) -> int:
    if args.manifest:
        man = pipeline.read_manifest(args.manifest)
        if man["command"].get("name") != "run":
            raise ConfigError("the manifest does not describe a run")
        for key in ("population", "events"):
            entry = man["inputs"][key]
            if pipeline._sha256(entry["path"]) != entry["sha256"]:
                raise ConfigError(f"{entry['path']} changed since the manifest was written")
            setattr(args, key, entry["path"])
        # the worker count does not change results, so it may differ from the record
        config = RunConfig.from_text(man["config"]).with_overrides(
            {"smc": {"workers": args.workers}})
    else:
        if not (args.population and args.events):
            raise ConfigError("--population and --events are required without --manifest")
        config = _apply_run_flags(_load_config(args), args)
    pop, feed = _data(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pipeline.write_manifest(out, config, {"population": args.population, "events": args.events},
                            {"name": "run"})

    def report(t, ps, diag):
        if diag is None:
            print(f"day {t}: initial particles ready")
        else:
            print(f"day {t}: unique {diag.unique}, ESS {diag.ess:.1f}, dead {diag.dead}, "
                  + ", ".join(f"{k} {v:.4g}" for k, v in diag.mean.items()), flush=True)

    status = pipeline.orchestrate(config, pop, feed, out, resume=not args.no_resume,
                                  callback=report)
    if status:
        print(f"stopped early: every particle died (exit {status}); "
              f"outputs for earlier days are in {out}", file=sys.stderr)
    return status


def cmd_compare(args) -> int:
    smc = diagnostics.read_run(args.smc)
    mcmc = diagnostics.read_run(args.mcmc)
    if args.common_days:
        days = set(smc) & set(mcmc)
        smc = {d: smc[d] for d in days}
        mcmc = {d: mcmc[d] for d in days}
    rows = diagnostics.compare_runs(smc, mcmc)
    diagnostics.write_comparison(args.out, rows)
    worst = max(rows, key=lambda r: abs(r.z))
    print(f"{len(rows)} comparisons over {len({r.day for r in rows})} days; "
          f"largest |z| {abs(worst.z):.2f} ({worst.quantity} on day {worst.day})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="epi-smc", description=(
        "Real-time Bayesian inference for partially observed discrete-time epidemics."))
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate an outbreak and write its data files")
    s.add_argument("--config", help="INI file; its [simulate] section is used")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, help="override the [simulate] seed")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("init", help="MCMC on one or more days (initial particles, golden runs)")
    s.add_argument("--population", required=True)
    s.add_argument("--events", required=True)
    s.add_argument("--config")
    s.add_argument("--day", type=int, nargs="+", required=True)
    s.add_argument("--samples", type=int, help="override [mcmc] N")
    s.add_argument("--seed", type=int,
                   help="override [run] seed; golden runs need one other than the filter's")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_init)

    s = sub.add_parser("run", help="initialise and filter day by day")
    s.add_argument("--population")
    s.add_argument("--events")
    s.add_argument("--config")
    s.add_argument("--manifest", help="rerun exactly as recorded in a previous manifest")
    s.add_argument("--from-day", type=int, dest="from_day")
    s.add_argument("--to-day", type=int, dest="to_day")
    s.add_argument("--strategy", choices=("uniform", "hazard"))
    s.add_argument("--np", type=int)
    s.add_argument("--particles", type=int)
    s.add_argument("--workers", type=int)
    s.add_argument("--no-resume", action="store_true", help="ignore existing checkpoints")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("compare", help="tabulate SMC against MCMC summaries")
    s.add_argument("--smc", required=True)
    s.add_argument("--mcmc", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--common-days", action="store_true",
                   help="compare only days present in both runs instead of failing")
    s.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, feeds.EventError, ModelError, FileNotFoundError,
            diagnostics.AlignmentError) as exc:
        print(f"epi-smc: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
