"""
Run configuration read from an INI file.

Example::

    [model]
    kernel = SpatialExp
    p_contact = 0.05        ; starting values for the samplers
    gamma = 13
    kappa = 0
    a = 3

    [priors]
    p_contact = uniform 0 1
    gamma = gamma 1.69 0.13
    ; parameters without an entry (here kappa and a) stay fixed

    [mcmc]
    B = 10000
    N = 1000
    M = 50
    e_u = 3

    [smc]
    particles = 1000
    np = 25
    strategy = uniform
    from_day = 3
    workers = 1

    [run]
    seed = 0

Every value has a default, and :meth:`RunConfig.resolved` writes back the
complete set, which is what run manifests record.
"""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from pathlib import Path

from .likelihood import Exponential, Fixed, Gamma, PriorSpec, Uniform
from .mcmc import McmcConfig, Problem
from .model import KERNELS, ModelError, Params, PoissonPlusOne
from .simulate import SimConfig
from .smc import SmcConfig

PRIORS = {"uniform": Uniform, "gamma": Gamma, "exponential": Exponential, "fixed": Fixed}

DEFAULTS = {
    "model": {"kernel": "SpatialExp", "p_contact": "0.05", "gamma": "13.0", "kappa": "0.0",
              "a": "3.0", "fixed_a": "true"},
    "priors": {"p_contact": "uniform 0 1", "gamma": "gamma 1.69 0.13"},
    "mcmc": {"B": "10000", "N": "1000", "M": "50", "e_u": "3", "zeta": "auto",
             "sigma_every": "200", "regulariser": "diagonal", "initial_occults": "2"},
    "smc": {"particles": "1000", "np": "25", "strategy": "uniform", "from_day": "3",
            "to_day": "", "workers": "1", "weighting": "incremental", "adjust_weight": "total"},
    "simulate": {"n_pop": "100", "kernel": "SpatialExp", "p_contact": "0.025", "gamma": "15.0",
                 "kappa": "0.0", "a": "3.0", "removal_delay": "0", "side": "",
                 "min_final_size": "10", "seed": "1"},
    "run": {"seed": "0"},
}


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


def parse_prior(text: str):
    """``"uniform 0 1"``, ``"gamma <shape> <rate>"``, ``"exponential <mean>"`` or ``"fixed"``."""
    parts = text.split()
    if not parts or parts[0].lower() not in PRIORS:
        raise ConfigError(f"unknown prior {text!r}; expected one of {sorted(PRIORS)}")
    try:
        return PRIORS[parts[0].lower()](*(float(x) for x in parts[1:]))
    except TypeError as exc:
        raise ConfigError(f"wrong number of arguments in prior {text!r}") from exc


def _kernel(section, what):
    name = section["kernel"]
    if name not in KERNELS:
        raise ConfigError(f"[{what}] unknown kernel {name!r}; expected one of {sorted(KERNELS)}")
    cls = KERNELS[name]
    missing = [k for k in cls.names if k not in section]
    if missing:
        raise ConfigError(f"[{what}] kernel {name} needs {', '.join(missing)}")
    return cls.from_values([section.getfloat(k) for k in cls.names])


@dataclass
class RunConfig:
    """Everything an analysis needs apart from the data files."""

    template: Params
    priors: PriorSpec
    mcmc: McmcConfig
    smc: SmcConfig
    from_day: int = 3
    to_day: int | None = None
    simulate: SimConfig | None = None
    seed: int = 0
    parser: configparser.ConfigParser = field(default=None, repr=False)

    def __post_init__(self):
        if self.smc.n_particles < 2:
            raise ConfigError("at least 2 particles are needed")
        if self.to_day is not None and self.to_day < self.from_day:
            raise ConfigError("to_day precedes from_day")

    def problem(self, pop, obs) -> Problem:
        return Problem(pop, obs, self.template, self.priors)

    def resolved(self) -> str:
        """The configuration with every default filled in, as INI text."""
        lines = []
        for name in self.parser.sections():
            lines.append(f"[{name}]")
            lines.extend(f"{k} = {v}" for k, v in self.parser[name].items())
            lines.append("")
        return "\n".join(lines)

    def with_overrides(self, overrides: dict) -> "RunConfig":
        """A copy with ``{section: {key: value}}`` replaced; ``None`` values are skipped."""
        p = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        p.optionxform = str
        p.read_string(self.resolved())
        for section, values in overrides.items():
            for key, value in values.items():
                if value is not None:
                    p[section][key] = str(value)
        return self._build(p)

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        p = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        p.optionxform = str
        p.read_dict(DEFAULTS)
        user = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        user.optionxform = str
        try:
            user.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from exc
        unknown = set(user.sections()) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown sections: {sorted(unknown)}")
        if user.has_section("priors"):
            # a priors section replaces the default priors rather than extending them
            for key in list(p["priors"]):
                p.remove_option("priors", key)
        p.read_dict({s: dict(user[s]) for s in user.sections()})
        return cls._build(p)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        return cls.from_text(path.read_text())

    @classmethod
    def _build(cls, p) -> "RunConfig":
        try:
            m = p["model"]
            kernel = _kernel(m, "model")
            template = Params(kernel, m.getfloat("kappa"), PoissonPlusOne(m.getfloat("a")))
            template.validate()
            priors = {k: parse_prior(v) for k, v in p["priors"].items()}
            unknown = set(priors) - set(template.names)
            if unknown:
                raise ConfigError(f"[priors] names {sorted(unknown)} are not model parameters "
                                  f"{list(template.names)}")
            if m.getboolean("fixed_a"):
                priors.pop("a", None)
            elif "a" not in priors:
                raise ConfigError("fixed_a = false needs a prior for a")
            mc = p["mcmc"]
            mcmc = McmcConfig(burn_in=mc.getint("B"), n_samples=mc.getint("N"),
                              thin=mc.getint("M"), e_u=mc.getint("e_u"), zeta=mc["zeta"],
                              sigma_every=mc.getint("sigma_every"), regulariser=mc["regulariser"],
                              initial_occults=mc.getint("initial_occults"))
            s = p["smc"]
            seed = p["run"].getint("seed")
            smc = SmcConfig(n_particles=s.getint("particles"), n_p=s.getint("np"),
                            strategy=s["strategy"], workers=s.getint("workers"), seed=seed,
                            weighting=s["weighting"], adjust_weight=s["adjust_weight"],
                            e_u=mc.getint("e_u"))
            if smc.strategy not in ("uniform", "hazard"):
                raise ConfigError(f"unknown strategy {smc.strategy!r}")
            sim = _simulation(p["simulate"])
            to_day = s.getint("to_day") if s["to_day"].strip() else None
            return cls(template, PriorSpec(priors), mcmc, smc, s.getint("from_day"), to_day,
                       sim, seed, p)
        except (ValueError, ModelError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc


def _simulation(sec) -> SimConfig:
    n = sec.getint("n_pop")
    side = sec.getfloat("side") if sec["side"].strip() else math.sqrt(n / 500)
    return SimConfig(n, _kernel(sec, "simulate"), PoissonPlusOne(sec.getfloat("a")),
                     kappa=sec.getfloat("kappa"), removal_delay=sec.getint("removal_delay"),
                     side=side, seed=sec.getint("seed"),
                     min_final_size=sec.getint("min_final_size"))
