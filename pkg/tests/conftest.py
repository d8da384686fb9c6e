import math

import numpy as np
import pytest

from epismc.likelihood import Gamma, Observation, PriorSpec, Uniform
from epismc.mcmc import Problem
from epismc.model import NEVER, Homogeneous, Params, Population, PoissonPlusOne, SpatialExp
from epismc.simulate import SimConfig, generate, observe


def line_population(n):
    """``n`` individuals on a line; distances play no role for a homogeneous kernel."""
    return Population(np.arange(n), np.column_stack([np.arange(n) * 0.1, np.zeros(n)]))


def homogeneous(p=0.3, a=1.5, kappa=0.0):
    return Params(Homogeneous(p), kappa, PoissonPlusOne(a))


def tv(p: dict, q: dict) -> float:
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in set(p) | set(q))


@pytest.fixture
def tiny():
    """Four individuals, notifications on days 0 and 2, horizon 4."""
    pop = line_population(4)
    obs = Observation(4, [0, 2, NEVER, NEVER], [0, 2, NEVER, NEVER])
    return pop, obs, homogeneous(0.3, 1.5)


@pytest.fixture(scope="session")
def small_outbreak():
    """A 40-individual spatial SIR outbreak used by the integration tests."""
    cfg = SimConfig(40, SpatialExp(0.05, 10.0), PoissonPlusOne(2.0), side=math.sqrt(40 / 500),
                    seed=3, min_final_size=6)
    return generate(cfg)


@pytest.fixture(scope="session")
def small_problem(small_outbreak):
    ds = small_outbreak
    template = Params(SpatialExp(0.08, 12.0), 0.0, PoissonPlusOne(2.0))
    priors = PriorSpec({"p_contact": Uniform(0.0, 1.0), "gamma": Gamma(1.69, 0.13)})
    return lambda t: Problem(ds.pop, observe(ds.history, t), template, priors)


#: (criterion, passed, detail) lines filled in by test_acceptance.py
ACCEPTANCE = []


def record(criterion, passed, detail):
    line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
