import math

import numpy as np
import pytest

from epismc.likelihood import Augmentation, log_likelihood
from epismc.model import NEVER, Homogeneous, Population, PoissonPlusOne, SpatialExp
from epismc.simulate import (SimConfig, analytic_pair_infection, generate, last_day, observe,
                             read_truth, shift, simulate, write_events, write_truth)


def sir(seed=0, n=60, p=0.05, gamma=10.0, **kw):
    return SimConfig(n, SpatialExp(p, gamma), PoissonPlusOne(2.0), side=0.4, seed=seed, **kw)


def test_no_transmission_gives_single_case():
    cfg = SimConfig(20, Homogeneous(0.0), PoissonPlusOne(3.0), seed=4)
    h = generate(cfg).history
    assert h.final_size() == 1
    # the calendar puts the first notification on day 0
    assert h.notification[h.initial] == 0
    assert h.infection[h.initial] < 0


def test_pair_infection_frequency():
    cfg = SimConfig(2, Homogeneous(0.2), PoissonPlusOne(2.0), seed=9)
    pop = Population([1, 2], [(0, 0), (0, 0)])
    hits = np.array([simulate(cfg, pop, replicate=r).final_size() == 2 for r in range(20_000)])
    p = analytic_pair_infection(0.2, PoissonPlusOne(2.0))
    assert abs(hits.mean() - p) < 3 * math.sqrt(p * (1 - p) / len(hits))


def test_major_outbreaks_reach_about_a_third():
    cfg = SimConfig(500, SpatialExp(0.025, 15.0), PoissonPlusOne(3.0), side=1.0, seed=0)
    pop = Population.uniform_square(500, np.random.default_rng(0), 1.0)
    sizes = np.array([simulate(cfg, pop, replicate=r).final_size() for r in range(60)])
    major = sizes[sizes >= 50]
    assert len(major) >= 5
    assert 0.15 < major.mean() / 500 < 0.5


def test_reproducible_and_seed_dependent():
    a = generate(sir(seed=1, min_final_size=5)).history
    b = generate(sir(seed=1, min_final_size=5)).history
    c = generate(sir(seed=2, min_final_size=5)).history
    assert np.array_equal(a.infection, b.infection)
    assert not np.array_equal(a.infection, c.infection)


def test_rejection_of_small_outbreaks():
    ds = generate(sir(seed=5, min_final_size=10))
    assert ds.history.final_size() >= 10
    assert ds.replicate == ds.rejected


def test_continuation_from_snapshot_is_identical():
    cfg = sir(seed=3, removal_delay=2, kappa=0.3)
    pop = Population.uniform_square(cfg.n_pop, np.random.default_rng(0), cfg.side)
    full = simulate(cfg, pop, replicate=1)
    # the raw run starts at day 0; undo the calendar shift
    raw = shift(full, int(-full.infection[full.initial]))
    s = 6
    known = raw.infection <= s
    snap = type(raw)(np.where(known, raw.infection, NEVER), np.where(known, raw.notification, NEVER),
                     np.where(known, raw.removal, NEVER), raw.initial)
    cont = simulate(cfg, pop, replicate=1, start=snap, start_day=s)
    assert np.array_equal(cont.infection, raw.infection)
    assert np.array_equal(cont.notification, raw.notification)
    assert np.array_equal(cont.removal, raw.removal)


def test_histories_have_finite_likelihood():
    cfg = sir(seed=7, removal_delay=3, kappa=0.2, min_final_size=5)
    ds = generate(cfg)
    h = ds.history
    for t in range(0, last_day(h) + 1, 3):
        occ = (h.infection <= t) & (h.notification > t)
        aug = Augmentation(np.where(h.infection <= t, h.infection, NEVER),
                           np.where(occ, h.notification, NEVER))
        assert log_likelihood(observe(h, t), aug, cfg.params, ds.pop) > -math.inf


class TestObserve:
    def test_before_first_notification(self):
        h = generate(sir(seed=1, min_final_size=5)).history
        obs = observe(h, -1)
        assert len(obs.notified) == 0 and np.all(obs.removal == NEVER)

    def test_at_the_end(self):
        h = generate(sir(seed=1, min_final_size=5)).history
        obs = observe(h, last_day(h))
        assert np.array_equal(obs.notification, h.notification)
        assert np.array_equal(obs.removal, h.removal)

    def test_monotone(self):
        h = generate(sir(seed=1, min_final_size=5)).history
        for t in range(last_day(h)):
            a, b = observe(h, t), observe(h, t + 1)
            seen = a.notification < NEVER
            assert np.array_equal(a.notification[seen], b.notification[seen])
            assert set(a.notified) <= set(b.notified)


def test_truth_and_events_files(tmp_path):
    ds = generate(sir(seed=1, min_final_size=5))
    write_truth(tmp_path / "truth.csv", ds.history, ds.pop)
    back = read_truth(tmp_path / "truth.csv", ds.pop)
    for name in ("infection", "notification", "removal"):
        assert np.array_equal(getattr(back, name), getattr(ds.history, name))
    write_events(tmp_path / "events.csv", ds.history, ds.pop, t=4)
    lines = (tmp_path / "events.csv").read_text().splitlines()
    assert lines[0] == "day,id,event"
    assert all(int(l.split(",")[0]) <= 4 for l in lines[1:])
