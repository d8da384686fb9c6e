"""
Data files: daily event feeds, particle checkpoints and per-day outputs.

Event feeds are CSV files ``day,id,event`` with ``event`` either ``N``
(notification) or ``R`` (removal).  Checkpoints are a particle table
``particle,<params...>,logw``, an augmentation table ``particle,id,i,n``
listing every infected individual of every particle, and a small JSON
file with the lineage and block sizes needed to resume exactly.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .likelihood import Observation
from .model import NEVER, Population


class EventError(ValueError):
    """A malformed event feed; ``line`` is the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass
class EventFeed:
    """Notification and removal days of every individual, in population order."""

    notification: np.ndarray
    removal: np.ndarray

    @property
    def days(self) -> list[int]:
        d = np.concatenate([self.notification, self.removal])
        return sorted({int(x) for x in d[d < NEVER]})

    @property
    def last_day(self) -> int | None:
        days = self.days
        return days[-1] if days else None

    def observation(self, t: int) -> Observation:
        """Everything known at the end of day ``t``."""
        n = np.where(self.notification <= t, self.notification, NEVER)
        r = np.where(self.removal <= t, self.removal, NEVER)
        return Observation(int(t), n, r)

    def stream(self, first: int, last: int):
        """Observations for days ``first..last``."""
        for t in range(first, last + 1):
            yield self.observation(t)


def load_events(path, pop: Population) -> EventFeed:
    """Read and validate an event feed against ``pop``.

    Raises :class:`EventError` naming the offending line for unknown ids,
    negative or non-integer days, unknown event codes, repeated events and
    removals dated before the notification (or without one).
    """
    n = len(pop)
    notif = np.full(n, NEVER, dtype=np.int64)
    rem = np.full(n, NEVER, dtype=np.int64)
    rem_line = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return EventFeed(notif, rem)
        if [h.strip() for h in header] != ["day", "id", "event"]:
            raise EventError("header must be day,id,event", 1)
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise EventError(f"expected 3 fields, found {len(row)}", line)
            try:
                day, ident = int(row[0]), int(row[1])
            except ValueError:
                raise EventError(f"day and id must be integers: {row}", line) from None
            event = row[2].strip()
            if day < 0:
                raise EventError(f"negative day {day}", line)
            try:
                j = pop.index(ident)
            except (KeyError, ValueError):
                raise EventError(f"unknown id {ident}", line) from None
            if event == "N":
                if notif[j] < NEVER:
                    raise EventError(f"duplicate notification for id {ident}", line)
                notif[j] = day
            elif event == "R":
                if rem[j] < NEVER:
                    raise EventError(f"duplicate removal for id {ident}", line)
                rem[j] = day
                rem_line[j] = line
            else:
                raise EventError(f"unknown event {event!r}; expected N or R", line)
    for j, line in sorted(rem_line.items(), key=lambda kv: kv[1]):
        if notif[j] == NEVER:
            raise EventError(f"removal of id {pop.ids[j]} without a notification", line)
        if rem[j] < notif[j]:
            raise EventError(f"removal of id {pop.ids[j]} on day {rem[j]} precedes its "
                             f"notification on day {notif[j]}", line)
    return EventFeed(notif, rem)


def write_events(path, feed: EventFeed, pop: Population) -> None:
    rows = []
    for j, ident in enumerate(pop.ids):
        for day, tag in ((feed.notification[j], "N"), (feed.removal[j], "R")):
            if day < NEVER:
                rows.append((int(day), int(ident), tag))
    rows.sort(key=lambda r: (r[0], r[2] != "N", r[1]))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["day", "id", "event"])
        w.writerows(rows)


# --------------------------------------------------------------------------
# checkpoints


def day_dir(out, t: int) -> Path:
    d = Path(out) / f"day_{t}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def write_particles(directory, t: int, ps, pop: Population, state: dict) -> None:
    """Particle table, augmentation sidecar and resume state for day ``t``."""
    directory = Path(directory)
    with open(directory / f"particles_{t}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["particle", *ps.names, "logw"])
        for j in range(len(ps)):
            w.writerow([j, *(repr(float(x)) for x in ps.theta[j]), repr(float(ps.logw[j]))])
    with open(directory / f"aug_{t}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["particle", "id", "i", "n"])
        for j in range(len(ps)):
            for k in np.flatnonzero(ps.inf[j] < NEVER):
                n = ps.notif[j, k]
                w.writerow([j, int(pop.ids[k]), int(ps.inf[j, k]), "" if n >= NEVER else int(n)])
    state = dict(state, day=int(t), lineage=[int(x) for x in ps.lineage])
    (directory / f"state_{t}.json").write_text(json.dumps(state, indent=1, sort_keys=True))


def read_particles(directory, t: int, pop: Population):
    """Inverse of :func:`write_particles`; returns ``(ParticleSet, state)``."""
    from .smc import ParticleSet

    directory = Path(directory)
    with open(directory / f"particles_{t}.csv", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        names = tuple(header[1:-1])
        rows = [r for r in reader]
    N = len(rows)
    theta = np.array([[float(x) for x in r[1:-1]] for r in rows]).reshape(N, len(names))
    logw = np.array([float(r[-1]) for r in rows])
    n = len(pop)
    inf = np.full((N, n), NEVER, dtype=np.int64)
    notif = np.full((N, n), NEVER, dtype=np.int64)
    with open(directory / f"aug_{t}.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            j, k = int(row["particle"]), pop.index(int(row["id"]))
            inf[j, k] = int(row["i"])
            if row["n"] != "":
                notif[j, k] = int(row["n"])
    state = json.loads((directory / f"state_{t}.json").read_text())
    lineage = np.array(state.pop("lineage"), dtype=np.int64)
    return ParticleSet(int(t), theta, inf, notif, logw, lineage, names), state
