"""Event streams: records, CSV ingestion, chronological splits, synthetic data.

File layout::

    events.csv          u,v,t,kind[,prob]   kind in {assoc, comm}
    initial_edges.csv   u,v

Numeric ``t`` values are taken as seconds since the stream epoch and kept as
they are.  ISO-8601 datetimes are converted to seconds after the earliest
datetime in the file.
"""
from __future__ import annotations

import csv
import dataclasses
import enum
import json
import logging
import math
import os
import warnings
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import NamedTuple

import numpy as np

log = logging.getLogger(__name__)

MAX_REJECT_FRACTION = 0.10


class DataError(ValueError):
    """Input data that cannot be turned into a valid Dataset."""


class StreamWarning(UserWarning):
    pass


class EventKind(enum.Enum):
    ASSOCIATION = "assoc"
    COMMUNICATION = "comm"

    @property
    def index(self) -> int:
        """Row used for this kind in per-kind parameters."""
        return 1 if self is EventKind.ASSOCIATION else 0


ASSOC = EventKind.ASSOCIATION
COMM = EventKind.COMMUNICATION

DEFAULT_KIND_TOKENS = {
    "assoc": ASSOC,
    "association": ASSOC,
    "comm": COMM,
    "communication": COMM,
}


class EventRecord(NamedTuple):
    u: int
    v: int
    t: float
    kind: EventKind


def parse_kind_codes(text: str) -> dict[str, EventKind]:
    """Parse ``"0=assoc,1=comm"`` into a token map."""
    out = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        code, _, name = item.partition("=")
        if name.strip().lower() not in DEFAULT_KIND_TOKENS:
            raise DataError(f"unknown kind name in code map: {name!r}")
        out[code.strip()] = DEFAULT_KIND_TOKENS[name.strip().lower()]
    return out


@dataclass
class Dataset:
    n_nodes: int
    initial_associations: list[tuple[int, int]]
    train: list[EventRecord]
    test: list[EventRecord] = field(default_factory=list)
    rejected: list[tuple[int, str]] = field(default_factory=list, compare=False, repr=False)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        n = self.n_nodes
        if n < 1:
            raise DataError("n_nodes must be positive")
        for a, b in self.initial_associations:
            if not (0 <= a < n and 0 <= b < n) or a == b:
                raise DataError(f"bad initial edge ({a}, {b}) for {n} nodes")
        for name, events in (("train", self.train), ("test", self.test)):
            prev = -math.inf
            for e in events:
                if e.u == e.v or not (0 <= e.u < n and 0 <= e.v < n) or e.t < 0:
                    raise DataError(f"bad {name} event {e}")
                if e.t < prev:
                    raise DataError(f"{name} events are not time-sorted")
                prev = e.t
        if self.train and self.test and self.train[-1].t > self.test[0].t:
            raise DataError("train events must not be later than test events")

    @property
    def events(self) -> list[EventRecord]:
        return self.train + self.test

    @property
    def time_scale(self) -> float:
        """Mean inter-event interval over the training stream."""
        if len(self.train) < 2:
            return 1.0
        span = self.train[-1].t - self.train[0].t
        return span / (len(self.train) - 1) if span > 0 else 1.0

    def final_associations(self) -> set[tuple[int, int]]:
        """Undirected edge set after replaying every association event."""
        edges = {tuple(sorted(e)) for e in self.initial_associations}
        for ev in self.events:
            if ev.kind is ASSOC:
                edges.add((min(ev.u, ev.v), max(ev.u, ev.v)))
        return edges

    def summary(self) -> dict:
        return {
            "nodes": self.n_nodes,
            "initial_associations": len({tuple(sorted(e)) for e in self.initial_associations}),
            "final_associations": len(self.final_associations()),
            "train_events": len(self.train),
            "test_events": len(self.test),
        }


def split_chronological(events: list[EventRecord], boundary_t: float):
    """Events with ``t < boundary_t`` go to train, the rest to test."""
    if events and not (events[0].t <= boundary_t <= events[-1].t):
        warnings.warn(f"split boundary {boundary_t} lies outside the stream's time range",
                      StreamWarning, stacklevel=2)
    i = 0
    while i < len(events) and events[i].t < boundary_t:
        i += 1
    return list(events[:i]), list(events[i:])


def split_fraction(events: list[EventRecord], test_fraction: float):
    """Chronological split placing roughly ``test_fraction`` of events in test."""
    if not events or test_fraction <= 0:
        return list(events), []
    k = min(len(events) - 1, max(0, int(round(len(events) * (1 - test_fraction)))))
    return split_chronological(events, events[k].t)


# ingestion -----------------------------------------------------------------

def _parse_time(token: str):
    try:
        return float(token)
    except ValueError:
        return datetime.fromisoformat(token.strip())


def parse_events(path, initial_path=None, *, n_nodes: int | None = None,
                 kind_codes: dict[str, EventKind] | None = None,
                 min_prob: float | None = None, init_before: float | None = None,
                 split_at: float | None = None) -> Dataset:
    """Read an events CSV (and optional initial edge list) into a Dataset.

    Rows with an unknown kind, a self-loop, an out-of-range id or an unreadable
    field are rejected and listed in ``Dataset.rejected`` as (line, reason).
    More than 10% rejected rows is a hard error.

    ``init_before`` moves association events earlier than that time into the
    initial graph and drops the other early events.  ``split_at`` divides the
    remaining stream into train/test.  ``min_prob`` drops rows whose ``prob``
    column is below the threshold.
    """
    tokens = dict(DEFAULT_KIND_TOKENS)
    if kind_codes:
        tokens.update(kind_codes)

    rows = []
    rejected: list[tuple[int, str]] = []
    filtered = 0
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"u", "v", "t", "kind"} - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"{path}: missing columns {sorted(missing)}")
        for line, row in enumerate(reader, start=2):
            try:
                u, v = int(row["u"]), int(row["v"])
                t = _parse_time(row["t"])
            except (TypeError, ValueError):
                rejected.append((line, "unreadable field"))
                continue
            kind = tokens.get((row["kind"] or "").strip().lower())
            if kind is None:
                rejected.append((line, f"unknown kind {row['kind']!r}"))
                continue
            if u == v:
                rejected.append((line, "self-interaction"))
                continue
            if u < 0 or v < 0 or (n_nodes is not None and max(u, v) >= n_nodes):
                rejected.append((line, "node id out of range"))
                continue
            if min_prob is not None and row.get("prob") not in (None, ""):
                if float(row["prob"]) < min_prob:
                    filtered += 1
                    continue
            rows.append((line, u, v, t, kind))

    total = len(rows) + len(rejected) + filtered
    if rejected:
        lines = ", ".join(str(n) for n, _ in rejected[:20])
        log.warning("%s: rejected %d of %d rows (lines %s%s)", path, len(rejected), total,
                    lines, "..." if len(rejected) > 20 else "")
        if len(rejected) > MAX_REJECT_FRACTION * total:
            raise DataError(f"{path}: {len(rejected)} of {total} rows rejected; first: {rejected[:5]}")

    dt_rows = [r for r in rows if isinstance(r[3], datetime)]
    if dt_rows:
        if len(dt_rows) != len(rows):
            raise DataError(f"{path}: mixes numeric and datetime timestamps")
        origin = min(r[3] for r in rows)
        rows = [(ln, u, v, (t - origin).total_seconds(), k) for ln, u, v, t, k in rows]
    for ln, _, _, t, _ in rows:
        if t < 0:
            raise DataError(f"{path}:{ln}: negative timestamp")

    if any(rows[i][3] > rows[i + 1][3] for i in range(len(rows) - 1)):
        warnings.warn(f"{path}: events out of time order; sorting", StreamWarning, stacklevel=2)
        rows.sort(key=lambda r: r[3])  # stable: ties keep file order

    events = [EventRecord(u, v, float(t), k) for _, u, v, t, k in rows]

    initial: list[tuple[int, int]] = []
    if initial_path is not None:
        initial.extend(read_edges(initial_path))
    if init_before is not None:
        early = [e for e in events if e.t < init_before]
        initial.extend((e.u, e.v) for e in early if e.kind is ASSOC)
        events = events[len(early):]

    if n_nodes is None:
        ids = [max(e.u, e.v) for e in events] + [max(a, b) for a, b in initial]
        n_nodes = max(ids) + 1 if ids else 1
    if split_at is not None:
        train, test = split_chronological(events, split_at)
    else:
        train, test = events, []
    try:
        return Dataset(n_nodes, _dedupe_edges(initial), train, test, rejected)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None


def _dedupe_edges(edges):
    seen, out = set(), []
    for a, b in edges:
        key = (min(a, b), max(a, b))
        if key not in seen:
            seen.add(key)
            out.append((a, b))
    return out


def read_edges(path) -> list[tuple[int, int]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if not {"u", "v"} <= set(reader.fieldnames or ()):
            raise DataError(f"{path}: edge list needs columns u,v")
        try:
            return [(int(r["u"]), int(r["v"])) for r in reader]
        except ValueError as exc:
            raise DataError(f"{path}: {exc}") from None


def write_events(dataset: Dataset, directory) -> tuple[Path, Path]:
    """Write ``events.csv`` (train then test) and ``initial_edges.csv``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ev_path, edge_path = directory / "events.csv", directory / "initial_edges.csv"
    with open(ev_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["u", "v", "t", "kind"])
        for e in dataset.events:
            w.writerow([e.u, e.v, repr(e.t), e.kind.value])
    with open(edge_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["u", "v"])
        w.writerows(dataset.initial_associations)
    return ev_path, edge_path


# synthetic streams ---------------------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    """Planted-community Poisson stream.

    Each within-community pair fires at ``intra_rate`` and each cross pair at
    ``inter_rate``.  With ``burstiness`` b > 0 the time axis is cut into phases
    of ``phase_length``; in each phase one community is "hot" and the rest of
    the within-community rate mass is scaled by (1 - b) and handed to it.  The
    aggregate rate is the same in every phase, so arrivals stay exponential.
    """

    n_nodes: int
    n_communities: int
    intra_rate: float
    inter_rate: float
    association_prob: float
    horizon: float
    seed: int = 0
    burstiness: float = 0.0
    phase_length: float = 1.0
    initial_intra_prob: float = 0.0

    def validate(self) -> None:
        if self.n_nodes < 2 or not 1 <= self.n_communities <= self.n_nodes:
            raise DataError("need n_nodes >= 2 and 1 <= n_communities <= n_nodes")
        if self.intra_rate > 0 and self.n_nodes < 2 * self.n_communities:
            raise DataError("every community needs at least two nodes")
        if self.intra_rate < 0 or self.inter_rate < 0:
            raise DataError("rates must be non-negative")
        for name in ("association_prob", "burstiness", "initial_intra_prob"):
            if not 0 <= getattr(self, name) <= 1:
                raise DataError(f"{name} must lie in [0, 1]")
        if self.horizon <= 0 or self.phase_length <= 0:
            raise DataError("horizon and phase_length must be positive")

    def communities(self) -> np.ndarray:
        return np.arange(self.n_nodes) * self.n_communities // self.n_nodes

    def pair_counts(self) -> tuple[list[int], int]:
        sizes = np.bincount(self.communities(), minlength=self.n_communities)
        intra = [int(s * (s - 1) // 2) for s in sizes]
        n = self.n_nodes
        return intra, n * (n - 1) // 2 - sum(intra)

    def total_rate(self) -> float:
        intra, inter = self.pair_counts()
        return self.intra_rate * sum(intra) + self.inter_rate * inter

    def expected_events(self) -> float:
        return self.total_rate() * self.horizon

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise DataError(f"unknown synth spec fields: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def load_synth_spec(path) -> SynthSpec:
    with open(path) as fh:
        try:
            return SynthSpec.from_dict(json.load(fh))
        except (TypeError, json.JSONDecodeError) as exc:
            raise DataError(f"{path}: {exc}") from None


def synthesize_stream(spec: SynthSpec) -> Dataset:
    """Draw a stream from ``spec``; identical output for identical specs."""
    spec.validate()
    rate = spec.total_rate()
    if rate <= 0:
        raise DataError("synth spec has zero total event rate")
    rng = np.random.default_rng(spec.seed)
    comm = spec.communities()
    members = [np.flatnonzero(comm == c) for c in range(spec.n_communities)]
    intra_pairs, n_inter = spec.pair_counts()
    inter_mass = spec.inter_rate * n_inter
    base = [spec.intra_rate * p for p in intra_pairs]
    intra_mass = sum(base)

    initial = []
    if spec.initial_intra_prob > 0:
        for nodes in members:
            for i, a in enumerate(nodes):
                for b in nodes[i + 1:]:
                    if rng.random() < spec.initial_intra_prob:
                        initial.append((int(a), int(b)))

    n_phases = int(math.ceil(spec.horizon / spec.phase_length))
    hot = rng.integers(spec.n_communities, size=n_phases)

    events = []
    t = 0.0
    while True:
        t += rng.exponential(1.0 / rate)
        if t >= spec.horizon:
            break
        x = rng.random() * rate
        if x < inter_mass:
            while True:
                u, v = rng.integers(spec.n_nodes, size=2)
                if comm[u] != comm[v]:
                    break
            kind = COMM
        else:
            masses = np.array(base) * (1.0 - spec.burstiness)
            h = hot[min(int(t // spec.phase_length), n_phases - 1)]
            masses[h] += intra_mass - masses.sum()
            c = int(np.searchsorted(np.cumsum(masses), (x - inter_mass), side="right"))
            c = min(c, spec.n_communities - 1)
            u, v = rng.choice(members[c], size=2, replace=False)
            kind = ASSOC if rng.random() < spec.association_prob else COMM
        events.append(EventRecord(int(u), int(v), float(t), kind))
    return Dataset(spec.n_nodes, initial, events, [])


def write_synth(spec: SynthSpec, directory) -> tuple[Path, Path]:
    directory = Path(directory)
    os.makedirs(directory, exist_ok=True)
    return write_events(synthesize_stream(spec), directory)
