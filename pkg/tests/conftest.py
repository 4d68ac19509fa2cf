import numpy as np
import pytest

from aggdiff.backbone import init_params
from aggdiff.events import ASSOC, COMM, Dataset, EventRecord
from aggdiff.graph import init_state


def make_state(n, edges=(), d=4, seed=0, time_scale=1.0):
    ds = Dataset(n, list(edges), [])
    st = init_state(ds, d, seed)
    st.time_scale = time_scale
    return st


def random_graph(rng, n, p):
    return [(a, b) for a in range(n) for b in range(a + 1, n) if rng.random() < p]


def random_events(rng, n, count, p_assoc=0.3, t0=0.0):
    out, t = [], t0
    for _ in range(count):
        t += float(rng.exponential(1.0))
        u, v = (int(x) for x in rng.choice(n, size=2, replace=False))
        out.append(EventRecord(u, v, t, ASSOC if rng.random() < p_assoc else COMM))
    return out


@pytest.fixture
def toy():
    """5-node toy graph: a path 0-1-2-3 with a chord 1-3 and node 4 hanging off 3."""
    edges = [(0, 1), (1, 2), (2, 3), (1, 3), (3, 4)]
    state = make_state(5, edges, d=3, seed=1)
    params = init_params(3, seed=2)
    return state, params


# acceptance bookkeeping: tests marked ``criterion(n, title)`` roll up into one
# PASS/FAIL line per criterion in the terminal summary
_criteria: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion")


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None or call.when != "call" and call.excinfo is None:
        return
    n, title = mark.args
    entry = _criteria.setdefault(n, {"title": title, "ok": True, "count": 0, "notes": []})
    if call.when == "call":
        entry["count"] += 1
    if call.excinfo is not None:
        entry["ok"] = False
    for key, val in item.user_properties:
        if key == "detail":
            entry["notes"].append(str(val))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        e = _criteria[n]
        status = "PASS" if e["ok"] else "FAIL"
        note = "; ".join(dict.fromkeys(e["notes"]))
        line = f"criterion {n} [{status}] {e['title']} ({e['count']} test(s))"
        terminalreporter.write_line(line + (f": {note}" if note else ""))
