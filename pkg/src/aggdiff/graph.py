"""Mutable dynamic-graph state and neighbourhood queries."""
from __future__ import annotations

import zipfile
from collections import deque
from collections.abc import Iterable
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diffmath import Var
from .events import Dataset

STATE_VERSION = "aggdiff-state-1"


@dataclass
class GraphState:
    """Embeddings ``z`` (N x d), adjacency ``A``, attention ``S`` and clocks.

    ``edge_t[u, v]`` is the time the edge was added (``-inf`` for the initial
    graph, ``nan`` where there is no edge).  Elapsed times are divided by
    ``time_scale`` before they enter the node update.  While training, the freshest
    embedding of each node updated in the current batch is kept as a tracked
    ``Var`` so gradients can flow through it; ``detach`` drops those.
    """

    z: np.ndarray
    A: np.ndarray
    S: np.ndarray
    last_t: np.ndarray
    now: float
    edge_t: np.ndarray
    time_scale: float = 1.0
    _live: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_nodes(self) -> int:
        return self.z.shape[0]

    @property
    def dim(self) -> int:
        return self.z.shape[1]

    def emb(self, r: int) -> Var:
        live = self._live.get(r)
        return live if live is not None else Var(self.z[r].copy())

    def set_emb(self, r: int, value: Var) -> None:
        self.z[r] = value.value
        if value.tracked:
            self._live[r] = value
        else:
            self._live.pop(r, None)

    def detach(self) -> None:
        self._live.clear()

    def copy(self) -> "GraphState":
        return GraphState(self.z.copy(), self.A.copy(), self.S.copy(),
                          self.last_t.copy(), self.now, self.edge_t.copy(), self.time_scale)

    def equals(self, other: "GraphState") -> bool:
        return (np.array_equal(self.z, other.z) and np.array_equal(self.A, other.A)
                and np.array_equal(self.S, other.S)
                and np.array_equal(self.last_t, other.last_t) and self.now == other.now
                and self.time_scale == other.time_scale
                and np.array_equal(self.edge_t, other.edge_t, equal_nan=True))


def init_state(dataset: Dataset, d: int, seed: int = 0) -> GraphState:
    n = dataset.n_nodes
    rng = np.random.default_rng(seed)
    z = rng.uniform(-0.5 / d, 0.5 / d, size=(n, d))
    A = np.zeros((n, n), dtype=bool)
    edge_t = np.full((n, n), np.nan)
    for a, b in dataset.initial_associations:
        A[a, b] = A[b, a] = True
        edge_t[a, b] = edge_t[b, a] = -np.inf
    deg = A.sum(axis=1)
    S = np.where(A, 1.0 / np.maximum(deg, 1)[:, None], 0.0)
    return GraphState(z, A, S, np.zeros(n), 0.0, edge_t, dataset.time_scale)


def neighbors(state: GraphState, u: int) -> set[int]:
    return {int(r) for r in np.flatnonzero(state.A[:, u])}


def khop_neighbors(state: GraphState, u: int, k: int,
                   exclude: Iterable[int] = ()) -> set[int]:
    """Nodes within ``k`` hops of ``u``, without ``u`` and ``exclude``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    seen = {u}
    frontier = deque([(u, 0)])
    while frontier:
        node, depth = frontier.popleft()
        if depth == k:
            continue
        for r in np.flatnonzero(state.A[node]):
            r = int(r)
            if r not in seen:
                seen.add(r)
                frontier.append((r, depth + 1))
    seen.discard(u)
    return seen - set(exclude)


def apply_association(state: GraphState, u: int, v: int, t: float | None = None,
                      weight: float = 0.0) -> GraphState:
    """Add the undirected edge (u, v).

    For a new edge, rows u and v of ``S`` give the newcomer ``1/deg + weight``
    (``weight`` is the event intensity) and are renormalised over neighbours.
    Re-adding an existing edge leaves the state as it is.
    """
    if u == v:
        raise ValueError("self-association")
    if state.A[u, v]:
        return state
    when = state.now if t is None else t
    state.A[u, v] = state.A[v, u] = True
    state.edge_t[u, v] = state.edge_t[v, u] = when
    for j, i in ((u, v), (v, u)):
        row = np.where(state.A[j], state.S[j], 0.0)
        row[i] = 1.0 / state.A[j].sum() + weight
        state.S[j] = row / row.sum()
    return state


def savez_stable(path, **arrays) -> None:
    """Like ``np.savez`` but byte-identical for identical inputs (fixed zip timestamps)."""
    path = Path(path)
    if path.suffix != ".npz":
        path = path.with_name(path.name + ".npz")
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name, value in arrays.items():
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            with zf.open(info, "w") as fh:
                np.lib.format.write_array(fh, np.asanyarray(value), allow_pickle=False)


def save_state(path, state: GraphState) -> None:
    savez_stable(path, version=STATE_VERSION, z=state.z, A=state.A, S=state.S,
             last_t=state.last_t, now=state.now, edge_t=state.edge_t,
             time_scale=state.time_scale)


def load_state(path) -> GraphState:
    with np.load(Path(path), allow_pickle=False) as data:
        if str(data["version"]) != STATE_VERSION:
            raise ValueError(f"{path}: unsupported state version {data['version']}")
        return GraphState(data["z"], data["A"], data["S"], data["last_t"],
                          float(data["now"]), data["edge_t"], float(data["time_scale"]))
