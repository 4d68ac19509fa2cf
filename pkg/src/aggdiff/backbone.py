"""DyRep-style aggregation step: node update, intensity, attention update."""
from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from . import diffmath as dm
from .diffmath import Var
from .events import ASSOC, EventKind, EventRecord
from .graph import GraphState, apply_association

MATRIX_NAMES = ("W_s", "W_r", "W_h", "W_d", "W_1", "W_2")
PARAM_NAMES = MATRIX_NAMES + ("W_t", "omega", "log_psi")


class ModelParams:
    """Trainable weights.

    ``omega`` has one row of length 2d per event kind and ``log_psi`` one entry
    per kind (rows follow ``EventKind.index``).  The rate scale is stored in log
    space so it stays positive under unconstrained updates.
    """

    def __init__(self, arrays: dict[str, np.ndarray], activation: str = "sigmoid"):
        missing = set(PARAM_NAMES) - set(arrays)
        if missing:
            raise ValueError(f"missing parameters: {sorted(missing)}")
        for name in PARAM_NAMES:
            setattr(self, name, dm.param(arrays[name]))
        self.activation = activation

    @property
    def dim(self) -> int:
        return self.W_t.value.shape[0]

    def psi(self) -> np.ndarray:
        return np.exp(self.log_psi.value)

    def as_dict(self) -> dict[str, Var]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name).value.copy() for name in PARAM_NAMES}

    def copy(self) -> "ModelParams":
        return ModelParams(self.arrays(), self.activation)


def init_params(d: int, seed: int = 0, activation: str = "sigmoid") -> ModelParams:
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(d)
    arrays = {name: rng.uniform(-bound, bound, size=(d, d)) for name in MATRIX_NAMES}
    arrays["W_t"] = rng.uniform(-bound, bound, size=d)
    arrays["omega"] = rng.uniform(-bound / np.sqrt(2), bound / np.sqrt(2), size=(2, 2 * d))
    arrays["log_psi"] = np.zeros(2)
    return ModelParams(arrays, activation)


def attention_weights(state: GraphState, u: int, members: Sequence[int]) -> np.ndarray:
    return dm.softmax(state.S[u, list(members)]).value


def aggregate_neighbors(state: GraphState, params: ModelParams, u: int,
                        members: Sequence[int] | None = None) -> Var:
    """Attention-weighted sum of ``W_h z_r`` over the neighbours of ``u``.

    ``members`` restricts the sum to a subset (masked aggregation); the softmax
    is taken over whatever survives.
    """
    if members is None:
        members = np.flatnonzero(state.A[u])
    members = [int(r) for r in members]
    if not members:
        return Var(np.zeros(state.dim))
    w = attention_weights(state, u, members)
    pooled = dm.weighted_sum([state.emb(r) for r in members], w)
    return dm.affine(params.W_h, pooled)


def update_interacting_node(state: GraphState, params: ModelParams, u: int, t: float,
                            h: Var | None = None) -> Var:
    """New embedding of an event participant, computed from the current state.

    ``h`` is the neighbourhood aggregate; ``None`` drops the aggregation term.
    The result is returned, not written.
    """
    if t < state.last_t[u]:
        raise ValueError(f"event at t={t} precedes node {u}'s last event at {state.last_t[u]}")
    elapsed = (t - state.last_t[u]) / state.time_scale
    terms = [dm.affine(params.W_r, state.emb(u)), dm.scale(params.W_t, elapsed)]
    if h is not None:
        terms.insert(0, dm.affine(params.W_s, h))
    return dm.nonlinearity(dm.add(*terms), params.activation)


def conditional_intensity(state: GraphState, params: ModelParams, u: int, v: int,
                          k: EventKind) -> Var:
    if u == v:
        raise ValueError("intensity of a node with itself")
    logit = dm.dot(dm.take(params.omega, k.index), dm.concat(state.emb(u), state.emb(v)))
    return dm.softplus_scaled(logit, dm.exp(dm.take(params.log_psi, k.index)))


def pair_intensities(state: GraphState, params: ModelParams, us: Sequence[int],
                     vs: Sequence[int], k: EventKind) -> Var:
    """Vector of intensities for the pairs ``zip(us, vs)``."""
    d = state.dim
    omega_k = dm.take(params.omega, k.index)
    left = dm.affine(dm.stack([state.emb(a) for a in us]), dm.segment(omega_k, 0, d))
    right = dm.affine(dm.stack([state.emb(b) for b in vs]), dm.segment(omega_k, d, 2 * d))
    return dm.softplus_scaled(left + right, dm.exp(dm.take(params.log_psi, k.index)))


def update_attention(state: GraphState, params: ModelParams, event: EventRecord,
                     lam: float) -> None:
    """Update ``S`` (and ``A`` for a new association) after an event.

    A first association adds the edge and gives the new neighbour weight
    ``1/deg + lam`` before renormalising.  An event between existing
    neighbours raises both directed entries by ``lam`` and renormalises the two
    rows.  Communication between non-neighbours changes nothing.
    """
    u, v = event.u, event.v
    if event.kind is ASSOC and not state.A[u, v]:
        apply_association(state, u, v, event.t, weight=lam)
        return
    if not state.A[u, v]:
        return
    for j, i in ((u, v), (v, u)):
        row = np.where(state.A[j], state.S[j], 0.0)
        row[i] += lam
        state.S[j] = row / row.sum()
