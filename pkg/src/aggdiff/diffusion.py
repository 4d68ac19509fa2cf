"""Diffusion step and the per-event update that combines it with aggregation.

After both participants of an event have re-computed their embeddings, each
one sends a message to selected neighbours, which fold it into their own
embedding.  ``DiffusionConfig`` carries every ablation switch.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import diffmath as dm
from .backbone import (ModelParams, aggregate_neighbors, conditional_intensity,
                       update_attention, update_interacting_node)
from .diffmath import Var
from .events import EventRecord
from .graph import GraphState, khop_neighbors

MESSAGES = ("node", "delta", "edge")
SELECTIONS = ("base", "v", "alpha", "beta", "gamma", "omega")
STRENGTHS = ("uniform", "attn")


@dataclass(frozen=True)
class DiffusionConfig:
    message: str = "node"
    hops: int = 1
    selection: str = "base"
    strength: str = "uniform"
    aggregation: bool = True
    diffusion: bool = True
    mask_p: float = 0.2
    skip_zero_message: bool = False

    def __post_init__(self):
        if self.message not in MESSAGES:
            raise ValueError(f"message must be one of {MESSAGES}")
        if self.selection not in SELECTIONS:
            raise ValueError(f"selection must be one of {SELECTIONS}")
        if self.strength not in STRENGTHS:
            raise ValueError(f"strength must be one of {STRENGTHS}")
        if self.hops < 1:
            raise ValueError("hops must be >= 1")
        if not 0.0 <= self.mask_p <= 1.0:
            raise ValueError("mask_p must lie in [0, 1]")

    @property
    def masks_aggregation(self) -> bool:
        return self.selection in ("alpha", "gamma", "omega")

    @property
    def masks_diffusion(self) -> bool:
        return self.selection in ("beta", "gamma", "omega")

    def label(self) -> str:
        if not self.diffusion:
            return "agg" if self.aggregation else "self"
        prefix = "AD" if self.aggregation else "D"
        return f"{prefix}-{self.message}-{self.selection}-{self.strength}-h{self.hops}"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DiffusionConfig":
        return cls(**d)


AGGREGATION_ONLY = DiffusionConfig(diffusion=False)
AD_BASE = DiffusionConfig()


class MaskStreams(NamedTuple):
    """Independent random streams for aggregation and diffusion masks."""

    agg: np.random.Generator
    diff: np.random.Generator

    @classmethod
    def from_seed(cls, seed) -> "MaskStreams":
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        a, b = ss.spawn(2)
        return cls(np.random.default_rng(a), np.random.default_rng(b))


class DiffusionMessage(NamedTuple):
    m: Var
    origin: int
    partner: int


def make_message(z_now: Var, z_prev: Var, z_partner: Var, u: int, v: int,
                 params: ModelParams, kind: str) -> DiffusionMessage:
    """Message node ``u`` pushes out after its event with ``v``.

    node: the new embedding; delta: its change since before the event;
    edge: a learned mix of both participants' new embeddings.
    """
    if kind == "node":
        m = z_now
    elif kind == "delta":
        m = dm.sub(z_now, z_prev)
    elif kind == "edge":
        m = dm.nonlinearity(dm.add(dm.affine(params.W_1, z_now), dm.affine(params.W_2, z_partner)),
                            params.activation)
    else:
        raise ValueError(f"unknown message kind {kind!r}")
    return DiffusionMessage(m, u, v)


def _oldest_first(state: GraphState, u: int, nodes: list[int]) -> list[int]:
    # non-neighbours (multi-hop) have no edge time and sort last
    def key(r):
        t = state.edge_t[u, r] if state.A[u, r] else math.inf
        return (t, r)
    return sorted(nodes, key=key)


def drop_oldest(state: GraphState, u: int, nodes, p: float) -> list[int]:
    nodes = sorted(nodes)
    n_drop = int(math.floor(p * len(nodes)))
    gone = set(_oldest_first(state, u, nodes)[:n_drop])
    return [r for r in nodes if r not in gone]


def drop_random(rng: np.random.Generator, nodes, p: float) -> list[int]:
    nodes = sorted(nodes)
    if not nodes:
        return nodes
    keep = rng.random(len(nodes)) >= p
    return [r for r, k in zip(nodes, keep) if k]


def select_targets(state: GraphState, u: int, v: int, config: DiffusionConfig,
                   rng: MaskStreams | None = None) -> set[int]:
    """Nodes that receive ``u``'s diffusion message for its event with ``v``."""
    if u == v:
        raise ValueError("u and v must differ")
    exclude = () if config.selection == "v" else (v,)
    cand = khop_neighbors(state, u, config.hops, exclude)
    if config.selection in ("beta", "gamma"):
        if rng is None:
            raise ValueError(f"selection {config.selection!r} needs random streams")
        return set(drop_random(rng.diff, cand, config.mask_p))
    if config.selection == "omega":
        return set(drop_oldest(state, u, cand, config.mask_p))
    return cand


def strength(state: GraphState, u: int, targets, rule: str) -> dict[int, float]:
    targets = sorted(targets)
    if not targets:
        return {}
    if rule == "uniform":
        return {r: 1.0 for r in targets}
    if rule == "attn":
        q = dm.softmax(state.S[u, targets]).value
        return dict(zip(targets, q.tolist()))
    raise ValueError(f"unknown strength rule {rule!r}")


def apply_diffusion(state: GraphState, params: ModelParams, msg: DiffusionMessage,
                    targets, q: dict[int, float]) -> None:
    """``z_r <- act(z_r + q_r * W_d m)`` for each target ``r``."""
    targets = sorted(targets)
    if msg.origin in targets:
        raise ValueError(f"node {msg.origin} cannot diffuse to itself")
    if not targets:
        return
    push = dm.affine(params.W_d, msg.m)
    for r in targets:
        z_r = dm.add(state.emb(r), dm.scale(push, q[r]))
        state.set_emb(r, dm.nonlinearity(z_r, params.activation))


def aggregation_members(state: GraphState, j: int, config: DiffusionConfig,
                        rng: MaskStreams | None) -> list[int]:
    members = [int(r) for r in np.flatnonzero(state.A[j])]
    if config.selection in ("alpha", "gamma"):
        if rng is None:
            raise ValueError(f"selection {config.selection!r} needs random streams")
        return drop_random(rng.agg, members, config.mask_p)
    if config.selection == "omega":
        return drop_oldest(state, j, members, config.mask_p)
    return members


def process_event(state: GraphState, params: ModelParams, event: EventRecord,
                  config: DiffusionConfig, rng: MaskStreams | None = None) -> Var:
    """Apply one event to ``state`` in place and return its intensity.

    Order: intensity from the pre-event embeddings; aggregation step for both
    participants from the same snapshot; write both; diffusion from u then v
    (v sees anything u's diffusion already changed); topology and attention
    update; clocks.
    """
    u, v, t = event.u, event.v, event.t
    if t < state.now:
        raise ValueError(f"event at t={t} is earlier than the stream clock {state.now}")
    lam = conditional_intensity(state, params, u, v, event.kind)

    before = {u: state.emb(u), v: state.emb(v)}
    fresh = {}
    for j in (u, v):
        h = None
        if config.aggregation:
            members = aggregation_members(state, j, config, rng)
            h = aggregate_neighbors(state, params, j, members)
        fresh[j] = update_interacting_node(state, params, j, t, h)
    for j in (u, v):
        state.set_emb(j, fresh[j])

    if config.diffusion:
        for j, other in ((u, v), (v, u)):
            msg = make_message(state.emb(j), before[j], state.emb(other), j, other,
                               params, config.message)
            if config.skip_zero_message and not np.any(msg.m.value):
                continue
            targets = select_targets(state, j, other, config, rng)
            near = [r for r in targets if state.A[j, r]]
            q = strength(state, j, near, config.strength)
            q.update({r: 1.0 for r in targets if not state.A[j, r]})
            apply_diffusion(state, params, msg, targets, q)

    update_attention(state, params, event, float(lam.value))
    state.last_t[u] = state.last_t[v] = t
    state.now = t
    return lam
