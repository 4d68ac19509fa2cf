import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aggdiff import diffmath as dm
from aggdiff.backbone import aggregate_neighbors, init_params, update_interacting_node
from aggdiff.diffmath import Var
from aggdiff.diffusion import (AD_BASE, AGGREGATION_ONLY, DiffusionConfig, DiffusionMessage,
                               MaskStreams, aggregation_members, apply_diffusion, make_message,
                               process_event, select_targets, strength)
from aggdiff.events import ASSOC, COMM, EventRecord
from aggdiff.graph import apply_association, khop_neighbors

from conftest import make_state, random_events, random_graph

# a=0 b=1 c=2 d=3 e=4 f=5 g=6; b bridges {a, f, g} and {c, d, e}
HUB_EDGES = [(0, 1), (5, 1), (6, 1), (1, 2), (2, 3), (2, 4), (3, 4)]


def test_config_validation_and_labels():
    with pytest.raises(ValueError):
        DiffusionConfig(hops=0)
    with pytest.raises(ValueError):
        DiffusionConfig(mask_p=1.5)
    with pytest.raises(ValueError):
        DiffusionConfig(selection="lambda")
    assert AD_BASE.label() == "AD-node-base-uniform-h1"
    assert AGGREGATION_ONLY.label() == "agg"
    assert DiffusionConfig(aggregation=False, diffusion=False).label() == "self"
    assert DiffusionConfig(aggregation=False).label().startswith("D-")
    assert DiffusionConfig.from_dict(AD_BASE.to_dict()) == AD_BASE


def test_message_kinds():
    p = init_params(3, 0)
    z_prev = Var(np.array([0.2, 0.4, 0.6]))
    z_now = Var(np.array([0.3, 0.1, 0.9]))
    partner = Var(np.array([0.5, 0.5, 0.5]))
    assert not np.any(make_message(z_prev, z_prev, partner, 0, 1, p, "delta").m.value)
    assert make_message(z_now, z_prev, partner, 0, 1, p, "node").m is z_now
    p.W_1.value[:] = 0.0
    p.W_2.value[:] = 0.0
    assert np.array_equal(make_message(z_now, z_prev, partner, 0, 1, p, "edge").m.value,
                          np.full(3, 0.5))
    with pytest.raises(ValueError):
        make_message(z_now, z_prev, partner, 0, 1, p, "blob")


def test_select_targets_examples():
    st_ = make_state(5, [(0, 1), (0, 2), (0, 3)])
    assert select_targets(st_, 0, 1, AD_BASE) == {2, 3}
    assert select_targets(st_, 0, 1, DiffusionConfig(selection="v")) == {1, 2, 3}
    assert select_targets(st_, 0, 1, DiffusionConfig(selection="alpha")) == {2, 3}
    with pytest.raises(ValueError):
        select_targets(st_, 0, 0, AD_BASE)


def test_select_targets_omega_drops_oldest():
    st_ = make_state(7, [])
    for r, t in zip(range(1, 7), [5.0, 1.0, 3.0, 2.0, 4.0, 0.5]):
        st_.now = t
        apply_association(st_, 0, r, t)
    # candidates exclude v=6 -> {1..5}; floor(0.2*5) = 1 oldest (node 2, t=1.0) goes
    assert select_targets(st_, 0, 6, DiffusionConfig(selection="omega")) == {1, 3, 4, 5}


def test_random_masks_use_separate_streams():
    st_ = make_state(30, [(0, r) for r in range(1, 30)])
    cfg = DiffusionConfig(selection="gamma", mask_p=0.5)
    a = MaskStreams.from_seed(3)
    b = MaskStreams.from_seed(3)
    # drawing aggregation masks must not shift the diffusion stream
    aggregation_members(st_, 0, cfg, a)
    assert select_targets(st_, 0, 1, cfg, a) == select_targets(st_, 0, 1, cfg, b)
    with pytest.raises(ValueError):
        select_targets(st_, 0, 1, cfg, None)


def test_strength_examples():
    st_ = make_state(4, [(0, 1), (0, 2), (0, 3)])
    assert strength(st_, 0, [1, 2], "uniform") == {1: 1.0, 2: 1.0}
    assert strength(st_, 0, [3], "attn") == {3: 1.0}
    q = strength(st_, 0, [1, 2], "attn")
    assert q[1] == pytest.approx(0.5) and q[2] == pytest.approx(0.5)
    assert strength(st_, 0, [], "attn") == {}


def test_apply_diffusion_examples():
    p = init_params(1, 0)
    st_ = make_state(3, [(0, 1)], d=1)
    st_.z[:] = 0.5
    before = st_.z.copy()
    apply_diffusion(st_, p, DiffusionMessage(Var(np.array([0.3])), 0, 2), [], {})
    assert np.array_equal(st_.z, before)
    p.W_d.value = np.eye(1)
    apply_diffusion(st_, p, DiffusionMessage(Var(np.array([0.3])), 0, 2), [1], {1: 1.0})
    assert st_.z[1, 0] == pytest.approx(0.689974, abs=1e-6)
    apply_diffusion(st_, p, DiffusionMessage(Var(np.array([0.0])), 0, 2), [2], {2: 1.0})
    assert st_.z[2, 0] == pytest.approx(1 / (1 + np.exp(-0.5)), abs=1e-15)
    with pytest.raises(ValueError):
        apply_diffusion(st_, p, DiffusionMessage(Var(np.array([0.3])), 0, 2), [0], {0: 1.0})


def test_hub_graph_event_reaches_neighbours():
    st_ = make_state(7, HUB_EDGES, d=4, seed=3)
    p = init_params(4, 1)
    before = st_.z.copy()
    process_event(st_, p, EventRecord(2, 4, 1.0, COMM), AD_BASE)
    changed = {r for r in range(7) if not np.array_equal(before[r], st_.z[r])}
    # c, e themselves plus their neighbours b and d; a, f, g untouched
    assert changed == {1, 2, 3, 4}


def test_self_variant_only_uses_own_terms():
    st_ = make_state(7, HUB_EDGES, d=4, seed=3)
    p = init_params(4, 1)
    cfg = DiffusionConfig(aggregation=False, diffusion=False)
    snap = st_.copy()
    process_event(st_, p, EventRecord(2, 4, 1.5, COMM), cfg)
    for j in (2, 4):
        want = dm.sigmoid(p.W_r.value @ snap.z[j] + p.W_t.value * 1.5).value
        assert np.array_equal(st_.z[j], want)
    assert np.array_equal(np.delete(st_.z, [2, 4], axis=0), np.delete(snap.z, [2, 4], axis=0))


def test_out_of_order_event():
    st_ = make_state(3, [])
    p = init_params(4, 0)
    st_.now = 5.0
    with pytest.raises(ValueError):
        process_event(st_, p, EventRecord(0, 1, 4.0, COMM), AD_BASE)


def test_skip_zero_message():
    st_ = make_state(4, [(0, 1), (0, 2), (1, 3)], d=3)
    p = init_params(3, 0)
    p.W_r.value = np.zeros((3, 3))
    p.W_s.value = np.zeros((3, 3))
    p.W_t.value = np.zeros(3)
    st_.z[:] = 0.5  # the update maps 0.5 -> sigmoid(0) = 0.5, so delta = 0
    cfg = DiffusionConfig(message="delta", skip_zero_message=True)
    process_event(st_, p, EventRecord(0, 1, 1.0, COMM), cfg)
    assert np.all(st_.z == 0.5)
    process_event(st_, p, EventRecord(0, 1, 2.0, COMM), DiffusionConfig(message="delta"))
    assert st_.z[2, 0] == pytest.approx(1 / (1 + np.exp(-0.5)))


def _random_setup(seed, n_lo=4, n_hi=12):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(n_lo, n_hi))
    st_ = make_state(n, random_graph(rng, n, float(rng.uniform(0.2, 0.6))), d=3, seed=seed % 1000)
    return rng, n, st_, init_params(3, seed % 991)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(["node", "delta", "edge"]),
       st.sampled_from(["uniform", "attn"]), st.integers(1, 3))
def test_partner_gets_no_diffusion_and_outsiders_untouched(seed, message, rule, hops):
    rng, n, st_, p = _random_setup(seed)
    cfg = DiffusionConfig(message=message, strength=rule, hops=hops)
    for ev in random_events(rng, n, 5):
        snap = st_.copy()
        agg = {j: update_interacting_node(snap, p, j, ev.t, aggregate_neighbors(snap, p, j)).value
               for j in (ev.u, ev.v)}
        reach = (khop_neighbors(snap, ev.u, hops, {ev.v}) | khop_neighbors(snap, ev.v, hops, {ev.u})
                 | {ev.u, ev.v})
        process_event(st_, p, ev, cfg)
        assert st_.z[ev.v].tobytes() == agg[ev.v].tobytes()
        assert st_.z[ev.u].tobytes() == agg[ev.u].tobytes()
        for r in set(range(n)) - reach:
            assert st_.z[r].tobytes() == snap.z[r].tobytes()


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_hop_monotone_targets(seed):
    rng, n, st_, _ = _random_setup(seed, 4, 20)
    u, v = (int(x) for x in rng.choice(n, size=2, replace=False))
    for k in range(1, 5):
        lo = select_targets(st_, u, v, DiffusionConfig(hops=k))
        hi = select_targets(st_, u, v, DiffusionConfig(hops=k + 1))
        assert lo <= hi | {v}


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_attention_strength_sums_to_one(seed):
    rng, n, st_, _ = _random_setup(seed, 4, 20)
    st_.S = np.where(st_.A, rng.uniform(0, 5, size=st_.S.shape), 0.0)
    u = int(rng.integers(n))
    targets = khop_neighbors(st_, u, 1)
    if targets:
        assert abs(sum(strength(st_, u, targets, "attn").values()) - 1.0) <= 1e-9


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1),
       st.sampled_from(["base", "v", "alpha", "beta", "gamma", "omega"]))
def test_replay_deterministic(seed, selection):
    rng, n, st_, p = _random_setup(seed)
    events = random_events(rng, n, 15)
    cfg = DiffusionConfig(selection=selection, strength="attn")
    a, b = st_.copy(), st_.copy()
    ma, mb = MaskStreams.from_seed(seed), MaskStreams.from_seed(seed)
    for ev in events:
        process_event(a, p, ev, cfg, ma)
        process_event(b, p, ev, cfg, mb)
    assert a.equals(b)


def test_include_v_reaches_partner():
    st_ = make_state(4, [(0, 1), (0, 2)], d=3)
    p = init_params(3, 0)
    snap = st_.copy()
    agg_v = update_interacting_node(snap, p, 1, 1.0, aggregate_neighbors(snap, p, 1)).value
    process_event(st_, p, EventRecord(0, 1, 1.0, COMM), DiffusionConfig(selection="v"))
    assert not np.array_equal(st_.z[1], agg_v)


def test_association_adds_edge_after_diffusion():
    st_ = make_state(4, [(0, 2)], d=3)
    p = init_params(3, 0)
    before = st_.z.copy()
    process_event(st_, p, EventRecord(0, 1, 1.0, ASSOC), AD_BASE)
    assert st_.A[0, 1] and st_.A[1, 0]
    # node 2 was a target of 0; node 3 is isolated
    assert not np.array_equal(st_.z[2], before[2]) and np.array_equal(st_.z[3], before[3])
