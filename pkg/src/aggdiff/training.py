"""Point-process likelihood training.

Each event contributes ``-log lambda`` of the observed pair plus a Monte Carlo
estimate of the survival integral since the previous event: sampled non-event
pairs, both kinds, scaled up to all pairs and by the elapsed time.  The
likelihood clock ticks once per (mean inter-event interval * pair count).
Events are processed in order; gradients accumulate over a batch and flow
through embeddings updated inside the batch, which start from constants.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import diffmath as dm
from .backbone import ModelParams, conditional_intensity, pair_intensities
from .diffmath import Tape, Var
from .diffusion import DiffusionConfig, MaskStreams, process_event
from .events import Dataset, EventKind, EventRecord
from .graph import GraphState, init_state, savez_stable

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = "aggdiff-params-1"


class NumericalError(ArithmeticError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.0002
    epochs: int = 5
    batch_size: int = 200
    clip_norm: float = 100.0
    survival_samples: int = 5
    seed: int = 0

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError("lr must be non-negative")
        if self.batch_size < 1 or self.epochs < 0 or self.survival_samples < 0:
            raise ValueError("batch_size >= 1, epochs >= 0, survival_samples >= 0")
        if not self.clip_norm > 0:
            raise ValueError("clip_norm must be positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class TrainReport:
    epoch_loss: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    checkpoint: str | None = None

    def rows(self):
        return [(i + 1, loss, sec)
                for i, (loss, sec) in enumerate(zip(self.epoch_loss, self.epoch_seconds))]


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(np.sum(g * g) for g in grads.values())))


def clip_and_step(params: ModelParams, grads: dict[str, np.ndarray], lr: float,
                  clip_norm: float, moments: AdamState) -> float:
    """Clip the global gradient norm to ``clip_norm``, then take an Adam step.

    Returns the norm before clipping.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for {name}")
    norm = global_norm(grads)
    factor = clip_norm / norm if norm > clip_norm else 1.0
    moments.step += 1
    b1, b2 = moments.beta1, moments.beta2
    c1 = 1.0 - b1 ** moments.step
    c2 = 1.0 - b2 ** moments.step
    pvars = params.as_dict()
    for name, g in grads.items():
        g = g * factor
        m = b1 * moments.m.get(name, 0.0) + (1 - b1) * g
        v = b2 * moments.v.get(name, 0.0) + (1 - b2) * g * g
        moments.m[name], moments.v[name] = m, v
        p = pvars[name]
        p.value = p.value - lr * (m / c1) / (np.sqrt(v / c2) + moments.eps)
    return norm


def sample_pairs(rng: np.random.Generator, n: int, k: int, exclude: tuple[int, int]):
    """``k`` uniform unordered pairs of distinct nodes other than ``exclude``."""
    banned = frozenset(exclude)
    us, vs = [], []
    while len(us) < k:
        a, b = (int(x) for x in rng.integers(n, size=2))
        if a == b or frozenset((a, b)) == banned:
            continue
        us.append(a)
        vs.append(b)
    return us, vs


def event_loss(state: GraphState, params: ModelParams, event: EventRecord,
               rng: np.random.Generator | None, survival_samples: int) -> Var:
    """Negative log-likelihood contribution of ``event`` from the pre-event state."""
    nll = dm.scale(dm.log(conditional_intensity(state, params, event.u, event.v, event.kind)), -1.0)
    n = state.n_nodes
    n_pairs = n * (n - 1) // 2 - 1
    if survival_samples == 0 or n_pairs < 1:
        return nll
    # time runs in units of (mean event interval * number of pairs), so a pair
    # firing at the stream's average per-pair rate has intensity ~1
    elapsed = (event.t - state.now) / (state.time_scale * n_pairs)
    us, vs = sample_pairs(rng, n, survival_samples, (event.u, event.v))
    surv = [dm.total(pair_intensities(state, params, us, vs, kind)) for kind in EventKind]
    weight = elapsed * n_pairs / survival_samples
    return dm.add(nll, dm.scale(dm.add(*surv), weight))


class RunRngs:
    """Every random stream a run uses, derived from one seed."""

    def __init__(self, seed: int):
        ss = np.random.SeedSequence(seed)
        init, state, surv, masks, eval_masks = ss.spawn(5)
        self.param_seed = int(init.generate_state(1)[0])
        self.state_seed = int(state.generate_state(1)[0])
        self.survival = np.random.default_rng(surv)
        self.masks = MaskStreams.from_seed(masks)
        self.eval_masks_seed = eval_masks

    def eval_masks(self) -> MaskStreams:
        return MaskStreams.from_seed(self.eval_masks_seed)


def train_epoch(state: GraphState, params: ModelParams, events: list[EventRecord],
                train_cfg: TrainConfig, diff_cfg: DiffusionConfig, moments: AdamState,
                survival_rng: np.random.Generator, masks: MaskStreams) -> float:
    """Replay ``events`` through ``state`` with one update per batch.

    Returns the mean per-event loss.  ``state`` and ``params`` change in place.
    """
    total, count = 0.0, 0
    for start in range(0, len(events), train_cfg.batch_size):
        batch = events[start:start + train_cfg.batch_size]
        state.detach()
        tape = Tape()
        with tape:
            losses = []
            for ev in batch:
                losses.append(event_loss(state, params, ev, survival_rng,
                                         train_cfg.survival_samples))
                process_event(state, params, ev, diff_cfg, masks)
            batch_loss = dm.add(*losses)
        value = float(batch_loss.value)
        if not np.isfinite(value):
            raise NumericalError(f"non-finite loss in batch starting at event {start}")
        grads = tape.backward(batch_loss, params.as_dict())
        clip_and_step(params, grads, train_cfg.lr, train_cfg.clip_norm, moments)
        total += value
        count += len(batch)
    state.detach()
    if not np.all(np.isfinite(state.z)):
        raise NumericalError("non-finite embeddings after epoch")
    return total / max(count, 1)


def train(dataset: Dataset, params: ModelParams, train_cfg: TrainConfig,
          diff_cfg: DiffusionConfig, d: int, rngs: RunRngs | None = None,
          moments: AdamState | None = None) -> tuple[TrainReport, AdamState]:
    """Train for ``train_cfg.epochs``; the graph restarts from its initial state each epoch."""
    rngs = rngs or RunRngs(train_cfg.seed)
    moments = moments or AdamState()
    report = TrainReport()
    for epoch in range(train_cfg.epochs):
        t0 = time.perf_counter()
        state = init_state(dataset, d, rngs.state_seed)
        loss = train_epoch(state, params, dataset.train, train_cfg, diff_cfg, moments,
                           rngs.survival, rngs.masks)
        report.epoch_loss.append(loss)
        report.epoch_seconds.append(time.perf_counter() - t0)
        log.info("epoch %d: mean loss %.5f (%.1fs)", epoch + 1, loss, report.epoch_seconds[-1])
    return report, moments


def replay(state: GraphState, params: ModelParams, events: list[EventRecord],
           diff_cfg: DiffusionConfig, masks: MaskStreams | None = None) -> GraphState:
    """Run events through ``state`` without recording gradients."""
    for ev in events:
        process_event(state, params, ev, diff_cfg, masks)
    return state


# checkpoints ---------------------------------------------------------------

def save_checkpoint(path, params: ModelParams, moments: AdamState | None = None,
                    rng: np.random.Generator | None = None, meta: dict | None = None) -> None:
    payload = {f"param_{k}": v for k, v in params.arrays().items()}
    moments = moments or AdamState()
    for k, v in moments.m.items():
        payload[f"m_{k}"] = v
    for k, v in moments.v.items():
        payload[f"v_{k}"] = v
    extra = {
        "version": CHECKPOINT_VERSION,
        "activation": params.activation,
        "adam_step": moments.step,
        "rng_state": rng.bit_generator.state if rng is not None else None,
        "meta": meta or {},
    }
    savez_stable(path, header=json.dumps(extra, sort_keys=True), **payload)


def load_checkpoint(path) -> tuple[ModelParams, AdamState, dict]:
    """Returns params, optimizer moments and the header (meta, rng state)."""
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
        arrays = {k[len("param_"):]: data[k] for k in data.files if k.startswith("param_")}
        moments = AdamState(step=header["adam_step"])
        moments.m = {k[2:]: data[k] for k in data.files if k.startswith("m_")}
        moments.v = {k[2:]: data[k] for k in data.files if k.startswith("v_")}
    return ModelParams(arrays, header["activation"]), moments, header
