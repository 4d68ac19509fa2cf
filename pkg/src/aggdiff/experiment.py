"""Run configuration and the train-then-evaluate pipeline shared by the CLI."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from .backbone import ModelParams, init_params
from .diffusion import DiffusionConfig
from .evaluation import EvalReport, evaluate_stream, fingerprint
from .events import (DataError, Dataset, SynthSpec, parse_events, parse_kind_codes,
                     split_fraction, synthesize_stream)
from .graph import GraphState, init_state
from .training import AdamState, RunRngs, TrainConfig, TrainReport, replay, train


@dataclass(frozen=True)
class DataConfig:
    events: str
    initial: str | None = None
    split_at: float | None = None
    init_before: float | None = None
    kind_codes: str | None = None
    min_prob: float | None = None
    n_nodes: int | None = None


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig | None = None
    synth: SynthSpec | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    dim: int = 32
    seed: int = 0
    test_fraction: float = 0.2
    activation: str = "sigmoid"
    out: str | None = None

    def __post_init__(self):
        if (self.data is None) == (self.synth is None):
            raise ValueError("give exactly one of a dataset or a synth spec")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if not 0 <= self.test_fraction < 1:
            raise ValueError("test_fraction must lie in [0, 1)")

    def to_dict(self) -> dict:
        return {
            "data": dataclasses.asdict(self.data) if self.data else None,
            "synth": self.synth.to_dict() if self.synth else None,
            "train": self.train.to_dict(),
            "diffusion": self.diffusion.to_dict(),
            "dim": self.dim,
            "seed": self.seed,
            "test_fraction": self.test_fraction,
            "activation": self.activation,
            "out": self.out,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown run config fields: {sorted(unknown)}")
        if d.get("data"):
            d["data"] = DataConfig(**d["data"])
        if d.get("synth"):
            d["synth"] = SynthSpec.from_dict(d["synth"])
        d["train"] = TrainConfig(**d.get("train", {}))
        d["diffusion"] = DiffusionConfig.from_dict(d.get("diffusion", {}))
        return cls(**d)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def fingerprint(self) -> str:
        d = self.to_dict()
        d.pop("out")
        return fingerprint(d)


def load_dataset(cfg: RunConfig) -> Dataset:
    if cfg.synth is not None:
        ds = synthesize_stream(cfg.synth)
        train, test = split_fraction(ds.train, cfg.test_fraction)
        return Dataset(ds.n_nodes, ds.initial_associations, train, test)
    dc = cfg.data
    codes = parse_kind_codes(dc.kind_codes) if dc.kind_codes else None
    ds = parse_events(dc.events, dc.initial, n_nodes=dc.n_nodes, kind_codes=codes,
                      min_prob=dc.min_prob, init_before=dc.init_before, split_at=dc.split_at)
    if dc.split_at is None and cfg.test_fraction > 0:
        train, test = split_fraction(ds.train, cfg.test_fraction)
        ds = Dataset(ds.n_nodes, ds.initial_associations, train, test, ds.rejected)
    if not ds.train:
        raise DataError("dataset has no training events")
    return ds


def fit(cfg: RunConfig, dataset: Dataset) -> tuple[ModelParams, TrainReport, AdamState, RunRngs]:
    rngs = RunRngs(cfg.seed)
    params = init_params(cfg.dim, rngs.param_seed, cfg.activation)
    report, moments = train(dataset, params, cfg.train, cfg.diffusion, cfg.dim, rngs)
    return params, report, moments, rngs


def warm_state(cfg: RunConfig, dataset: Dataset, params: ModelParams,
               rngs: RunRngs) -> tuple[GraphState, object]:
    """State after replaying the training stream, plus the mask streams to continue with."""
    masks = rngs.eval_masks()
    state = init_state(dataset, cfg.dim, rngs.state_seed)
    replay(state, params, dataset.train, cfg.diffusion, masks)
    return state, masks


def evaluate(cfg: RunConfig, dataset: Dataset, params: ModelParams, rngs: RunRngs,
             on: str = "test") -> EvalReport:
    if on == "test":
        state, masks = warm_state(cfg, dataset, params, rngs)
        events = dataset.test
    elif on == "train":
        masks = rngs.eval_masks()
        state = init_state(dataset, cfg.dim, rngs.state_seed)
        events = dataset.train
    else:
        raise ValueError(f"unknown evaluation split {on!r}")
    report = evaluate_stream(state, params, events, cfg.diffusion, masks, seed=cfg.seed)
    report.config_fingerprint = cfg.fingerprint()
    return report


def fit_and_evaluate(cfg: RunConfig, dataset: Dataset | None = None):
    dataset = dataset if dataset is not None else load_dataset(cfg)
    params, train_report, _, rngs = fit(cfg, dataset)
    return train_report, evaluate(cfg, dataset, params, rngs)
