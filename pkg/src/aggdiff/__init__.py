"""Temporal point-process dynamic graph embeddings with an aggregation-diffusion update."""
from .backbone import ModelParams, conditional_intensity, init_params
from .diffusion import AD_BASE, AGGREGATION_ONLY, DiffusionConfig, process_event
from .events import ASSOC, COMM, Dataset, EventKind, EventRecord, SynthSpec, parse_events, synthesize_stream
from .evaluation import EvalReport, evaluate_stream, rank_event
from .experiment import RunConfig
from .graph import GraphState, init_state
from .training import TrainConfig, train, train_epoch

__version__ = "0.1.0"
