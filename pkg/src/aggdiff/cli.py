"""Command-line entry point: ``aggdiff {synth,train,eval,ablate}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import itertools
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .diffusion import MESSAGES, SELECTIONS, STRENGTHS, DiffusionConfig
from .events import DataError, load_synth_spec, write_synth
from .experiment import DataConfig, RunConfig, evaluate, fit, fit_and_evaluate, load_dataset
from .training import NumericalError, RunRngs, load_checkpoint, save_checkpoint

log = logging.getLogger("aggdiff")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3

AXES = {
    "message": list(MESSAGES),
    "selection": list(SELECTIONS),
    "strength": list(STRENGTHS),
    "hops": [1, 2, 3],
    "aggregation": [True, False],
    "diffusion": [True, False],
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return text == "on"


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("data")
    g.add_argument("--config", help="run config JSON; flags override its values")
    g.add_argument("--synth", help="synthetic stream spec JSON")
    g.add_argument("--events", help="events CSV (u,v,t,kind[,prob])")
    g.add_argument("--initial", help="initial edges CSV (u,v)")
    g.add_argument("--split-at", type=float, help="train/test time boundary")
    g.add_argument("--test-fraction", type=float, help="chronological test share (default 0.2)")
    g.add_argument("--init-before", type=float,
                   help="associations before this time seed the initial graph")
    g.add_argument("--kind-codes", help="extra kind tokens, e.g. '0=assoc,1=comm'")
    g.add_argument("--min-prob", type=float, help="drop rows whose prob column is lower")
    g.add_argument("--n-nodes", type=int)

    g = p.add_argument_group("mechanism")
    g.add_argument("--message", choices=MESSAGES)
    g.add_argument("--hops", type=int)
    g.add_argument("--selection", choices=SELECTIONS)
    g.add_argument("--mask-p", type=float)
    g.add_argument("--strength", choices=STRENGTHS)
    g.add_argument("--aggregation", type=_on_off, metavar="{on,off}")
    g.add_argument("--diffusion", type=_on_off, metavar="{on,off}")
    g.add_argument("--skip-zero-message", action="store_true", default=None)

    g = p.add_argument_group("training")
    g.add_argument("--dim", type=int)
    g.add_argument("--lr", type=float)
    g.add_argument("--epochs", type=int)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--clip", type=float)
    g.add_argument("--survival-samples", type=int)
    g.add_argument("--activation", choices=("sigmoid", "tanh"))
    g.add_argument("--seed", type=int)
    g.add_argument("--out", help="output directory")


def build_config(args) -> RunConfig:
    """Defaults, then the ``--config`` file, then explicit flags."""
    base = {}
    if args.config:
        with open(args.config) as fh:
            base = json.load(fh)
        base.pop("status", None)

    if args.synth and args.events:
        raise UsageError("--synth and --events are mutually exclusive")
    if args.synth:
        base["synth"] = load_synth_spec(args.synth).to_dict()
        base["data"] = None
    data_flags = {k: getattr(args, k) for k in ("initial", "split_at", "init_before",
                                                "kind_codes", "min_prob", "n_nodes")}
    if args.events:
        base["data"] = {"events": args.events, **{k: v for k, v in data_flags.items() if v is not None}}
        base["synth"] = None
    elif base.get("data"):
        base["data"].update({k: v for k, v in data_flags.items() if v is not None})

    diff = dict(base.get("diffusion", {}))
    for key in ("message", "hops", "selection", "mask_p", "strength", "aggregation",
                "diffusion", "skip_zero_message"):
        if getattr(args, key) is not None:
            diff[key] = getattr(args, key)
    base["diffusion"] = diff

    train = dict(base.get("train", {}))
    for flag, key in (("lr", "lr"), ("epochs", "epochs"), ("batch_size", "batch_size"),
                      ("clip", "clip_norm"), ("survival_samples", "survival_samples")):
        if getattr(args, flag) is not None:
            train[key] = getattr(args, flag)
    for key in ("dim", "seed", "test_fraction", "activation", "out"):
        if getattr(args, key) is not None:
            base[key] = getattr(args, key)
    train["seed"] = base.get("seed", 0)
    base["train"] = train
    if not base.get("data") and not base.get("synth"):
        raise UsageError("no data: pass --synth, --events or --config")
    try:
        return RunConfig.from_dict(base)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, DataError):
            raise
        raise UsageError(str(exc)) from None


# commands ------------------------------------------------------------------

def cmd_synth(spec_path, out) -> tuple[Path, Path]:
    spec = load_synth_spec(spec_path)
    paths = write_synth(spec, out)
    log.info("wrote %s and %s", *paths)
    return paths


def _write_curve(path: Path, report) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "mean_loss", "seconds"])
        w.writerows(report.rows())


def cmd_train(cfg: RunConfig):
    out = Path(cfg.out or "run")
    out.mkdir(parents=True, exist_ok=True)
    run_doc = cfg.to_dict()
    (out / "run.json").write_text(json.dumps(run_doc, indent=2) + "\n")
    dataset = load_dataset(cfg)
    try:
        params, report, moments, rngs = fit(cfg, dataset)
    except NumericalError:
        run_doc["status"] = "failed"
        (out / "run.json").write_text(json.dumps(run_doc, indent=2) + "\n")
        (out / "FAILED").write_text("training aborted on a numerical failure\n")
        raise
    ckpt = out / "params.npz"
    meta = {"run": cfg.replace(out=None).to_dict(), "n_nodes": dataset.n_nodes, "dim": cfg.dim}
    save_checkpoint(ckpt, params, moments, rngs.survival, meta)
    report.checkpoint = str(ckpt)
    _write_curve(out / "training_curve.csv", report)
    (out / "train_report.json").write_text(json.dumps(
        {"epoch_loss": report.epoch_loss, "epoch_seconds": report.epoch_seconds,
         "checkpoint": "params.npz", "dataset": dataset.summary()}, indent=2) + "\n")
    return report


def cmd_eval(checkpoint, cfg: RunConfig | None = None, on: str = "test", out=None):
    checkpoint = Path(checkpoint)
    if not checkpoint.exists():
        raise DataError(f"checkpoint not found: {checkpoint}")
    params, _, header = load_checkpoint(checkpoint)
    if cfg is None:
        cfg = RunConfig.from_dict(header["meta"]["run"])
    dataset = load_dataset(cfg)
    if params.dim != cfg.dim:
        raise DataError(f"checkpoint has dim {params.dim} but the run config asks for {cfg.dim}")
    ck_nodes = header["meta"].get("n_nodes")
    if ck_nodes is not None and ck_nodes != dataset.n_nodes:
        raise DataError(f"checkpoint was trained on {ck_nodes} nodes but the data has "
                        f"{dataset.n_nodes}")
    report = evaluate(cfg, dataset, params, RunRngs(cfg.seed), on=on)
    report.write(Path(out) if out else checkpoint.parent)
    return report


def _cell(args):
    cfg, variant = args
    try:
        _, rep = fit_and_evaluate(cfg)
        if cfg.out:
            rep.write(cfg.out)
        ok = math.isfinite(rep.mar) and math.isfinite(rep.hit10)
        return variant, cfg.seed, rep.mar, rep.hit10, "ok" if ok else "failed"
    except (NumericalError, FloatingPointError, ValueError) as exc:
        log.warning("cell %s seed %d failed: %s", variant, cfg.seed, exc)
        return variant, cfg.seed, "", "", "failed"


def parse_axis(spec: str) -> tuple[str, list]:
    name, _, values = spec.partition("=")
    name = name.strip().replace("-", "_")
    if name not in AXES:
        raise UsageError(f"unknown ablation axis {name!r}; choose from {sorted(AXES)}")
    if not values:
        return name, list(AXES[name])
    out = []
    for v in values.split(","):
        v = v.strip()
        if name == "hops":
            out.append(int(v))
        elif name in ("aggregation", "diffusion"):
            out.append(_on_off(v))
        elif v in AXES[name]:
            out.append(v)
        else:
            raise UsageError(f"bad value {v!r} for axis {name}")
    return name, out


def ablation_cells(base: RunConfig, axes: list[tuple[str, list]], seeds: list[int]):
    names = [a for a, _ in axes]
    grid = list(itertools.product(*(vals for _, vals in axes))) or [()]
    out_root = Path(base.out) if base.out else None
    for combo in grid:
        diff = dataclasses.replace(base.diffusion, **dict(zip(names, combo)))
        variant = diff.label()
        for seed in seeds:
            cell_out = str(out_root / "cells" / f"{variant}_s{seed}") if out_root else None
            cfg = base.replace(diffusion=diff, seed=seed, out=cell_out,
                               train=dataclasses.replace(base.train, seed=seed))
            yield cfg, variant


def cmd_ablate(base: RunConfig, axes: list[tuple[str, list]], seeds: list[int] | None = None,
               jobs: int = 1):
    seeds = seeds or [base.seed]
    cells = list(ablation_cells(base, axes, seeds))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_cell, cells))
    else:
        rows = [_cell(c) for c in cells]
    if base.out:
        out = Path(base.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "run.json").write_text(json.dumps(
            {**base.to_dict(), "axes": [[n, v] for n, v in axes], "seeds": seeds}, indent=2) + "\n")
        with open(out / "summary.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["variant", "seed", "MAR", "HIT10", "status"])
            w.writerows(rows)
    return rows


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="aggdiff", description="Train and evaluate aggregation-diffusion dynamic graph models.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic stream as CSV")
    s.add_argument("spec", help="synth spec JSON")
    s.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train a model")
    _add_run_flags(t)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("--on", choices=("test", "train"), default="test")
    _add_run_flags(e)

    a = sub.add_parser("ablate", help="run an ablation matrix")
    _add_run_flags(a)
    a.add_argument("--axis", action="append", default=[],
                   help="axis name, optionally '=v1,v2'; repeatable")
    a.add_argument("--seeds", help="comma-separated seeds")
    a.add_argument("--jobs", type=int, default=1)
    return p


def _has_run_flags(args) -> bool:
    return any(getattr(args, k, None) is not None for k in ("config", "synth", "events"))


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            cmd_synth(args.spec, args.out)
        elif args.command == "train":
            t0 = time.perf_counter()
            report = cmd_train(build_config(args))
            print(f"trained {len(report.epoch_loss)} epochs in {time.perf_counter() - t0:.1f}s; "
                  f"final mean loss {report.epoch_loss[-1] if report.epoch_loss else float('nan'):.4f}")
        elif args.command == "eval":
            cfg = None
            if _has_run_flags(args):
                cfg = build_config(args)
            rep = cmd_eval(args.checkpoint, cfg, on=args.on, out=args.out)
            print(f"MAR {rep.mar:.3f}  HIT@10 {rep.hit10:.3f}  ({len(rep.ranks)} ranks)")
        elif args.command == "ablate":
            base = build_config(args)
            axes = [parse_axis(a) for a in args.axis]
            seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else None
            rows = cmd_ablate(base, axes, seeds, args.jobs)
            failed = sum(r[4] != "ok" for r in rows)
            print(f"{len(rows)} cells, {failed} failed")
    except UsageError as exc:
        print(f"aggdiff: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as exc:
        print(f"aggdiff: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        print(f"aggdiff: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
