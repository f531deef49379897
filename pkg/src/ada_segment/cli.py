"""Command-line entry point: ``ada-segment {explore,transfer,baseline,oracle,report}``.

Exit status is 0 on success, 1 for usage or configuration errors and 2 for
runtime failures such as a diverging trainee or an inadmissible task.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Sequence

from .baselines import (
    DEFAULT_GRIDS,
    InadmissibleTaskError,
    oracle_certify,
    run_grid,
    run_pbt_like,
    run_random,
    run_static,
    run_uniform,
    write_fixture,
)
from .core import ConfigError, DimensionError, DivergenceError, RunConfig, RunLog, validate_config
from .ensemble import PolicyEnsemble
from .orchestrator import explore, resolve_spec, transfer_train
from .trainee import TraineeSpec

logger = logging.getLogger("ada_segment")

BASELINE_KINDS = ("uniform", "grid", "pbt", "random")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse would exit with 2
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# -- summaries (derived from the log only) -----------------------------------


def summarize_explore(log: RunLog) -> dict:
    cps = log.of_type("checkpoint")
    pseudo = [r for r in log.of_type("epoch") if r["e"] == 0]
    return {
        "n_checkpoints": len(cps),
        "pseudo_epoch_score": pseudo[0]["score"] if pseudo else None,
        "best_scores": [r["best_score"] for r in cps],
        "best_indices": [r["best_index"] for r in cps],
        "best_weights": [r["applied"][r["best_index"]] for r in cps],
        "final_score": cps[-1]["best_score"] if cps else None,
    }


def summarize_schedule(log: RunLog) -> dict:
    epochs = [r for r in log.of_type("epoch") if r["e"] > 0]
    return {
        "n_epochs": len(epochs),
        "epoch_scores": [r["score"] for r in epochs],
        "weights": [r["weights"] for r in epochs],
        "final_score": epochs[-1]["score"] if epochs else None,
    }


def summarize_pbt(log: RunLog) -> dict:
    cps = log.of_type("checkpoint")
    return {
        "n_checkpoints": len(cps),
        "best_scores": [max(r["scores"]) for r in cps],
        "final_score": max(cps[-1]["scores"]) if cps else None,
    }


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _write_json(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# -- helpers -------------------------------------------------------------------


def load_config(args) -> RunConfig:
    path = Path(args.config)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    try:
        config = RunConfig.load(path)
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
    if getattr(args, "seed", None) is not None:
        config = config.with_(master_seed=args.seed)
    if getattr(args, "epochs", None) is not None:
        config = config.with_(E=args.epochs)
    validate_config(config)
    return config


def load_spec(config: RunConfig, args) -> TraineeSpec:
    if getattr(args, "trainee", None):
        path = Path(args.trainee)
        if not path.is_file():
            raise UsageError(f"trainee spec file not found: {path}")
        spec = TraineeSpec.from_dict(json.loads(path.read_text()))
    else:
        spec = resolve_spec(config)
    if getattr(args, "rescale", None):
        factors = [float(x) for x in args.rescale.split(",")]
        if len(factors) != spec.n:
            raise DimensionError(f"loss dimension mismatch: {len(factors)} factors for {spec.n} losses")
        spec = spec.rescaled(factors)
    return spec


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _meta(config: RunConfig, spec: TraineeSpec, method: str) -> dict:
    return {"method": method, "task_kind": spec.task_kind, "seed": config.master_seed,
            "n": spec.n, "scales": list(spec.scales)}


# -- commands --------------------------------------------------------------------


def cmd_explore(args) -> int:
    config = load_config(args)
    spec = load_spec(config, args)
    out = _out_dir(args)
    result = explore(config, spec, parallel=args.parallel)
    result.log.write(out / "run.jsonl")
    result.ensemble.save(out / "ensemble.bin")
    log = RunLog.read(out / "run.jsonl")
    summary = {**_meta(config, spec, "ada-segment-a"), "T": config.T, **summarize_explore(log)}
    _write_json(out / "summary.json", summary)
    n_eff = config.n_effective
    rows = []
    for r in log.of_type("checkpoint"):
        rows.append([r["t"], *r["applied"][r["best_index"]], *r["mu"]])
    _write_csv(out / "weights_trajectory.csv",
               ["t", *[f"lambda_{i}" for i in range(n_eff)], *[f"mu_{i}" for i in range(n_eff)]], rows)
    print(f"explore: {summary['n_checkpoints']} checkpoints, final best score {summary['final_score']:.4f}")
    return 0


def cmd_transfer(args) -> int:
    config = load_config(args)
    spec = load_spec(config, args)
    out = _out_dir(args)
    ens_path = Path(args.ensemble)
    if not ens_path.is_file():
        raise UsageError(f"ensemble file not found: {ens_path}")
    ensemble = PolicyEnsemble.load(ens_path)
    if args.final_only:
        ensemble = ensemble.final()
    _, log = transfer_train(ensemble, spec, config.E, config.master_seed, config.loss_groups)
    log.write(out / "run.jsonl")
    log = RunLog.read(out / "run.jsonl")
    method = "single-snapshot" if args.final_only else "ada-segment"
    summary = {**_meta(config, spec, method), "E": config.E, "T": ensemble.T, **summarize_schedule(log)}
    _write_json(out / "summary.json", summary)
    steps = log.of_type("transfer_step")
    _write_csv(out / "weights_trajectory.csv",
               ["e", *[f"lambda_{i}" for i in range(ensemble.n)]],
               [[r["e"], *r["weights"]] for r in steps])
    print(f"transfer: {summary['n_epochs']} epochs, final score {summary['final_score']:.4f}")
    return 0


def cmd_baseline(args) -> int:
    if args.kind not in BASELINE_KINDS:
        raise UsageError(f"unknown baseline kind {args.kind!r}; choose from {', '.join(BASELINE_KINDS)}")
    config = load_config(args)
    spec = load_spec(config, args)
    out = _out_dir(args)
    groups = config.loss_groups
    seed = config.master_seed
    extra: dict = {}
    if args.kind == "uniform":
        _, log = run_uniform(spec, config.E, seed, groups)
        stats = summarize_schedule(log)
    elif args.kind == "pbt":
        _, log = run_pbt_like(spec, config.m, config.T, seed, groups=groups,
                              q=config.iterations_per_checkpoint, parallel=args.parallel)
        stats = summarize_pbt(log)
    else:
        if args.kind == "grid":
            res = run_grid(spec, DEFAULT_GRIDS[spec.task_kind], config.E, seed, groups)
            extra["table"] = [[list(p), s] for p, s in res.table]
        else:
            res = run_random(spec, args.budget, config.E, seed, groups=groups)
            extra["samples"] = [[list(p), s] for p, s in res.samples]
        # replay the winner so the log holds its full trajectory
        _, log = run_static(spec, res.best_weights, config.E, seed, groups, label=args.kind)
        stats = summarize_schedule(log)
    log.write(out / "run.jsonl")
    summary = {**_meta(config, spec, args.kind), **stats, **extra}
    _write_json(out / "summary.json", summary)
    print(f"baseline {args.kind}: final score {summary['final_score']:.4f}")
    return 0


def cmd_oracle(args) -> int:
    config = load_config(args)
    spec = load_spec(config, args)
    out = _out_dir(args)
    record = oracle_certify(spec, epochs=config.E, groups=config.loss_groups, check=False)
    path = out / f"{spec.task_kind}.json"
    write_fixture(record, path)
    print(f"oracle: {record['gap_kind']} = {record['gap']:.4f} -> {path}")
    if not record["admissible"]:
        raise InadmissibleTaskError(f"{spec.task_kind} task is inadmissible (gap {record['gap']:.4f})")
    return 0


def build_report(run_dirs: Sequence[str | Path]) -> list[dict]:
    """One row per run; delta is the score minus the uniform run of the same task and seed."""
    if not run_dirs:
        raise UsageError("report needs at least one run directory")
    rows = []
    for d in run_dirs:
        path = Path(d) / "summary.json"
        if not path.is_file():
            raise UsageError(f"missing run: {path}")
        s = json.loads(path.read_text())
        rows.append({"run": str(d), "task_kind": s["task_kind"], "seed": s["seed"],
                     "method": s["method"], "score": s["final_score"]})
    uniform = {(r["task_kind"], r["seed"]): r["score"] for r in rows if r["method"] == "uniform"}
    for r in rows:
        base = uniform.get((r["task_kind"], r["seed"]))
        r["delta"] = None if base is None else r["score"] - base
    rows.sort(key=lambda r: (r["task_kind"], r["seed"], r["method"]))
    return rows


def cmd_report(args) -> int:
    rows = build_report(args.run_dirs)
    cols = ["task_kind", "seed", "method", "score", "delta"]

    def fmt(v):
        if isinstance(v, float):
            return f"{v:.4f}"
        return "-" if v is None else str(v)

    table = [cols] + [[fmt(r[c]) for c in cols] for r in rows]
    widths = [max(len(row[i]) for row in table) for i in range(len(cols))]
    for row in table:
        print("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
    if args.out:
        out = _out_dir(args)
        _write_csv(out / "report.csv", cols, [[r[c] for c in cols] for r in rows])
    return 0


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ada-segment", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out_required=True):
        sp.add_argument("--config", required=True, help="RunConfig JSON file")
        sp.add_argument("--out", required=out_required, help="output directory")
        sp.add_argument("--seed", type=int, help="override master_seed")
        sp.add_argument("--parallel", type=int, default=1, help="trainee executor pool size")
        sp.add_argument("--epochs", type=int, help="override E, the transfer schedule length")
        sp.add_argument("--trainee", help="TraineeSpec JSON file overriding the config's trainee")
        sp.add_argument("--rescale", help="comma-separated per-loss scale factors")

    sp = sub.add_parser("explore", help="joint controller and population training")
    common(sp)
    sp.set_defaults(func=cmd_explore)

    sp = sub.add_parser("transfer", help="train a fresh trainee with a saved ensemble")
    common(sp)
    sp.add_argument("--ensemble", required=True, help="ensemble.bin written by explore")
    sp.add_argument("--final-only", action="store_true", help="use only the last snapshot")
    sp.set_defaults(func=cmd_transfer)

    sp = sub.add_parser("baseline", help="reference tuner: " + ", ".join(BASELINE_KINDS))
    sp.add_argument("kind")
    common(sp)
    sp.add_argument("--budget", type=int, default=8, help="random-search budget")
    sp.set_defaults(func=cmd_baseline)

    sp = sub.add_parser("oracle", help="certify a synthetic task and write its fixture")
    common(sp)
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("report", help="compare finished runs against uniform")
    sp.add_argument("run_dirs", nargs="*")
    sp.add_argument("--out", help="directory for report.csv")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    level = os.environ.get("ADA_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DivergenceError, InadmissibleTaskError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
