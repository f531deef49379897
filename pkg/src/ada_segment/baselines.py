"""Reference tuners (uniform, grid, PBT-like, random) and the brute-force task oracle."""
from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .core import (
    DivergenceError,
    RunLog,
    WeightVector,
    argmax_first,
    derive_seed,
    group_losses,
    rng_stream,
)
from .orchestrator import Population, pseudo_epoch, train_schedule
from .trainee import clone_from, make_trainee, train_interval

logger = logging.getLogger(__name__)

ORACLE_VERSION = 1
MIN_GAP = 2.0
PBT_FACTORS = (0.8, 1.25)
#: per-group weight levels searched by the oracle and by Baseline-G
DEFAULT_GRIDS = {
    "static-imbalance": (0.1, 0.3, 1.0, 3.0, 10.0),
    "dynamic-phase": (0.25, 0.5, 1.0, 2.0, 4.0),
    "grouped-ten-loss": (0.3, 1.0, 3.0),
}


class InadmissibleTaskError(AssertionError):
    """A shipped synthetic task no longer separates the tuning methods."""


def _n_eff(spec: Any, groups) -> int:
    return spec.n if groups is None else len(groups)


def run_static(spec: Any, weights: Any, epochs: int, seed: int, groups=None,
               log: RunLog | None = None, label: str = "static"):
    """Train one trainee with fixed weights for ``epochs`` epochs after the pseudo epoch."""
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (_n_eff(spec, groups),):
        raise ValueError(f"loss dimension mismatch: expected {_n_eff(spec, groups)} weights, got {w.size}")
    state, log, _ = train_schedule(spec, epochs, seed, lambda e, E, l: w, groups, log, label=label)
    return state, log


def run_uniform(spec: Any, epochs: int, seed: int, groups=None, log: RunLog | None = None):
    """All weights 1 throughout. Returns ``(final score, log)``."""
    state, log = run_static(spec, np.ones(_n_eff(spec, groups)), epochs, seed, groups, log,
                            label="uniform")
    return state.evaluate(), log


def weight_lattice(grid: Any, n: int) -> list[tuple[float, ...]]:
    """Cartesian product of 1-d ``grid`` levels, or the rows of a 2-d ``grid``."""
    arr = np.asarray(grid, dtype=np.float64)
    if arr.ndim == 1:
        return [tuple(p) for p in itertools.product(arr.tolist(), repeat=n)]
    if arr.ndim == 2 and arr.shape[1] == n:
        return [tuple(row) for row in arr.tolist()]
    raise ValueError(f"grid must be 1-d levels or rows of length {n}")


@dataclass
class GridResult:
    best_weights: tuple[float, ...]
    best_score: float
    table: list[tuple[tuple[float, ...], float]]


def run_grid(spec: Any, grid: Any, epochs: int, seed: int, groups=None) -> GridResult:
    """One full run per lattice point; ties go to the first point."""
    points = weight_lattice(grid, _n_eff(spec, groups))
    table = []
    for p in points:
        state, _ = run_static(spec, p, epochs, seed, groups, label="grid")
        table.append((p, state.evaluate()))
    best = argmax_first([s for _, s in table])
    return GridResult(table[best][0], table[best][1], table)


def _jitter(weights: np.ndarray, rng: np.random.Generator, factors: Sequence[float]) -> np.ndarray:
    return weights * rng.choice(np.asarray(factors, dtype=np.float64), size=weights.shape)


def run_pbt_like(spec: Any, m: int, T: int, seed: int, factors: Sequence[float] = PBT_FACTORS,
                 groups=None, q: int | None = None, parallel: int = 1,
                 log: RunLog | None = None):
    """Population training without a controller: exploit the best, jitter the rest.

    Member 0 starts at all-ones and the others at jittered all-ones. After each
    checkpoint the best model and its weights are broadcast; every member
    except the best then multiplies each weight by a factor drawn from
    ``factors``. Returns ``(final best score, log)``.
    """
    if m < 2:
        raise ValueError("population size m must be >= 2")
    log = RunLog() if log is None else log
    n = _n_eff(spec, groups)
    ipe = spec.iters_per_epoch
    q = q or ipe
    horizon = ipe + T * q
    state0, _, v0 = pseudo_epoch(spec, derive_seed(seed, "pseudo-epoch"), horizon, log)
    members = [clone_from(make_trainee(spec, derive_seed(seed, "trainee", j), horizon), state0)
               for j in range(m)]
    pop = Population(members, parallel)
    rng = rng_stream(seed, "pbt-jitter")
    weights = [np.ones(n)] + [_jitter(np.ones(n), rng, factors) for _ in range(m - 1)]
    best_score = float(v0)
    for t in range(1, T + 1):
        applied = [WeightVector(w).floored().values for w in weights]
        losses = pop.train(applied, q, groups)
        scores = pop.evaluate()
        best = argmax_first(scores)
        best_score = scores[best]
        log.emit("checkpoint", t=t, method="pbt", weights=applied, scores=scores, best_index=best,
                 losses=[group_losses(lv.values, groups) for lv in losses])
        pop.broadcast(best)
        elite = weights[best].copy()
        weights = [elite.copy() if j == best else _jitter(elite, rng, factors) for j in range(m)]
    return best_score, log


@dataclass
class RandomResult:
    best_weights: tuple[float, ...]
    best_score: float
    samples: list[tuple[tuple[float, ...], float]] = field(default_factory=list)


def run_random(spec: Any, budget: int, epochs: int, seed: int, low: float = 0.1,
               high: float = 10.0, groups=None) -> RandomResult:
    """Static weights drawn log-uniformly from ``[low, high]``, one full run each."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if not 0 < low <= high:
        raise ValueError("need 0 < low <= high")
    n = _n_eff(spec, groups)
    rng = rng_stream(seed, "random-search")
    samples = []
    for _ in range(budget):
        w = np.exp(rng.uniform(np.log(low), np.log(high), size=n))
        state, _ = run_static(spec, w, epochs, seed, groups, label="random")
        samples.append((tuple(w.tolist()), state.evaluate()))
    best = argmax_first([s for _, s in samples])
    return RandomResult(samples[best][0], samples[best][1], samples)


# -- oracle ------------------------------------------------------------------


def _continue(state, weights, epochs: int, groups, spec) -> tuple[Any, float]:
    """Train a copy for ``epochs`` epochs; divergence scores 0."""
    try:
        for _ in range(epochs):
            state, _ = train_interval(state, weights, spec.iters_per_epoch, groups)
        return state, state.evaluate()
    except DivergenceError:
        return None, 0.0


def _switch_epochs(spec: Any, epochs: int) -> list[int]:
    """Epochs (1-based, in the post-pseudo schedule) around the phase switch."""
    centre = int(round(spec.phase_switch * (epochs + 1)))
    return sorted({min(epochs, max(2, centre + d)) for d in (-1, 0, 1)})


def oracle_certify(spec: Any, grid: Any = None, epochs: int = 8, seeds: Sequence[int] = (0, 1, 2),
                   groups=None, switch_epochs: Sequence[int] | None = None,
                   check: bool = True) -> dict:
    """Exhaustive static (and, for the dynamic task, two-phase) weight search.

    Scores are averaged over ``seeds``; each seed reproduces the run of
    ``run_static(spec, w, epochs, seed)``. A two-phase schedule ``(k, a, b)``
    uses ``a`` for epochs ``1..k-1`` and ``b`` from epoch ``k`` on.
    """
    grid = DEFAULT_GRIDS[spec.task_kind] if grid is None else grid
    n = _n_eff(spec, groups)
    points = weight_lattice(grid, n)
    horizon = spec.iters_per_epoch * (epochs + 1)
    starts = [pseudo_epoch(spec, derive_seed(s, "pseudo-epoch"), horizon)[0] for s in seeds]

    static = {}
    for p in points:
        static[p] = float(np.mean([_continue(st, p, epochs, groups, spec)[1] for st in starts]))
    ones = tuple([1.0] * n)
    uniform = static[ones] if ones in static else float(
        np.mean([_continue(st, ones, epochs, groups, spec)[1] for st in starts]))
    best_static = max(points, key=lambda p: (static[p], -points.index(p)))

    record = {
        "oracle_version": ORACLE_VERSION,
        "task_kind": spec.task_kind,
        "spec": spec.to_dict(),
        "groups": None if groups is None else [list(g) for g in groups],
        "seeds": list(seeds),
        "epochs": epochs,
        "grid": np.asarray(grid, dtype=np.float64).tolist(),
        "uniform": uniform,
        "static_table": [[list(p), static[p]] for p in points],
        "best_static": {"weights": list(best_static), "score": static[best_static]},
    }

    if spec.task_kind == "dynamic-phase":
        ks = list(switch_epochs) if switch_epochs is not None else _switch_epochs(spec, epochs)
        dynamic = {}
        for k in ks:
            for a in points:
                prefixes = [_continue(st, a, k - 1, groups, spec)[0] for st in starts]
                for b in points:
                    dynamic[(k, a, b)] = float(np.mean(
                        [0.0 if pre is None else _continue(pre, b, epochs - k + 1, groups, spec)[1]
                         for pre in prefixes]))
        best_dyn = max(dynamic, key=dynamic.get)
        record["switch_epochs"] = ks
        record["best_dynamic"] = {"switch_epoch": best_dyn[0], "first": list(best_dyn[1]),
                                  "second": list(best_dyn[2]), "score": dynamic[best_dyn]}
        record["gap"] = dynamic[best_dyn] - static[best_static]
        record["gap_kind"] = "best_dynamic - best_static"
    else:
        record["gap"] = static[best_static] - uniform
        record["gap_kind"] = "best_static - uniform"

    record["admissible"] = bool(record["gap"] >= MIN_GAP)
    logger.info("oracle %s gap %.3f", spec.task_kind, record["gap"])
    if check and not record["admissible"]:
        raise InadmissibleTaskError(
            f"{spec.task_kind} task is inadmissible: {record['gap_kind']} = {record['gap']:.3f} < {MIN_GAP}")
    return record


def write_fixture(record: dict, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(record, indent=1, sort_keys=True) + "\n")


def read_fixture(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())
