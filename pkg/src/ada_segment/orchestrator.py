"""Exploration with a population of trainees, and transfer training with an ensemble."""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from .controller import SnapshotStore, checkpoint_step, sample_candidates
from .core import (
    CheckpointRecord,
    DimensionError,
    LossVector,
    RunConfig,
    RunLog,
    ScoreVector,
    WeightVector,
    argmax_first,
    derive_seed,
    group_losses,
    rng_stream,
    stream_id,
    validate_config,
)
from .ensemble import PolicyEnsemble, ensemble_coefficients, ensemble_predict_raw
from .policy import AdamState, PolicyParams, init_policy, weights_from_losses
from .rewards import combined_reward
from .trainee import TraineeSpec, clone_from, make_trainee, train_interval

logger = logging.getLogger(__name__)


def resolve_spec(config: RunConfig, spec: Any = None) -> Any:
    if spec is not None:
        return spec
    return TraineeSpec.from_dict(config.trainee_spec)


def pseudo_epoch(spec: Any, seed: int, horizon: int | None = None, log: RunLog | None = None):
    """One epoch with all weights 1 on a fresh trainee.

    Returns the trained state, its interval-mean losses and its score.
    """
    state = make_trainee(spec, seed, horizon)
    state, losses = train_interval(state, np.ones(state.n), spec.iters_per_epoch)
    score = state.evaluate()
    if log is not None:
        log.emit("epoch", e=0, phase="pseudo", weights=np.ones(state.n), losses=losses,
                 iteration_losses=state.last_iteration_losses, score=score,
                 rng_stream=f"seed:{seed}")
    return state, losses, score


def _train_member(args):
    member, weights, q, groups = args
    new, losses = train_interval(member, weights, q, groups)
    return new, losses


class Population:
    """m trainees trained in a fork-join pattern and re-synchronized by broadcast."""

    def __init__(self, members: Sequence[Any], parallel: int = 1) -> None:
        self.members = list(members)
        self.parallel = max(1, int(parallel))

    def __len__(self) -> int:
        return len(self.members)

    def train(self, weights: Sequence[Any], q: int, groups=None) -> list[LossVector]:
        jobs = [(mem, np.asarray(w, dtype=np.float64), q, groups) for mem, w in zip(self.members, weights)]
        if self.parallel > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=min(self.parallel, len(jobs))) as pool:
                results = list(pool.map(_train_member, jobs))
        else:
            results = [_train_member(j) for j in jobs]
        self.members = [r[0] for r in results]
        return [r[1] for r in results]

    def evaluate(self) -> list[float]:
        return [float(mem.evaluate()) for mem in self.members]

    def broadcast(self, best: int) -> None:
        src = self.members[best]
        self.members = [mem if j == best else clone_from(mem, src) for j, mem in enumerate(self.members)]


@dataclass
class ExploreResult:
    best: Any
    ensemble: PolicyEnsemble
    log: RunLog
    records: list[CheckpointRecord]
    policy: PolicyParams
    pseudo_score: float

    @property
    def final_score(self) -> float:
        return self.records[-1].best_score


def explore(config: RunConfig, spec: Any = None, parallel: int = 1,
            log: RunLog | None = None) -> ExploreResult:
    """Jointly train the controller and a population of m trainees for T checkpoints."""
    validate_config(config)
    spec = resolve_spec(config, spec)
    if spec.n != config.n:
        raise DimensionError(f"loss dimension mismatch: config n={config.n}, trainee n={spec.n}")
    log = RunLog() if log is None else log
    seed = config.master_seed
    groups = config.loss_groups
    ipe = spec.iters_per_epoch
    q = config.iterations_per_checkpoint or ipe
    horizon = ipe + config.T * q

    state0, l1, v0 = pseudo_epoch(spec, derive_seed(seed, "pseudo-epoch"), horizon, log)
    members = [clone_from(make_trainee(spec, derive_seed(seed, "trainee", j), horizon), state0)
               for j in range(config.m)]
    pop = Population(members, parallel)

    params = init_policy(config.n_effective, rng_stream(seed, "policy-init"))
    adam = AdamState.zeros_like(params)
    store = SnapshotStore()
    cand_stream = stream_id("candidates")
    cand_rng = rng_stream(seed, cand_stream)

    l_state = group_losses(l1.values, groups)
    prev_best = float(v0)
    mu = weights_from_losses(params, l_state)
    issued = sample_candidates(mu, config.sigma, config.m, cand_rng)
    records: list[CheckpointRecord] = []

    for t in range(1, config.T + 1):
        losses = pop.train([a.values for a in issued.applied], q, groups)
        scores = pop.evaluate()
        best = argmax_first(scores)
        l_best = group_losses(losses[best].values, groups)
        rewards = combined_reward(scores, prev_best, t, config.T, issued.validity)
        record = CheckpointRecord(
            t=t,
            loss_state=LossVector(l_state),
            candidates=issued.raw,
            applied=issued.applied,
            scores=ScoreVector(scores),
            rewards=rewards.values,
            prev_best_score=prev_best,
        )
        records.append(record)
        log.emit("checkpoint", **record.to_dict(), mu=issued.mu, validity=list(issued.validity),
                 train_losses=[lv.values for lv in losses],
                 rng_streams={"candidates": cand_stream,
                              "trainees": [stream_id("trainee", j) for j in range(config.m)]})
        step = checkpoint_step(params, adam, store, issued, l_state, l_best, scores, prev_best,
                               t, config.T, config.sigma, cand_rng, config.policy_lr,
                               config.policy_weight_decay, log, rng_stream=cand_stream)
        params, adam, issued = step.params, step.adam, step.candidates
        pop.broadcast(best)
        l_state = l_best
        prev_best = scores[best]
        logger.info("checkpoint %d/%d best=%d score=%.4f", t, config.T, best, scores[best])

    ensemble = PolicyEnsemble(tuple(store.snapshots), config.gamma)
    return ExploreResult(pop.members[records[-1].best_index], ensemble, log, records, params, float(v0))


WeightFn = Callable[[int, int, np.ndarray], np.ndarray]


def train_schedule(spec: Any, E: int, seed: int, weight_fn: WeightFn, groups=None,
                   log: RunLog | None = None, label: str = "schedule",
                   annotate: Callable[[int, int], dict] | None = None):
    """Pseudo epoch then E epochs, weights from ``weight_fn(e, E, grouped_losses)``.

    ``weight_fn`` returns raw per-group weights; they are floored before use.
    """
    log = RunLog() if log is None else log
    horizon = spec.iters_per_epoch * (E + 1)
    state, l, _ = pseudo_epoch(spec, derive_seed(seed, "pseudo-epoch"), horizon, log)
    trajectory = []
    for e in range(1, E + 1):
        lg = group_losses(l.values, groups)
        raw = np.asarray(weight_fn(e, E, lg), dtype=np.float64)
        applied = WeightVector(raw).floored()
        trajectory.append(applied.values)
        extra = annotate(e, E) if annotate else {}
        log.emit("transfer_step", e=e, method=label, loss_state=lg, raw_weights=raw, weights=applied,
                 **extra)
        state, l = train_interval(state, applied.values, spec.iters_per_epoch, groups)
        log.emit("epoch", e=e, phase=label, weights=applied, losses=l, score=state.evaluate())
    return state, log, np.array(trajectory)


def transfer_train(ensemble: PolicyEnsemble, spec: Any, E: int, seed: int, groups=None,
                   log: RunLog | None = None):
    """Train a fresh trainee for E epochs with weights from the policy ensemble."""
    if E < 1:
        raise ValueError("E must be >= 1")
    n_eff = spec.n if groups is None else len(groups)
    if ensemble.n != n_eff:
        raise DimensionError(f"loss dimension mismatch: ensemble n={ensemble.n}, trainee n={n_eff}")

    def weights(e: int, E_: int, lg: np.ndarray) -> np.ndarray:
        return ensemble_predict_raw(ensemble, lg, e, E_)

    def coefficients(e: int, E_: int) -> dict:
        return {"coefficients": ensemble_coefficients(e, E_, ensemble.T, ensemble.gamma)}

    state, log, _ = train_schedule(spec, E, seed, weights, groups, log, label="transfer",
                                   annotate=coefficients)
    return state, log
