"""One controller iteration per checkpoint: reward, update, snapshot, resample."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .core import WEIGHT_FLOOR, RunLog, ScoreVector, WeightVector
from .policy import AdamState, PolicyParams, PolicySnapshot, reinforce_gradient, adam_step, weights_from_losses
from .rewards import RewardVector, combined_reward


@dataclass(frozen=True)
class CandidateSet:
    mu: WeightVector
    raw: tuple[WeightVector, ...]
    applied: tuple[WeightVector, ...]
    validity: tuple[bool, ...]

    def __post_init__(self) -> None:
        for r, a, ok in zip(self.raw, self.applied, self.validity):
            if not np.array_equal(a.values, np.maximum(r.values, WEIGHT_FLOOR)):
                raise ValueError("applied weights must be the floored raw weights")
            if ok != bool(np.all(r.values >= 0)):
                raise ValueError("validity flag disagrees with raw sample sign")

    @property
    def m(self) -> int:
        return len(self.raw)

    def to_dict(self) -> dict:
        return {
            "mu": self.mu.to_list(),
            "raw": [r.to_list() for r in self.raw],
            "applied": [a.to_list() for a in self.applied],
            "validity": list(self.validity),
        }


def candidates_from_raw(mu: Any, raw: np.ndarray) -> CandidateSet:
    raw = np.asarray(raw, dtype=np.float64)
    mu_v = mu if isinstance(mu, WeightVector) else WeightVector(mu)
    return CandidateSet(
        mu=mu_v,
        raw=tuple(WeightVector(r) for r in raw),
        applied=tuple(WeightVector(np.maximum(r, WEIGHT_FLOOR), applied=True) for r in raw),
        validity=tuple(bool(np.all(r >= 0)) for r in raw),
    )


def sample_candidates(mu: Any, sigma: float, m: int, rng: np.random.Generator) -> CandidateSet:
    """Draw m candidates from N(mu, sigma^2 I) independently per entry."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    mu_arr = np.asarray(mu, dtype=np.float64)
    z = rng.standard_normal((m, mu_arr.size))
    return candidates_from_raw(mu, mu_arr + sigma * z)


@dataclass
class SnapshotStore:
    snapshots: list[PolicySnapshot] = field(default_factory=list)

    def add(self, snapshot: PolicySnapshot) -> None:
        if self.snapshots and snapshot.t <= self.snapshots[-1].t:
            raise ValueError("snapshot indices must be strictly increasing")
        self.snapshots.append(snapshot)

    def __len__(self) -> int:
        return len(self.snapshots)

    def __iter__(self):
        return iter(self.snapshots)

    def __getitem__(self, i: int) -> PolicySnapshot:
        return self.snapshots[i]

    @property
    def indices(self) -> list[int]:
        return [s.t for s in self.snapshots]


@dataclass
class StepResult:
    params: PolicyParams
    adam: AdamState
    store: SnapshotStore
    candidates: CandidateSet
    rewards: RewardVector
    gradient_norms: dict[str, float]


def checkpoint_step(params: PolicyParams, adam: AdamState, store: SnapshotStore,
                    issued: CandidateSet, state_loss: Any, l_best: Any, scores: Any,
                    prev_best: float, t: int, T: int, sigma: float, rng: np.random.Generator,
                    lr: float = 5e-2, weight_decay: float = 5e-4,
                    log: RunLog | None = None, rng_stream: str = "") -> StepResult:
    """Run the controller at checkpoint ``t``.

    ``issued`` are the candidates the population trained with since the last
    checkpoint and ``state_loss`` the loss state they were generated from;
    ``l_best`` is the loss state carried into the next interval.
    """
    scores = scores if isinstance(scores, ScoreVector) else ScoreVector(scores)
    rewards = combined_reward(scores, prev_best, t, T, issued.validity)
    grad = reinforce_gradient(params, state_loss, [r.values for r in issued.raw], rewards.values, sigma)
    neg = PolicyParams(*(-a for a in grad.arrays()))
    new_params, new_adam = adam_step(params, adam, neg, lr, weight_decay)
    store.add(PolicySnapshot(t, new_params, rng_stream))
    mu_next = weights_from_losses(new_params, l_best)
    nxt = sample_candidates(mu_next, sigma, issued.m, rng)
    norms = {name: float(np.linalg.norm(a)) for name, a in zip(("W1", "b1", "W2", "b2", "W3", "b3"), grad.arrays())}
    if log is not None:
        log.emit(
            "policy_update",
            t=t,
            state_loss=np.asarray(state_loss, dtype=np.float64),
            rewards=list(rewards.values),
            gradient_norms=norms,
            params=new_params.to_dict(),
            next_loss_state=np.asarray(l_best, dtype=np.float64),
            next_mu=mu_next,
            rng_stream=rng_stream,
        )
    return StepResult(new_params, new_adam, store, nxt, rewards, norms)
