from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np
import pytest

from ada_segment.core import DimensionError, RunConfig, RunLog
from ada_segment.ensemble import PolicyEnsemble
from ada_segment.orchestrator import Population, explore, pseudo_epoch, train_schedule, transfer_train
from ada_segment.policy import PolicySnapshot, init_policy, weights_from_losses
from ada_segment.trainee import TraineeSpec

SMALL = TraineeSpec(n=2, n_train=64, n_val=128, scales=(1.0, 4.0), noise=(0.2, 0.2), conflict=0.7)


@dataclass
class StubSpec:
    """Trainee whose score is closeness of a 2-vector to a target; q steps add q * weights."""

    n: int = 2
    iters_per_epoch: int = 2

    def build(self, seed, horizon=None):
        return StubTrainee(np.zeros(self.n), 0, np.random.default_rng(seed))


@dataclass
class StubTrainee:
    x: np.ndarray
    step: int
    rng: np.random.Generator
    last_iteration_losses: np.ndarray | None = None

    @property
    def n(self):
        return len(self.x)

    def train(self, weights, q):
        self.x = self.x + 0.1 * q * np.asarray(weights)
        self.step += q
        self.last_iteration_losses = np.tile(np.abs(self.x - 1.0) + 0.01, (q, 1))
        return self.last_iteration_losses.mean(axis=0)

    def evaluate(self):
        return float(100 - 10 * np.sum((self.x - 1.0) ** 2))

    def copy(self):
        return copy.deepcopy(self)

    def load_from(self, source):
        self.x = source.x.copy()
        self.step = source.step

    def params_equal(self, other):
        return np.array_equal(self.x, other.x) and self.step == other.step


def _config(**kw):
    base = dict(n=2, m=2, T=1, E=2, policy_lr=5e-3, trainee_spec=SMALL.to_dict())
    base.update(kw)
    return RunConfig(**base)


def test_single_checkpoint_with_stub_trainee():
    res = explore(_config(), spec=StubSpec())
    assert len(res.records) == 1 and res.ensemble.T == 1
    rec = res.records[0]
    assert rec.prev_best_score == res.pseudo_score
    assert [r["type"] for r in res.log.records].count("checkpoint") == 1
    assert res.best.step == 4  # pseudo epoch plus one interval


def test_snapshots_one_per_checkpoint_and_population_synchronized():
    cfg = _config(m=3, T=4)
    res = explore(cfg, spec=StubSpec())
    assert [s.t for s in res.ensemble.snapshots] == [1, 2, 3, 4]
    assert res.ensemble.snapshots[-1].params == res.policy
    for a, b in zip(res.records, res.records[1:]):
        assert b.prev_best_score == a.best_score


def test_explore_is_deterministic_and_seed_sensitive():
    a = explore(_config(T=2), spec=StubSpec())
    b = explore(_config(T=2), spec=StubSpec())
    c = explore(_config(T=2, master_seed=1), spec=StubSpec())
    assert a.log.dumps() == b.log.dumps()
    assert a.log.dumps() != c.log.dumps()


def test_parallel_matches_serial():
    cfg = _config(m=3, T=2)
    a = explore(cfg, parallel=1)
    b = explore(cfg, parallel=2)
    assert a.log.dumps() == b.log.dumps()


def test_dimension_mismatch_is_reported():
    with pytest.raises(DimensionError, match="loss dimension mismatch"):
        explore(_config(n=3))
    ens = PolicyEnsemble((PolicySnapshot(1, init_policy(3, np.random.default_rng(0))),))
    with pytest.raises(DimensionError, match="loss dimension mismatch"):
        transfer_train(ens, SMALL, 2, 0)


def test_identical_snapshots_transfer_like_single_policy():
    p = init_policy(2, np.random.default_rng(0))
    ens = PolicyEnsemble(tuple(PolicySnapshot(t, p) for t in (1, 2, 3)))
    s1, log1 = transfer_train(ens, SMALL, 3, seed=0)
    s2, log2, _ = train_schedule(SMALL, 3, 0, lambda e, E, lg: weights_from_losses(p, lg).values)
    assert np.allclose(s1.w, s2.w, rtol=1e-12) and np.allclose(s1.V, s2.V, rtol=1e-12)


def test_transfer_logs_each_epoch():
    res = explore(_config(T=2))
    _, log = transfer_train(res.ensemble, SMALL, 3, seed=0)
    steps = log.of_type("transfer_step")
    assert [r["e"] for r in steps] == [1, 2, 3]
    assert all(np.isclose(sum(r["coefficients"]), 1.0) for r in steps)
    assert len(log.of_type("epoch")) == 4


def test_pseudo_epoch_uses_unit_weights():
    log = RunLog()
    state, losses, score = pseudo_epoch(SMALL, 0, log=log)
    assert state.step == SMALL.iters_per_epoch
    assert log.records[0]["weights"] == [1.0, 1.0]


def test_population_broadcast_copies_best():
    pop = Population([StubSpec().build(j) for j in range(3)])
    pop.train([[1.0, 1.0], [2.0, 2.0], [5.0, 5.0]], 2)
    pop.broadcast(1)
    assert all(m.params_equal(pop.members[1]) for m in pop.members)
    # members keep their own data streams
    assert pop.members[0].rng.bit_generator.state != pop.members[2].rng.bit_generator.state
