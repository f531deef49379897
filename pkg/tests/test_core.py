from __future__ import annotations

import json

import numpy as np
import pytest

from ada_segment.core import (
    CheckpointRecord,
    ConfigError,
    DimensionError,
    LossVector,
    RunConfig,
    RunLog,
    ScoreVector,
    WeightVector,
    argmax_first,
    derive_seed,
    expand_weights,
    group_losses,
    rng_stream,
    validate_config,
)


def test_vectors_are_immutable_and_compare_by_value():
    v = LossVector([0.5, 1.0])
    with pytest.raises(AttributeError):
        v.values = np.zeros(2)
    with pytest.raises(ValueError):
        v.values[0] = 3.0
    assert v == LossVector([0.5, 1.0])
    assert hash(v) == hash(LossVector([0.5, 1.0]))
    assert v != WeightVector([0.5, 1.0])


@pytest.mark.parametrize("bad", [[-0.1, 1.0], [], [np.nan, 1.0], [np.inf]])
def test_loss_vector_rejects_invalid(bad):
    with pytest.raises(ValueError):
        LossVector(bad)


def test_score_vector_needs_two_entries():
    with pytest.raises(ValueError):
        ScoreVector([1.0])


def test_weight_vector_floor():
    w = WeightVector([-0.5, 0.0005, 2.0])
    f = w.floored()
    assert f.applied
    assert f.values.tolist() == [1e-3, 1e-3, 2.0]


def test_argmax_first_breaks_ties_low():
    assert argmax_first([1.0, 3.0, 3.0]) == 1


def _record(**over):
    base = dict(
        t=1,
        loss_state=LossVector([1.0, 2.0]),
        candidates=(WeightVector([1.0, 1.0]), WeightVector([0.5, -0.1])),
        applied=(WeightVector([1.0, 1.0], applied=True), WeightVector([0.5, 1e-3], applied=True)),
        scores=ScoreVector([70.0, 80.0]),
        rewards=(0.0, -1.0),
        prev_best_score=60.0,
    )
    base.update(over)
    return CheckpointRecord(**base)


def test_checkpoint_record_derives_best():
    r = _record()
    assert r.best_index == 1
    assert r.best_score == 80.0
    assert CheckpointRecord.from_dict(json.loads(json.dumps(r.to_dict()))) == r


def test_checkpoint_record_rejects_wrong_best_index():
    with pytest.raises(ValueError):
        _record(best_index=0)


def test_config_roundtrip(tmp_path):
    cfg = RunConfig(n=4, loss_groups=[[0, 1], [2], [3]], trainee_spec={"task_kind": "static-imbalance", "n": 4})
    path = tmp_path / "c.json"
    cfg.dump(path)
    assert RunConfig.load(path) == cfg
    assert cfg.n_effective == 3


@pytest.mark.parametrize(
    "changes, message",
    [
        ({"sigma": 0.0}, "sigma must be positive"),
        ({"m": 1}, "population size m must be >= 2"),
        ({"n": 0}, "empty loss vector"),
        ({"loss_groups": [[0, 1], [1]]}, "groups overlap"),
        ({"loss_groups": [[0]]}, "cover every loss index"),
        ({"gamma": 1.5}, "gamma"),
    ],
)
def test_config_validation(changes, message):
    with pytest.raises(ConfigError, match=message):
        validate_config(RunConfig(n=2).with_(**changes))


def test_config_rejects_unknown_fields():
    with pytest.raises(ConfigError, match="unknown config fields"):
        RunConfig.from_dict({"n": 2, "bogus": 1})


def test_grouping_averages_and_expands_consistently():
    l = np.array([1.0, 2.0, 3.0, 10.0])
    groups = [[0, 1, 2], [3]]
    assert group_losses(l, groups).tolist() == [2.0, 10.0]
    w = expand_weights([3.0, 0.5], groups, 4)
    # sum_i w_i l_i equals sum_g W_g mean(l_g)
    assert np.isclose(w @ l, 3.0 * 2.0 + 0.5 * 10.0)
    with pytest.raises(DimensionError, match="loss dimension mismatch"):
        expand_weights([1.0, 2.0, 3.0], groups, 4)


def test_rng_streams_are_named_and_reproducible():
    a = rng_stream(0, "trainee", 1).standard_normal(4)
    b = rng_stream(0, "trainee", 1).standard_normal(4)
    c = rng_stream(0, "trainee", 2).standard_normal(4)
    d = rng_stream(1, "trainee", 1).standard_normal(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)
    assert derive_seed(3, "x") == derive_seed(3, "x") != derive_seed(4, "x")


def test_run_log_roundtrip_is_lossless(tmp_path):
    log = RunLog()
    log.emit("epoch", e=1, losses=LossVector([0.1, 1 / 3]), score=np.float64(2 / 3))
    log.emit("checkpoint", t=1, x=np.arange(3))
    path = tmp_path / "run.jsonl"
    log.write(path)
    again = RunLog.read(path)
    assert again.dumps() == log.dumps()
    assert again.of_type("epoch")[0]["losses"][1] == 1 / 3
    with pytest.raises(ValueError):
        log.emit("nonsense")


def test_vectors_survive_pickling():
    import pickle

    for v in (LossVector([0.5, 1.0]), WeightVector([1.0, 2.0], applied=True), ScoreVector([1.0, 2.0])):
        again = pickle.loads(pickle.dumps(v))
        assert again == v and not again.values.flags.writeable
