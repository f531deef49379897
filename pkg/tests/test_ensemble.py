from __future__ import annotations

import numpy as np
import pytest

from ada_segment.core import DimensionError
from ada_segment.ensemble import (
    PolicyEnsemble,
    combine_predictions,
    ensemble_coefficients,
    ensemble_predict,
    ensemble_predict_raw,
)
from ada_segment.policy import PolicyParams, PolicySnapshot, init_policy, weights_from_losses


def scaled_identity(n: int, k: float) -> PolicyParams:
    """Policy with eta = k * l for non-negative l, so it predicts lambda = k."""
    h = 2 * n
    W1 = np.vstack([np.eye(n), np.zeros((h - n, n))])
    W2 = np.eye(h)
    W3 = np.hstack([k * np.eye(n), np.zeros((n, h - n))])
    return PolicyParams(W1, np.zeros(h), W2, np.zeros(h), W3, np.zeros(n))


def constant_ensemble(ks, gamma=0.9, n=2):
    return PolicyEnsemble(tuple(PolicySnapshot(t + 1, scaled_identity(n, k)) for t, k in enumerate(ks)), gamma)


def test_hand_worked_three_snapshot_combination():
    # T = 3, E = 3, e = 2: weights proportional to (0.9, 1, 0.9)
    ens = constant_ensemble([1.0, 2.0, 3.0])
    c = ensemble_coefficients(2, 3, 3, 0.9)
    assert np.allclose(c, np.array([0.9, 1.0, 0.9]) / 2.8)
    assert np.allclose(ensemble_predict(ens, [0.5, 4.0], 2, 3).values, [2.0, 2.0])


@pytest.mark.parametrize("T,E", [(1, 1), (3, 7), (8, 8), (10, 3)])
def test_coefficients_sum_to_one(T, E):
    for e in range(1, E + 1):
        c = ensemble_coefficients(e, E, T)
        assert np.isclose(c.sum(), 1.0) and np.all(c > 0)


def test_gamma_one_is_plain_average():
    assert np.allclose(ensemble_coefficients(2, 5, 4, 1.0), 0.25)


def test_coefficients_peak_at_aligned_snapshot():
    c = ensemble_coefficients(4, 8, 8)
    assert np.argmax(c) == 3


def test_identical_snapshots_match_single_policy():
    p = init_policy(3, np.random.default_rng(0))
    ens = PolicyEnsemble(tuple(PolicySnapshot(t, p) for t in (1, 2, 3, 4)))
    l = np.array([0.3, 1.2, 2.0])
    for e in range(1, 6):
        assert np.allclose(ensemble_predict_raw(ens, l, e, 5), weights_from_losses(p, l).values, rtol=1e-14)


def test_prediction_is_homogeneous_in_snapshot_scale():
    ens1 = constant_ensemble([1.0, 2.0, 5.0])
    ens2 = constant_ensemble([3.0, 6.0, 15.0])
    a = ensemble_predict_raw(ens1, [1.0, 2.0], 2, 4)
    b = ensemble_predict_raw(ens2, [1.0, 2.0], 2, 4)
    assert np.allclose(b, 3 * a)


def test_combine_predictions_matches_ensemble():
    rng = np.random.default_rng(0)
    snaps = tuple(PolicySnapshot(t, init_policy(2, rng, std=0.2)) for t in (1, 2, 3))
    ens = PolicyEnsemble(snaps)
    l = [0.7, 1.1]
    preds = [weights_from_losses(s.params, l).values for s in snaps]
    assert np.allclose(combine_predictions(preds, 3, 6), ensemble_predict_raw(ens, l, 3, 6))


def test_prediction_is_floored():
    ens = constant_ensemble([-1.0])
    assert np.all(ensemble_predict(ens, [1.0, 1.0], 1, 1).values == 1e-3)


def test_final_keeps_last_snapshot():
    ens = constant_ensemble([1.0, 2.0, 7.0])
    assert ens.final().T == 1
    assert np.allclose(ensemble_predict(ens.final(), [1.0, 1.0], 1, 9).values, 7.0)


def test_errors():
    ens = constant_ensemble([1.0])
    with pytest.raises(DimensionError, match="loss dimension mismatch"):
        ensemble_predict(ens, [1.0, 2.0, 3.0], 1, 1)
    with pytest.raises(ValueError):
        ensemble_coefficients(0, 3, 3)
    with pytest.raises(ValueError):
        PolicyEnsemble(())
    with pytest.raises(DimensionError):
        PolicyEnsemble((PolicySnapshot(1, scaled_identity(2, 1.0)), PolicySnapshot(2, scaled_identity(3, 1.0))))


def test_save_load_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    ens = PolicyEnsemble(tuple(PolicySnapshot(t, init_policy(4, rng), "candidates") for t in (1, 2, 3)), 0.8)
    ens.save(tmp_path / "e.bin")
    again = PolicyEnsemble.load(tmp_path / "e.bin")
    assert again == ens
    l = [1.0, 2.0, 3.0, 4.0]
    assert np.array_equal(ensemble_predict_raw(again, l, 2, 5), ensemble_predict_raw(ens, l, 2, 5))
