from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ada_segment.core import ScoreVector
from ada_segment.rewards import (
    INVALID_REWARD,
    RewardVector,
    combined_reward,
    improvement_reward,
    local_reward,
)

score_arrays = arrays(np.float64, st.integers(2, 16), elements=st.floats(0, 100, allow_nan=False))


@settings(max_examples=200, deadline=None)
@given(score_arrays, st.floats(0, 100))
def test_rewards_are_standardized_or_zero(v, prev_best):
    r = local_reward(v)
    if v.std() < 1e-12:
        assert not r.any()
    else:
        assert abs(r.mean()) < 1e-9
        assert abs(r.std() - 1) < 1e-9
    imp = improvement_reward(v, prev_best)
    assert np.all(np.isfinite(imp))
    if v.std() >= 1e-12:
        assert abs((imp - imp.mean()).std() - 1) < 1e-9


@settings(max_examples=100, deadline=None)
@given(score_arrays, st.floats(0, 100), st.floats(-50, 50))
def test_rewards_ignore_a_common_shift(v, prev_best, shift):
    a = combined_reward(v, prev_best, 3, 5).to_array()
    b = combined_reward(v + shift, prev_best + shift, 3, 5).to_array()
    assert np.allclose(a, b, atol=1e-6)


def test_reward_ordering_follows_scores():
    r = combined_reward([60.0, 70.0, 80.0], 65.0, 2, 4).to_array()
    assert r[0] < r[1] < r[2]


def test_time_scaling():
    early = combined_reward([60.0, 70.0], 50.0, 1, 4).to_array()
    late = combined_reward([60.0, 70.0], 50.0, 4, 4).to_array()
    assert np.allclose(late, 4 * early)


def test_hand_computed_reward():
    # v = (1, 3): local = (-1, 1); gains over 0 are (1, 3) with std 1 -> (1, 3)
    r = combined_reward(ScoreVector([1.0, 3.0]), 0.0, 1, 2).to_array()
    assert np.allclose(r, [0.0, 2.0])


def test_invalid_candidates_get_minus_one():
    r = combined_reward([10.0, 20.0, 30.0], 5.0, 2, 2, validity=[True, False, True])
    assert r.values[1] == INVALID_REWARD
    assert r.validity == (True, False, True)


def test_degenerate_population_gives_zero():
    assert not combined_reward([5.0, 5.0, 5.0], 5.0, 1, 1).to_array().any()


@pytest.mark.parametrize("t", [0, 4])
def test_checkpoint_index_checked(t):
    with pytest.raises(ValueError):
        combined_reward([1.0, 2.0], 0.0, t, 3)


def test_reward_vector_checks_invalid_entries():
    with pytest.raises(ValueError):
        RewardVector((0.5,), (False,))
