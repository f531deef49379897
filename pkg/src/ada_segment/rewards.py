"""Population rewards: standardized scores, standardized improvement, and their scaled sum."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from .core import STD_EPS, ScoreVector

INVALID_REWARD = -1.0


@dataclass(frozen=True)
class RewardVector:
    values: tuple[float, ...]
    validity: tuple[bool, ...]

    def __post_init__(self) -> None:
        if len(self.values) != len(self.validity):
            raise ValueError("values and validity must have equal length")
        for r, ok in zip(self.values, self.validity):
            if not ok and r != INVALID_REWARD:
                raise ValueError("invalid candidates must carry reward -1")

    def __len__(self) -> int:
        return len(self.values)

    def to_array(self) -> np.ndarray:
        return np.array(self.values, dtype=np.float64)


def _scores(v: Any) -> np.ndarray:
    arr = np.asarray(v.values if isinstance(v, ScoreVector) else v, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 2:
        raise ValueError("need at least two scores")
    return arr


def local_reward(v: Any) -> np.ndarray:
    """Scores standardized to zero mean / unit population std."""
    x = _scores(v)
    sd = x.std()
    if sd < STD_EPS:
        return np.zeros_like(x)
    return (x - x.mean()) / sd


def improvement_reward(v: Any, prev_best: float) -> np.ndarray:
    """Gain over the previous best, divided by the population std of the gains."""
    imp = _scores(v) - float(prev_best)
    sd = imp.std()
    if sd < STD_EPS:
        return np.zeros_like(imp)
    return imp / sd


def combined_reward(v: Any, prev_best: float, t: int, T: int,
                    validity: Sequence[bool] | None = None) -> RewardVector:
    if not 1 <= t <= T:
        raise ValueError(f"checkpoint index {t} outside [1, {T}]")
    x = _scores(v)
    ok = [True] * x.size if validity is None else [bool(b) for b in validity]
    if len(ok) != x.size:
        raise ValueError("validity length must match scores")
    r = (t / T) * (local_reward(x) + improvement_reward(x, prev_best))
    values = tuple(float(rj) if okj else INVALID_REWARD for rj, okj in zip(r, ok))
    return RewardVector(values, tuple(ok))
