"""Discounted ensemble of policy snapshots used to steer a fresh training run."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .core import WEIGHT_FLOOR, DimensionError, WeightVector
from .policy import PolicySnapshot, load_snapshots, save_snapshots, weights_from_losses


def ensemble_coefficients(e: int, E: int, T: int, gamma: float = 0.9) -> np.ndarray:
    """Normalized ``gamma ** |e*T/E - t|`` for t = 1..T."""
    if not 1 <= e <= E:
        raise ValueError(f"epoch {e} outside [1, {E}]")
    if not 0 < gamma <= 1:
        raise ValueError("gamma must lie in (0, 1]")
    align = e * T / E
    c = gamma ** np.abs(align - np.arange(1, T + 1))
    return c / c.sum()


@dataclass(frozen=True)
class PolicyEnsemble:
    snapshots: tuple[PolicySnapshot, ...]
    gamma: float = 0.9

    def __post_init__(self) -> None:
        object.__setattr__(self, "snapshots", tuple(self.snapshots))
        if not self.snapshots:
            raise ValueError("an ensemble needs at least one snapshot")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        ns = {s.params.n for s in self.snapshots}
        if len(ns) != 1:
            raise DimensionError("snapshots disagree on the loss dimension")

    @property
    def T(self) -> int:
        return len(self.snapshots)

    @property
    def n(self) -> int:
        return self.snapshots[0].params.n

    def final(self) -> PolicyEnsemble:
        """Ensemble holding only the last snapshot."""
        return PolicyEnsemble((self.snapshots[-1],), self.gamma)

    def save(self, path: str | Path) -> None:
        save_snapshots(path, self.snapshots, gamma=self.gamma, T=self.T)

    @classmethod
    def load(cls, path: str | Path) -> PolicyEnsemble:
        snaps, meta = load_snapshots(path)
        if meta.get("T", len(snaps)) != len(snaps):
            raise ValueError("ensemble metadata T does not match the stored snapshots")
        return cls(tuple(snaps), float(meta["gamma"]))


def ensemble_predict_raw(ensemble: PolicyEnsemble, l: Any, e: int, E: int) -> np.ndarray:
    """Convex combination of per-snapshot weight predictions (before flooring)."""
    arr = np.asarray(l, dtype=np.float64)
    if arr.shape != (ensemble.n,):
        raise DimensionError(f"loss dimension mismatch: ensemble expects {ensemble.n}, got {arr.size}")
    coeffs = ensemble_coefficients(e, E, ensemble.T, ensemble.gamma)
    preds = np.stack([weights_from_losses(s.params, arr).values for s in ensemble.snapshots])
    return coeffs @ preds


def ensemble_predict(ensemble: PolicyEnsemble, l: Any, e: int, E: int) -> WeightVector:
    return WeightVector(np.maximum(ensemble_predict_raw(ensemble, l, e, E), WEIGHT_FLOOR), applied=True)


def combine_predictions(predictions: Sequence[Any], e: int, E: int, gamma: float = 0.9) -> np.ndarray:
    """Apply the ensemble coefficients to precomputed per-snapshot predictions."""
    preds = np.asarray(predictions, dtype=np.float64)
    return ensemble_coefficients(e, E, len(preds), gamma) @ preds
