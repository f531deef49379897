"""scikit-learn style wrapper: ``fit`` explores a trainee, ``predict`` maps losses to weights."""
from __future__ import annotations

from typing import Any

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .core import DimensionError, RunConfig
from .ensemble import PolicyEnsemble, ensemble_predict
from .orchestrator import explore, transfer_train
from .trainee import TraineeSpec


def _as_spec(X: Any) -> TraineeSpec:
    if isinstance(X, TraineeSpec):
        return X
    if isinstance(X, dict):
        return TraineeSpec.from_dict(X)
    raise TypeError("X must be a TraineeSpec or a TraineeSpec dict")


class AdaSegmentTuner(BaseEstimator):
    """Loss-weight controller trained by population exploration.

    ``fit(spec)`` runs the exploration phase on the synthetic trainee ``spec``
    and keeps the policy ensemble. ``predict(L, epoch, n_epochs)`` returns the
    applied weights for each row of loss states ``L``; without ``epoch`` the
    final snapshot alone is used.
    """

    def __init__(self, m: int = 8, T: int = 8, sigma: float = 0.2, gamma: float = 0.9,
                 policy_lr: float = 5e-2, policy_weight_decay: float = 5e-4,
                 iterations_per_checkpoint: int | None = None, loss_groups=None,
                 master_seed: int = 0, parallel: int = 1) -> None:
        self.m = m
        self.T = T
        self.sigma = sigma
        self.gamma = gamma
        self.policy_lr = policy_lr
        self.policy_weight_decay = policy_weight_decay
        self.iterations_per_checkpoint = iterations_per_checkpoint
        self.loss_groups = loss_groups
        self.master_seed = master_seed
        self.parallel = parallel

    def _config(self, spec: TraineeSpec) -> RunConfig:
        return RunConfig(n=spec.n, m=self.m, T=self.T, E=self.T, sigma=self.sigma, gamma=self.gamma,
                         iterations_per_checkpoint=self.iterations_per_checkpoint,
                         policy_lr=self.policy_lr, policy_weight_decay=self.policy_weight_decay,
                         master_seed=self.master_seed, trainee_spec=spec.to_dict(),
                         loss_groups=self.loss_groups)

    def fit(self, X: Any, y: Any = None) -> AdaSegmentTuner:
        spec = _as_spec(X)
        result = explore(self._config(spec), spec, parallel=self.parallel)
        self.spec_ = spec
        self.ensemble_: PolicyEnsemble = result.ensemble
        self.best_score_ = result.final_score
        self.records_ = result.records
        self.log_ = result.log
        self.n_features_in_ = result.ensemble.n
        return self

    def predict(self, L: Any, epoch: int | None = None, n_epochs: int | None = None) -> np.ndarray:
        check_is_fitted(self, "ensemble_")
        arr = np.atleast_2d(np.asarray(L, dtype=np.float64))
        if arr.shape[1] != self.n_features_in_:
            raise DimensionError(f"loss dimension mismatch: expected {self.n_features_in_}, got {arr.shape[1]}")
        if epoch is None:
            ens, e, E = self.ensemble_.final(), 1, 1
        else:
            ens, e, E = self.ensemble_, epoch, n_epochs or self.T
        return np.stack([ensemble_predict(ens, row, e, E).values for row in arr])

    def score(self, X: Any = None, y: Any = None, n_epochs: int | None = None) -> float:
        """Held-out score of a fresh trainee transfer-trained with the ensemble."""
        check_is_fitted(self, "ensemble_")
        spec = self.spec_ if X is None else _as_spec(X)
        state, _ = transfer_train(self.ensemble_, spec, n_epochs or self.T, self.master_seed,
                                  self.loss_groups)
        return float(state.evaluate())
