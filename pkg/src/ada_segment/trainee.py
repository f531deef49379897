"""Synthetic multi-loss trainees.

Every task is a noisy least-squares regression sharing a linear backbone
``w`` (acting on shared inputs ``x``) and owning a linear head ``v_i``
(acting on task inputs ``z_i``)::

    y_hat_i = x . w + z_i . v_i
    loss_i  = scale_i * 0.5 * mean((y_hat_i - y_i) ** 2)

Loss weights steer the backbone only: head gradients are multiplied by
``1 / lambda_i`` which cancels the weight exactly.

Task kinds
    ``static-imbalance``  tasks disagree on the shared truth and their losses
        differ in scale, so uniform weights favour the large-scale task.
    ``dynamic-phase``     all tasks share one truth, but each task's training
        labels are corrupted along the backbone direction (plus per-sample
        noise of size ``corruption_noise``) during one phase of training;
        which task is corrupted switches at ``phase_switch``.
    ``grouped-ten-loss``  ten losses in three groups of three plus one,
        mirroring cascade-stage detection losses and a segmentation loss.
"""
from __future__ import annotations

import copy
import functools
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Protocol, Sequence

import numpy as np

from .core import DivergenceError, LossVector, expand_weights

TASK_KINDS = ("static-imbalance", "dynamic-phase", "grouped-ten-loss")


@dataclass(frozen=True)
class TraineeSpec:
    task_kind: str = "static-imbalance"
    n: int = 2
    shared_dim: int = 8
    head_dims: tuple[int, ...] = ()
    scales: tuple[float, ...] = ()
    noise: tuple[float, ...] = ()
    # norm of each task's deviation from the common backbone truth
    conflict: float = 0.0
    # norm of the label corruption applied during a task's noisy phase
    corruption: float = 0.0
    # std of per-sample label noise added on top of the corruption offset
    corruption_noise: float = 0.0
    # fraction of the training horizon at which the dynamic phases switch
    phase_switch: float = 0.5
    # trailing shared input dimensions with variance ``slow_var`` (slow to learn)
    slow_dims: int = 0
    slow_var: float = 1.0
    inner_lr: float = 0.05
    horizon_epochs: int = 9
    n_train: int = 512
    n_val: int = 1024
    batch_size: int = 32
    seed: int = 0
    # task index -> group id; tasks in a group share truth and corruption
    task_groups: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        n = self.n
        defaults = {
            "head_dims": (4,) * n,
            "scales": (1.0,) * n,
            "noise": (0.1,) * n,
            "task_groups": tuple(range(n)),
        }
        for name, default in defaults.items():
            val = getattr(self, name)
            val = default if not val else tuple(val)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "head_dims", tuple(int(h) for h in self.head_dims))
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))
        object.__setattr__(self, "noise", tuple(float(s) for s in self.noise))
        object.__setattr__(self, "task_groups", tuple(int(g) for g in self.task_groups))
        self.validate()

    def validate(self) -> None:
        if self.task_kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.task_kind!r}")
        if self.n < 2:
            raise ValueError("a trainee needs at least two losses")
        for name in ("head_dims", "scales", "noise", "task_groups"):
            if len(getattr(self, name)) != self.n:
                raise ValueError(f"{name} must have one entry per loss")
        if any(s <= 0 for s in self.scales):
            raise ValueError("loss scales must be positive")
        if any(s < 0 for s in self.noise) or self.corruption_noise < 0:
            raise ValueError("noise levels must be non-negative")
        if self.shared_dim < 0 or any(h < 0 for h in self.head_dims):
            raise ValueError("dimensions must be non-negative")
        if not 0 <= self.slow_dims <= self.shared_dim or self.slow_var <= 0:
            raise ValueError("slow_dims must fit in shared_dim and slow_var must be positive")
        if not 0 < self.phase_switch < 1:
            raise ValueError("phase_switch must lie inside the training horizon")
        if self.batch_size < 1 or self.n_train < self.batch_size or self.n_val < 1:
            raise ValueError("need n_train >= batch_size >= 1 and n_val >= 1")
        if self.inner_lr <= 0 or self.horizon_epochs < 1:
            raise ValueError("inner_lr and horizon_epochs must be positive")

    @property
    def iters_per_epoch(self) -> int:
        return self.n_train // self.batch_size

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> TraineeSpec:
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})

    def rescaled(self, factors: Sequence[float]) -> TraineeSpec:
        """Same task with each loss's scale multiplied by ``factors``."""
        return replace(self, scales=tuple(s * f for s, f in zip(self.scales, factors)))

    def build(self, seed: int, horizon: int | None = None) -> SyntheticTrainee:
        return SyntheticTrainee.create(self, seed, horizon)


@dataclass(frozen=True)
class TaskData:
    X: np.ndarray        # (N, d) shared inputs
    Z: np.ndarray        # (N, n, h_max) task inputs, zero padded
    Y: np.ndarray        # (N, n) noisy labels
    C: np.ndarray        # (N, n) label corruption offsets x . delta_i
    corrupt_late: np.ndarray  # (n,) bool: task corrupted after the switch (else before)
    X_val: np.ndarray
    Z_val: np.ndarray
    F_val: np.ndarray    # (N_val, n) clean targets
    norm_val: np.ndarray  # (n,) per-task error normalizer
    w_true: np.ndarray   # (n, d)
    v_true: np.ndarray   # (n, h_max)


def _unit(rng: np.random.Generator, k: int) -> np.ndarray:
    if k == 0:
        return np.zeros(0)
    u = rng.standard_normal(k)
    return u / np.linalg.norm(u)


@functools.lru_cache(maxsize=32)
def task_data(spec: TraineeSpec) -> TaskData:
    """Deterministic dataset and ground truth for ``spec`` (keyed on ``spec.seed``)."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=spec.seed, spawn_key=(0x7A5C,)))
    n, d = spec.n, spec.shared_dim
    hmax = max(spec.head_dims)
    base = _unit(rng, d)
    groups = sorted(set(spec.task_groups))
    dev = {g: _unit(rng, d) for g in groups}
    fast = d - spec.slow_dims
    corr_dir = {}
    for g in groups:
        # early-phase corruption lives in the slow subspace, late-phase in the fast one
        u = np.zeros(d)
        if g % 2 == 1 and spec.slow_dims:
            # equal label-space magnitude: var(u . x) == 1
            u[fast:] = _unit(rng, spec.slow_dims) / np.sqrt(spec.slow_var)
        elif g % 2 == 0 and spec.slow_dims:
            u[:fast] = _unit(rng, fast)
        else:
            u = _unit(rng, d)
        corr_dir[g] = u
    x_std = np.ones(d)
    x_std[fast:] = np.sqrt(spec.slow_var)
    w_true = np.stack([base + spec.conflict * dev[spec.task_groups[i]] for i in range(n)])
    v_true = np.zeros((n, hmax))
    for i, h in enumerate(spec.head_dims):
        v_true[i, :h] = _unit(rng, h)
    delta = np.stack([spec.corruption * corr_dir[spec.task_groups[i]] for i in range(n)])
    head_mask = (np.arange(hmax)[None, :] < np.array(spec.head_dims)[:, None]).astype(float)

    def inputs(N: int):
        X = rng.standard_normal((N, d)) * x_std[None]
        Z = rng.standard_normal((N, n, hmax)) * head_mask[None]
        F = X @ w_true.T + np.einsum("bih,ih->bi", Z, v_true)
        return X, Z, F

    X, Z, F = inputs(spec.n_train)
    Y = F + rng.standard_normal((spec.n_train, n)) * np.array(spec.noise)[None]
    X_val, Z_val, F_val = inputs(spec.n_val)
    if spec.task_kind == "dynamic-phase":
        corrupt_late = np.array([spec.task_groups[i] % 2 == 0 for i in range(n)])
        C = X @ delta.T + spec.corruption_noise * rng.standard_normal((spec.n_train, n))
    else:
        corrupt_late = np.zeros(n, dtype=bool)
        C = np.zeros_like(Y)
    data = TaskData(X, Z, Y, C, corrupt_late, X_val, Z_val, F_val,
                    np.mean(F_val**2, axis=0), w_true, v_true)
    for a in (data.X, data.Z, data.Y, data.C, data.X_val, data.Z_val, data.F_val, data.norm_val):
        a.setflags(write=False)
    return data


def normalized_errors(w: np.ndarray, V: np.ndarray, X: np.ndarray, Z: np.ndarray,
                      F: np.ndarray, norm: np.ndarray) -> np.ndarray:
    pred = (X @ w)[:, None] + np.einsum("bih,ih->bi", Z, V)
    return np.mean((pred - F) ** 2, axis=0) / norm


def score_from_errors(errors: np.ndarray) -> float:
    return float(np.clip(100.0 * (1.0 - float(np.mean(errors))), 0.0, 100.0))


class Trainee(Protocol):
    """What the orchestrator needs from a trainable multi-loss model."""

    n: int

    def train(self, weights: np.ndarray, q: int) -> np.ndarray: ...
    def evaluate(self) -> float: ...
    def load_from(self, source: Any) -> None: ...
    def copy(self) -> Any: ...
    def params_equal(self, other: Any) -> bool: ...


@dataclass
class SyntheticTrainee:
    spec: TraineeSpec
    w: np.ndarray
    V: np.ndarray
    step: int
    horizon: int
    rng: np.random.Generator
    order: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    cursor: int = 0
    #: per-iteration unweighted losses of the most recent interval
    last_iteration_losses: np.ndarray | None = None

    @classmethod
    def create(cls, spec: TraineeSpec, seed: int, horizon: int | None = None) -> SyntheticTrainee:
        hmax = max(spec.head_dims)
        if horizon is None:
            horizon = spec.horizon_epochs * spec.iters_per_epoch
        return cls(spec, np.zeros(spec.shared_dim), np.zeros((spec.n, hmax)), 0, int(horizon),
                   np.random.default_rng(seed))

    @property
    def n(self) -> int:
        return self.spec.n

    @property
    def data(self) -> TaskData:
        return task_data(self.spec)

    def copy(self) -> SyntheticTrainee:
        return copy.deepcopy(self)

    def learning_rate(self, step: int | None = None) -> float:
        s = self.step if step is None else step
        frac = min(s, self.horizon) / self.horizon
        return self.spec.inner_lr * 0.5 * (1.0 + math.cos(math.pi * frac))

    def switch_step(self) -> int:
        return int(round(self.spec.phase_switch * self.horizon))

    def corruption_mask(self, step: int | None = None) -> np.ndarray:
        """1.0 for tasks whose labels are corrupted at ``step``."""
        s = self.step if step is None else step
        late = s >= self.switch_step()
        return (self.data.corrupt_late == late).astype(float) * (self.spec.task_kind == "dynamic-phase")

    def _next_batch(self) -> np.ndarray:
        B = self.spec.batch_size
        if self.cursor + B > len(self.order):
            self.order = self.rng.permutation(self.spec.n_train)
            self.cursor = 0
        idx = self.order[self.cursor:self.cursor + B]
        self.cursor += B
        return idx

    def residuals(self, idx: np.ndarray, step: int | None = None) -> np.ndarray:
        data = self.data
        X, Z = data.X[idx], data.Z[idx]
        target = data.Y[idx] + data.C[idx] * self.corruption_mask(step)[None]
        return (X @ self.w)[:, None] + np.einsum("bih,ih->bi", Z, self.V) - target

    def batch_losses(self, idx: np.ndarray) -> np.ndarray:
        R = self.residuals(idx)
        return np.array(self.spec.scales) * 0.5 * np.mean(R**2, axis=0)

    def per_loss_gradients(self, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Unweighted gradients of each loss: shared (n, d) and head (n, h_max)."""
        data = self.data
        R = self.residuals(idx)
        scales = np.array(self.spec.scales)
        g_shared = scales[:, None] * (R.T @ data.X[idx]) / len(idx)
        g_head = scales[:, None] * np.einsum("bih,bi->ih", data.Z[idx], R) / len(idx)
        return g_shared, g_head

    def train(self, weights: Any, q: int) -> np.ndarray:
        """``q`` SGD steps on ``sum_i weights_i * loss_i``; returns the interval-mean losses."""
        lam = np.asarray(weights, dtype=np.float64)
        if lam.shape != (self.n,):
            raise ValueError(f"expected {self.n} per-loss weights, got {lam.shape}")
        if np.any(lam <= 0):
            raise ValueError("weights must be positive")
        data = self.data
        scales = np.array(self.spec.scales)
        history = np.empty((q, self.n))
        for k in range(q):
            idx = self._next_batch()
            X, Z = data.X[idx], data.Z[idx]
            R = self.residuals(idx)
            history[k] = scales * 0.5 * np.mean(R**2, axis=0)
            if not np.all(np.isfinite(history[k])):
                raise DivergenceError(f"non-finite loss at step {self.step} with weights {lam.tolist()}")
            lr = self.learning_rate()
            g_w = X.T @ (R @ (lam * scales)) / len(idx)
            # head gradient weighted by lambda_i then rescaled by 1/lambda_i
            g_V = np.einsum("bih,bi->ih", Z, R * scales[None]) / len(idx)
            self.w = self.w - lr * g_w
            self.V = self.V - lr * g_V
            self.step += 1
        self.last_iteration_losses = history
        return history.mean(axis=0)

    def evaluate(self) -> float:
        d = self.data
        return score_from_errors(normalized_errors(self.w, self.V, d.X_val, d.Z_val, d.F_val, d.norm_val))

    def load_from(self, source: SyntheticTrainee) -> None:
        """Copy parameters and schedule position from ``source``; keep own data order."""
        if source.spec != self.spec:
            raise ValueError("cannot clone between trainees with different specs")
        self.w = source.w.copy()
        self.V = source.V.copy()
        self.step = source.step
        self.horizon = source.horizon

    def params_equal(self, other: SyntheticTrainee) -> bool:
        return (np.array_equal(self.w, other.w) and np.array_equal(self.V, other.V)
                and self.step == other.step)

    def current_losses(self, idx: np.ndarray | None = None) -> np.ndarray:
        if idx is None:
            idx = np.arange(self.spec.n_train)
        return self.batch_losses(idx)


# -- functional interface ------------------------------------------------------


def make_trainee(spec: Any, seed: int, horizon: int | None = None):
    """Fresh trainee for ``spec``; equal (spec, seed) give identical states."""
    return spec.build(seed, horizon)


def train_interval(state, weights: Any, q: int,
                   groups: Sequence[Sequence[int]] | None = None):
    """Train a copy of ``state`` for ``q`` iterations.

    With ``groups`` the weights are per group and each group's losses are
    averaged before weighting.
    """
    new = state.copy()
    lam = expand_weights(np.asarray(weights, dtype=np.float64), groups, new.n)
    losses = new.train(lam, q)
    return new, LossVector(losses)


def evaluate(state) -> float:
    return state.evaluate()


def clone_from(target, source):
    new = target.copy()
    new.load_from(source)
    return new
