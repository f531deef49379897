"""Shared value types, run configuration, RNG streams and the JSONL run log."""
from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

#: floor applied to loss values before the weight division
LOSS_FLOOR = 1e-8
#: positivity floor for weights handed to a trainee
WEIGHT_FLOOR = 1e-3
#: standard deviations below this are treated as degenerate
STD_EPS = 1e-12


class ConfigError(ValueError):
    """Raised for an invalid :class:`RunConfig`."""


class DivergenceError(RuntimeError):
    """A trainee produced a non-finite loss."""


class DimensionError(ValueError):
    """Loss/weight dimension does not match the policy or trainee."""


def _readonly(values: Any) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-d sequence, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


class _Vector:
    """Immutable 1-d float64 vector with value equality."""

    __slots__ = ("values",)

    def __init__(self, values: Any) -> None:
        if isinstance(values, _Vector):
            values = values.values
        arr = _readonly(values)
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{type(self).__name__} entries must be finite")
        object.__setattr__(self, "values", arr)

    def __setattr__(self, name: str, value: Any) -> None:
        raise AttributeError(f"{type(self).__name__} is immutable")

    def __reduce__(self):
        # rebuild through __init__ so pickling (e.g. to worker processes) keeps the checks
        return (type(self), (self.values.tolist(),))

    def __len__(self) -> int:
        return len(self.values)

    def __iter__(self):
        return iter(self.values.tolist())

    def __getitem__(self, i):
        return self.values[i]

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __eq__(self, other: object) -> bool:
        if type(other) is not type(self):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self) -> int:
        return hash(self._key())

    def _key(self) -> tuple:
        return (tuple(self.values.tolist()),)

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.values.tolist()!r})"

    def to_list(self) -> list[float]:
        return self.values.tolist()


class LossVector(_Vector):
    """Per-loss interval means; non-negative."""

    __slots__ = ()

    def __init__(self, values: Any) -> None:
        super().__init__(values)
        if len(self.values) < 1:
            raise ValueError("empty loss vector")
        if np.any(self.values < 0):
            raise ValueError("loss values must be non-negative")


class WeightVector(_Vector):
    """Per-loss multipliers. ``applied`` vectors respect :data:`WEIGHT_FLOOR`."""

    __slots__ = ("applied",)

    def __init__(self, values: Any, applied: bool = False) -> None:
        super().__init__(values)
        object.__setattr__(self, "applied", bool(applied))
        if applied and np.any(self.values < WEIGHT_FLOOR):
            raise ValueError(f"applied weights must be >= {WEIGHT_FLOOR}")

    def _key(self) -> tuple:
        return (tuple(self.values.tolist()), self.applied)

    def __reduce__(self):
        return (WeightVector, (self.values.tolist(), self.applied))

    def floored(self) -> WeightVector:
        return WeightVector(np.maximum(self.values, WEIGHT_FLOOR), applied=True)

    def __repr__(self) -> str:
        return f"WeightVector({self.values.tolist()!r}, applied={self.applied})"


class ScoreVector(_Vector):
    """Validation scores of the m population members (higher is better)."""

    __slots__ = ()

    def __init__(self, values: Any) -> None:
        super().__init__(values)
        if len(self.values) < 2:
            raise ValueError("a score vector needs at least two entries")


def argmax_first(values: Sequence[float]) -> int:
    """Index of the maximum, ties resolved toward the lowest index."""
    return int(np.argmax(np.asarray(values, dtype=np.float64)))


@dataclass(frozen=True)
class CheckpointRecord:
    t: int
    loss_state: LossVector
    candidates: tuple[WeightVector, ...]
    applied: tuple[WeightVector, ...]
    scores: ScoreVector
    rewards: tuple[float, ...]
    prev_best_score: float
    best_index: int = -1
    best_score: float = float("nan")

    def __post_init__(self) -> None:
        m = len(self.scores)
        if not (len(self.candidates) == len(self.applied) == len(self.rewards) == m):
            raise ValueError("candidates, applied, rewards and scores must all have length m")
        best = argmax_first(self.scores.values)
        if self.best_index not in (-1, best):
            raise ValueError(f"best_index {self.best_index} disagrees with argmax(scores)={best}")
        object.__setattr__(self, "best_index", best)
        object.__setattr__(self, "best_score", float(self.scores.values[best]))
        object.__setattr__(self, "rewards", tuple(float(r) for r in self.rewards))

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "loss_state": self.loss_state.to_list(),
            "candidates": [c.to_list() for c in self.candidates],
            "applied": [a.to_list() for a in self.applied],
            "scores": self.scores.to_list(),
            "rewards": list(self.rewards),
            "best_index": self.best_index,
            "best_score": self.best_score,
            "prev_best_score": self.prev_best_score,
        }

    @classmethod
    def from_dict(cls, d: dict) -> CheckpointRecord:
        return cls(
            t=int(d["t"]),
            loss_state=LossVector(d["loss_state"]),
            candidates=tuple(WeightVector(c) for c in d["candidates"]),
            applied=tuple(WeightVector(a, applied=True) for a in d["applied"]),
            scores=ScoreVector(d["scores"]),
            rewards=tuple(d["rewards"]),
            prev_best_score=float(d["prev_best_score"]),
            best_index=int(d.get("best_index", -1)),
        )


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to launch an exploration or transfer run.

    ``trainee_spec`` is kept as a plain mapping here; :mod:`ada_segment.trainee`
    turns it into a ``TraineeSpec``.
    """

    n: int = 10
    m: int = 8
    T: int = 8
    E: int = 8
    sigma: float = 0.2
    gamma: float = 0.9
    iterations_per_checkpoint: int | None = None
    policy_lr: float = 5e-2
    policy_weight_decay: float = 5e-4
    master_seed: int = 0
    trainee_spec: dict = field(default_factory=dict)
    loss_groups: tuple[tuple[int, ...], ...] | None = None

    def __post_init__(self) -> None:
        if self.loss_groups is not None:
            groups = tuple(tuple(int(i) for i in g) for g in self.loss_groups)
            object.__setattr__(self, "loss_groups", groups)
        object.__setattr__(self, "trainee_spec", dict(self.trainee_spec))

    @property
    def n_effective(self) -> int:
        return self.n if self.loss_groups is None else len(self.loss_groups)

    def groups(self) -> tuple[tuple[int, ...], ...]:
        """Loss groups, with singleton groups when none are configured."""
        if self.loss_groups is None:
            return tuple((i,) for i in range(self.n))
        return self.loss_groups

    def with_(self, **changes: Any) -> RunConfig:
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.loss_groups is not None:
            d["loss_groups"] = [list(g) for g in self.loss_groups]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def validate_config(config: RunConfig) -> RunConfig:
    """Check the invariants of ``config`` and return it unchanged."""
    if config.n < 1:
        raise ConfigError("empty loss vector: n must be >= 1")
    if config.m < 2:
        raise ConfigError("population size m must be >= 2")
    if not config.sigma > 0:
        raise ConfigError("sigma must be positive")
    if not 0 < config.gamma <= 1:
        raise ConfigError("gamma must lie in (0, 1]")
    if config.T < 1:
        raise ConfigError("T must be >= 1")
    if config.E < 1:
        raise ConfigError("E must be >= 1")
    if config.iterations_per_checkpoint is not None and config.iterations_per_checkpoint < 1:
        raise ConfigError("iterations_per_checkpoint must be >= 1")
    if config.policy_lr <= 0 or config.policy_weight_decay < 0:
        raise ConfigError("policy_lr must be positive and policy_weight_decay non-negative")
    if config.loss_groups is not None:
        seen: set[int] = set()
        for g in config.loss_groups:
            if not g:
                raise ConfigError("empty loss group")
            for i in g:
                if not 0 <= i < config.n:
                    raise ConfigError(f"loss index {i} outside [0, {config.n})")
                if i in seen:
                    raise ConfigError("groups overlap")
                seen.add(i)
        if len(seen) != config.n:
            raise ConfigError("loss groups must cover every loss index")
    return config


# -- grouping ---------------------------------------------------------------


def group_losses(losses: Any, groups: Sequence[Sequence[int]] | None) -> np.ndarray:
    """Average grouped losses into one effective loss per group."""
    arr = np.asarray(losses, dtype=np.float64)
    if groups is None:
        return arr.copy()
    return np.array([arr[list(g)].mean() for g in groups])


def expand_weights(weights: Any, groups: Sequence[Sequence[int]] | None, n: int) -> np.ndarray:
    """Per-loss weights equivalent to weighting each group's mean loss.

    A group weight ``w`` on ``mean(l_g)`` is ``w / |g|`` on each member.
    """
    w = np.asarray(weights, dtype=np.float64)
    if groups is None:
        if len(w) != n:
            raise DimensionError("loss dimension mismatch")
        return w.copy()
    if len(w) != len(groups):
        raise DimensionError("loss dimension mismatch")
    out = np.empty(n)
    for wg, g in zip(w, groups):
        out[list(g)] = wg / len(g)
    return out


# -- RNG streams ------------------------------------------------------------


def _stream_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def stream_id(*parts: Any) -> str:
    return "/".join(str(p) for p in parts)


def rng_stream(master_seed: int, *parts: Any) -> np.random.Generator:
    """Independent generator for the named stream, e.g. ``rng_stream(0, "trainee", 3)``."""
    key = _stream_key(stream_id(*parts))
    return np.random.default_rng(np.random.SeedSequence(entropy=master_seed, spawn_key=(key,)))


def derive_seed(master_seed: int, *parts: Any) -> int:
    key = _stream_key(stream_id(*parts))
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(key,))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


# -- run log ----------------------------------------------------------------

RECORD_TYPES = ("checkpoint", "epoch", "policy_update", "transfer_step")


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, _Vector):
        return obj.to_list()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


class RunLog:
    """In-memory list of log records that serializes as JSONL.

    Floats go through ``repr`` which round-trips doubles exactly, so equal
    runs produce byte-identical files.
    """

    def __init__(self, records: Iterable[dict] | None = None) -> None:
        self.records: list[dict] = list(records or [])

    def emit(self, kind: str, **payload: Any) -> dict:
        if kind not in RECORD_TYPES:
            raise ValueError(f"unknown record type {kind!r}")
        record = {"type": kind, **_jsonable(payload)}
        self.records.append(record)
        return record

    def extend(self, other: RunLog) -> None:
        self.records.extend(other.records)

    def of_type(self, kind: str) -> list[dict]:
        return [r for r in self.records if r["type"] == kind]

    def dumps(self) -> str:
        return "".join(json.dumps(r, allow_nan=False) + "\n" for r in self.records)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def read(cls, path: str | Path) -> RunLog:
        with open(path, encoding="utf-8") as fh:
            return cls(json.loads(line) for line in fh if line.strip())

    def __len__(self) -> int:
        return len(self.records)
