"""Weight-controller policy: a small ReLU MLP mapping losses to weighted losses.

The network predicts the weighted loss ``eta = pi(l)``; the loss weights are
recovered as ``eta / l``. Gradients are derived by hand for this fixed
architecture (n -> 16 -> 16 -> n).
"""
from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .core import LOSS_FLOOR, DimensionError, LossVector, WeightVector

HIDDEN = 16
INIT_STD = 0.01
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8

LAYER_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, layer: str) -> None:
        super().__init__(f"non-finite policy gradient in layer {layer}")
        self.layer = layer


@dataclass
class PolicyParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray

    def __post_init__(self) -> None:
        n = self.W1.shape[1]
        h1, h2 = self.W1.shape[0], self.W2.shape[0]
        expected = {
            "W1": (h1, n), "b1": (h1,), "W2": (h2, h1), "b2": (h2,), "W3": (n, h2), "b3": (n,),
        }
        for name, shape in expected.items():
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise DimensionError(f"{name} has shape {arr.shape}, expected {shape}")
            setattr(self, name, arr)

    @property
    def n(self) -> int:
        return self.W1.shape[1]

    def arrays(self) -> tuple[np.ndarray, ...]:
        return tuple(getattr(self, k) for k in LAYER_NAMES)

    def copy(self) -> PolicyParams:
        return PolicyParams(*(a.copy() for a in self.arrays()))

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vec: np.ndarray) -> PolicyParams:
        out, pos = [], 0
        for a in self.arrays():
            out.append(np.array(vec[pos:pos + a.size], dtype=np.float64).reshape(a.shape))
            pos += a.size
        return PolicyParams(*out)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PolicyParams):
            return NotImplemented
        return all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in LAYER_NAMES}

    @classmethod
    def from_dict(cls, d: dict) -> PolicyParams:
        return cls(**{k: np.array(d[k], dtype=np.float64) for k in LAYER_NAMES})


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: PolicyParams) -> AdamState:
        return cls([np.zeros_like(a) for a in params.arrays()],
                   [np.zeros_like(a) for a in params.arrays()], 0)

    def copy(self) -> AdamState:
        return AdamState([a.copy() for a in self.m], [a.copy() for a in self.v], self.step)


@dataclass(frozen=True)
class PolicySnapshot:
    t: int
    params: PolicyParams = field(compare=True)
    rng_stream: str = ""

    def __post_init__(self) -> None:
        frozen = self.params.copy()
        for a in frozen.arrays():
            a.setflags(write=False)
        object.__setattr__(self, "params", frozen)

    def to_dict(self) -> dict:
        p = self.params
        return {
            "t": self.t,
            "rng_stream": self.rng_stream,
            "shapes": {k: list(getattr(p, k).shape) for k in LAYER_NAMES},
            "params": p.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> PolicySnapshot:
        params = PolicyParams.from_dict(d["params"])
        for k in LAYER_NAMES:
            if list(getattr(params, k).shape) != list(d["shapes"][k]):
                raise DimensionError(f"snapshot layer {k} does not match its declared shape")
        return cls(int(d["t"]), params, d.get("rng_stream", ""))

    def dumps(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def loads(cls, text: str) -> PolicySnapshot:
        return cls.from_dict(json.loads(text))


def init_policy(n: int, rng: np.random.Generator, hidden: int = HIDDEN,
                std: float = INIT_STD) -> PolicyParams:
    """Weights ~ Normal(1/n_c, std) with n_c the layer fan-in; biases zero."""
    if n < 1:
        raise ValueError("n must be >= 1")
    shapes = [(hidden, n), (hidden, hidden), (n, hidden)]
    Ws = [rng.normal(1.0 / fan_in, std, size=(fan_out, fan_in)) for fan_out, fan_in in shapes]
    return PolicyParams(Ws[0], np.zeros(hidden), Ws[1], np.zeros(hidden), Ws[2], np.zeros(n))


def _as_losses(l: Any, n: int) -> np.ndarray:
    arr = np.asarray(l.values if isinstance(l, LossVector) else l, dtype=np.float64)
    if arr.shape != (n,):
        raise DimensionError(f"loss dimension mismatch: policy expects {n}, got {arr.shape}")
    return arr


def _forward_cache(params: PolicyParams, l: np.ndarray):
    a1 = params.W1 @ l + params.b1
    h1 = np.maximum(a1, 0.0)
    a2 = params.W2 @ h1 + params.b2
    h2 = np.maximum(a2, 0.0)
    eta = params.W3 @ h2 + params.b3
    return eta, (l, a1, h1, a2, h2)


def forward(params: PolicyParams, l: Any) -> np.ndarray:
    """Estimated weighted loss ``eta`` for loss vector ``l``."""
    x = _as_losses(l, params.n)
    return _forward_cache(params, x)[0]


def _backward(params: PolicyParams, cache, g_eta: np.ndarray) -> PolicyParams:
    l, a1, h1, a2, h2 = cache
    gW3 = np.outer(g_eta, h2)
    gb3 = g_eta.copy()
    g_a2 = (params.W3.T @ g_eta) * (a2 > 0)
    gW2 = np.outer(g_a2, h1)
    gb2 = g_a2
    g_a1 = (params.W2.T @ g_a2) * (a1 > 0)
    gW1 = np.outer(g_a1, l)
    gb1 = g_a1
    return PolicyParams(gW1, gb1, gW2, gb2, gW3, gb3)


def floored_losses(l: Any, n: int | None = None) -> np.ndarray:
    arr = np.asarray(l.values if isinstance(l, LossVector) else l, dtype=np.float64)
    return np.maximum(arr, LOSS_FLOOR)


def weights_from_losses(params: PolicyParams, l: Any) -> WeightVector:
    """Raw mean weights ``pi(l) / max(l, eps)``; may contain negatives."""
    x = _as_losses(l, params.n)
    return WeightVector(forward(params, x) / np.maximum(x, LOSS_FLOOR))


def log_density_grad_mu(sample: Any, mu: Any, sigma: float) -> np.ndarray:
    """d/dmu of log N(sample; mu, sigma^2 I)."""
    s = np.asarray(sample, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    if s.shape != mu.shape:
        raise DimensionError("sample and mean lengths differ")
    return (s - mu) / sigma**2


def log_density(sample: Any, mu: Any, sigma: float) -> float:
    s = np.asarray(sample, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    k = s.size
    return float(-0.5 * np.sum((s - mu) ** 2) / sigma**2 - k * np.log(sigma) - 0.5 * k * np.log(2 * np.pi))


def reinforce_gradient(params: PolicyParams, l: Any, samples: Sequence[Any],
                       rewards: Sequence[float], sigma: float) -> PolicyParams:
    """Gradient of ``(1/m) sum_j r_j log s(sample_j; mu(theta), sigma)`` w.r.t. theta."""
    if len(samples) != len(rewards) or len(samples) == 0:
        raise ValueError("need one reward per sample")
    x = _as_losses(l, params.n)
    denom = np.maximum(x, LOSS_FLOOR)
    eta, cache = _forward_cache(params, x)
    mu = eta / denom
    g_mu = np.zeros_like(mu)
    for s, r in zip(samples, rewards):
        g_mu += float(r) * log_density_grad_mu(s, mu, sigma)
    g_mu /= len(samples)
    grad = _backward(params, cache, g_mu / denom)
    for name, a in zip(LAYER_NAMES, grad.arrays()):
        if not np.all(np.isfinite(a)):
            raise NonFiniteGradientError(name)
    return grad


def adam_step(params: PolicyParams, adam: AdamState, gradient: PolicyParams, lr: float,
              weight_decay: float) -> tuple[PolicyParams, AdamState]:
    """One Adam descent step along ``gradient`` with decoupled weight decay.

    Decay is applied to weight matrices only; biases are not decayed.
    """
    b1, b2 = ADAM_BETAS
    step = adam.step + 1
    new_m, new_v, new_p = [], [], []
    for name, p, g, m, v in zip(LAYER_NAMES, params.arrays(), gradient.arrays(), adam.m, adam.v):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**step)
        v_hat = v / (1 - b2**step)
        update = lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        if name.startswith("W") and weight_decay:
            update = update + lr * weight_decay * p
        new_m.append(m)
        new_v.append(v)
        new_p.append(p - update)
    return PolicyParams(*new_p), AdamState(new_m, new_v, step)


def reinforce_update(params: PolicyParams, adam: AdamState, l: Any, samples: Sequence[Any],
                     rewards: Sequence[float], sigma: float, lr: float = 5e-2,
                     weight_decay: float = 5e-4) -> tuple[PolicyParams, AdamState]:
    """Ascend the REINFORCE objective by one Adam step (descent on its negation)."""
    grad = reinforce_gradient(params, l, samples, rewards, sigma)
    neg = PolicyParams(*(-a for a in grad.arrays()))
    return adam_step(params, adam, neg, lr, weight_decay)


# -- binary snapshot container ---------------------------------------------


def save_snapshots(path: str | Path, snapshots: Sequence[PolicySnapshot], **meta: Any) -> None:
    """Write snapshots (and scalar metadata) to a self-describing ``.npz`` container."""
    arrays: dict[str, np.ndarray] = {
        "t": np.array([s.t for s in snapshots], dtype=np.int64),
        "rng_stream": np.array([s.rng_stream for s in snapshots], dtype=np.str_),
        "meta": np.array(json.dumps(meta, sort_keys=True), dtype=np.str_),
    }
    for i, snap in enumerate(snapshots):
        for k in LAYER_NAMES:
            arrays[f"{i}/{k}"] = getattr(snap.params, k)
    buf = io.BytesIO()
    # np.savez stamps entries with the current time; a fixed date keeps files byte-identical
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            member = io.BytesIO()
            np.lib.format.write_array(member, np.asanyarray(arr), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0)), member.getvalue())
    Path(path).write_bytes(buf.getvalue())


def load_snapshots(path: str | Path) -> tuple[list[PolicySnapshot], dict]:
    with np.load(path, allow_pickle=False) as data:
        ts = data["t"].tolist()
        streams = data["rng_stream"].tolist()
        meta = json.loads(str(data["meta"]))
        snaps = []
        for i, (t, stream) in enumerate(zip(ts, streams)):
            params = PolicyParams(*(data[f"{i}/{k}"].copy() for k in LAYER_NAMES))
            snaps.append(PolicySnapshot(int(t), params, str(stream)))
    return snaps, meta
