"""Dense-network substrate: forward pass, exact reverse-mode gradients, Adam and EMA.

Everything runs in float64. Parameters live in a :class:`ParamSet`, an ordered
mapping of named arrays whose shapes are fixed at construction. Functions here
never mutate their inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator, Mapping

import numpy as np

from .errors import CheckpointError, ConfigError, DimensionError, NumericError

LOG_FLOOR = 1e-12

ACTIVATIONS = ("tanh", "relu")


def safe_log(p: np.ndarray) -> np.ndarray:
    """``log(max(p, 1e-12))``; guards the 0·log 0 case."""
    return np.log(np.maximum(p, LOG_FLOOR))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class NetworkArch:
    input_dim: int
    hidden: tuple[int, ...]
    n_classes: int
    activation: str = "tanh"
    bias: bool = True

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.n_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.n_classes}")
        if not self.hidden:
            raise ConfigError("need at least one hidden layer")
        if self.input_dim < 1 or min(self.hidden) < 1:
            raise ConfigError("layer widths must be positive")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")

    @property
    def feature_dim(self) -> int:
        return self.hidden[-1]

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden, self.n_classes)

    def layer_names(self) -> list[tuple[str, str | None]]:
        """(weight, bias) names per layer, input to output; bias is None when disabled."""
        names = []
        n_layers = len(self.widths) - 1
        for i in range(n_layers):
            tag = "out" if i == n_layers - 1 else str(i)
            names.append((f"w_{tag}", f"b_{tag}" if self.bias else None))
        return names

    def shapes(self) -> dict[str, tuple[int, ...]]:
        out = {}
        for (wn, bn), (fan_in, fan_out) in zip(self.layer_names(), zip(self.widths, self.widths[1:])):
            out[wn] = (fan_in, fan_out)
            if bn is not None:
                out[bn] = (fan_out,)
        return out

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden": list(self.hidden),
            "n_classes": self.n_classes,
            "activation": self.activation,
            "bias": self.bias,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "NetworkArch":
        return cls(
            input_dim=int(d["input_dim"]),
            hidden=tuple(d["hidden"]),
            n_classes=int(d["n_classes"]),
            activation=str(d.get("activation", "tanh")),
            bias=bool(d.get("bias", True)),
        )


class ParamSet(Mapping[str, np.ndarray]):
    """Ordered, shape-frozen collection of float64 arrays."""

    def __init__(self, arrays: Mapping[str, np.ndarray]):
        self._arrays = {k: np.array(v, dtype=np.float64) for k, v in arrays.items()}

    def __getitem__(self, key: str) -> np.ndarray:
        return self._arrays[key]

    def __iter__(self) -> Iterator[str]:
        return iter(self._arrays)

    def __len__(self) -> int:
        return len(self._arrays)

    def __repr__(self) -> str:
        shapes = ", ".join(f"{k}{v.shape}" for k, v in self._arrays.items())
        return f"ParamSet({shapes})"

    @property
    def size(self) -> int:
        return sum(a.size for a in self._arrays.values())

    def copy(self) -> "ParamSet":
        return ParamSet(self._arrays)

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "ParamSet":
        return ParamSet({k: fn(v) for k, v in self._arrays.items()})

    def zip_map(self, other: "ParamSet", fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> "ParamSet":
        self._check_compatible(other)
        return ParamSet({k: fn(v, other[k]) for k, v in self._arrays.items()})

    def __add__(self, other: "ParamSet") -> "ParamSet":
        return self.zip_map(other, np.add)

    def _check_compatible(self, other: "ParamSet") -> None:
        if list(self) != list(other):
            raise DimensionError(f"parameter names differ: {list(self)} vs {list(other)}")
        for k, v in self._arrays.items():
            if v.shape != other[k].shape:
                raise DimensionError(f"{k}: shape {v.shape} vs {other[k].shape}")

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self._arrays.values()])

    def unflatten(self, vec: np.ndarray) -> "ParamSet":
        out, i = {}, 0
        for k, v in self._arrays.items():
            out[k] = np.asarray(vec[i:i + v.size]).reshape(v.shape)
            i += v.size
        if i != len(vec):
            raise DimensionError(f"flat vector has {len(vec)} entries, expected {i}")
        return ParamSet(out)

    def all_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self._arrays.values())

    def equals(self, other: "ParamSet") -> bool:
        """Bit-level equality of names, shapes and values."""
        return list(self) == list(other) and all(
            v.shape == other[k].shape and v.tobytes() == other[k].tobytes() for k, v in self._arrays.items()
        )


def zeros_like(params: ParamSet) -> ParamSet:
    return params.map(np.zeros_like)


def init_params(arch: NetworkArch, rng: np.random.Generator, scale: float = 1.0) -> ParamSet:
    """Glorot-uniform weights, zero biases."""
    arrays = {}
    for name, shape in arch.shapes().items():
        if name.startswith("w_"):
            limit = scale * np.sqrt(6.0 / (shape[0] + shape[1]))
            arrays[name] = rng.uniform(-limit, limit, size=shape)
        else:
            arrays[name] = np.zeros(shape)
    return ParamSet(arrays)


@dataclass
class ForwardTrace:
    """Per-layer values of one batched forward pass.

    ``acts[0]`` is the input, ``acts[-1]`` the penultimate feature matrix.
    """

    pre: list[np.ndarray]
    acts: list[np.ndarray]
    logits: np.ndarray
    probs: np.ndarray

    @property
    def features(self) -> np.ndarray:
        return self.acts[-1]


def _act(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _act_grad(kind: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if kind == "tanh":
        return 1.0 - a * a
    return (z > 0.0).astype(np.float64)


def forward(params: ParamSet, arch: NetworkArch, x: np.ndarray) -> ForwardTrace:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != arch.input_dim:
        raise DimensionError(f"expected batch with {arch.input_dim} columns, got shape {x.shape}")
    pre, acts = [], [x]
    layers = arch.layer_names()
    h = x
    for wn, bn in layers[:-1]:
        z = h @ params[wn]
        if bn is not None:
            z = z + params[bn]
        h = _act(arch.activation, z)
        pre.append(z)
        acts.append(h)
    wn, bn = layers[-1]
    logits = h @ params[wn]
    if bn is not None:
        logits = logits + params[bn]
    return ForwardTrace(pre=pre, acts=acts, logits=logits, probs=softmax(logits))


def backward(
    params: ParamSet,
    arch: NetworkArch,
    trace: ForwardTrace,
    dlogits: np.ndarray | None = None,
    dfeatures: np.ndarray | None = None,
) -> ParamSet:
    """Exact gradient of a loss given its upstream gradients at the logits and/or features.

    ``dlogits`` and ``dfeatures`` hold ∂L/∂logits and ∂L/∂features for every row of
    the traced batch; either may be omitted. Both paths are accumulated.
    """
    n = trace.logits.shape[0]
    if dlogits is None:
        dlogits = np.zeros_like(trace.logits)
    if dfeatures is None:
        dfeatures = np.zeros_like(trace.features)
    dlogits = np.asarray(dlogits, dtype=np.float64)
    dfeatures = np.asarray(dfeatures, dtype=np.float64)
    if dlogits.shape != (n, arch.n_classes) or dfeatures.shape != (n, arch.feature_dim):
        raise DimensionError("upstream gradient shape does not match the trace")
    if not (np.isfinite(dlogits).all() and np.isfinite(dfeatures).all()):
        raise NumericError("non-finite upstream gradient")

    grads: dict[str, np.ndarray] = {}
    layers = arch.layer_names()
    wn, bn = layers[-1]
    grads[wn] = trace.acts[-1].T @ dlogits
    if bn is not None:
        grads[bn] = dlogits.sum(axis=0)
    dh = dlogits @ params[wn].T + dfeatures
    for i in range(len(layers) - 2, -1, -1):
        wn, bn = layers[i]
        dz = dh * _act_grad(arch.activation, trace.pre[i], trace.acts[i + 1])
        grads[wn] = trace.acts[i].T @ dz
        if bn is not None:
            grads[bn] = dz.sum(axis=0)
        if i > 0:
            dh = dz @ params[wn].T
    return ParamSet({k: grads[k] for k in params})


@dataclass
class OptimizerState:
    m: ParamSet
    v: ParamSet
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: ParamSet, lr: float = 1e-3, **kw) -> "OptimizerState":
        return cls(m=zeros_like(params), v=zeros_like(params), lr=lr, **kw)


def adam_step(params: ParamSet, grads: ParamSet, opt: OptimizerState) -> tuple[ParamSet, OptimizerState]:
    """One bias-corrected Adam update; returns new params and a new optimizer state."""
    b1, b2 = opt.beta1, opt.beta2
    t = opt.step + 1
    m = opt.m.zip_map(grads, lambda m_, g: b1 * m_ + (1.0 - b1) * g)
    v = opt.v.zip_map(grads, lambda v_, g: b2 * v_ + (1.0 - b2) * g * g)
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new = {}
    for k, p in params.items():
        m_hat = m[k] / c1
        v_hat = v[k] / c2
        new[k] = p - opt.lr * m_hat / (np.sqrt(v_hat) + opt.eps)
    state = OptimizerState(m=m, v=v, step=t, lr=opt.lr, beta1=b1, beta2=b2, eps=opt.eps)
    return ParamSet(new), state


def ema_update(teacher: ParamSet, student: ParamSet, momentum: float) -> ParamSet:
    if not 0.0 <= momentum < 1.0:
        raise ConfigError(f"EMA momentum must lie in [0, 1), got {momentum}")
    if momentum == 0.0:
        teacher._check_compatible(student)
        return student.copy()
    return teacher.zip_map(student, lambda t, s: momentum * t + (1.0 - momentum) * s)


def save_params(path: str | Path, params: ParamSet, arch: NetworkArch, **extra: np.ndarray) -> None:
    """Write named arrays plus the architecture (as JSON) to an ``.npz`` checkpoint."""
    payload = {f"param/{k}": v for k, v in params.items()}
    payload["arch"] = np.array(json.dumps(arch.to_dict(), sort_keys=True))
    for k, v in extra.items():
        payload[f"extra/{k}"] = np.asarray(v)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_params(path: str | Path) -> tuple[ParamSet, NetworkArch, dict[str, np.ndarray]]:
    try:
        with np.load(path, allow_pickle=False) as z:
            arch = NetworkArch.from_dict(json.loads(str(z["arch"])))
            params = ParamSet({k.split("/", 1)[1]: z[k] for k in z.files if k.startswith("param/")})
            extra = {k.split("/", 1)[1]: z[k] for k in z.files if k.startswith("extra/")}
    except (OSError, KeyError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    expected = arch.shapes()
    if {k: v.shape for k, v in params.items()} != expected:
        raise CheckpointError(f"checkpoint {path} does not match its declared architecture")
    return ParamSet({k: params[k] for k in expected}), arch, extra
