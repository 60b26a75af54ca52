"""Uncertainty-gated sample buffer and the replay sampler.

Samples enter only when the student's prediction entropy is below
``H0 = alpha * ln(C)``; their pseudo-label is the teacher's argmax at admission
time and is never refreshed. A full buffer gives up its most uncertain entry.

:class:`ReservoirBuffer` and :class:`FIFOBuffer` exist for ablations only; they
keep the same ``admit`` signature but ignore the entropy gate.
"""

from __future__ import annotations

import heapq
import json
import math
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Literal

import numpy as np

from .errors import ConfigError, EmptyBufferError, InputError
from .nn import LOG_FLOOR

ENTROPY_SUM_TOL = 1e-6


def entropy(probs: np.ndarray) -> float | np.ndarray:
    """Shannon entropy in nats, ``-Σ p log p`` with ``0 log 0 = 0``.

    Accepts one probability vector or a matrix of row vectors.
    """
    p = np.asarray(probs, dtype=np.float64)
    if (p < 0).any() or np.abs(p.sum(axis=-1) - 1.0).max() > ENTROPY_SUM_TOL:
        raise InputError("entropy needs non-negative entries summing to 1")
    h = -(p * np.log(np.maximum(p, LOG_FLOOR))).sum(axis=-1)
    # exact zeros contribute nothing; clamp the float residue at the bottom of the range
    h = np.maximum(h, 0.0)
    return float(h) if h.ndim == 0 else h


@dataclass(frozen=True)
class UncertaintyThreshold:
    alpha: float
    n_classes: int

    def __post_init__(self):
        if self.alpha <= 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if self.n_classes < 2:
            raise ConfigError("need at least 2 classes")

    @property
    def h0(self) -> float:
        return self.alpha * math.log(self.n_classes)


@dataclass(frozen=True)
class BufferEntry:
    x: np.ndarray
    label: int
    entropy: float
    step: int
    seq: int

    def one_hot(self, n_classes: int) -> np.ndarray:
        out = np.zeros(n_classes)
        out[self.label] = 1.0
        return out


@dataclass(frozen=True)
class AdmitOutcome:
    kind: Literal["rejected", "inserted", "replaced"]
    evicted: BufferEntry | None = None
    entry: BufferEntry | None = None


REJECTED = AdmitOutcome("rejected")


class _BufferBase:
    kind = "base"

    def __init__(self, capacity: int, threshold: UncertaintyThreshold):
        if capacity < 0:
            raise ConfigError(f"capacity must be non-negative, got {capacity}")
        self.capacity = int(capacity)
        self.threshold = threshold
        self._next_seq = 0

    def __len__(self) -> int:
        return len(self.entries())

    @property
    def n_classes(self) -> int:
        return self.threshold.n_classes

    @property
    def h0(self) -> float:
        return self.threshold.h0

    def entries(self) -> list[BufferEntry]:
        raise NotImplementedError

    def _restore(self, entries: list[BufferEntry]) -> None:
        raise NotImplementedError

    def max_entropy_entry(self) -> BufferEntry:
        entries = self.entries()
        if not entries:
            raise EmptyBufferError("buffer is empty")
        return min(entries, key=lambda e: (-e.entropy, e.step, e.seq))

    def _make_entry(self, x, label: int, h: float, step: int) -> BufferEntry:
        entry = BufferEntry(x=np.array(x, dtype=np.float64), label=int(label), entropy=float(h), step=int(step), seq=self._next_seq)
        self._next_seq += 1
        return entry

    def label_histogram(self) -> np.ndarray:
        hist = np.zeros(self.n_classes, dtype=np.int64)
        for e in self.entries():
            hist[e.label] += 1
        return hist

    def snapshot(self) -> dict:
        entries = sorted(self.entries(), key=lambda e: e.seq)
        return {
            "kind": self.kind,
            "capacity": self.capacity,
            "size": len(entries),
            "h0": self.h0,
            "entropies": [e.entropy for e in entries],
            "label_histogram": self.label_histogram().tolist(),
        }

    def snapshot_json(self) -> str:
        return json.dumps(self.snapshot(), sort_keys=True)

    # checkpoint round-trip; storage order is preserved exactly
    def state_arrays(self, input_dim: int) -> dict[str, np.ndarray]:
        es = self.entries()
        return {
            "x": np.array([e.x for e in es]).reshape(len(es), input_dim),
            "label": np.array([e.label for e in es], dtype=np.int64),
            "entropy": np.array([e.entropy for e in es]),
            "step": np.array([e.step for e in es], dtype=np.int64),
            "seq": np.array([e.seq for e in es], dtype=np.int64),
            "counters": np.array([self._next_seq], dtype=np.int64),
        }

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        entries = [
            BufferEntry(x=x.copy(), label=int(lab), entropy=float(h), step=int(s), seq=int(q))
            for x, lab, h, s, q in zip(arrays["x"], arrays["label"], arrays["entropy"], arrays["step"], arrays["seq"])
        ]
        self._restore(entries)
        self._next_seq = int(arrays["counters"][0])


class UncertaintyBuffer(_BufferBase):
    """Capacity-bounded store with O(log n) access to its most uncertain entry.

    With ``strict=True`` (default) a full buffer only accepts a candidate that is
    more certain than the entry it would evict; ``strict=False`` always swaps.
    Ties on entropy evict the oldest admission first.
    """

    kind = "uncertainty"

    def __init__(self, capacity: int, threshold: UncertaintyThreshold, strict: bool = True):
        super().__init__(capacity, threshold)
        self.strict = strict
        self._heap: list[tuple[float, int, int, BufferEntry]] = []

    def __len__(self) -> int:
        return len(self._heap)

    def entries(self) -> list[BufferEntry]:
        """Entries in internal storage order; replay sampling indexes into this list."""
        return [item[-1] for item in self._heap]

    def _restore(self, entries):
        self._heap = [(-e.entropy, e.step, e.seq, e) for e in entries]

    def max_entropy_entry(self) -> BufferEntry:
        if not self._heap:
            raise EmptyBufferError("buffer is empty")
        return self._heap[0][-1]

    def admit(self, x: np.ndarray, teacher_probs: np.ndarray, student_probs: np.ndarray, step: int = 0) -> AdmitOutcome:
        h = entropy(student_probs)
        if h >= self.h0 or self.capacity == 0:
            return REJECTED
        label = int(np.argmax(teacher_probs))
        if len(self._heap) < self.capacity:
            entry = self._make_entry(x, label, h, step)
            heapq.heappush(self._heap, (-entry.entropy, entry.step, entry.seq, entry))
            return AdmitOutcome("inserted", entry=entry)
        worst = self._heap[0][-1]
        if self.strict and not h < worst.entropy:
            return REJECTED
        entry = self._make_entry(x, label, h, step)
        heapq.heapreplace(self._heap, (-entry.entropy, entry.step, entry.seq, entry))
        return AdmitOutcome("replaced", evicted=worst, entry=entry)


class FIFOBuffer(_BufferBase):
    """Ablation baseline: first-in first-out, no entropy gate."""

    kind = "fifo"

    def __init__(self, capacity: int, threshold: UncertaintyThreshold):
        super().__init__(capacity, threshold)
        self._queue: deque[BufferEntry] = deque()

    def entries(self) -> list[BufferEntry]:
        return list(self._queue)

    def _restore(self, entries):
        self._queue = deque(entries)

    def admit(self, x, teacher_probs, student_probs, step: int = 0) -> AdmitOutcome:
        if self.capacity == 0:
            return REJECTED
        entry = self._make_entry(x, int(np.argmax(teacher_probs)), entropy(student_probs), step)
        evicted = self._queue.popleft() if len(self._queue) >= self.capacity else None
        self._queue.append(entry)
        return AdmitOutcome("replaced" if evicted else "inserted", evicted=evicted, entry=entry)


class ReservoirBuffer(_BufferBase):
    """Ablation baseline: classic reservoir sampling, no entropy gate.

    The slot draw for the n-th candidate comes from a generator keyed on
    ``(seed, n)``, so the buffer is checkpointable without RNG state.
    """

    kind = "reservoir"

    def __init__(self, capacity: int, threshold: UncertaintyThreshold, seed: int = 0):
        super().__init__(capacity, threshold)
        self.seed = int(seed)
        self._slots: list[BufferEntry] = []

    def entries(self) -> list[BufferEntry]:
        return list(self._slots)

    def _restore(self, entries):
        self._slots = list(entries)

    def admit(self, x, teacher_probs, student_probs, step: int = 0) -> AdmitOutcome:
        if self.capacity == 0:
            return REJECTED
        n_seen = self._next_seq
        entry = self._make_entry(x, int(np.argmax(teacher_probs)), entropy(student_probs), step)
        if len(self._slots) < self.capacity:
            self._slots.append(entry)
            return AdmitOutcome("inserted", entry=entry)
        j = int(np.random.default_rng([self.seed, 0x5E5, n_seen]).integers(0, n_seen + 1))
        if j >= self.capacity:
            return REJECTED
        evicted = self._slots[j]
        self._slots[j] = entry
        return AdmitOutcome("replaced", evicted=evicted, entry=entry)


def make_buffer(policy: str, capacity: int, threshold: UncertaintyThreshold, strict: bool = True, seed: int = 0):
    if policy == "uncertainty":
        return UncertaintyBuffer(capacity, threshold, strict=strict)
    if policy == "fifo":
        return FIFOBuffer(capacity, threshold)
    if policy == "reservoir":
        return ReservoirBuffer(capacity, threshold, seed=seed)
    raise ConfigError(f"unknown buffer policy {policy!r}")


def sample_replay(buffer, batch_size: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray] | None:
    """Uniformly draw ``batch_size`` stored samples and their pseudo-labels.

    Draws without replacement when the buffer holds at least ``batch_size``
    entries and with replacement otherwise. Returns ``None`` for an empty buffer.
    """
    entries = buffer.entries()
    if not entries or batch_size <= 0:
        return None
    replace = len(entries) < batch_size
    idx = rng.choice(len(entries), size=batch_size, replace=replace)
    x = np.stack([entries[i].x for i in idx])
    y = np.array([entries[i].label for i in idx], dtype=np.int64)
    return x, y


def all_entries(buffer) -> tuple[np.ndarray, np.ndarray] | None:
    entries = buffer.entries()
    if not entries:
        return None
    return np.stack([e.x for e in entries]), np.array([e.label for e in entries], dtype=np.int64)


def admit_batch(buffer, xs: Iterable[np.ndarray], teacher_probs: np.ndarray, student_probs: np.ndarray, step: int) -> list[AdmitOutcome]:
    return [buffer.admit(x, q, p, step) for x, q, p in zip(xs, teacher_probs, student_probs)]
