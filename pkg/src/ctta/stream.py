"""Deterministic drifting stream of Gaussian-blob batches.

Every random draw comes from a Philox generator keyed on ``(seed, purpose,
position)``, so any batch can be regenerated in isolation and adaptation,
evaluation and source-training draws never share a stream.
"""

from __future__ import annotations

import csv
import io
import zlib
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigError, EndOfStream

TRANSFORM_KINDS = ("identity", "rotation", "translation", "noise", "scaling", "dropout")
MODES = ("abrupt", "gradual", "cyclic")
GRADUAL_RAMP = (1, 2, 3, 4, 5, 4, 3, 2, 1)

# rng purposes
_MEANS, _TRAIN, _ADAPT, _EVAL, _DOMAIN = 1, 2, 3, 4, 5

# per-kind magnitude at severity 5; severity s scales linearly by s/5
SEVERITY5 = {
    "rotation": 0.9,  # radians, applied in every plane of a random basis
    "translation": 5.0,  # shift length along a random unit direction
    "noise": 1.6,  # additive Gaussian std
    "scaling": 1.2,  # log-scale spread across features
    "dropout": 0.6,  # fraction of zeroed features
}


def rng_for(seed: int, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, keys)])))


def _id_key(domain_id: str) -> int:
    return zlib.crc32(domain_id.encode("utf-8"))


@dataclass(frozen=True)
class SourceDistribution:
    """Gaussian classes whose means span a low-dimensional content subspace.

    Class means lie on a sphere of ``radius`` inside the first ``content_dim``
    directions of a random orthonormal ``basis``; those directions carry
    unit-scale noise, the remaining nuisance directions a smaller spread.
    Means are redrawn until every pair is at least ``radius`` apart, so no two
    classes overlap by accident of the seed.
    """

    means: np.ndarray  # [C, d]
    basis: np.ndarray  # [d, d], orthonormal columns
    scales: np.ndarray  # [d], noise std along each basis column

    @classmethod
    def create(
        cls,
        seed: int,
        n_classes: int = 5,
        dim: int = 16,
        radius: float = 7.0,
        content_dim: int | None = None,
        std: float = 1.0,
        nuisance_std: float = 0.25,
    ):
        if n_classes < 2:
            raise ConfigError("need at least 2 classes")
        if dim < 2:
            raise ConfigError("need at least 2 input dimensions")
        k = content_dim if content_dim is not None else min(dim, max(n_classes - 1, 2))
        if not 1 <= k <= dim:
            raise ConfigError(f"content_dim must lie in [1, {dim}]")
        g = rng_for(seed, _MEANS)
        basis, _ = np.linalg.qr(g.standard_normal((dim, dim)))
        for _ in range(10_000):
            m = g.standard_normal((n_classes, k))
            m *= radius / np.linalg.norm(m, axis=1, keepdims=True)
            gaps = np.linalg.norm(m[:, None] - m[None], axis=2) + np.eye(n_classes) * radius
            if gaps.min() >= radius:
                break
        else:
            raise ConfigError(f"cannot place {n_classes} separated class means in {k} dimensions")
        scales = np.full(dim, nuisance_std)
        scales[:k] = std
        return cls(means=m @ basis[:, :k].T, basis=basis, scales=scales)

    @property
    def n_classes(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def draw(self, rng: np.random.Generator, y: np.ndarray) -> np.ndarray:
        z = rng.standard_normal((len(y), self.dim))
        return self.means[y] + (z * self.scales) @ self.basis.T

    def sample(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        y = rng.integers(0, self.n_classes, size=n)
        return self.draw(rng, y), y


def make_source_dataset(seed: int, n_classes: int = 5, dim: int = 16, per_class: int = 100):
    """Balanced labelled source set: ``per_class`` rows per class, shuffled."""
    if n_classes * per_class <= 0:
        raise ConfigError("source dataset would be empty")
    dist = SourceDistribution.create(seed, n_classes, dim)
    g = rng_for(seed, _TRAIN)
    y = np.repeat(np.arange(n_classes), per_class)
    g.shuffle(y)
    return dist.draw(g, y), y


@dataclass(frozen=True)
class DomainSpec:
    domain_id: str
    kind: str
    severity: int = 5

    def __post_init__(self):
        if self.kind not in TRANSFORM_KINDS:
            raise ConfigError(f"unknown transform kind {self.kind!r}")
        if not 1 <= self.severity <= 5:
            raise ConfigError(f"severity must be in [1, 5], got {self.severity}")

    def at(self, severity: int) -> "DomainSpec":
        return DomainSpec(self.domain_id, self.kind, severity)

    def magnitude(self) -> float:
        if self.kind == "identity":
            return 0.0
        return SEVERITY5[self.kind] * self.severity / 5.0

    def apply(self, x: np.ndarray, seed: int, rng: np.random.Generator) -> np.ndarray:
        """Shift a batch. Fixed geometry comes from ``(seed, domain_id)``; per-sample noise from ``rng``."""
        if self.kind == "identity":
            return x.copy()
        d = x.shape[1]
        geo = rng_for(seed, _DOMAIN, _id_key(self.domain_id))
        mag = self.magnitude()
        if self.kind == "rotation":
            q, _ = np.linalg.qr(geo.standard_normal((d, d)))
            c, s = np.cos(mag), np.sin(mag)
            r = np.eye(d)
            for i in range(0, d - 1, 2):
                r[i, i], r[i, i + 1], r[i + 1, i], r[i + 1, i + 1] = c, -s, s, c
            return x @ (q @ r @ q.T)
        if self.kind == "translation":
            u = geo.standard_normal(d)
            return x + mag * u / np.linalg.norm(u)
        if self.kind == "noise":
            return x + mag * rng.standard_normal(x.shape)
        if self.kind == "scaling":
            return x * np.exp(mag * geo.standard_normal(d))
        # dropout
        keep = rng.random(x.shape) >= mag
        return x * keep


@dataclass(frozen=True)
class BatchPlan:
    index: int
    domain: DomainSpec
    round: int


@dataclass
class StreamSchedule:
    segments: list[tuple[DomainSpec, int]]
    mode: str = "abrupt"
    cycles: int = 1
    batch_size: int = 64

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown schedule mode {self.mode!r}")
        if self.cycles < 1:
            raise ConfigError("cycles must be at least 1")
        if self.batch_size < 1:
            raise ConfigError("batch size must be positive")
        if any(n < 0 for _, n in self.segments):
            raise ConfigError("negative batch count")

    def plan(self) -> list[BatchPlan]:
        out: list[BatchPlan] = []
        for r in range(self.cycles):
            for spec, n in self.segments:
                if self.mode == "gradual" and spec.kind != "identity":
                    # split the domain's batches evenly over the 1..5..1 ramp
                    base, extra = divmod(n, len(GRADUAL_RAMP))
                    for k, sev in enumerate(GRADUAL_RAMP):
                        for _ in range(base + (k < extra)):
                            out.append(BatchPlan(len(out), spec.at(sev), r))
                else:
                    for _ in range(n):
                        out.append(BatchPlan(len(out), spec, r))
        return out

    def __len__(self) -> int:
        return self.cycles * sum(n for _, n in self.segments)

    def domain_order(self) -> list[str]:
        seen: list[str] = []
        for spec, _ in self.segments:
            if spec.domain_id not in seen:
                seen.append(spec.domain_id)
        return seen

    def manifest_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["batch", "round", "domain", "kind", "severity"])
        for p in self.plan():
            w.writerow([p.index, p.round, p.domain.domain_id, p.domain.kind, p.domain.severity])
        return buf.getvalue()


DEFAULT_DOMAINS = (
    ("translation-a", "translation"),
    ("rotation-a", "rotation"),
    ("scaling-a", "scaling"),
    ("noise-a", "noise"),
    ("dropout-a", "dropout"),
    ("translation-b", "translation"),
    ("rotation-b", "rotation"),
    ("scaling-b", "scaling"),
)


def default_schedule(
    batches_per_domain: int = 50,
    batch_size: int = 64,
    severity: int = 5,
    mode: str = "abrupt",
    cycles: int = 1,
    domains: Sequence[tuple[str, str]] = DEFAULT_DOMAINS,
) -> StreamSchedule:
    segs = [(DomainSpec(i, k, severity), batches_per_domain) for i, k in domains]
    return StreamSchedule(segs, mode=mode, cycles=cycles, batch_size=batch_size)


@dataclass(frozen=True)
class BatchView:
    """What the adapter sees: features and a position, nothing else."""

    x: np.ndarray
    index: int


@dataclass(frozen=True)
class LabeledBatch:
    x: np.ndarray
    labels: np.ndarray
    domain: DomainSpec
    index: int
    round: int = 0

    def view(self) -> BatchView:
        return BatchView(x=self.x, index=self.index)


def generate_batch(dist: SourceDistribution, plan: BatchPlan, batch_size: int, seed: int) -> LabeledBatch:
    g = rng_for(seed, _ADAPT, plan.index)
    x, y = dist.sample(g, batch_size)
    x = plan.domain.apply(x, seed, g)
    return LabeledBatch(x=x, labels=y, domain=plan.domain, index=plan.index, round=plan.round)


@dataclass
class Stream:
    """Single-pass cursor over a schedule."""

    schedule: StreamSchedule
    source: SourceDistribution
    seed: int
    position: int = 0
    _plan: list[BatchPlan] = field(init=False, repr=False)

    def __post_init__(self):
        self._plan = self.schedule.plan()

    def __len__(self) -> int:
        return len(self._plan)

    @property
    def exhausted(self) -> bool:
        return self.position >= len(self._plan)

    def batch_at(self, index: int) -> LabeledBatch:
        return generate_batch(self.source, self._plan[index], self.schedule.batch_size, self.seed)

    def next_batch(self) -> LabeledBatch:
        if self.exhausted:
            raise EndOfStream(f"stream exhausted after {len(self._plan)} batches")
        batch = self.batch_at(self.position)
        self.position += 1
        return batch

    def __iter__(self) -> Iterator[LabeledBatch]:
        while not self.exhausted:
            yield self.next_batch()


def eval_split(domain: DomainSpec, source: SourceDistribution, seed: int, n: int) -> LabeledBatch:
    """Held-out labelled sample from one domain; never overlaps adaptation draws."""
    g = rng_for(seed, _EVAL, _id_key(domain.domain_id), domain.severity)
    x, y = source.sample(g, n)
    x = domain.apply(x, seed, g)
    return LabeledBatch(x=x, labels=y, domain=domain, index=-1)


SOURCE_DOMAIN = DomainSpec("source", "identity", 1)
