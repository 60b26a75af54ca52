"""Class relation graphs and the relation-preservation loss.

A graph has one unit-norm vertex per class (the normalised class centroid in
feature space) and cosine edge weights between vertices. The preservation loss
is the negative cosine similarity between two graphs' edge matrices, read as
flat vectors, over the classes both graphs have.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError, CoverageError
from .nn import NetworkArch, ParamSet, forward

NORM_EPS = 1e-12


class IntrinsicGraphSource(str, Enum):
    PROTOTYPES = "prototypes"
    CLASSIFIER_WEIGHTS = "classifier_weights"


@dataclass(frozen=True)
class ClassRelationGraph:
    vertices: np.ndarray  # [C, H]; zero rows for absent classes
    present: np.ndarray  # [C] bool

    @property
    def n_classes(self) -> int:
        return self.vertices.shape[0]

    @property
    def edges(self) -> np.ndarray:
        s = self.vertices @ self.vertices.T
        mask = np.outer(self.present, self.present)
        return np.where(mask, s, 0.0)

    def to_json(self) -> str:
        return json.dumps(
            {"present": self.present.tolist(), "edges": self.edges.tolist()},
            sort_keys=True,
        )


def _centroid_graph(features: np.ndarray, labels: np.ndarray, n_classes: int):
    h = features.shape[1]
    sums = np.zeros((n_classes, h))
    np.add.at(sums, labels, features)
    counts = np.bincount(labels, minlength=n_classes).astype(np.float64)
    means = np.zeros_like(sums)
    has = counts > 0
    means[has] = sums[has] / counts[has, None]
    norms = np.linalg.norm(means, axis=1)
    present = has & (norms > NORM_EPS)
    vertices = np.zeros_like(means)
    vertices[present] = means[present] / norms[present, None]
    return ClassRelationGraph(vertices=vertices, present=present), means, norms, counts


def build_intrinsic_graph(
    source: IntrinsicGraphSource | str,
    params: ParamSet,
    arch: NetworkArch,
    x: np.ndarray | None = None,
    y: np.ndarray | None = None,
) -> ClassRelationGraph:
    """Source-side graph from labelled source features or from classifier weights."""
    source = IntrinsicGraphSource(source)
    if source is IntrinsicGraphSource.PROTOTYPES:
        if x is None or y is None:
            raise ConfigError("prototype graph needs labelled source samples")
        y = np.asarray(y, dtype=np.int64)
        missing = sorted(set(range(arch.n_classes)) - set(np.unique(y).tolist()))
        if missing:
            raise CoverageError(f"source samples miss classes {missing}")
        feats = forward(params, arch, x).features
        graph, *_ = _centroid_graph(feats, y, arch.n_classes)
    else:
        w = params[arch.layer_names()[-1][0]].T  # one row per class
        norms = np.linalg.norm(w, axis=1)
        present = norms > NORM_EPS
        vertices = np.zeros_like(w)
        vertices[present] = w[present] / norms[present, None]
        graph = ClassRelationGraph(vertices=vertices, present=present)
    if not graph.present.all():
        raise CoverageError("intrinsic graph has a degenerate (zero-norm) class vertex")
    return graph


class TargetGraphEstimate:
    """Graph built from current student features, with a backward pass to those features.

    Centroids are averaged in raw feature space, then normalised.
    """

    def __init__(self, features: np.ndarray, labels: np.ndarray, n_classes: int):
        self.features = np.asarray(features, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.graph, self._means, self._norms, self._counts = _centroid_graph(self.features, self.labels, n_classes)

    def backward(self, d_edges: np.ndarray) -> np.ndarray:
        """Map ∂L/∂edges ([C, C]) to ∂L/∂features ([n, H])."""
        g = self.graph
        mask = np.outer(g.present, g.present)
        d_edges = np.where(mask, d_edges, 0.0)
        d_vert = (d_edges + d_edges.T) @ g.vertices
        p = g.present
        d_mean = np.zeros_like(self._means)
        v = g.vertices[p]
        dv = d_vert[p]
        d_mean[p] = (dv - v * (v * dv).sum(axis=1, keepdims=True)) / self._norms[p, None]
        per_class = np.zeros_like(d_mean)
        has = self._counts > 0
        per_class[has] = d_mean[has] / self._counts[has, None]
        return per_class[self.labels]


def estimate_target_graph(features: np.ndarray, labels: np.ndarray, n_classes: int) -> TargetGraphEstimate | None:
    """``None`` for an empty batch; the caller then drops the relation term."""
    if len(labels) == 0:
        return None
    return TargetGraphEstimate(features, labels, n_classes)


def crp_loss(intrinsic: ClassRelationGraph, current: ClassRelationGraph) -> tuple[float, np.ndarray]:
    """Negative cosine between edge matrices over classes present in both graphs.

    Returns the loss and its gradient with respect to ``current.edges``; the
    intrinsic graph is treated as a constant. Fewer than two shared classes
    gives ``(0.0, zeros)``.
    """
    c = current.n_classes
    shared = intrinsic.present & current.present
    grad = np.zeros((c, c))
    if shared.sum() < 2:
        return 0.0, grad
    idx = np.flatnonzero(shared)
    s = intrinsic.edges[np.ix_(idx, idx)]
    st = current.edges[np.ix_(idx, idx)]
    return _neg_cosine(s, st, grad, idx)


def crp_loss_from_edges(s: np.ndarray, s_tilde: np.ndarray) -> tuple[float, np.ndarray]:
    """Same loss on raw, fully-present edge matrices."""
    s = np.asarray(s, dtype=np.float64)
    s_tilde = np.asarray(s_tilde, dtype=np.float64)
    idx = np.arange(s.shape[0])
    return _neg_cosine(s, s_tilde, np.zeros_like(s_tilde), idx)


def _neg_cosine(s, st, grad, idx):
    ns = np.sqrt((s * s).sum())
    nt = np.sqrt((st * st).sum())
    if ns == 0.0 or nt == 0.0:
        return 0.0, grad
    dot = (s * st).sum()
    loss = -dot / (ns * nt)
    grad[np.ix_(idx, idx)] = -(s / (ns * nt)) + dot * st / (ns * nt**3)
    return float(loss), grad
