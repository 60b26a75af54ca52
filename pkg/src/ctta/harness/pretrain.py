"""Supervised training of the source classifier."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import PretrainError
from ..losses import replay_loss
from ..nn import NetworkArch, OptimizerState, ParamSet, adam_step, backward, forward, init_params
from ..relation import ClassRelationGraph, build_intrinsic_graph
from ..stream import SOURCE_DOMAIN, SourceDistribution, eval_split, make_source_dataset, rng_for

_INIT, _SHUFFLE = 21, 22


@dataclass
class SourceModel:
    params: ParamSet
    arch: NetworkArch
    accuracy: float
    epochs: int


def train_classifier(
    x: np.ndarray,
    y: np.ndarray,
    arch: NetworkArch,
    seed: int,
    lr: float = 1e-2,
    epochs: int = 30,
    batch_size: int = 64,
    x_val: np.ndarray | None = None,
    y_val: np.ndarray | None = None,
    floor: float | None = None,
    min_epochs: int = 3,
) -> SourceModel:
    """Minibatch Adam on cross-entropy; stops early once ``floor`` validation accuracy is reached."""
    params = init_params(arch, rng_for(seed, _INIT))
    opt = OptimizerState.for_params(params, lr=lr)
    acc = 0.0
    for epoch in range(1, epochs + 1):
        order = rng_for(seed, _SHUFFLE, epoch).permutation(len(y))
        for i in range(0, len(y), batch_size):
            idx = order[i:i + batch_size]
            trace = forward(params, arch, x[idx])
            _, dlogits = replay_loss(y[idx], trace.probs)
            params, opt = adam_step(params, backward(params, arch, trace, dlogits=dlogits), opt)
        if x_val is not None:
            acc = float(np.mean(np.argmax(forward(params, arch, x_val).probs, axis=1) == y_val))
            if floor is not None and acc >= floor and epoch >= min_epochs:
                return SourceModel(params, arch, acc, epoch)
    if floor is not None and acc < floor:
        raise PretrainError(f"source accuracy {acc:.3f} below floor {floor} after {epochs} epochs")
    return SourceModel(params, arch, acc, epochs)


def pretrain_source(
    seed: int,
    n_classes: int = 5,
    dim: int = 16,
    hidden: tuple[int, ...] = (16, 16),
    activation: str = "tanh",
    per_class: int = 400,
    lr: float = 1e-2,
    max_epochs: int = 50,
    floor: float = 0.95,
    min_epochs: int = 20,
    eval_size: int = 2000,
    graph_source: str = "prototypes",
) -> tuple[SourceModel, ClassRelationGraph]:
    arch = NetworkArch(dim, hidden, n_classes, activation)
    x, y = make_source_dataset(seed, n_classes, dim, per_class)
    held = eval_split(SOURCE_DOMAIN, SourceDistribution.create(seed, n_classes, dim), seed, eval_size)
    model = train_classifier(x, y, arch, seed, lr=lr, epochs=max_epochs, x_val=held.x, y_val=held.labels, floor=floor, min_epochs=min_epochs)
    graph = build_intrinsic_graph(graph_source, model.params, arch, x, y)
    return model, graph
