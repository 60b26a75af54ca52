"""Online teacher-student adaptation loop.

Per batch: the student predicts (these are the online outputs), the teacher
labels, a replay batch is drawn from the buffer, confident samples are
admitted, the student takes one Adam step on

    L_T = L_ST + L_PCE + lambda_crp * L_CRP

and the teacher follows by EMA. The replay draw sees the buffer as it stood
before this batch's admissions.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import buffer as buf
from .errors import CheckpointError, ConfigError, NumericError
from .losses import LossBreakdown, entropy_loss, replay_loss, self_training_loss, total_loss
from .metrics import MetricsRecord, records_from_csv, records_to_csv
from .nn import ForwardTrace, NetworkArch, OptimizerState, ParamSet, adam_step, backward, ema_update, forward, zeros_like
from .relation import ClassRelationGraph, crp_loss, estimate_target_graph
from .stream import BatchView, Stream, rng_for

_REPLAY = 11
OBJECTIVES = ("teacher_student", "entropy", "frozen")
GRAPH_FROM = ("replay", "buffer")


@dataclass(frozen=True)
class AdaptationConfig:
    alpha: float = 0.1
    lambda_crp: float = 200.0
    capacity: int = 200
    batch_size: int = 64
    lr: float = 1e-2
    ema_momentum: float = 0.999
    strict_eviction: bool = True
    graph_source: str = "prototypes"
    graph_from: str = "replay"
    buffer_policy: str = "uncertainty"
    use_pce: bool = True
    objective: str = "teacher_student"
    seed: int = 0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ConfigError("alpha must be positive")
        if self.lambda_crp < 0:
            raise ConfigError("lambda_crp must be non-negative")
        if self.capacity < 0:
            raise ConfigError("capacity must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.lr < 0:
            raise ConfigError("lr must be non-negative")
        if not 0.0 <= self.ema_momentum < 1.0:
            raise ConfigError("ema_momentum must lie in [0, 1)")
        if self.graph_from not in GRAPH_FROM:
            raise ConfigError(f"graph_from must be one of {GRAPH_FROM}")
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}")
        if self.buffer_policy not in ("uncertainty", "fifo", "reservoir"):
            raise ConfigError(f"unknown buffer policy {self.buffer_policy!r}")
        if self.graph_source not in ("prototypes", "classifier_weights"):
            raise ConfigError(f"unknown graph source {self.graph_source!r}")


@dataclass
class TeacherStudentState:
    arch: NetworkArch
    student: ParamSet
    teacher: ParamSet
    opt: OptimizerState
    buffer: object
    intrinsic: ClassRelationGraph
    config: AdaptationConfig
    step: int = 0


@dataclass(frozen=True)
class StepResult:
    predictions: np.ndarray
    losses: LossBreakdown
    admitted: int


def init_state(
    source: ParamSet,
    arch: NetworkArch,
    intrinsic: ClassRelationGraph,
    config: AdaptationConfig,
) -> TeacherStudentState:
    if intrinsic.n_classes != arch.n_classes or not intrinsic.present.all():
        raise CheckpointError("intrinsic graph does not cover the checkpoint's classes")
    if set(source) != set(arch.shapes()) or any(source[k].shape != s for k, s in arch.shapes().items()):
        raise CheckpointError("source parameters do not match the architecture")
    threshold = buf.UncertaintyThreshold(config.alpha, arch.n_classes)
    memory = buf.make_buffer(config.buffer_policy, config.capacity, threshold, config.strict_eviction, config.seed)
    return TeacherStudentState(
        arch=arch,
        student=source.copy(),
        teacher=source.copy(),
        opt=OptimizerState.for_params(source, lr=config.lr),
        buffer=memory,
        intrinsic=intrinsic,
        config=config,
    )


class AdaptationDiverged(NumericError):
    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


def _diverged(state: TeacherStudentState, view: BatchView, message: str, losses: LossBreakdown | None = None):
    return AdaptationDiverged(
        f"{message} at step {state.step} (batch {view.index})",
        {
            "step": state.step,
            "batch_index": view.index,
            "losses": asdict(losses) if losses is not None else None,
            "buffer": state.buffer.snapshot(),
            "student_finite": state.student.all_finite(),
            "teacher_finite": state.teacher.all_finite(),
        },
    )


def _check_finite(state: TeacherStudentState, view: BatchView, losses: LossBreakdown) -> None:
    if not all(np.isfinite(v) for v in (losses.st, losses.pce, losses.crp, losses.total)):
        raise _diverged(state, view, "non-finite loss", losses)


def adapt_step(state: TeacherStudentState, view: BatchView) -> StepResult:
    """Predict on one unlabeled batch, then adapt. Mutates ``state``."""
    cfg = state.config
    arch = state.arch
    x = view.x
    s_trace = forward(state.student, arch, x)
    if not np.isfinite(s_trace.probs).all():
        raise _diverged(state, view, "non-finite student output")
    preds = np.argmax(s_trace.probs, axis=1)

    if cfg.objective == "frozen":
        state.step += 1
        return StepResult(preds, total_loss(0.0), 0)

    if cfg.objective == "entropy":
        l_ent, d_ent = entropy_loss(s_trace.probs)
        losses = total_loss(l_ent)
        _check_finite(state, view, losses)
        grads = backward(state.student, arch, s_trace, dlogits=d_ent)
        state.student, state.opt = adam_step(state.student, grads, state.opt)
        state.step += 1
        return StepResult(preds, losses, 0)

    t_trace = forward(state.teacher, arch, x)
    if not np.isfinite(t_trace.probs).all():
        raise _diverged(state, view, "non-finite teacher output")
    replay = buf.sample_replay(state.buffer, cfg.batch_size, rng_for(cfg.seed, _REPLAY, state.step))
    outcomes = buf.admit_batch(state.buffer, x, t_trace.probs, s_trace.probs, state.step)
    admitted = sum(o.kind != "rejected" for o in outcomes)

    graph_batch = None
    if replay is not None and cfg.lambda_crp > 0 and cfg.graph_from != "replay":
        graph_batch = buf.all_entries(state.buffer)
    l_st, l_pce, l_crp, grads = objective(
        state.student, arch, x, t_trace.probs, replay, state.intrinsic, cfg, s_trace=s_trace, graph_batch=graph_batch
    )

    losses = total_loss(l_st, l_pce, l_crp, cfg.lambda_crp)
    _check_finite(state, view, losses)
    state.student, state.opt = adam_step(state.student, grads, state.opt)
    state.teacher = ema_update(state.teacher, state.student, cfg.ema_momentum)
    state.step += 1
    return StepResult(preds, losses, admitted)


def objective(
    params: ParamSet,
    arch: NetworkArch,
    x: np.ndarray,
    teacher_probs: np.ndarray,
    replay: tuple[np.ndarray, np.ndarray] | None,
    intrinsic: ClassRelationGraph,
    cfg: AdaptationConfig,
    terms: tuple[str, ...] = ("st", "pce", "crp"),
    s_trace: ForwardTrace | None = None,
    graph_batch: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[float, float, float, ParamSet]:
    """Loss values and the gradient of the selected terms w.r.t. ``params``.

    Teacher probabilities are constants. The CRP gradient includes the
    ``lambda_crp`` weight; the returned CRP value does not. The graph is
    built from the replay batch unless ``graph_batch`` is given.
    """
    s_trace = s_trace or forward(params, arch, x)
    l_st, d_st = self_training_loss(teacher_probs, s_trace.probs)
    grads = backward(params, arch, s_trace, dlogits=d_st)
    if "st" not in terms:
        grads = zeros_like(params)

    l_pce = l_crp = 0.0
    if replay is not None:
        rx, ry = replay
        r_trace = forward(params, arch, rx)
        d_logits = None
        if cfg.use_pce:
            l_pce, d_pce = replay_loss(ry, r_trace.probs)
            if "pce" in terms:
                d_logits = d_pce
        d_feat = None
        if cfg.lambda_crp > 0:
            if graph_batch is None:
                g_trace, g_labels = r_trace, ry
            else:
                g_trace, g_labels = forward(params, arch, graph_batch[0]), graph_batch[1]
            est = estimate_target_graph(g_trace.features, g_labels, arch.n_classes)
            l_crp, d_edges = crp_loss(intrinsic, est.graph)
            if "crp" in terms:
                d_graph_feat = cfg.lambda_crp * est.backward(d_edges)
                if g_trace is r_trace:
                    d_feat = d_graph_feat
                else:
                    grads = grads + backward(params, arch, g_trace, dfeatures=d_graph_feat)
        if d_logits is not None or d_feat is not None:
            grads = grads + backward(params, arch, r_trace, dlogits=d_logits, dfeatures=d_feat)
    return l_st, l_pce, l_crp, grads


def predict(params: ParamSet, arch: NetworkArch, x: np.ndarray) -> np.ndarray:
    return np.argmax(forward(params, arch, x).probs, axis=1)


def accuracy(params: ParamSet, arch: NetworkArch, x: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(predict(params, arch, x) == y))


@dataclass
class RunProgress:
    """Bookkeeping that lets a checkpointed run resume mid-stream."""

    records: list[MetricsRecord] = field(default_factory=list)
    _sums: dict[tuple[int, str], tuple[float, int]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for r in self.records:
            self._add(r.round, r.domain, r.batch_error)

    def _add(self, rnd: int, domain: str, err: float) -> float:
        total, count = self._sums.get((rnd, domain), (0.0, 0))
        total, count = total + err, count + 1
        self._sums[(rnd, domain)] = (total, count)
        return total / count

    def append(self, rec: MetricsRecord) -> None:
        self.records.append(rec)


def run_stream(
    state: TeacherStudentState,
    stream: Stream,
    progress: RunProgress | None = None,
    checkpoint_every: int = 0,
    on_checkpoint: Callable[[TeacherStudentState, RunProgress], None] | None = None,
) -> list[MetricsRecord]:
    """Adapt over the rest of ``stream``; labels are only read after each step."""
    progress = progress or RunProgress()
    while not stream.exhausted:
        batch = stream.next_batch()
        result = adapt_step(state, batch.view())
        err = float(np.mean(result.predictions != batch.labels))
        hist = state.buffer.label_histogram() if len(state.buffer) else np.zeros(state.arch.n_classes, dtype=int)
        rec = MetricsRecord(
            step=batch.index,
            round=batch.round,
            domain=batch.domain.domain_id,
            severity=batch.domain.severity,
            batch_error=err,
            domain_error=progress._add(batch.round, batch.domain.domain_id, err),
            l_st=result.losses.st,
            l_pce=result.losses.pce,
            l_crp=result.losses.crp,
            lambda_crp=result.losses.lambda_crp,
            l_t=result.losses.total,
            buffer_size=len(state.buffer),
            label_histogram="|".join(str(int(v)) for v in hist),
        )
        progress.append(rec)
        if checkpoint_every and on_checkpoint and state.step % checkpoint_every == 0 and not stream.exhausted:
            on_checkpoint(state, progress)
    return progress.records


def save_checkpoint(path: str | Path, state: TeacherStudentState, progress: RunProgress, config_hash: str) -> None:
    payload: dict[str, np.ndarray] = {}
    for prefix, ps in (("student", state.student), ("teacher", state.teacher), ("opt_m", state.opt.m), ("opt_v", state.opt.v)):
        for k, v in ps.items():
            payload[f"{prefix}/{k}"] = v
    for k, v in state.buffer.state_arrays(state.arch.input_dim).items():
        payload[f"buffer/{k}"] = v
    payload["intrinsic/vertices"] = state.intrinsic.vertices
    payload["intrinsic/present"] = state.intrinsic.present
    meta = {
        "config_hash": config_hash,
        "step": state.step,
        "opt_step": state.opt.step,
        "arch": state.arch.to_dict(),
        "config": asdict(state.config),
    }
    payload["meta"] = np.array(json.dumps(meta, sort_keys=True))
    payload["records"] = np.array(records_to_csv(progress.records))
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path: str | Path, config: AdaptationConfig, config_hash: str) -> tuple[TeacherStudentState, RunProgress]:
    try:
        z = dict(np.load(path, allow_pickle=False))
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    meta = json.loads(str(z["meta"]))
    if meta["config_hash"] != config_hash:
        raise CheckpointError(f"checkpoint {path} was written by a different config ({meta['config_hash']} != {config_hash})")
    arch = NetworkArch.from_dict(meta["arch"])

    def group(prefix):
        return ParamSet({k.split("/", 1)[1]: v for k, v in z.items() if k.startswith(prefix + "/")})

    intrinsic = ClassRelationGraph(vertices=z["intrinsic/vertices"], present=z["intrinsic/present"])
    student = group("student")
    state = init_state(student, arch, intrinsic, config)
    state.teacher = group("teacher")
    state.opt = OptimizerState(m=group("opt_m"), v=group("opt_v"), step=int(meta["opt_step"]), lr=config.lr)
    state.step = int(meta["step"])
    state.buffer.load_state_arrays({k.split("/", 1)[1]: v for k, v in z.items() if k.startswith("buffer/")})
    return state, RunProgress(records=records_from_csv(str(z["records"])))
