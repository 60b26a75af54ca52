"""Experiment drivers: pretrain, run, ablate, sweep, report.

Layout under the output root::

    source/seed{k}.npz                 source checkpoint + intrinsic graph
    {method}/seed{k}/steps.csv         per-step records
    {method}/seed{k}/summary.{csv,txt} per-domain table, one row per round
    {method}/seed{k}/probe.csv         source accuracy before / after
    {method}/seed{k}/checkpoint.npz    latest resumable state
    ablation.{csv,txt}, sweep.csv
"""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .. import adapter as ad
from ..errors import CheckpointError
from ..metrics import mean_error, records_from_csv, records_to_csv, read_config_hash, summary_csv, summary_text
from ..nn import load_params, save_params
from ..relation import ClassRelationGraph
from ..stream import SOURCE_DOMAIN, SourceDistribution, Stream, eval_split
from .config import ABLATION_ROWS, RunConfig
from .pretrain import SourceModel, pretrain_source

log = logging.getLogger(__name__)

SWEEP_LAMBDAS = (0.0, 50.0, 150.0, 200.0, 250.0, 300.0)
SWEEP_ALPHAS = (0.05, 0.1, 0.2)


def _source_distribution(cfg: RunConfig, seed: int) -> SourceDistribution:
    return SourceDistribution.create(seed, cfg.source.n_classes, cfg.source.dim)


def _pretrain(cfg: RunConfig, seed: int) -> tuple[SourceModel, ClassRelationGraph]:
    s = cfg.source
    return pretrain_source(
        seed,
        n_classes=s.n_classes,
        dim=s.dim,
        hidden=s.hidden,
        activation=s.activation,
        per_class=s.per_class,
        lr=s.pretrain_lr,
        max_epochs=s.max_epochs,
        floor=s.floor,
        min_epochs=s.min_epochs,
        eval_size=cfg.run.eval_size,
        graph_source=s.graph_source,
    )


def source_path(cfg: RunConfig, seed: int) -> Path:
    return cfg.out_root() / "source" / f"seed{seed}.npz"


def pretrain(cfg: RunConfig, seed: int, force: bool = False) -> Path:
    """Train and persist the source model for one seed; reuses a matching checkpoint."""
    path = source_path(cfg, seed)
    if path.exists() and not force:
        try:
            _, _, extra = load_params(path)
            if str(extra["source_hash"]) == cfg.source_hash():
                return path
        except (CheckpointError, KeyError):
            pass
    model, graph = _pretrain(cfg, seed)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_params(
        path,
        model.params,
        model.arch,
        graph_vertices=graph.vertices,
        accuracy=np.array(model.accuracy),
        epochs=np.array(model.epochs),
        source_hash=np.array(cfg.source_hash()),
    )
    log.info("seed %d: source accuracy %.4f after %d epochs -> %s", seed, model.accuracy, model.epochs, path)
    return path


def load_source(cfg: RunConfig, seed: int):
    path = pretrain(cfg, seed)
    params, arch, extra = load_params(path)
    vertices = extra["graph_vertices"]
    graph = ClassRelationGraph(vertices=vertices, present=np.ones(len(vertices), dtype=bool))
    return params, arch, graph


@dataclass(frozen=True)
class RunResult:
    method: str
    seed: int
    mean_error: float
    source_acc_before: float
    source_acc_after: float
    run_dir: Path
    config_hash: str

    @property
    def forgetting(self) -> float:
        return self.source_acc_before - self.source_acc_after


def run_dir(cfg: RunConfig, seed: int, method: str | None = None, root: Path | None = None) -> Path:
    return (root or cfg.out_root()) / (method or cfg.adapt.method) / f"seed{seed}"


def run_one(cfg: RunConfig, seed: int, resume: bool = False, out: Path | None = None) -> RunResult:
    """Adapt over the configured stream for one seed and persist everything."""
    method = cfg.adapt.method
    out = out or run_dir(cfg, seed)
    out.mkdir(parents=True, exist_ok=True)
    chash = cfg.hash(f"seed={seed}")
    params, arch, graph = load_source(cfg, seed)
    acfg = cfg.adaptation(seed)
    src = _source_distribution(cfg, seed)
    held = eval_split(SOURCE_DOMAIN, src, seed, cfg.run.eval_size)
    before = ad.accuracy(params, arch, held.x, held.labels)

    stream = Stream(cfg.stream.schedule(), src, seed)
    ckpt = out / "checkpoint.npz"
    if resume and ckpt.exists():
        state, progress = ad.load_checkpoint(ckpt, acfg, chash)
        stream.position = state.step
        log.info("resuming %s seed %d at batch %d", method, seed, state.step)
    else:
        state, progress = ad.init_state(params, arch, graph, acfg), ad.RunProgress()

    def on_checkpoint(st, prog):
        ad.save_checkpoint(ckpt, st, prog, chash)

    try:
        records = ad.run_stream(state, stream, progress, cfg.run.checkpoint_every, on_checkpoint)
    except ad.AdaptationDiverged as exc:
        (out / "diagnostics.json").write_text(json.dumps(exc.diagnostics, indent=2, sort_keys=True, default=str))
        raise

    (out / "config.ini").write_text(f"# config_hash={chash}\n" + cfg.to_ini())
    (out / "steps.csv").write_text(records_to_csv(records, chash))
    (out / "summary.csv").write_text(summary_csv(records, chash))
    (out / "summary.txt").write_text(f"# config_hash={chash}\n" + summary_text(records, f"{method} seed {seed}"))
    after = ad.accuracy(state.student, arch, held.x, held.labels)
    (out / "probe.csv").write_text(
        f"# config_hash={chash}\nseed,source_acc_before,source_acc_after,drop\n"
        f"{seed},{before!r},{after!r},{before - after!r}\n"
    )
    if cfg.run.checkpoint_every:
        ad.save_checkpoint(ckpt, state, progress, chash)
    return RunResult(method, seed, mean_error(records), before, after, out, chash)


def _run_cell(args):
    cfg, seed, out = args
    return run_one(cfg, seed, out=out)


def _map(fn, jobs: list, workers: int):
    if workers <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def run_seeds(cfg: RunConfig, workers: int = 1, resume: bool = False) -> list[RunResult]:
    for seed in cfg.run.seeds:
        pretrain(cfg, seed)
    if resume:
        return [run_one(cfg, s, resume=True) for s in cfg.run.seeds]
    return _map(_run_cell, [(cfg, s, None) for s in cfg.run.seeds], workers)


def _mean_std(xs) -> tuple[float, float]:
    a = np.asarray(xs, dtype=np.float64)
    return float(a.mean()), float(a.std(ddof=1)) if len(a) > 1 else 0.0


def ablate(cfg: RunConfig, methods=ABLATION_ROWS, workers: int = 1) -> dict[str, list[RunResult]]:
    """One row per method over the same seeds and stream bytes."""
    for seed in cfg.run.seeds:
        pretrain(cfg, seed)
    jobs = [(cfg.with_method(m), s, None) for m in methods for s in cfg.run.seeds]
    flat = _map(_run_cell, jobs, workers)
    table: dict[str, list[RunResult]] = {m: [] for m in methods}
    for r in flat:
        table[r.method].append(r)
    root = cfg.out_root()
    chash = cfg.hash("ablate", *methods)
    seeds = list(cfg.run.seeds)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    buf.write(f"# config_hash={chash}\n")
    w.writerow(["method", *[f"seed{s}" for s in seeds], "mean", "std", "mean_forgetting"])
    lines = [f"# config_hash={chash}", f"{'method':<14}" + "".join(f"{'seed' + str(s):>9}" for s in seeds) + f"{'mean':>9}{'std':>8}"]
    for m in methods:
        errs = [r.mean_error for r in table[m]]
        mu, sd = _mean_std(errs)
        forget = float(np.mean([r.forgetting for r in table[m]]))
        w.writerow([m, *map(repr, errs), repr(mu), repr(sd), repr(forget)])
        lines.append(f"{m:<14}" + "".join(f"{100 * e:>8.2f}%" for e in errs) + f"{100 * mu:>8.2f}%{100 * sd:>7.2f}%")
    root.mkdir(parents=True, exist_ok=True)
    (root / "ablation.csv").write_text(buf.getvalue())
    (root / "ablation.txt").write_text("\n".join(lines) + "\n")
    return table


@dataclass(frozen=True)
class SweepCell:
    lambda_crp: float
    alpha: float
    results: tuple[RunResult, ...]


def sweep(
    cfg: RunConfig,
    lambdas=SWEEP_LAMBDAS,
    alphas=SWEEP_ALPHAS,
    workers: int = 1,
) -> list[SweepCell]:
    """Grid over (lambda_crp, alpha); one summary row per cell, per-seed errors inline."""
    for seed in cfg.run.seeds:
        pretrain(cfg, seed)
    root = cfg.out_root() / "sweep"
    cells = [(lam, a) for lam in lambdas for a in alphas]
    jobs = []
    for lam, a in cells:
        cc = replace(cfg, adapt=replace(cfg.adapt, method="full", lambda_crp=float(lam), alpha=float(a)))
        for s in cfg.run.seeds:
            jobs.append((cc, s, root / f"lambda{lam:g}_alpha{a:g}" / f"seed{s}"))
    flat = _map(_run_cell, jobs, workers)
    n = len(cfg.run.seeds)
    out = [SweepCell(float(lam), float(a), tuple(flat[i * n:(i + 1) * n])) for i, (lam, a) in enumerate(cells)]
    chash = cfg.hash("sweep", *map(repr, lambdas), *map(repr, alphas))
    buf = io.StringIO()
    buf.write(f"# config_hash={chash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["lambda_crp", "alpha", *[f"seed{s}" for s in cfg.run.seeds], "mean", "std"])
    for c in out:
        errs = [r.mean_error for r in c.results]
        mu, sd = _mean_std(errs)
        w.writerow([repr(c.lambda_crp), repr(c.alpha), *map(repr, errs), repr(mu), repr(sd)])
    root.mkdir(parents=True, exist_ok=True)
    (root / "sweep.csv").write_text(buf.getvalue())
    return out


def report(path: str | Path) -> str:
    """Re-fold every ``steps.csv`` under ``path`` into summary tables."""
    path = Path(path)
    files = [path] if path.is_file() else sorted(path.rglob("steps.csv"))
    if not files:
        raise CheckpointError(f"no steps.csv under {path}")
    parts = []
    for f in files:
        text = f.read_text()
        records = records_from_csv(text)
        label = str(f.parent.relative_to(path)) if path.is_dir() else f.name
        parts.append(f"# config_hash={read_config_hash(text)}\n" + summary_text(records, label))
    return "\n".join(parts)


def records_body(run_directory: Path) -> str:
    """steps.csv without its hash line, for cross-run byte comparisons."""
    text = (Path(run_directory) / "steps.csv").read_text()
    return text.split("\n", 1)[1] if text.startswith("#") else text
