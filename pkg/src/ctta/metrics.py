"""Per-step metric records and the folds that turn them into summary tables.

Records serialise to CSV with ``repr``-exact floats so summaries recomputed
from disk match the in-memory ones bit for bit.
"""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, fields

import numpy as np


@dataclass(frozen=True)
class MetricsRecord:
    step: int
    round: int
    domain: str
    severity: int
    batch_error: float
    domain_error: float  # running mean over this round's batches of the domain so far
    l_st: float
    l_pce: float
    l_crp: float
    lambda_crp: float
    l_t: float
    buffer_size: int
    label_histogram: str  # "n0|n1|...|nC-1"


FIELDS = [f.name for f in fields(MetricsRecord)]
_INT = {"step", "round", "severity", "buffer_size"}
_STR = {"domain", "label_histogram"}


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def records_to_csv(records: list[MetricsRecord], config_hash: str | None = None) -> str:
    buf = io.StringIO()
    if config_hash is not None:
        buf.write(f"# config_hash={config_hash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FIELDS)
    for r in records:
        w.writerow([_fmt(v) for v in asdict(r).values()])
    return buf.getvalue()


def read_config_hash(text: str) -> str | None:
    first = text.split("\n", 1)[0]
    if first.startswith("# config_hash="):
        return first.split("=", 1)[1].strip()
    return None


def records_from_csv(text: str) -> list[MetricsRecord]:
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    out = []
    for row in csv.DictReader(lines):
        kw = {}
        for k in FIELDS:
            v = row[k]
            kw[k] = int(v) if k in _INT else v if k in _STR else float(v)
        out.append(MetricsRecord(**kw))
    return out


def domain_table(records: list[MetricsRecord]) -> tuple[list[str], dict[int, dict[str, float]]]:
    """Mean online error per (round, domain), domains in first-seen order."""
    order: list[str] = []
    sums: dict[tuple[int, str], list[float]] = {}
    for r in records:
        if r.domain not in order:
            order.append(r.domain)
        sums.setdefault((r.round, r.domain), []).append(r.batch_error)
    table: dict[int, dict[str, float]] = {}
    for (rnd, dom), errs in sums.items():
        table.setdefault(rnd, {})[dom] = float(np.mean(errs))
    return order, table


def round_means(records: list[MetricsRecord]) -> list[float]:
    """Mean over domains of per-domain errors, one value per round."""
    order, table = domain_table(records)
    return [float(np.mean([row[d] for d in order if d in row])) for _, row in sorted(table.items())]


def mean_error(records: list[MetricsRecord]) -> float:
    """Headline number: mean of per-(round, domain) errors."""
    _, table = domain_table(records)
    vals = [v for row in table.values() for v in row.values()]
    return float(np.mean(vals)) if vals else float("nan")


def summary_csv(records: list[MetricsRecord], config_hash: str | None = None) -> str:
    order, table = domain_table(records)
    buf = io.StringIO()
    if config_hash is not None:
        buf.write(f"# config_hash={config_hash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["round", *order, "mean"])
    for rnd, row in sorted(table.items()):
        vals = [row.get(d) for d in order]
        present = [v for v in vals if v is not None]
        w.writerow([rnd, *("" if v is None else repr(v) for v in vals), repr(float(np.mean(present)))])
    return buf.getvalue()


def summary_text(records: list[MetricsRecord], title: str = "") -> str:
    """Aligned percentage table in the usual per-domain error layout."""
    order, table = domain_table(records)
    cols = ["round", *order, "mean"]
    rows = []
    for rnd, row in sorted(table.items()):
        vals = [row.get(d) for d in order]
        present = [v for v in vals if v is not None]
        rows.append([str(rnd), *("-" if v is None else f"{100 * v:.1f}" for v in vals), f"{100 * np.mean(present):.1f}"])
    widths = [max(len(c), *(len(r[i]) for r in rows)) if rows else len(c) for i, c in enumerate(cols)]
    lines = [title] if title else []
    lines.append("  ".join(c.rjust(wd) for c, wd in zip(cols, widths)))
    lines.extend("  ".join(v.rjust(wd) for v, wd in zip(r, widths)) for r in rows)
    return "\n".join(lines) + "\n"
