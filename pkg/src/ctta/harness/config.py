"""Run configuration: four INI sections, one dataclass each.

The config hash is a digest of the canonical INI rendering, so two configs
that differ only in key order or whitespace hash the same.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from ..adapter import AdaptationConfig
from ..errors import ConfigError
from ..stream import DEFAULT_DOMAINS, MODES, DomainSpec, StreamSchedule

OUT_ROOT_ENV = "CTTA_OUT_ROOT"

# method selector -> AdaptationConfig overrides
METHODS: dict[str, dict] = {
    "full": {},
    "st_only": {"capacity": 0, "lambda_crp": 0.0},
    "st_pce": {"lambda_crp": 0.0},
    "st_crp": {"use_pce": False},
    "source_only": {"objective": "frozen"},
    "entropy_min": {"objective": "entropy"},
    "reservoir_pce": {"buffer_policy": "reservoir", "lambda_crp": 0.0},
    "fifo_pce": {"buffer_policy": "fifo", "lambda_crp": 0.0},
}
ABLATION_ROWS = ("st_only", "st_pce", "st_crp", "full")


@dataclass(frozen=True)
class SourceSection:
    n_classes: int = 5
    dim: int = 16
    hidden: tuple[int, ...] = (16, 16)
    activation: str = "tanh"
    per_class: int = 400
    pretrain_lr: float = 1e-2
    max_epochs: int = 50
    min_epochs: int = 20
    floor: float = 0.95
    graph_source: str = "prototypes"


@dataclass(frozen=True)
class StreamSection:
    batches_per_domain: int = 50
    batch_size: int = 64
    severity: int = 5
    mode: str = "abrupt"
    cycles: int = 1
    domains: tuple[tuple[str, str], ...] = DEFAULT_DOMAINS

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown stream mode {self.mode!r}")
        for domain_id, kind in self.domains:
            DomainSpec(domain_id, kind, self.severity)

    def schedule(self) -> StreamSchedule:
        segs = [(DomainSpec(i, k, self.severity), self.batches_per_domain) for i, k in self.domains]
        return StreamSchedule(segs, mode=self.mode, cycles=self.cycles, batch_size=self.batch_size)


@dataclass(frozen=True)
class AdaptSection:
    method: str = "full"
    alpha: float = 0.1
    lambda_crp: float = 200.0
    capacity: int = 200
    lr: float = 1e-2
    ema_momentum: float = 0.999
    strict_eviction: bool = True
    graph_from: str = "replay"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {sorted(METHODS)}")


@dataclass(frozen=True)
class RunSection:
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    out_dir: str = "runs"
    checkpoint_every: int = 0
    eval_size: int = 2000

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be non-negative")


@dataclass(frozen=True)
class RunConfig:
    source: SourceSection = field(default_factory=SourceSection)
    stream: StreamSection = field(default_factory=StreamSection)
    adapt: AdaptSection = field(default_factory=AdaptSection)
    run: RunSection = field(default_factory=RunSection)

    def adaptation(self, seed: int, method: str | None = None) -> AdaptationConfig:
        """The adapter config for one seed, with the method's wiring applied."""
        a = self.adapt
        base = AdaptationConfig(
            alpha=a.alpha,
            lambda_crp=a.lambda_crp,
            capacity=a.capacity,
            batch_size=self.stream.batch_size,
            lr=a.lr,
            ema_momentum=a.ema_momentum,
            strict_eviction=a.strict_eviction,
            graph_source=self.source.graph_source,
            graph_from=a.graph_from,
            seed=seed,
        )
        return replace(base, **METHODS[method or a.method])

    def with_method(self, method: str) -> "RunConfig":
        return replace(self, adapt=replace(self.adapt, method=method))

    def out_root(self) -> Path:
        return Path(os.environ.get(OUT_ROOT_ENV) or self.run.out_dir)

    def override(self, **values) -> "RunConfig":
        """Replace fields by name, whatever section they live in."""
        sections = {s.name: getattr(self, s.name) for s in fields(self)}
        pending = dict(values)
        for name, sec in sections.items():
            mine = {k: pending.pop(k) for k in list(pending) if k in {f.name for f in fields(sec)}}
            if mine:
                sections[name] = replace(sec, **mine)
        if pending:
            raise ConfigError(f"unknown config keys: {sorted(pending)}")
        return RunConfig(**sections)

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        for s in fields(self):
            sec = getattr(self, s.name)
            cp[s.name] = {f.name: _render(getattr(sec, f.name)) for f in fields(sec)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def hash(self, *extra: str) -> str:
        h = hashlib.sha256(self.to_ini().encode("utf-8"))
        for e in extra:
            h.update(b"\0" + e.encode("utf-8"))
        return h.hexdigest()[:16]

    def source_hash(self) -> str:
        cp = configparser.ConfigParser()
        cp["source"] = {f.name: _render(getattr(self.source, f.name)) for f in fields(self.source)}
        buf = io.StringIO()
        cp.write(buf)
        return hashlib.sha256(buf.getvalue().encode("utf-8")).hexdigest()[:16]


def _render(v) -> str:
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return ", ".join(f"{a}:{b}" for a, b in v)
        return ", ".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(raw: str, proto, key: str):
    raw = raw.strip()
    try:
        if isinstance(proto, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(proto, int):
            return int(raw)
        if isinstance(proto, float):
            return float(raw)
        if isinstance(proto, tuple):
            items = [p.strip() for p in raw.split(",") if p.strip()]
            if proto and isinstance(proto[0], tuple):
                pairs = [tuple(p.split(":", 1)) for p in items]
                if any(len(p) != 2 for p in pairs):
                    raise ValueError(raw)
                return tuple((a.strip(), b.strip()) for a, b in pairs)
            return tuple(int(p) for p in items)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_value(key: str, raw: str):
    """Parse a string for the field ``key`` in whichever section defines it."""
    for s in fields(RunConfig):
        sec = s.default_factory()
        if key in {f.name for f in fields(sec)}:
            return _parse(raw, getattr(sec, key), key)
    raise ConfigError(f"unknown config key {key!r}")


def loads(text: str) -> RunConfig:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    known = {s.name: s for s in fields(RunConfig)}
    unknown = set(cp.sections()) - set(known)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    sections = {}
    for name, s in known.items():
        default = s.default_factory()
        if name not in cp:
            sections[name] = default
            continue
        names = {f.name for f in fields(default)}
        extra = set(cp[name]) - names
        if extra:
            raise ConfigError(f"unknown keys in [{name}]: {sorted(extra)}")
        values = {k: _parse(v, getattr(default, k), f"{name}.{k}") for k, v in cp[name].items()}
        try:
            sections[name] = replace(default, **values)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
    return RunConfig(**sections)


def load(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return loads(text)


def field_names() -> list[tuple[str, str, object]]:
    """(section, key, default) for every config field, for CLI flag generation."""
    out = []
    for s in fields(RunConfig):
        sec = s.default_factory()
        out.extend((s.name, f.name, getattr(sec, f.name)) for f in dataclasses.fields(sec))
    return out
