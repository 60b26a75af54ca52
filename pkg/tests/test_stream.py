import numpy as np
import pytest

from ctta.adapter import accuracy
from ctta.errors import ConfigError, EndOfStream
from ctta.harness.pretrain import pretrain_source
from ctta.stream import (
    GRADUAL_RAMP,
    SOURCE_DOMAIN,
    DomainSpec,
    SourceDistribution,
    Stream,
    StreamSchedule,
    default_schedule,
    eval_split,
    make_source_dataset,
)


def _stream(seed=0, **kw):
    return Stream(default_schedule(**kw), SourceDistribution.create(seed), seed)


def test_default_stream_length_then_end():
    s = _stream()
    batches = list(s)
    assert len(batches) == 400
    assert all(b.x.shape == (64, 16) for b in batches)
    with pytest.raises(EndOfStream):
        s.next_batch()


def test_adapter_view_hides_labels_and_domain():
    b = _stream().next_batch()
    view = b.view()
    assert not hasattr(view, "labels") and not hasattr(view, "domain")
    assert view.index == 0


def test_rerun_is_bit_identical():
    a = _stream(seed=3).batch_at(123)
    b = _stream(seed=3).batch_at(123)
    assert a.x.tobytes() == b.x.tobytes()
    assert (a.labels == b.labels).all()
    assert a.domain == b.domain


def test_batches_are_independent_of_cursor_history():
    s = _stream(seed=1)
    seq = [s.next_batch() for _ in range(5)]
    assert seq[4].x.tobytes() == _stream(seed=1).batch_at(4).x.tobytes()


def test_identity_domain_is_source_distributed():
    src = SourceDistribution.create(0)
    b = eval_split(SOURCE_DOMAIN, src, 0, 20000)
    for k in range(src.n_classes):
        np.testing.assert_allclose(b.x[b.labels == k].mean(axis=0), src.means[k], atol=0.1)


def test_eval_split_disjoint_from_stream():
    s = _stream(seed=2)
    domain = s.batch_at(0).domain
    held = eval_split(domain, s.source, 2, 256)
    stream_rows = {row.tobytes() for b in s for row in b.x if b.domain == domain}
    assert not any(row.tobytes() in stream_rows for row in held.x)


def test_source_set_is_balanced():
    x, y = make_source_dataset(0, per_class=30)
    assert x.shape == (150, 16)
    np.testing.assert_array_equal(np.bincount(y), [30] * 5)


def test_gradual_mode_follows_ramp():
    sched = StreamSchedule([(DomainSpec("r", "rotation"), 18)], mode="gradual")
    sev = [p.domain.severity for p in sched.plan()]
    assert len(sev) == 18
    assert sev == [s for s in GRADUAL_RAMP for _ in range(2)]


def test_cycles_repeat_and_tag_rounds():
    sched = default_schedule(batches_per_domain=2, cycles=3)
    plan = sched.plan()
    assert len(plan) == len(sched) == 48
    assert [p.round for p in plan[::16]] == [0, 1, 2]
    assert [p.domain for p in plan[:16]] == [p.domain for p in plan[16:32]]


def test_manifest_lists_every_batch():
    sched = default_schedule(batches_per_domain=3)
    lines = sched.manifest_csv().strip().splitlines()
    assert lines[0] == "batch,round,domain,kind,severity"
    assert len(lines) == 1 + len(sched)


def test_invalid_specs():
    with pytest.raises(ConfigError):
        DomainSpec("x", "blur")
    with pytest.raises(ConfigError):
        DomainSpec("x", "noise", 6)
    with pytest.raises(ConfigError):
        StreamSchedule([], mode="zigzag")


def test_magnitude_is_monotone():
    for kind in ("rotation", "translation", "noise", "scaling", "dropout"):
        mags = [DomainSpec("d", kind, s).magnitude() for s in range(1, 6)]
        assert mags == sorted(mags) and mags[0] > 0


@pytest.fixture(scope="module")
def source_models():
    return {seed: pretrain_source(seed)[0] for seed in range(5)}


def test_source_floor(source_models):
    assert all(m.accuracy >= 0.95 for m in source_models.values())


@pytest.mark.parametrize("kind", ["rotation", "translation", "noise", "scaling", "dropout"])
def test_severity_is_monotone_for_a_fixed_classifier(kind, source_models):
    errors = []
    for sev in range(1, 6):
        errs = []
        for seed, model in source_models.items():
            b = eval_split(DomainSpec(f"mono-{kind}", kind, sev), SourceDistribution.create(seed), seed, 2000)
            errs.append(1 - accuracy(model.params, model.arch, b.x, b.labels))
        errors.append(np.mean(errs))
    assert all(a <= b for a, b in zip(errors, errors[1:])), errors
