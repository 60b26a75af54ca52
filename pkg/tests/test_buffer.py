import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctta.buffer import (
    FIFOBuffer,
    ReservoirBuffer,
    UncertaintyBuffer,
    UncertaintyThreshold,
    entropy,
    sample_replay,
)
from ctta.errors import EmptyBufferError, InputError


def probs_with_entropy(h, c=3):
    """Two-point distribution [1-e, e, 0, ...] tuned by bisection to entropy h (nats)."""
    lo, hi = 0.0, 0.5
    for _ in range(200):
        mid = (lo + hi) / 2
        if entropy(np.array([1 - mid, mid] + [0.0] * (c - 2))) < h:
            lo = mid
        else:
            hi = mid
    return np.array([1 - lo, lo] + [0.0] * (c - 2))


def test_entropy_examples():
    assert entropy([0.0, 1.0, 0.0]) == 0.0
    assert entropy(np.full(4, 0.25)) == pytest.approx(math.log(4), abs=1e-12)
    expected = -(0.7 * math.log(0.7) + 0.2 * math.log(0.2) + 0.1 * math.log(0.1))
    assert entropy([0.7, 0.2, 0.1]) == pytest.approx(expected, abs=1e-12)
    assert entropy([0.7, 0.2, 0.1]) == pytest.approx(0.80182, abs=1e-5)


def test_entropy_rejects_bad_input():
    with pytest.raises(InputError):
        entropy([0.5, 0.6])
    with pytest.raises(InputError):
        entropy([1.2, -0.2])


@given(st.integers(2, 12))
def test_entropy_uniform_is_log_c(c):
    assert abs(entropy(np.full(c, 1.0 / c)) - math.log(c)) < 1e-12


def _buffer(capacity=3, alpha=0.5, c=3, strict=True):
    return UncertaintyBuffer(capacity, UncertaintyThreshold(alpha, c), strict=strict)


def test_insert_into_empty_buffer():
    buf = _buffer()
    out = buf.admit(np.zeros(2), [0.1, 0.8, 0.1], probs_with_entropy(0.2), step=0)
    assert out.kind == "inserted"
    assert out.entry.label == 1
    assert len(buf) == 1


def test_worked_eviction_example():
    buf = _buffer()
    for i, h in enumerate([0.05, 0.10, 0.20]):
        assert buf.admit(np.full(2, i), [1, 0, 0], probs_with_entropy(h), step=i).kind == "inserted"
    out = buf.admit(np.full(2, 9), [0, 0, 1], probs_with_entropy(0.15), step=3)
    assert out.kind == "replaced"
    assert out.evicted.entropy == pytest.approx(0.20, abs=1e-9)
    stored = sorted(e.entropy for e in buf.entries())
    np.testing.assert_allclose(stored, [0.05, 0.10, 0.15], atol=1e-9)


def test_gate_rejects_uncertain_candidates():
    buf = _buffer(alpha=0.1)
    h0 = 0.1 * math.log(3)
    out = buf.admit(np.zeros(2), [1, 0, 0], probs_with_entropy(h0 + 1e-6), step=0)
    assert out.kind == "rejected"
    assert len(buf) == 0


def test_strict_mode_keeps_more_certain_entries():
    buf = _buffer(capacity=1)
    buf.admit(np.zeros(2), [1, 0, 0], probs_with_entropy(0.05), step=0)
    assert buf.admit(np.zeros(2), [1, 0, 0], probs_with_entropy(0.3), step=1).kind == "rejected"
    loose = _buffer(capacity=1, strict=False)
    loose.admit(np.zeros(2), [1, 0, 0], probs_with_entropy(0.05), step=0)
    assert loose.admit(np.zeros(2), [1, 0, 0], probs_with_entropy(0.3), step=1).kind == "replaced"


def test_max_entropy_entry_and_ties():
    buf = _buffer(capacity=5)
    with pytest.raises(EmptyBufferError):
        buf.max_entropy_entry()
    buf.admit(np.zeros(2), [1, 0, 0], probs_with_entropy(0.1), step=0)
    buf.admit(np.zeros(2), [1, 0, 0], probs_with_entropy(0.3), step=2)
    assert buf.max_entropy_entry().step == 2
    p = probs_with_entropy(0.3)
    buf.admit(np.zeros(2), [1, 0, 0], p, step=7)
    assert buf.max_entropy_entry().step == 2


def test_replay_sampling_edge_cases():
    rng = np.random.default_rng(0)
    buf = _buffer(capacity=4)
    assert sample_replay(buf, 4, rng) is None
    buf.admit(np.array([3.0, 4.0]), [0, 1, 0], probs_with_entropy(0.1), step=0)
    x, y = sample_replay(buf, 4, rng)
    np.testing.assert_array_equal(x, np.tile([3.0, 4.0], (4, 1)))
    np.testing.assert_array_equal(y, [1, 1, 1, 1])


def test_replay_sampling_is_uniform():
    buf = _buffer(capacity=5)
    for i in range(5):
        buf.admit(np.array([float(i)]), [1, 0, 0], probs_with_entropy(0.01 * (i + 1)), step=i)
    rng = np.random.default_rng(1)
    counts = np.zeros(5)
    draws = 10_000
    for _ in range(draws):
        x, _ = sample_replay(buf, 1, rng)
        counts[int(x[0, 0])] += 1
    sigma = math.sqrt(draws * 0.2 * 0.8)
    assert np.abs(counts - draws * 0.2).max() < 5 * sigma


def test_full_sample_without_replacement():
    buf = _buffer(capacity=6)
    for i in range(6):
        buf.admit(np.array([float(i)]), [1, 0, 0], probs_with_entropy(0.01 * (i + 1)), step=i)
    x, _ = sample_replay(buf, 6, np.random.default_rng(2))
    assert sorted(x[:, 0]) == list(range(6))


@settings(max_examples=200)
@given(st.lists(st.floats(0, 0.2), min_size=1, max_size=12), st.floats(0, 0.2))
def test_lowering_entropy_never_causes_rejection(existing, h):
    def outcome(hc):
        buf = _buffer(capacity=4, alpha=0.15)
        for i, e in enumerate(existing):
            buf.admit(np.zeros(1), [1, 0, 0], probs_with_entropy(e), step=i)
        return buf.admit(np.zeros(1), [1, 0, 0], probs_with_entropy(hc), step=99).kind

    if outcome(h) != "rejected":
        assert outcome(h * 0.5) != "rejected"


def test_fifo_and_reservoir_baselines():
    th = UncertaintyThreshold(0.1, 3)
    fifo = FIFOBuffer(2, th)
    for i in range(4):
        fifo.admit(np.array([float(i)]), [1, 0, 0], [0.4, 0.3, 0.3], step=i)
    assert [e.x[0] for e in fifo.entries()] == [2.0, 3.0]
    res = ReservoirBuffer(3, th, seed=4)
    for i in range(100):
        res.admit(np.array([float(i)]), [1, 0, 0], [0.4, 0.3, 0.3], step=i)
    assert len(res) == 3


def test_state_round_trip_preserves_order():
    buf = _buffer(capacity=4)
    for i, h in enumerate([0.2, 0.05, 0.3, 0.1, 0.02]):
        buf.admit(np.array([float(i), 1.0]), [0, 0, 1], probs_with_entropy(h), step=i)
    clone = _buffer(capacity=4)
    clone.load_state_arrays(buf.state_arrays(2))
    assert [(e.seq, e.entropy) for e in clone.entries()] == [(e.seq, e.entropy) for e in buf.entries()]
    a = sample_replay(buf, 3, np.random.default_rng(5))
    b = sample_replay(clone, 3, np.random.default_rng(5))
    np.testing.assert_array_equal(a[0], b[0])
    assert clone.snapshot() == buf.snapshot()
