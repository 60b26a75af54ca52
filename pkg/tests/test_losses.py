import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctta.errors import InputError
from ctta.losses import entropy_loss, one_hot, replay_loss, self_training_loss, total_loss
from ctta.nn import softmax


def test_self_training_examples():
    assert self_training_loss([0.5, 0.5], [0.5, 0.5])[0] == pytest.approx(2 * math.log(2), abs=1e-12)
    # direct evaluation: -(0.9 ln .6 + .1 ln .4) - (.6 ln .9 + .4 ln .1)
    expected = -(0.9 * math.log(0.6) + 0.1 * math.log(0.4)) - (0.6 * math.log(0.9) + 0.4 * math.log(0.1))
    value, _ = self_training_loss([0.9, 0.1], [0.6, 0.4])
    assert value == pytest.approx(expected, abs=1e-12)
    assert value == pytest.approx(1.53563, abs=1e-5)


def test_self_training_near_one_hot_is_near_zero():
    p = np.array([1.0 - 1e-12, 1e-12])
    value, _ = self_training_loss(p, p)
    assert 0 <= value < 1e-9


def test_self_training_rejects_non_probabilities():
    with pytest.raises(InputError):
        self_training_loss([0.7, 0.7], [0.5, 0.5])


def test_replay_examples():
    assert replay_loss([1], [[0.2, 0.5, 0.3]])[0] == pytest.approx(-math.log(0.5), abs=1e-12)
    assert replay_loss([3], np.full((1, 10), 0.1))[0] == pytest.approx(math.log(10), abs=1e-12)
    eps = 1e-9
    assert replay_loss([0], [[1 - eps, eps]])[0] < 1e-8


def test_entropy_loss_examples():
    assert entropy_loss(np.full((3, 4), 0.25))[0] == pytest.approx(math.log(4), abs=1e-12)
    assert entropy_loss([[1.0, 0.0, 0.0]])[0] == pytest.approx(0.0, abs=1e-12)


def test_total_loss_examples():
    assert total_loss(0.5, 0.3, -0.9, 200).total == pytest.approx(-179.2, abs=1e-10)
    b = total_loss(0.4, 0.2, -0.7, 0.0)
    assert b.total == 0.4 + 0.2
    assert total_loss(0.4).total == 0.4


def _logit_fd(fn, z, h=1e-6):
    out = np.zeros_like(z)
    for idx in np.ndindex(z.shape):
        up, dn = z.copy(), z.copy()
        up[idx] += h
        dn[idx] -= h
        out[idx] = (fn(up) - fn(dn)) / (2 * h)
    return out


def test_logit_gradients_match_finite_differences():
    rng = np.random.default_rng(2)
    z = rng.standard_normal((6, 4))
    q = softmax(rng.standard_normal((6, 4)))
    y = rng.integers(0, 4, 6)
    for fn in (
        lambda zz: self_training_loss(q, softmax(zz)),
        lambda zz: replay_loss(y, softmax(zz)),
        lambda zz: entropy_loss(softmax(zz)),
    ):
        _, analytic = fn(z)
        np.testing.assert_allclose(analytic, _logit_fd(lambda zz: fn(zz)[0], z), atol=1e-8)


def test_replay_gradient_is_softmax_minus_one_hot():
    rng = np.random.default_rng(3)
    p = softmax(rng.standard_normal((5, 3)))
    y = rng.integers(0, 3, 5)
    _, grad = replay_loss(y, p)
    np.testing.assert_array_equal(grad, (p - one_hot(y, 3)) / 5)


probs = st.integers(2, 6).flatmap(
    lambda c: st.lists(st.lists(st.floats(-8, 8), min_size=c, max_size=c), min_size=1, max_size=6)
)


@settings(max_examples=60)
@given(probs, st.integers(0, 2**31))
def test_symmetric_value_and_non_negativity(rows, seed):
    p = softmax(np.array(rows))
    q = softmax(np.random.default_rng(seed).standard_normal(p.shape) * 3)
    a, _ = self_training_loss(q, p)
    b, _ = self_training_loss(p, q)
    assert a == pytest.approx(b, abs=1e-12)
    assert a >= 0
    y = np.random.default_rng(seed).integers(0, p.shape[1], p.shape[0])
    assert replay_loss(y, p)[0] >= 0


@settings(max_examples=40)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**31))
def test_batch_mean_linearity(n1, n2, seed):
    rng = np.random.default_rng(seed)
    p = softmax(rng.standard_normal((n1 + n2, 3)))
    q = softmax(rng.standard_normal((n1 + n2, 3)))
    whole = self_training_loss(q, p)[0]
    parts = (n1 * self_training_loss(q[:n1], p[:n1])[0] + n2 * self_training_loss(q[n1:], p[n1:])[0]) / (n1 + n2)
    assert whole == pytest.approx(parts, abs=1e-12)
