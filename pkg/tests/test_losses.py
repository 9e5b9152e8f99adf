import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import central_diff, rel_error
from ltr.errors import ConfigError, DimensionError, DomainError
from ltr.losses import (
    LossKey, loss_listmle, loss_pairwise_logistic, loss_sigmoid_ce, loss_softmax_ce, make_loss_fn,
)


# Scalar oracles written with plain loops over valid items.

def oracle_sigmoid(y, s, w):
    return sum(wj * (-yj * math.log(1 / (1 + math.exp(-sj))) - (1 - yj) * math.log(1 - 1 / (1 + math.exp(-sj))))
               for yj, sj, wj in zip(y, s, w))


def oracle_pairwise(y, s, w):
    total = 0.0
    for j in range(len(y)):
        for k in range(len(y)):
            if y[j] > y[k]:
                total += w[j] * math.log(1 + math.exp(s[k] - s[j]))
    return total


def oracle_softmax(y, s, w):
    z = sum(math.exp(v) for v in s)
    return -sum(wj * yj * math.log(math.exp(sj) / z) for yj, sj, wj in zip(y, s, w))


def oracle_listmle(y, s, w):
    # Sort by label descending, index ascending on ties.
    order = sorted(range(len(y)), key=lambda i: (-y[i], i))
    total = 0.0
    for t, i in enumerate(order):
        rest = [s[r] for r in order[t:]]
        total += math.log(sum(math.exp(v) for v in rest)) - s[i]
    return sum(w) / len(w) * total


def test_golden_values():
    assert loss_sigmoid_ce([1.0], [0.0]).value == pytest.approx(0.693147, abs=1e-6)
    assert loss_sigmoid_ce([1.0], [2.0]).value == pytest.approx(0.126928, abs=1e-6)
    assert loss_pairwise_logistic([1.0, 0.0], [0.0, 0.0]).value == pytest.approx(0.693147, abs=1e-6)
    assert loss_pairwise_logistic([1.0, 0.0], [1.0, 0.0]).value == pytest.approx(0.313262, abs=1e-6)
    assert loss_softmax_ce([1.0, 0.0, 0.0], [0.0, 0.0, 0.0]).value == pytest.approx(1.098612, abs=1e-6)
    assert loss_listmle([1.0, 0.0], [0.0, 0.0]).value == pytest.approx(0.693147, abs=1e-6)


def test_no_preferred_pair_gives_zero_loss():
    out = loss_pairwise_logistic([1.0, 1.0, 1.0], [0.3, -2.0, 5.0])
    assert out.value == 0.0
    assert not out.active
    np.testing.assert_array_equal(out.grad_scores, 0.0)


def test_sigmoid_requires_binary_labels():
    with pytest.raises(DomainError):
        loss_sigmoid_ce([2.0, 0.0], [0.0, 0.0])


def test_softmax_rejects_negative_labels_on_valid_items():
    with pytest.raises(DomainError):
        loss_softmax_ce([-0.5, 1.0], [0.0, 0.0], mask=[True, True])


def test_shape_mismatch():
    with pytest.raises(DimensionError):
        loss_softmax_ce([1.0, 0.0], [0.0, 0.0, 0.0])


@pytest.mark.parametrize("fn,oracle", [
    (loss_pairwise_logistic, oracle_pairwise),
    (loss_softmax_ce, oracle_softmax),
    (loss_listmle, oracle_listmle),
])
def test_matches_loop_oracle(fn, oracle):
    rng = np.random.default_rng(7)
    for _ in range(50):
        n = int(rng.integers(1, 6))
        y = rng.integers(0, 3, size=n).astype(float)
        s = rng.normal(size=n)
        w = rng.uniform(0.5, 2.0, size=n)
        assert fn(y, s, w).value == pytest.approx(oracle(y, s, w), rel=1e-12, abs=1e-12)


def test_sigmoid_matches_loop_oracle():
    rng = np.random.default_rng(8)
    for _ in range(50):
        n = int(rng.integers(1, 6))
        y = rng.integers(0, 2, size=n).astype(float)
        s = rng.normal(size=n)
        w = rng.uniform(0.5, 2.0, size=n)
        assert loss_sigmoid_ce(y, s, w).value == pytest.approx(oracle_sigmoid(y, s, w), rel=1e-12)


@pytest.mark.parametrize("key", list(LossKey))
def test_padding_is_invisible(key):
    rng = np.random.default_rng(3)
    y = rng.integers(0, 2, size=4).astype(float)
    y[0] = 1.0
    s = rng.normal(size=4)
    fn = make_loss_fn(key)
    plain = fn(y, s)
    padded = fn(np.concatenate([y, [-1, -1]]), np.concatenate([s, [-np.inf, 7.0]]),
                mask=[True] * 4 + [False] * 2)
    assert padded.value == pytest.approx(plain.value, rel=1e-14)
    np.testing.assert_allclose(padded.grad_scores[:4], plain.grad_scores, rtol=1e-13)
    np.testing.assert_array_equal(padded.grad_scores[4:], 0.0)


@pytest.mark.parametrize("key", list(LossKey))
def test_gradients_match_finite_differences(key):
    rng = np.random.default_rng(11)
    for _ in range(30):
        n = int(rng.integers(1, 6))
        levels = 2 if key is LossKey.SIGMOID_CROSS_ENTROPY else 4
        y = rng.integers(0, levels, size=n).astype(float)
        s = rng.normal(size=n)
        w = rng.uniform(0.5, 2.0, size=n)

        def f():
            return make_loss_fn(key, np.random.default_rng(0))(y, s, w).value

        g = make_loss_fn(key, np.random.default_rng(0))(y, s, w).grad_scores
        assert rel_error(g, central_diff(f, s)) < 1e-6


def test_batch_reduction_averages_active_lists():
    y = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    s = np.zeros((2, 3))
    fn = make_loss_fn("softmax_cross_entropy")
    out = fn(y, s)
    # The second list has no relevant item and does not count.
    assert out.value == pytest.approx(math.log(3))
    np.testing.assert_allclose(out.grad_scores[1], 0.0)


def test_batch_with_no_active_list():
    out = make_loss_fn("pairwise_logistic")(np.zeros((2, 3)), np.zeros((2, 3)))
    assert out.value == 0.0


def test_listmle_ties_are_broken_by_rng():
    y = np.array([1.0, 1.0, 0.0])
    s = np.array([2.0, -1.0, 0.0])
    values = {round(loss_listmle(y, s, rng=np.random.default_rng(k)).value, 12) for k in range(20)}
    assert len(values) == 2


def test_unknown_loss_key():
    with pytest.raises(ConfigError):
        make_loss_fn("hinge")


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.floats(-5, 5)), min_size=1, max_size=6))
def test_losses_are_non_negative_and_finite(items):
    y = np.array([a for a, _ in items], dtype=float)
    s = np.array([b for _, b in items])
    for fn in (loss_pairwise_logistic, loss_softmax_ce, loss_listmle):
        out = fn(y, s)
        assert out.value >= -1e-12 and np.isfinite(out.value)
        assert np.all(np.isfinite(out.grad_scores))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=5), st.floats(-3, 3))
def test_listwise_losses_are_shift_invariant(scores, shift):
    s = np.array(scores)
    y = np.arange(len(s), dtype=float)
    for fn in (loss_pairwise_logistic, loss_softmax_ce, loss_listmle):
        assert fn(y, s + shift).value == pytest.approx(fn(y, s).value, rel=1e-9, abs=1e-9)


def test_pairwise_prefers_correct_order():
    y = [2.0, 1.0, 0.0]
    good = loss_pairwise_logistic(y, [3.0, 2.0, 1.0]).value
    bad = loss_pairwise_logistic(y, [1.0, 2.0, 3.0]).value
    assert good < bad
    for perm in itertools.permutations([3.0, 2.0, 1.0]):
        assert loss_pairwise_logistic(y, list(perm)).value >= good - 1e-15


def test_documented_examples():
    assert loss_sigmoid_ce([1.0, 0.0], [2.0, -2.0]).value == pytest.approx(0.253856, abs=1e-6)
    zero = loss_sigmoid_ce([1.0, 0.0], [0.4, 1.0], weights=[0.0, 0.0])
    assert zero.value == 0.0 and not zero.grad_scores.any()
    assert loss_pairwise_logistic([1.0, 0.0], [2.0, 0.0]).value == pytest.approx(0.126928, abs=1e-6)
    # 2 * log(1 + e^-1) + log(1 + e) = 1.9397850 (a rounded sum of terms gives 1.939786).
    exact = 2 * math.log1p(math.exp(-1)) + math.log1p(math.e)
    assert loss_softmax_ce([2.0, 1.0], [1.0, 0.0]).value == pytest.approx(exact, abs=1e-12)
    assert loss_softmax_ce([0.0, 0.0], [1.0, 3.0]).value == 0.0
    assert loss_listmle([1.0], [3.0]).value == 0.0
    assert loss_listmle([1.0, 0.0], [50.0, -50.0]).value < 1e-40


def test_batch_reduction_example():
    # Per-list sigmoid losses 1.0 and 0.5 via chosen weights.
    base = loss_sigmoid_ce([1.0], [0.0]).value
    out = make_loss_fn("sigmoid_cross_entropy")([[1.0], [1.0]], [[0.0], [0.0]], [[1.0 / base], [0.5 / base]])
    assert out.value == pytest.approx(0.75)


def test_factory_matches_direct_call():
    rng = np.random.default_rng(2)
    y, s, w = rng.integers(0, 3, 5).astype(float), rng.normal(size=5), rng.uniform(size=5)
    for key, fn in ((LossKey.PAIRWISE_LOGISTIC, loss_pairwise_logistic), (LossKey.SOFTMAX_CROSS_ENTROPY, loss_softmax_ce)):
        a, b = make_loss_fn(key)(y, s, w), fn(y, s, w)
        assert a.value == b.value and np.array_equal(a.grad_scores, b.grad_scores)


def test_weight_linearity_and_unit_weights():
    rng = np.random.default_rng(4)
    y = np.array([1.0, 0.0, 1.0, 0.0])
    s = rng.normal(size=4)
    w = rng.uniform(0.5, 2, size=4)
    for fn in (loss_sigmoid_ce, loss_pairwise_logistic, loss_softmax_ce):
        assert fn(y, s, 3.0 * w).value == pytest.approx(3.0 * fn(y, s, w).value, rel=1e-13)
        assert fn(y, s, np.ones(4)).value == fn(y, s).value


def test_pairwise_decreases_with_margin():
    values = [loss_pairwise_logistic([1.0, 0.0], [m, 0.0]).value for m in (0.0, 0.5, 1.0, 4.0)]
    assert all(a > b for a, b in zip(values, values[1:]))
