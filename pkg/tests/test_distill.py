"""Loss function tests. Expected values come from closed-form scalar math
on tiny cases, so the vectorised implementations are checked against an
independent route, then finite differences cover the full student model."""
from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedkd import distill, nn
from fedkd.errors import ConfigError, DataError

from conftest import check_gradients

SEEDS = range(20)


# --------------------------------------------------------------- hard loss

def test_hard_loss_uniform_logits_is_log_num_classes():
    loss, grad = distill.hard_loss(np.zeros((1, 6)), np.array([2]))
    assert loss == pytest.approx(math.log(6), abs=1e-12)
    # uniform probabilities minus the one-hot target
    expected = np.full((1, 6), 1.0 / 6.0)
    expected[0, 2] -= 1.0
    np.testing.assert_allclose(grad, expected, atol=1e-12)


def test_hard_loss_two_class_example():
    loss, grad = distill.hard_loss(np.array([[2.0, 0.0]]), np.array([0]))
    assert loss == pytest.approx(math.log(1.0 + math.exp(-2.0)), abs=1e-12)
    p1 = 1.0 / (1.0 + math.exp(2.0))
    np.testing.assert_allclose(grad, [[-p1, p1]], atol=1e-12)


def test_hard_loss_averages_over_batch():
    logits = np.array([[2.0, 0.0], [2.0, 0.0]])
    labels = np.array([0, 1])
    loss, _ = distill.hard_loss(logits, labels)
    a = math.log(1.0 + math.exp(-2.0))
    b = math.log(1.0 + math.exp(2.0))
    assert loss == pytest.approx((a + b) / 2.0, abs=1e-12)


def test_hard_loss_rejects_bad_labels():
    logits = np.zeros((2, 6))
    with pytest.raises(DataError):
        distill.hard_loss(logits, np.array([0, 6]))
    with pytest.raises(DataError):
        distill.hard_loss(logits, np.array([0, -1]))
    with pytest.raises(DataError):
        distill.hard_loss(logits, np.array([0.0, 1.0]))
    with pytest.raises(ConfigError):
        distill.hard_loss(logits, np.array([0]))


@settings(max_examples=60, deadline=None)
@given(
    logits=st.lists(
        st.lists(st.floats(-30, 30), min_size=6, max_size=6), min_size=1, max_size=6
    ),
    data=st.data(),
)
def test_hard_loss_nonnegative_and_grad_rows_sum_to_zero(logits, data):
    arr = np.array(logits)
    labels = np.array(
        [data.draw(st.integers(0, 5)) for _ in range(arr.shape[0])], dtype=np.int64
    )
    loss, grad = distill.hard_loss(arr, labels)
    assert loss >= 0.0
    np.testing.assert_allclose(grad.sum(axis=1), 0.0, atol=1e-12)


# --------------------------------------------------------------- soft loss

def two_class_kl(p_hot: float, q_hot: float) -> float:
    return p_hot * math.log(p_hot / q_hot) + (1 - p_hot) * math.log(
        (1 - p_hot) / (1 - q_hot)
    )


def test_soft_loss_two_class_example_t1():
    # teacher [2, 0] vs uniform student at temperature 1
    loss, grad = distill.soft_loss(np.zeros((1, 2)), np.array([[2.0, 0.0]]), 1.0)
    p = 1.0 / (1.0 + math.exp(-2.0))
    assert loss == pytest.approx(two_class_kl(p, 0.5), abs=1e-12)
    np.testing.assert_allclose(grad, [[0.5 - p, 0.5 - (1 - p)]], atol=1e-12)


def test_soft_loss_two_class_example_t5():
    loss, _ = distill.soft_loss(np.zeros((1, 2)), np.array([[2.0, 0.0]]), 5.0)
    p = 1.0 / (1.0 + math.exp(-2.0 / 5.0))
    assert loss == pytest.approx(25.0 * two_class_kl(p, 0.5), abs=1e-12)


def test_soft_loss_temperature_reduces_to_scaled_t1():
    # soft(s, t, T) == T^2 * soft(s/T, t/T, 1), gradient scaled by T
    rng = np.random.default_rng(0)
    student = rng.normal(0, 2, (4, 6))
    teacher = rng.normal(0, 2, (4, 6))
    for t in (2.0, 5.0):
        loss_t, grad_t = distill.soft_loss(student, teacher, t)
        loss_1, grad_1 = distill.soft_loss(student / t, teacher / t, 1.0)
        assert loss_t == pytest.approx(t * t * loss_1, rel=1e-12)
        np.testing.assert_allclose(grad_t, t * grad_1, rtol=1e-10, atol=1e-14)


def test_soft_loss_zero_when_student_matches_teacher():
    rng = np.random.default_rng(1)
    logits = rng.normal(0, 3, (5, 6))
    for t in (1.0, 5.0):
        loss, grad = distill.soft_loss(logits, logits, t)
        assert loss == pytest.approx(0.0, abs=1e-12)
        np.testing.assert_allclose(grad, 0.0, atol=1e-12)


def test_soft_loss_shift_invariant_in_both_arguments():
    rng = np.random.default_rng(2)
    s = rng.normal(0, 2, (3, 6))
    t = rng.normal(0, 2, (3, 6))
    base, _ = distill.soft_loss(s, t, 5.0)
    shifted, _ = distill.soft_loss(s + 7.0, t - 3.0, 5.0)
    assert shifted == pytest.approx(base, abs=1e-9)


def test_soft_loss_validation():
    with pytest.raises(ConfigError):
        distill.soft_loss(np.zeros((2, 6)), np.zeros((3, 6)), 5.0)
    with pytest.raises(ConfigError):
        distill.soft_loss(np.zeros((2, 6)), np.zeros((2, 6)), 0.0)
    with pytest.raises(ConfigError):
        distill.soft_loss(np.zeros((2, 6)), np.zeros((2, 6)), -1.0)


@settings(max_examples=60, deadline=None)
@given(
    student=st.lists(
        st.lists(st.floats(-20, 20), min_size=6, max_size=6), min_size=1, max_size=5
    ),
    teacher=st.lists(
        st.lists(st.floats(-20, 20), min_size=6, max_size=6), min_size=1, max_size=5
    ),
    temperature=st.floats(0.5, 10.0),
)
def test_soft_loss_nonnegative(student, teacher, temperature):
    rows = min(len(student), len(teacher))
    s = np.array(student[:rows])
    t = np.array(teacher[:rows])
    loss, grad = distill.soft_loss(s, t, temperature)
    assert loss >= -1e-10
    np.testing.assert_allclose(grad.sum(axis=1), 0.0, atol=1e-10)


# ------------------------------------------------------------ blended loss

def test_distill_alpha_zero_is_exactly_hard_and_skips_soft(monkeypatch):
    def boom(*args, **kwargs):
        raise AssertionError("soft_loss must not run at alpha 0")

    monkeypatch.setattr(distill, "soft_loss", boom)
    rng = np.random.default_rng(3)
    logits = rng.normal(0, 2, (4, 6))
    labels = np.array([0, 1, 2, 3])
    loss, grad, hard, soft = distill.distill_loss(logits, None, labels, 0.0, 5.0)
    ref_loss, ref_grad = distill.hard_loss(logits, labels)
    assert loss == ref_loss and hard == ref_loss and soft == 0.0
    np.testing.assert_array_equal(grad, ref_grad)


def test_distill_alpha_one_is_exactly_soft(monkeypatch):
    def boom(*args, **kwargs):
        raise AssertionError("hard_loss must not run at alpha 1")

    monkeypatch.setattr(distill, "hard_loss", boom)
    rng = np.random.default_rng(4)
    s = rng.normal(0, 2, (4, 6))
    t = rng.normal(0, 2, (4, 6))
    labels = np.array([0, 1, 2, 3])
    loss, grad, hard, soft = distill.distill_loss(s, t, labels, 1.0, 5.0)
    ref_loss, ref_grad = distill.soft_loss(s, t, 5.0)
    assert loss == ref_loss and soft == ref_loss and hard == 0.0
    np.testing.assert_array_equal(grad, ref_grad)


@pytest.mark.parametrize("alpha", [0.25, 0.5, 0.75])
def test_distill_blend_combines_parts(alpha):
    rng = np.random.default_rng(5)
    s = rng.normal(0, 2, (4, 6))
    t = rng.normal(0, 2, (4, 6))
    labels = np.array([5, 4, 3, 2])
    loss, grad, hard, soft = distill.distill_loss(s, t, labels, alpha, 5.0)
    ref_hard, hg = distill.hard_loss(s, labels)
    ref_soft, sg = distill.soft_loss(s, t, 5.0)
    assert hard == ref_hard and soft == ref_soft
    assert loss == pytest.approx(alpha * ref_soft + (1 - alpha) * ref_hard, abs=1e-14)
    np.testing.assert_allclose(grad, alpha * sg + (1 - alpha) * hg, atol=1e-14)


def test_distill_validation():
    logits = np.zeros((2, 6))
    labels = np.array([0, 1])
    with pytest.raises(ConfigError):
        distill.distill_loss(logits, logits, labels, -0.1, 5.0)
    with pytest.raises(ConfigError):
        distill.distill_loss(logits, logits, labels, 1.1, 5.0)
    with pytest.raises(ConfigError):
        distill.distill_loss(logits, None, labels, 0.5, 5.0)


# --------------------------------------- finite differences, full student

def hard_factory(rng, batch):
    return lambda logits: distill.hard_loss(logits, batch.labels)


def soft_factory(temperature):
    def factory(rng, batch):
        teacher_logits = rng.normal(0, 2, (batch.labels.size, 6))
        return lambda logits: distill.soft_loss(logits, teacher_logits, temperature)

    return factory


def blend_factory(alpha, temperature=5.0):
    def factory(rng, batch):
        teacher_logits = rng.normal(0, 2, (batch.labels.size, 6))

        def loss_fn(logits):
            loss, grad, _, _ = distill.distill_loss(
                logits, teacher_logits, batch.labels, alpha, temperature
            )
            return loss, grad

        return loss_fn

    return factory


def test_gradients_student_hard():
    check_gradients(nn.student_arch(), hard_factory, SEEDS, coords_per_tensor=2)


@pytest.mark.parametrize("temperature", [1.0, 5.0])
def test_gradients_student_soft(temperature):
    check_gradients(
        nn.student_arch(), soft_factory(temperature), SEEDS, coords_per_tensor=2
    )


@pytest.mark.parametrize("alpha", [0.0, 0.5, 1.0])
def test_gradients_student_blend(alpha):
    check_gradients(nn.student_arch(), blend_factory(alpha), SEEDS, coords_per_tensor=2)
