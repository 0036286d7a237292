from __future__ import annotations

import math

import numpy as np
import pytest

from corpusforge.tagger import (
    AdamState,
    TaggerParams,
    adam_step,
    forward,
    forward_batch,
    init_adam_state,
    init_params,
    loss_and_grads,
    predict,
    predict_batch,
)
from corpusforge.prompt_corpus import GenreTag

ONES = [1.0] * 5


def zero_params(in_dim=6, hidden=4, classes=5, dtype=np.float32) -> TaggerParams:
    return TaggerParams(
        w1=np.zeros((hidden, in_dim), dtype=dtype),
        b1=np.zeros(hidden, dtype=dtype),
        w2=np.zeros((classes, hidden), dtype=dtype),
        b2=np.zeros(classes, dtype=dtype),
    )


def random_params(rng, in_dim=10, hidden=7, classes=5, dtype=np.float64, scale=0.7):
    return TaggerParams(
        w1=(rng.standard_normal((hidden, in_dim)) * scale).astype(dtype),
        b1=(rng.standard_normal(hidden) * scale).astype(dtype),
        w2=(rng.standard_normal((classes, hidden)) * scale).astype(dtype),
        b2=(rng.standard_normal(classes) * scale).astype(dtype),
    )


class TestInitParams:
    def test_deterministic(self):
        a, b = init_params(42), init_params(42)
        for ta, tb in zip(a.tensors(), b.tensors()):
            assert np.array_equal(ta, tb)

    def test_shapes_and_zero_biases(self):
        p = init_params(0)
        assert p.w1.shape == (128, 768)
        assert p.w2.shape == (5, 128)
        assert not p.b1.any() and not p.b2.any()
        assert p.dtype == np.float32

    def test_w1_stdev_matches_uniform_bound(self):
        # Uniform on [-a, a] has stdev a/sqrt(3); a = sqrt(6/768).
        p = init_params(7)
        expected = math.sqrt(6.0 / 768) / math.sqrt(3.0)
        assert abs(p.w1.std() - expected) / expected < 0.05

    def test_w2_within_glorot_bound(self):
        p = init_params(7)
        bound = math.sqrt(6.0 / (128 + 5))
        assert np.abs(p.w2).max() <= bound
        assert np.abs(p.w2).max() > 0.8 * bound  # actually fills the range


def oracle_forward(params: TaggerParams, x) -> list[float]:
    """Independent plain-Python reimplementation of the forward pass."""
    w1 = params.w1.tolist()
    b1 = params.b1.tolist()
    w2 = params.w2.tolist()
    b2 = params.b2.tolist()
    hidden = []
    for i in range(len(w1)):
        s = b1[i]
        for j, xj in enumerate(x):
            s += w1[i][j] * xj
        hidden.append(max(s, 0.0))
    logits = []
    for k in range(len(w2)):
        s = b2[k]
        for i, hi in enumerate(hidden):
            s += w2[k][i] * hi
        logits.append(s)
    top = max(logits)
    exps = [math.exp(z - top) for z in logits]
    total = sum(exps)
    return [e / total for e in exps]


class TestForward:
    def test_zero_params_give_uniform(self):
        p = zero_params()
        probs = forward(p, np.ones(6, dtype=np.float32))
        assert np.allclose(probs, 0.2, atol=1e-7)

    def test_huge_bias_is_stable(self):
        p = zero_params()
        p.b2 = np.array([1000, 0, 0, 0, 0], dtype=np.float32)
        probs = forward(p, np.zeros(6, dtype=np.float32))
        assert np.all(np.isfinite(probs))
        assert probs[0] > 0.999

    def test_matches_independent_reimplementation(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            params = random_params(rng)
            x = rng.standard_normal(10)
            expected = oracle_forward(params, x.tolist())
            assert np.allclose(forward(params, x), expected, atol=1e-6)

    def test_non_finite_input_rejected(self):
        p = zero_params()
        x = np.ones(6, dtype=np.float32)
        x[0] = np.inf
        with pytest.raises(ValueError, match="non-finite"):
            forward(p, x)

    def test_extreme_logits_strictly_positive_and_normalized(self):
        p = zero_params()
        p.b2 = np.array([1e4, -1e4, 0.0, 5e3, -5e3], dtype=np.float32)
        probs = forward(p, np.zeros(6, dtype=np.float32))
        assert np.all(probs > 0)
        assert abs(float(probs.sum()) - 1.0) < 1e-6


class TestLossAndGrads:
    def test_uniform_single_sample_is_log5(self):
        p = zero_params()
        result = loss_and_grads(p, np.ones((1, 6), dtype=np.float32), [0], ONES)
        assert result.loss == pytest.approx(math.log(5), abs=1e-6)

    def test_unit_weights_equal_unweighted_mean(self):
        rng = np.random.default_rng(5)
        params = random_params(rng)
        x = rng.standard_normal((9, 10))
        y = rng.integers(0, 5, size=9)
        weighted = loss_and_grads(params, x, y, ONES).loss
        probs = forward_batch(params, x)
        unweighted = float(np.mean(-np.log(probs[np.arange(9), y])))
        assert weighted == unweighted

    def test_power_of_two_weight_scaling_is_bit_identical(self):
        rng = np.random.default_rng(6)
        params = random_params(rng)
        x = rng.standard_normal((8, 10))
        y = rng.integers(0, 5, size=8)
        base = loss_and_grads(params, x, y, [1.0, 2.0, 0.5, 1.5, 3.0])
        scaled = loss_and_grads(params, x, y, [2.0, 4.0, 1.0, 3.0, 6.0])
        assert scaled.loss == base.loss
        for g1, g2 in zip(base.grads.tensors(), scaled.grads.tensors()):
            assert np.array_equal(g1, g2)

    def test_arbitrary_weight_scaling_matches_closely(self):
        rng = np.random.default_rng(7)
        params = random_params(rng)
        x = rng.standard_normal((8, 10))
        y = rng.integers(0, 5, size=8)
        base = loss_and_grads(params, x, y, [1.0, 2.0, 0.5, 1.5, 3.0])
        scaled = loss_and_grads(params, x, y, [3.0, 6.0, 1.5, 4.5, 9.0])
        assert scaled.loss == pytest.approx(base.loss, rel=1e-12)

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            loss_and_grads(zero_params(), np.zeros((0, 6)), [], ONES)

    def test_nonpositive_weights_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            loss_and_grads(
                zero_params(), np.ones((1, 6)), [0], [1.0, 0.0, 1.0, 1.0, 1.0]
            )


def fd_gradients(params: TaggerParams, x, y, weights, step: float) -> TaggerParams:
    """Central finite differences of the loss over every parameter component."""
    grads = params.zeros_like()
    for tensor, out in zip(params.tensors(), grads.tensors()):
        flat = tensor.reshape(-1)
        flat_out = out.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            hi = loss_and_grads(params, x, y, weights).loss
            flat[i] = original - step
            lo = loss_and_grads(params, x, y, weights).loss
            flat[i] = original
            flat_out[i] = (hi - lo) / (2 * step)
    return grads


def assert_grads_close(analytic: TaggerParams, fd: TaggerParams, rtol, atol):
    # atol absorbs the FD noise floor (loss epsilon / step); rtol governs
    # every component whose magnitude rises above it.
    for a, f in zip(analytic.tensors(), fd.tensors()):
        assert np.all(np.abs(a - f) <= rtol * np.maximum(np.abs(a), np.abs(f)) + atol)


class TestGradientCheck:
    def test_float64_every_component(self):
        rng = np.random.default_rng(11)
        weights = [1.0, 2.0, 0.5, 1.5, 3.0]
        params = random_params(rng, dtype=np.float64)
        x = rng.standard_normal((8, 10))
        y = rng.integers(0, 5, size=8)
        analytic = loss_and_grads(params, x, y, weights).grads
        fd = fd_gradients(params, x, y, weights, step=1e-5)
        assert_grads_close(analytic, fd, rtol=1e-4, atol=1e-9)

    def test_float32_every_component(self):
        rng = np.random.default_rng(12)
        params = random_params(rng, dtype=np.float32, scale=0.5)
        x = rng.standard_normal((8, 10)).astype(np.float32)
        y = rng.integers(0, 5, size=8)
        analytic = loss_and_grads(params, x, y, ONES).grads
        fd = fd_gradients(params, x, y, ONES, step=1e-3)
        assert_grads_close(analytic, fd, rtol=1e-2, atol=1e-3)


class TestAdamStep:
    def test_zero_gradient_is_fixed_point(self):
        params = zero_params(dtype=np.float64)
        params.b2 += 3.25
        state = init_adam_state(params)
        updated, new_state = adam_step(params, params.zeros_like(), state)
        for before, after in zip(params.tensors(), updated.tensors()):
            assert np.array_equal(before, after)
        assert new_state.t == 1

    def test_first_step_hand_value(self):
        # t=1, g=1: m_hat=1, v_hat=1, update = -lr / (1 + eps)
        params = TaggerParams(
            w1=np.array([[0.0]]),
            b1=np.array([0.0]),
            w2=np.array([[0.0]]),
            b2=np.array([0.0]),
        )
        grads = TaggerParams(
            w1=np.array([[1.0]]),
            b1=np.array([1.0]),
            w2=np.array([[1.0]]),
            b2=np.array([1.0]),
        )
        updated, _ = adam_step(params, grads, init_adam_state(params))
        expected = -1e-4 / (1 + 1e-8)
        for tensor in updated.tensors():
            assert tensor.reshape(-1)[0] == pytest.approx(expected, rel=1e-9)

    def test_two_steps_match_scalar_oracle(self):
        # Independent scalar Adam on the quadratic f(t) = (t - 3)^2.
        lr, b1, b2, eps = 1e-4, 0.9, 0.999, 1e-8
        theta, m, v = 0.5, 0.0, 0.0
        for t in (1, 2):
            g = 2 * (theta - 3.0)
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            theta -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)

        params = zero_params(dtype=np.float64)
        params.b2 += 0.5
        state = init_adam_state(params)
        for _ in range(2):
            grads = params.zeros_like()
            grads.b2 = 2 * (params.b2 - 3.0)
            params, state = adam_step(params, grads, state)
        assert params.b2[0] == pytest.approx(theta, abs=1e-10)

    def test_moments_updated_not_shared(self):
        params = zero_params(dtype=np.float64)
        grads = params.zeros_like()
        grads.b2 += 1.0
        state = init_adam_state(params)
        _, new_state = adam_step(params, grads, state)
        assert state.m.b2[0] == 0.0  # original state untouched
        assert new_state.m.b2[0] == pytest.approx(0.1)
        assert new_state.v.b2[0] == pytest.approx(0.001)


class TestPredict:
    def test_zero_params_tie_breaks_to_lowest_index(self):
        assert predict(zero_params(), np.ones(6)) == GenreTag.ELECTRONICA

    def test_dominant_logit_wins(self):
        p = zero_params()
        p.b2 = np.array([0, 0, 9, 0, 0], dtype=np.float32)
        assert predict(p, np.zeros(6)) == GenreTag.ORCHESTRAL

    def test_agrees_with_forward_argmax(self):
        rng = np.random.default_rng(13)
        params = random_params(rng, in_dim=12, dtype=np.float32)
        x = rng.standard_normal((1000, 12)).astype(np.float32)
        predictions = predict_batch(params, x)
        for i in range(1000):
            assert predictions[i] == int(np.argmax(forward(params, x[i])))
            assert predict(params, x[i]) == predictions[i]

    def test_logit_shift_invariance(self):
        rng = np.random.default_rng(14)
        params = random_params(rng, in_dim=12, dtype=np.float32)
        shifted = params.copy()
        shifted.b2 = shifted.b2 + np.float32(7.5)
        x = rng.standard_normal((200, 12)).astype(np.float32)
        assert np.array_equal(predict_batch(params, x), predict_batch(shifted, x))
