import math

import numpy as np
import pytest

from saralign.errors import ValidationError
from saralign.optim import AdamState, adam_step, clip_grads_, global_grad_norm, lr_at_step


class TestAdam:
    def test_zero_gradient_leaves_params_unchanged(self):
        p = np.array([1.0, -2.0, 3.0])
        adam_step([("p", p)], [("p", np.zeros(3))], AdamState(), lr=0.1)
        assert (p == np.array([1.0, -2.0, 3.0])).all()

    def test_frozen_tensor_untouched(self):
        p = np.array([1.0, 2.0])
        g = np.array([5.0, -5.0])
        state = AdamState()
        adam_step([("p", p)], [("p", g)], state, lr=0.1, frozen={"p"})
        assert (p == np.array([1.0, 2.0])).all()
        assert "p" not in state.m

    def test_single_step_hand_computation(self):
        # one scalar, g=1 at t=1: m_hat = v_hat = 1, update = -lr / (1 + eps)
        lr, eps = 0.05, 1e-8
        p = np.array(2.0)
        adam_step([("p", p)], [("p", np.array(1.0))], AdamState(eps=eps), lr=lr)
        expected = 2.0 - lr * 1.0 / (1.0 + eps)
        assert p == pytest.approx(expected, abs=1e-15)
        assert p == pytest.approx(2.0 - lr, abs=1e-9)

    def test_two_steps_match_manual_recurrence(self):
        b1, b2, eps, lr = 0.9, 0.999, 1e-8, 0.01
        p = np.array(0.5)
        grads = [0.3, -0.7]
        state = AdamState(beta1=b1, beta2=b2, eps=eps)
        m = v = 0.0
        expected = 0.5
        for t, g in enumerate(grads, start=1):
            adam_step([("p", p)], [("p", np.array(g))], state, lr=lr)
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            m_hat = m / (1 - b1 ** t)
            v_hat = v / (1 - b2 ** t)
            expected -= lr * m_hat / (math.sqrt(v_hat) + eps)
        assert p == pytest.approx(expected, abs=1e-15)

    def test_determinism(self):
        def run():
            rng = np.random.default_rng(0)
            p = np.ones(4)
            state = AdamState()
            for _ in range(10):
                adam_step([("p", p)], [("p", rng.normal(size=4))], state, lr=0.01)
            return p
        assert (run() == run()).all()


class TestSchedule:
    def test_warmup_endpoint_reaches_base(self):
        lr = lr_at_step(9, base_lr=0.1, warmup_steps=10, total_steps=100)
        assert lr == pytest.approx(0.1, abs=0)

    def test_cosine_midpoint_is_half_base(self):
        w, total = 10, 110
        mid = w + (total - w) // 2
        lr = lr_at_step(mid, base_lr=0.2, warmup_steps=w, total_steps=total)
        assert lr == pytest.approx(0.1, abs=1e-15)

    def test_first_step_formula(self):
        lr = lr_at_step(0, base_lr=0.1, warmup_steps=10, total_steps=100)
        assert lr == pytest.approx(0.01, abs=1e-15)  # base * (0+1)/10

    def test_final_step_near_zero(self):
        lr = lr_at_step(99, base_lr=0.1, warmup_steps=10, total_steps=100)
        assert 0 <= lr < 0.1 * 0.5 * (1 + math.cos(math.pi * 88 / 90)) + 1e-12

    def test_monotone_decay_after_warmup(self):
        lrs = [lr_at_step(s, base_lr=1.0, warmup_steps=5, total_steps=50) for s in range(50)]
        assert lrs[:5] == sorted(lrs[:5])
        assert lrs[5:] == sorted(lrs[5:], reverse=True)

    def test_warmup_must_be_shorter_than_total(self):
        with pytest.raises(ValidationError, match="warmup"):
            lr_at_step(0, base_lr=0.1, warmup_steps=10, total_steps=10)


class TestGradUtils:
    def test_global_norm(self):
        grads = [("a", np.array([3.0])), ("b", np.array([4.0]))]
        assert global_grad_norm(grads) == pytest.approx(5.0)
        assert global_grad_norm(grads, frozen={"b"}) == pytest.approx(3.0)

    def test_clip_scales_to_max_norm(self):
        grads = [("a", np.array([3.0])), ("b", np.array([4.0]))]
        norm = clip_grads_(grads, max_norm=1.0)
        assert norm == pytest.approx(5.0)
        assert global_grad_norm(grads) == pytest.approx(1.0)
