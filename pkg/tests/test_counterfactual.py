"""Fusion, debiased inference, losses, and the gradient-routing contract."""

import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from cfdebias import counterfactual as cf
from cfdebias.backbones import (
    DTYPE,
    FusionModel,
    MlpConfig,
    randomize_parameters,
    seed_init,
)

LOG_HALF = math.log(0.5)

logit_pairs = st.lists(st.floats(-20, 20), min_size=2, max_size=2)


def make_model(input_dim=9, hidden=(8,), seed=3, epsilon_mode="head"):
    m_f = FusionModel("tabular", MlpConfig(input_dim=input_dim, hidden_dims=list(hidden)))
    model = seed_init(cf.CounterfactualModel(m_f, gender_hidden_dims=(4,),
                                             epsilon_mode=epsilon_mode), seed)
    return randomize_parameters(model, seed + 100)


def batch(seed=0, n=6, d=8):
    rng = np.random.default_rng(seed)
    g = torch.as_tensor(rng.integers(0, 2, n), dtype=DTYPE)
    alf = torch.as_tensor(rng.standard_normal((n, d)), dtype=DTYPE)
    y = torch.as_tensor(rng.integers(0, 2, n), dtype=torch.long)
    return g, alf, y


class TestFuse:
    def test_zero_logits_give_log_half(self):
        out = cf.fuse([0.0, 0.0], [0.0, 0.0])[0]
        torch.testing.assert_close(out, torch.full((2,), LOG_HALF, dtype=DTYPE),
                                   atol=1e-6, rtol=0)

    def test_hand_computed_pair(self):
        out = cf.fuse([2.0, -1.0], [1.0, 0.0])[0].numpy()
        np.testing.assert_allclose(out, [math.log(1 / (1 + math.exp(-3))),
                                         math.log(1 / (1 + math.exp(1)))], atol=1e-12)
        np.testing.assert_allclose(out, [-0.048587, -1.313262], atol=1e-6)

    @settings(max_examples=100, deadline=None)
    @given(a=logit_pairs, b=logit_pairs)
    def test_symmetric_and_strictly_negative(self, a, b):
        ab = cf.fuse(a, b)
        ba = cf.fuse(b, a)
        assert torch.equal(ab, ba)
        assert bool((ab < 0).all())

    def test_length_enforced(self):
        with pytest.raises(ValueError):
            cf.fuse([0.0, 0.0, 0.0], [0.0, 0.0, 0.0])


class TestTie:
    def test_identical_inputs_give_zero(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            x = rng.standard_normal(2)
            assert bool((cf.tie(x, x) == 0).all())

    def test_chained_hand_example(self):
        factual = cf.fuse([2.0, -1.0], [1.0, 0.0])
        counter = cf.fuse([2.0, -1.0], [0.0, 0.0])
        t = cf.tie(factual, counter)[0].numpy()
        np.testing.assert_allclose(t, [0.078341, 0.0], atol=1e-6)

    def test_monotone_in_factual_branch_logits(self):
        """Raising one fusion-branch logit strictly raises that component of
        the debiased score; raising the counterfactual logit lowers it."""
        d_g = torch.tensor([0.4, -0.2], dtype=DTYPE)
        base = cf.tie(cf.fuse(d_g, [0.1, 0.3]), cf.fuse(d_g, [0.0, 0.0]))[0]
        up = cf.tie(cf.fuse(d_g, [0.6, 0.3]), cf.fuse(d_g, [0.0, 0.0]))[0]
        down = cf.tie(cf.fuse(d_g, [0.1, 0.3]), cf.fuse(d_g, [0.5, 0.0]))[0]
        assert up[0] > base[0] and up[1] == base[1]
        assert down[0] < base[0] and down[1] == base[1]


class TestPredict:
    def test_argmax_with_tie_break(self):
        assert cf.predict_tie([0.078341, 0.0]) == 0
        assert cf.predict_tie([0.0, 0.0]) == 0
        assert cf.predict_tie([-0.1, 0.3]) == 1

    def test_factual_rule(self):
        assert cf.predict_factual([-0.1, -0.2]) == 0
        assert cf.predict_factual([0.5, 0.5]) == 0
        assert cf.predict_factual([-3.0, -2.0]) == 1

    def test_factual_shift_invariance(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            v = rng.standard_normal(2)
            c = rng.standard_normal()
            assert cf.predict_factual(v) == cf.predict_factual(v + c)


class TestLosses:
    def test_cls_value_for_uniform_scores(self):
        val = float(cf.loss_cls([0.0, 0.0], [LOG_HALF, LOG_HALF], [1]))
        assert val == pytest.approx(2 * math.log(2), abs=1e-9)

    def test_cls_vanishes_for_confident_correct_logits(self):
        val = float(cf.loss_cls([-40.0, 40.0], [-40.0, 40.0], [1]))
        assert 0 <= val < 1e-12

    def test_cls_nonnegative(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            val = float(cf.loss_cls(rng.standard_normal(2), rng.standard_normal(2),
                                    [int(rng.integers(0, 2))]))
            assert val >= 0

    def test_kl_value_for_uniform_pair(self):
        val = float(cf.loss_kl([0.0, 0.0], [0.0, 0.0]))
        assert val == pytest.approx(0.5 * math.log(2), abs=1e-9)

    def test_kl_one_hot_target(self):
        """A (numerically) one-hot factual target leaves only its own term."""
        val = float(cf.loss_kl([40.0, -40.0], [0.0, 0.0]))
        assert val == pytest.approx(0.5 * math.log(2), abs=1e-9)

    def test_total_is_plain_sum(self):
        one = torch.tensor(1.0, dtype=DTYPE)
        half = torch.tensor(0.5, dtype=DTYPE)
        assert float(cf.loss_total(one, half)) == 1.5
        zero = torch.tensor(0.0, dtype=DTYPE)
        assert float(cf.loss_total(zero, zero)) == 0.0


class TestCounterfactualBranch:
    def test_deterministic_two_logits(self):
        model = make_model()
        a = model.counterfactual_logits()
        b = model.counterfactual_logits()
        assert a.shape == (1, 2)
        assert torch.equal(a, b)

    def test_zeroed_head_weights_return_bias_for_any_epsilon(self):
        model = make_model(hidden=())
        with torch.no_grad():
            model.m_f.head.mlp.net[-1].weight.zero_()
            model.m_f.head.mlp.net[-1].bias.copy_(torch.tensor([0.2, -0.4], dtype=DTYPE))
        for seed in range(3):
            with torch.no_grad():
                model.epsilon.copy_(torch.as_tensor(
                    np.random.default_rng(seed).standard_normal(model.epsilon.shape),
                    dtype=DTYPE))
            torch.testing.assert_close(model.counterfactual_logits()[0],
                                       torch.tensor([0.2, -0.4], dtype=DTYPE))

    def test_logit_mode_returns_epsilon_directly(self):
        model = make_model(epsilon_mode="logit")
        with torch.no_grad():
            model.epsilon.copy_(torch.tensor([0.7, -0.3], dtype=DTYPE))
        torch.testing.assert_close(model.counterfactual_logits()[0],
                                   torch.tensor([0.7, -0.3], dtype=DTYPE))


class TestBranchComposition:
    def test_matches_individual_operations(self):
        model = make_model()
        g, alf, _ = batch(seed=4)
        out = model.branches(g, alf)
        d_g = model.m_g(g)
        d_f = model.m_f(g, alf)
        d_cf = model.counterfactual_logits().expand_as(d_f)
        assert torch.equal(out.d_g, d_g)
        assert torch.equal(out.d_f_factual, d_f)
        assert torch.equal(out.fused_factual, cf.fuse(d_g, d_f))
        assert torch.equal(out.fused_counterfactual, cf.fuse(d_g, d_cf))
        assert torch.equal(out.tie(), out.fused_factual - out.fused_counterfactual)

    def test_equal_branch_logits_make_fused_pair_equal(self):
        model = make_model()
        g, alf, _ = batch(seed=5)
        out = model.branches(g, alf)
        forced = cf.fuse(out.d_g, out.d_f_factual)
        same = cf.fuse(out.d_g, out.d_f_factual)
        assert torch.equal(forced, same)

    def test_fused_components_all_negative(self):
        model = make_model()
        g, alf, _ = batch(seed=6)
        out = model.branches(g, alf)
        assert bool((out.fused_factual < 0).all())
        assert bool((out.fused_counterfactual < 0).all())


class TestGradientRouting:
    def test_similarity_loss_reaches_only_epsilon(self):
        """After backward of the similarity loss, every branch-network weight
        has zero (or no) gradient and only the empty-input vector moves."""
        model = make_model()
        g, alf, _ = batch(seed=7)
        out = model.branches(g, alf)
        loss = cf.loss_kl(out.fused_factual, out.fused_counterfactual)
        loss.backward()
        for name, p in model.named_parameters():
            if name == "epsilon":
                assert p.grad is not None and float(p.grad.abs().max()) > 0
            else:
                assert p.grad is None or float(p.grad.abs().max()) < 1e-8

    def test_similarity_only_step_leaves_branches_bitwise_unchanged(self):
        model = make_model()
        g, alf, _ = batch(seed=8)
        before = {n: p.detach().clone() for n, p in model.named_parameters()}
        opt = torch.optim.Adam(model.parameters(), lr=1e-2)
        out = model.branches(g, alf)
        loss = cf.loss_kl(out.fused_factual, out.fused_counterfactual)
        opt.zero_grad()
        loss.backward()
        opt.step()
        for name, p in model.named_parameters():
            if name == "epsilon":
                assert not torch.equal(before[name], p.detach())
            else:
                assert torch.equal(before[name], p.detach())

    def test_classification_loss_never_touches_epsilon(self):
        model = make_model()
        g, alf, y = batch(seed=9)
        out = model.branches(g, alf)
        loss = cf.loss_cls(out.d_g, out.fused_factual, y)
        loss.backward()
        assert model.epsilon.grad is None or float(model.epsilon.grad.abs().max()) == 0
        branch_grads = [p.grad for p in model.branch_parameters()]
        assert any(g is not None and float(g.abs().max()) > 0 for g in branch_grads)

    def test_epsilon_gradient_matches_finite_differences(self):
        model = make_model()
        g, alf, _ = batch(seed=10)

        def kl_value() -> float:
            with torch.no_grad():
                out = model.branches(g, alf)
                return float(cf.loss_kl(out.fused_factual, out.fused_counterfactual))

        out = model.branches(g, alf)
        loss = cf.loss_kl(out.fused_factual, out.fused_counterfactual)
        (analytic,) = torch.autograd.grad(loss, [model.epsilon])
        h = 1e-6
        flat = model.epsilon.detach().reshape(-1)
        for i in range(flat.numel()):
            orig = float(flat[i])
            with torch.no_grad():
                flat[i] = orig + h
            up = kl_value()
            with torch.no_grad():
                flat[i] = orig - h
            down = kl_value()
            with torch.no_grad():
                flat[i] = orig
            fd = (up - down) / (2 * h)
            scale = max(abs(fd), abs(float(analytic[i])), 1e-10)
            assert abs(float(analytic[i]) - fd) / scale < 1e-3
