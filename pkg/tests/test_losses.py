"""Objective functions: dynamic scaling, the pair loss against a
high-precision oracle and finite differences, and the classification head."""

import math
import warnings

import mpmath
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from diffsbsr.errors import NonFiniteSimilarity, UnknownLabel
from diffsbsr.losses import (CircleTParams, ClassifierHead, circle_t_batch,
                             circle_t_loss, dynamic_scale, total_loss, view_cls_loss)

DEFAULTS = CircleTParams()


# ---------------------------------------------------------------------------
# dynamic scaling factor

def test_dynamic_scale_identity_when_beta_zero():
    p = CircleTParams(beta=0.0)
    for s in (-1.0, -0.3, 0.0, 0.5, 1.0):
        assert float(dynamic_scale(s, p)) == 1.0


def test_dynamic_scale_hand_value():
    p = CircleTParams(beta=0.5, tau=1.0, lambda_max=2.0)
    assert abs(float(dynamic_scale(0.0, p)) - 1.5) < 1e-12  # exp(0) = 1


def test_dynamic_scale_clamps():
    p = CircleTParams(beta=0.5, tau=0.5, lambda_max=2.0)
    # 1 + 0.5 * e^20 >> 2 -> clamped
    assert float(dynamic_scale(-10.0, p)) == 2.0


@settings(max_examples=200, deadline=None)
@given(s=st.floats(-1, 1), beta=st.floats(0, 4), tau=st.floats(0.05, 4),
       lam_max=st.floats(1, 8))
def test_dynamic_scale_bounds_and_monotonicity(s, beta, tau, lam_max):
    p = CircleTParams(beta=beta, tau=tau, lambda_max=lam_max)
    lam = float(dynamic_scale(s, p))
    assert 1.0 <= lam <= lam_max + 1e-12
    # non-increasing in the mean negative similarity
    assert float(dynamic_scale(s - 0.1, p)) >= lam - 1e-12


# ---------------------------------------------------------------------------
# pair loss value

def oracle_loss(s_p: float, s_n: list[float], p: CircleTParams) -> float:
    """Independent arbitrary-precision evaluation of the pair loss."""
    with mpmath.workdps(60):
        if not s_n:
            return 0.0
        s_bar = mpmath.fsum(s_n) / len(s_n)
        lam = min(1 + mpmath.mpf(p.beta) * mpmath.e ** (-s_bar / p.tau), mpmath.mpf(p.lambda_max))
        alpha_p = max(0, 2 - p.delta_p - mpmath.mpf(s_p))
        total = mpmath.mpf(0)
        for sn in s_n:
            alpha_n = max(0, mpmath.mpf(sn) + p.delta_n)
            total += mpmath.e ** (p.gamma * (alpha_n * (sn - p.delta_n)
                                             - lam * alpha_p * (s_p - p.delta_p)))
        return float(mpmath.log(1 + total))


def test_empty_negatives_is_exactly_zero():
    assert float(circle_t_loss(torch.tensor(0.9), torch.empty(0), DEFAULTS)) == 0.0


def test_loss_matches_high_precision_oracle_hand_case():
    p = CircleTParams(delta_p=0.75, delta_n=0.25, gamma=32, beta=0.5, tau=0.5, lambda_max=2)
    s_p, s_n = 0.9, [0.3, 0.1]
    got = float(circle_t_loss(torch.tensor(s_p, dtype=torch.float64),
                              torch.tensor(s_n, dtype=torch.float64), p))
    want = oracle_loss(s_p, s_n, p)
    assert abs(got - want) / abs(want) < 1e-9


def test_loss_matches_oracle_randomized():
    import random
    rng = random.Random(7)
    for _ in range(200):
        n = rng.randint(1, 16)
        s_p = rng.uniform(-1, 1)
        s_n = [rng.uniform(-1, 1) for _ in range(n)]
        p = CircleTParams(beta=rng.choice([0.0, 0.5, 1.0]),
                          tau=rng.choice([0.25, 0.5, 1.0]),
                          gamma=rng.choice([8.0, 32.0, 64.0]))
        got = float(circle_t_loss(torch.tensor(s_p, dtype=torch.float64),
                                  torch.tensor(s_n, dtype=torch.float64), p))
        want = oracle_loss(s_p, s_n, p)
        assert abs(got - want) <= 1e-9 * max(1.0, abs(want))


def reference_circle_decoupled(s_p: float, s_n: list[float], p: CircleTParams) -> float:
    """Decoupled-margin circle loss with unit positive scaling (lambda = 1),
    written independently of the production path."""
    if not s_n:
        return 0.0
    alpha_p = max(0.0, 2.0 - p.delta_p - s_p)
    terms = [math.exp(p.gamma * (max(0.0, sn + p.delta_n) * (sn - p.delta_n)
                                 - alpha_p * (s_p - p.delta_p))) for sn in s_n]
    return math.log(1.0 + math.fsum(terms))


def test_beta_zero_reduces_to_decoupled_circle_loss():
    import random
    rng = random.Random(11)
    p = CircleTParams(beta=0.0)
    for _ in range(100):
        s_p = rng.uniform(-1, 1)
        s_n = [rng.uniform(-1, 1) for _ in range(rng.randint(1, 8))]
        got = float(circle_t_loss(torch.tensor(s_p, dtype=torch.float64),
                                  torch.tensor(s_n, dtype=torch.float64), p))
        ref = reference_circle_decoupled(s_p, s_n, p)
        assert abs(got - ref) <= 1e-12 * max(1.0, abs(ref))
        # and beta = 0 forces lambda = 1 exactly
        assert float(dynamic_scale(sum(s_n) / len(s_n), p)) == 1.0


def test_numerical_stability_at_extremes():
    p = CircleTParams(gamma=256.0)
    loss = circle_t_loss(torch.tensor(-1.0), torch.tensor([1.0, 1.0, 1.0]), p)
    assert torch.isfinite(loss)
    assert loss > 0
    loss2 = circle_t_loss(torch.tensor(1.0), torch.tensor([-1.0]), p)
    assert torch.isfinite(loss2)
    assert loss2 >= 0


def test_non_finite_similarity_rejected():
    with pytest.raises(NonFiniteSimilarity):
        circle_t_loss(torch.tensor(float("nan")), torch.tensor([0.1]), DEFAULTS)


def test_loss_non_negative():
    import random
    rng = random.Random(3)
    for _ in range(100):
        s_p = rng.uniform(-1, 1)
        s_n = [rng.uniform(-1, 1) for _ in range(rng.randint(0, 6))]
        val = float(circle_t_loss(torch.tensor(s_p), torch.tensor(s_n), DEFAULTS))
        assert val >= 0.0


# ---------------------------------------------------------------------------
# gradients

def fd_gradients(s_p, s_n, p, h=1e-5):
    """Central differences with the dynamic scale frozen at the batch value
    (it is a per-batch constant with respect to gradients)."""
    lam = float(dynamic_scale(sum(s_n) / len(s_n), p))

    def f(sp, sn):
        alpha_p = max(0.0, 2.0 - p.delta_p - sp)
        total = math.fsum(
            math.exp(p.gamma * (max(0.0, x + p.delta_n) * (x - p.delta_n)
                                - lam * alpha_p * (sp - p.delta_p))) for x in sn)
        return math.log(1.0 + total)

    g_p = (f(s_p + h, s_n) - f(s_p - h, s_n)) / (2 * h)
    g_n = []
    for i in range(len(s_n)):
        up = list(s_n)
        dn = list(s_n)
        up[i] += h
        dn[i] -= h
        g_n.append((f(s_p, up) - f(s_p, dn)) / (2 * h))
    return g_p, g_n


def test_gradients_match_finite_differences():
    import random
    rng = random.Random(5)
    for _ in range(100):
        n = rng.randint(0, 32)
        s_p = rng.uniform(-0.95, 0.95)
        # keep negatives away from the alpha_n hinge so FD is valid
        s_n = []
        while len(s_n) < n:
            x = rng.uniform(-0.95, 0.95)
            if abs(x + DEFAULTS.delta_n) > 1e-3:
                s_n.append(x)
        sp_t = torch.tensor(s_p, dtype=torch.float64, requires_grad=True)
        sn_t = torch.tensor(s_n, dtype=torch.float64, requires_grad=True)
        loss = circle_t_loss(sp_t, sn_t, DEFAULTS)
        if n == 0:
            assert float(loss) == 0.0
            continue
        loss.backward()
        g_p, g_n = fd_gradients(s_p, s_n, DEFAULTS)
        denom = max(1.0, abs(g_p))
        assert abs(float(sp_t.grad) - g_p) / denom < 1e-4
        for got, want in zip(sn_t.grad.tolist(), g_n):
            assert abs(got - want) / max(1.0, abs(want)) < 1e-4


def test_targeted_scaling_increases_positive_gradient():
    # with fixed batch values, |dL/ds_p| does not decrease as the mean
    # negative similarity drops (lambda grows)
    p = CircleTParams(beta=1.0, tau=0.5, lambda_max=4.0)
    grads = []
    for shift in (0.4, 0.0, -0.4, -0.8):
        sp = torch.tensor(0.6, dtype=torch.float64, requires_grad=True)
        sn = torch.tensor([0.3 + shift, 0.1 + shift], dtype=torch.float64)
        loss = circle_t_loss(sp, sn, p)
        loss.backward()
        grads.append(abs(float(sp.grad)))
    lams = [float(dynamic_scale(torch.tensor([0.3 + s, 0.1 + s]).mean(), p))
            for s in (0.4, 0.0, -0.4, -0.8)]
    assert all(lams[i] <= lams[i + 1] + 1e-12 for i in range(3))
    # lambda amplifies the positive-pair coefficient inside the logit
    sp = 0.6
    alpha_p = 2 - p.delta_p - sp
    coeffs = [lam * alpha_p * p.gamma for lam in lams]
    assert all(coeffs[i] <= coeffs[i + 1] + 1e-12 for i in range(3))


# ---------------------------------------------------------------------------
# batched loss

def test_batch_no_negatives_zero():
    emb = torch.nn.functional.normalize(torch.randn(2, 8), dim=1)
    loss = circle_t_batch(emb[:1], ["a"], emb[1:], ["a"], DEFAULTS)
    assert float(loss) == 0.0


def test_batch_mean_of_identical_instances():
    gen = torch.Generator().manual_seed(0)
    a = torch.nn.functional.normalize(torch.randn(1, 16, generator=gen), dim=1)
    b = torch.nn.functional.normalize(torch.randn(3, 16, generator=gen), dim=1)
    labels_b = ["a", "b", "b"]
    single = circle_t_batch(a, ["a"], b, labels_b, DEFAULTS)
    doubled = circle_t_batch(torch.cat([a, a]), ["a", "a"], b, labels_b, DEFAULTS)
    assert torch.allclose(single, doubled)


def test_batch_equals_per_instance_oracle():
    gen = torch.Generator().manual_seed(1)
    anchors = torch.nn.functional.normalize(torch.randn(4, 16, generator=gen), dim=1)
    others = torch.nn.functional.normalize(torch.randn(6, 16, generator=gen), dim=1)
    a_labels = ["a", "b", "a", "b"]
    o_labels = ["a", "a", "b", "b", "b", "a"]
    got = float(circle_t_batch(anchors, a_labels, others, o_labels, DEFAULTS))
    sims = (anchors @ others.T).tolist()
    inst = []
    for i, al in enumerate(a_labels):
        negs = [sims[i][j] for j, ol in enumerate(o_labels) if ol != al]
        for j, ol in enumerate(o_labels):
            if ol == al:
                inst.append(oracle_loss(sims[i][j], negs, DEFAULTS))
    want = sum(inst) / len(inst)
    assert abs(got - want) / max(1.0, abs(want)) < 1e-5  # batch path runs in float32


def test_batch_skips_anchor_without_positive():
    emb = torch.nn.functional.normalize(torch.randn(3, 8), dim=1)
    with pytest.warns(UserWarning):
        loss = circle_t_batch(emb[:2], ["a", "zzz"], emb[2:], ["a"], DEFAULTS)
    assert torch.isfinite(loss)


# ---------------------------------------------------------------------------
# classification and total objective

def test_zero_weights_give_log_c():
    head = ClassifierHead(["a", "b", "c", "d"], dim=8)
    with torch.no_grad():
        head.weight.zero_()
    emb = torch.nn.functional.normalize(torch.randn(5, 8), dim=1)
    loss = view_cls_loss(emb, ["a", "b", "c", "d", "a"], head).detach()
    assert abs(float(loss) - math.log(4)) < 1e-6


def test_saturated_logits_drive_loss_to_zero():
    head = ClassifierHead(["a", "b"], dim=4, temperature=1.0)
    with torch.no_grad():
        head.weight.zero_()
        head.weight[0, 0] = 50.0
        head.weight[1, 1] = 50.0
    emb = torch.eye(4)[:2]
    loss = view_cls_loss(emb, ["a", "b"], head).detach()
    assert float(loss) < 1e-8


def test_hand_built_three_class_case():
    # logits (2, 1, 0) with true class 0 -> -log(e^2 / (e^2+e+1)) = 0.40761...
    head = ClassifierHead(["x", "y", "z"], dim=3, temperature=1.0)
    with torch.no_grad():
        head.weight.copy_(torch.diag(torch.tensor([2.0, 1.0, 0.0])))
    emb = torch.ones(1, 3)
    loss = view_cls_loss(emb, ["x"], head).detach()
    expected = -math.log(math.exp(2) / (math.exp(2) + math.exp(1) + 1))
    assert abs(float(loss) - expected) < 1e-6
    assert abs(expected - 0.40760596444438) < 1e-9


def test_unknown_label_rejected():
    head = ClassifierHead(["a"], dim=4)
    with pytest.raises(UnknownLabel):
        view_cls_loss(torch.randn(1, 4), ["nope"], head)


def test_total_loss_arithmetic():
    assert float(total_loss(torch.tensor(0.0), torch.tensor(0.0), torch.tensor(0.0))) == 0.0
    got = total_loss(torch.tensor(1.0), torch.tensor(2.0), torch.tensor(0.3), eta=10.0)
    assert abs(float(got) - 6.0) < 1e-9


def test_default_eta_is_ten():
    import inspect
    assert inspect.signature(total_loss).parameters["eta"].default == 10.0
