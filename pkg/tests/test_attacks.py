import math

import numpy as np
import pytest

from fedsim.attacks import (AttackSpec, RoundView, adaptive_topk_attack,
                            byzantine_update, model_replacement, targeted_pgd)
from fedsim.data import AuxiliarySet
from fedsim.errors import AttackInfeasibleError, ParameterError
from fedsim.models import Batch, SoftmaxLinear
from fedsim.numkit import l2_clip


def small_aux(seed=0, n=6, m=3, C=3):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 1, size=(n, m))
    true = rng.integers(0, C, size=n)
    flipped = (true + 1) % C
    return AuxiliarySet(Batch(x, flipped, C), true)


def view_at(theta, t=1, lam=0.1, **kw):
    return RoundView(global_params=np.asarray(theta, dtype=float), round=t,
                     lambda_t=lam, **kw)


class TestTargetedPGD:
    def test_one_boosted_step_lands_on_sphere(self):
        aux = small_aux()
        o = SoftmaxLinear(3, 3)
        spec = AttackSpec("targeted_pgd", aux=aux, pgd_epochs=1, boost=1000.0,
                          lr=1.0, L_known=2.0, seed=1)
        delta = targeted_pgd(o, view_at(np.zeros(9)), spec)
        assert np.linalg.norm(delta) == pytest.approx(2.0, abs=1e-9)

    def test_zero_gradient_gives_zero_delta(self):
        # all-zero features make the cross-entropy gradient exactly zero
        aux = AuxiliarySet(Batch(np.zeros((4, 3)), np.array([1, 2, 1, 2]), 3),
                           np.array([0, 0, 0, 0]))
        o = SoftmaxLinear(3, 3)
        spec = AttackSpec("targeted_pgd", aux=aux, pgd_epochs=3, L_known=1.0, seed=2)
        delta = targeted_pgd(o, view_at(np.zeros(9)), spec)
        assert np.array_equal(delta, np.zeros(9))

    def test_matches_hand_unrolled_two_epoch_trace(self):
        aux = small_aux(seed=3, n=4)
        o = SoftmaxLinear(3, 3)
        rng0 = np.random.default_rng(5)
        theta0 = rng0.normal(size=9)
        spec = AttackSpec("targeted_pgd", aux=aux, pgd_epochs=2, attacker_batch=0,
                          boost=4.0, lr=0.25, L_known=0.8, seed=7)
        got = targeted_pgd(o, view_at(theta0, t=3), spec)
        # unrolled reference: full-batch step then projection, twice
        rng = np.random.default_rng([7, 3])
        order = rng.permutation(4)
        batch = aux.examples.subset(order)
        step = 0.25 * 4.0
        theta = theta0.copy()
        for _ in range(2):
            g = o.with_params(theta).gradient(batch)
            theta = theta - step * g
            delta = l2_clip(theta - theta0, 0.8)
            theta = theta0 + delta
        assert np.allclose(got, theta - theta0, atol=1e-15)

    def test_norm_never_exceeds_known_bound(self):
        aux = small_aux(seed=8)
        o = SoftmaxLinear(3, 3)
        for epochs in (1, 3, 7):
            spec = AttackSpec("targeted_pgd", aux=aux, pgd_epochs=epochs,
                              attacker_batch=2, L_known=0.5, seed=9)
            delta = targeted_pgd(o, view_at(np.zeros(9)), spec)
            assert np.linalg.norm(delta) <= 0.5 + 1e-12

    def test_determinism_across_calls(self):
        aux = small_aux(seed=10)
        o = SoftmaxLinear(3, 3)
        spec = AttackSpec("targeted_pgd", aux=aux, pgd_epochs=2, L_known=1.0, seed=11)
        v = view_at(np.zeros(9), t=4)
        assert np.array_equal(targeted_pgd(o, v, spec), targeted_pgd(o, v, spec))


class TestByzantine:
    def test_norm_exactly_l_known(self):
        spec = AttackSpec("byzantine", L_known=3.0, seed=0)
        u = byzantine_update(view_at(np.zeros(5), t=2), spec, d=5)
        assert np.linalg.norm(u) == pytest.approx(3.0, abs=1e-12)

    def test_same_round_same_draw(self):
        spec = AttackSpec("byzantine", L_known=1.0, seed=4)
        a = byzantine_update(view_at(np.zeros(6), t=9), spec, d=6)
        b = byzantine_update(view_at(np.ones(6), t=9), spec, d=6)
        assert np.array_equal(a, b)
        c = byzantine_update(view_at(np.zeros(6), t=10), spec, d=6)
        assert not np.array_equal(a, c)

    def test_salted_draws_differ(self):
        spec = AttackSpec("byzantine", L_known=1.0, seed=4)
        v = view_at(np.zeros(6), t=1)
        a = byzantine_update(v, spec, d=6, salt=0)
        b = byzantine_update(v, spec, d=6, salt=1)
        assert not np.array_equal(a, b)

    def test_directions_spread_over_sphere(self):
        # Monte Carlo uniformity: the mean of 10^4 unit directions stays small.
        spec = AttackSpec("byzantine", L_known=1.0, seed=13)
        trials = 10_000
        acc = np.zeros(4)
        for t in range(1, trials + 1):
            acc += byzantine_update(view_at(np.zeros(4), t=t), spec, d=4)
        assert np.linalg.norm(acc / trials) < 5 / math.sqrt(trials)

    def test_requires_finite_bound(self):
        spec = AttackSpec("byzantine", seed=1)  # L_known defaults to inf
        with pytest.raises(ParameterError):
            byzantine_update(view_at(np.zeros(3)), spec, d=3)


class TestModelReplacement:
    def test_exact_replacement_without_clipping(self):
        theta = np.array([1.0, -2.0])
        target = np.array([0.25, 0.75])
        n = 8
        lam = 0.2
        spec = AttackSpec("model_replacement", L_known=math.inf)
        view = view_at(theta, t=5, lam=lam, avg_weight=1 / n)
        u_a = model_replacement(view, spec, target)
        benign = [np.zeros(2)] * (n - 1)
        aggregate = (sum(benign) + u_a) / n
        assert np.allclose(theta + lam * aggregate, target, atol=1e-12)

    def test_binding_bound_projects_onto_sphere(self):
        spec = AttackSpec("model_replacement", L_known=0.1)
        view = view_at(np.zeros(3), lam=0.5, avg_weight=0.25)
        u = model_replacement(view, spec, np.array([50.0, 0.0, 0.0]))
        assert np.linalg.norm(u) == pytest.approx(0.1, abs=1e-12)

    def test_target_equal_current_is_zero(self):
        theta = np.array([3.0, 4.0])
        spec = AttackSpec("model_replacement", L_known=5.0)
        u = model_replacement(view_at(theta, lam=0.3), spec, theta.copy())
        assert np.array_equal(u, np.zeros(2))

    def test_zero_learning_rate_infeasible(self):
        spec = AttackSpec("model_replacement", L_known=5.0)
        with pytest.raises(AttackInfeasibleError):
            model_replacement(view_at(np.zeros(2), lam=0.0), spec, np.ones(2))


class TestAdaptiveTopk:
    def test_full_mask_equals_targeted_pgd(self):
        aux = small_aux(seed=20)
        o = SoftmaxLinear(3, 3)
        spec = AttackSpec("adaptive_topk", aux=aux, pgd_epochs=2, L_known=1.0, seed=21)
        base_spec = AttackSpec("targeted_pgd", aux=aux, pgd_epochs=2, L_known=1.0, seed=21)
        v_masked = view_at(np.zeros(9), topk_indices=np.arange(9))
        v_plain = view_at(np.zeros(9))
        assert np.array_equal(adaptive_topk_attack(o, v_masked, spec),
                              targeted_pgd(o, v_plain, base_spec))

    def test_disjoint_mask_gives_zero_delta(self):
        # auxiliary features live on coordinates {0,1} x classes, so masking
        # to a feature column the gradient never touches yields zero
        aux = AuxiliarySet(
            Batch(np.array([[0.7, 0.3, 0.0], [0.2, 0.9, 0.0]]),
                  np.array([1, 2]), 3),
            np.array([0, 1]))
        o = SoftmaxLinear(3, 3)
        spec = AttackSpec("adaptive_topk", aux=aux, pgd_epochs=3, L_known=1.0, seed=22)
        # gradient support excludes feature 2 of every class: indices 2, 5, 8
        view = view_at(np.zeros(9), topk_indices=np.array([2, 5, 8]))
        delta = adaptive_topk_attack(o, view, spec)
        assert np.array_equal(delta, np.zeros(9))

    def test_matches_pgd_trace_with_mask_inserted(self):
        aux = small_aux(seed=23, n=4)
        o = SoftmaxLinear(3, 3)
        mask = np.array([0, 3, 4, 8])
        spec = AttackSpec("adaptive_topk", aux=aux, pgd_epochs=2, boost=2.0,
                          lr=0.5, L_known=0.6, seed=24)
        theta0 = np.zeros(9)
        got = adaptive_topk_attack(o, view_at(theta0, t=2, topk_indices=mask), spec)
        rng = np.random.default_rng([24, 2])
        order = rng.permutation(4)
        batch = aux.examples.subset(order)
        theta = theta0.copy()
        for _ in range(2):
            g = o.with_params(theta).gradient(batch)
            theta = theta - 1.0 * g
            delta = theta - theta0
            masked = np.zeros(9)
            masked[mask] = delta[mask]
            delta = l2_clip(masked, 0.6)
            theta = theta0 + delta
        assert np.allclose(got, theta - theta0, atol=1e-15)

    def test_missing_indices_rejected(self):
        aux = small_aux(seed=25)
        o = SoftmaxLinear(3, 3)
        spec = AttackSpec("adaptive_topk", aux=aux, L_known=1.0, seed=26)
        with pytest.raises(ParameterError):
            adaptive_topk_attack(o, view_at(np.zeros(9)), spec)


def test_attack_spec_validation():
    with pytest.raises(ParameterError):
        AttackSpec("nonsense")
    with pytest.raises(ParameterError):
        AttackSpec("targeted_pgd", aux=None)
    spec = AttackSpec("byzantine", L_known=1.0, active_from=5, active_to=9)
    assert not spec.active(4)
    assert spec.active(5) and spec.active(9)
    assert not spec.active(10)
