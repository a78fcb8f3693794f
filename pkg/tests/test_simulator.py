import math

import numpy as np
import pytest

from fedsim.attacks import AttackSpec
from fedsim.data import AuxiliarySet, DeviceDataset, PartitionSpec, build_auxiliary, make_blobs, partition, split_train_test
from fedsim.defenses import AggregatorSpec, ClipSpec
from fedsim.errors import ParameterError, UndefinedMetricError
from fedsim.models import Batch, SoftmaxLinear
from fedsim.schedules import Schedule
from fedsim.simulator import (InjectionSpec, ProtocolConfig, Seeds,
                              metrics_attack_accuracy, metrics_oif,
                              parse_run_csv, run, run_paired, schedule_lambda)
from fedsim.sparsefed import SparseFedSpec


def blob_world(seed=0, n=120, m=4, C=3, n_devices=6, ppd=10, aux_size=6,
               mode="iid"):
    full = make_blobs(n, m, C, separation=4.0, seed=seed)
    train, test = split_train_test(full, 0.25, seed=seed)
    devices = partition(train, PartitionSpec(mode, n_devices, ppd, seed))
    aux = build_auxiliary(test, aux_size, seed) if aux_size else None
    oracle = SoftmaxLinear(m, C)
    return oracle, devices, test, aux


def mean_config(**kw):
    base = dict(n_devices=6, per_round=3, T=8,
                defense=AggregatorSpec("mean", clip=ClipSpec()),
                local_lr=0.5, schedule=Schedule("constant", value=0.2),
                seeds=Seeds(1, 2, 3, 4))
    base.update(kw)
    return ProtocolConfig(**base)


class TestSchedule:
    def test_triangular_apex(self):
        s = Schedule("triangular", peak=0.2, warmup_frac=0.5)
        assert schedule_lambda(s, 10, 20) == pytest.approx(0.2)

    def test_triangular_ends_at_zero(self):
        s = Schedule("triangular", peak=0.2, warmup_frac=0.5)
        assert schedule_lambda(s, 20, 20) == 0.0

    def test_constant(self):
        s = Schedule("constant", value=0.1)
        assert all(schedule_lambda(s, t, 9) == 0.1 for t in range(1, 10))

    def test_ramp_is_monotone_up_then_down(self):
        s = Schedule("triangular", peak=1.0, warmup_frac=0.4)
        vals = [schedule_lambda(s, t, 10) for t in range(1, 11)]
        apex = vals.index(max(vals))
        assert vals[:apex] == sorted(vals[:apex])
        assert vals[apex:] == sorted(vals[apex:], reverse=True)


class TestMetrics:
    def test_attack_accuracy_crafted_fixture(self):
        # zero parameters predict class 0 for everything (uniform, argmax=0),
        # so exactly the points flipped to 0 count as poisoned
        o = SoftmaxLinear(2, 3)
        aux = AuxiliarySet(
            Batch(np.full((4, 2), 0.5), np.array([0, 0, 1, 2]), 3),
            np.array([1, 2, 0, 0]))
        assert metrics_attack_accuracy(o, aux) == 0.5

    def test_empty_aux_is_zero(self):
        o = SoftmaxLinear(2, 3)
        assert metrics_attack_accuracy(o, None) == 0.0

    def test_always_flipped_single_point(self):
        o = SoftmaxLinear(2, 2, params=[5.0, 5.0, -5.0, -5.0])
        aux = AuxiliarySet(Batch(np.array([[1.0, 1.0]]), np.array([0]), 2),
                           np.array([1]))
        assert metrics_attack_accuracy(o, aux) == 1.0

    def test_oif_reference_points(self):
        assert metrics_oif(500, 0.01, 50_000) == 1.0
        assert metrics_oif(5, 0.0001, 50_000) == 1.0
        assert metrics_oif(0, 0.01, 50_000) == 0.0

    def test_oif_undefined_without_attackers(self):
        with pytest.raises(UndefinedMetricError):
            metrics_oif(1, 0.0, 100)


class TestRunBasics:
    def test_degenerate_federation_equals_plain_sgd(self):
        # one device holding everything, tau=1, full batch, mean defense
        full = make_blobs(40, 3, 2, 4.0, seed=5)
        devices = [DeviceDataset(0, full, frozenset(np.unique(full.y)))]
        oracle = SoftmaxLinear(3, 2)
        cfg = mean_config(n_devices=1, per_round=1, T=10, local_lr=0.7)
        record = run(cfg, oracle, devices, full)
        theta = oracle.params.copy()
        for _ in range(10):
            g = oracle.with_params(theta).gradient(full)
            theta = theta - 0.2 * (0.7 * g)
        assert np.array_equal(record.final_params, theta)

    def test_identical_devices_match_single_device_run(self):
        # a power-of-two count of bit-identical devices averages exactly
        full = make_blobs(30, 3, 2, 4.0, seed=6)
        oracle = SoftmaxLinear(3, 2)
        one = [DeviceDataset(0, full, frozenset({0, 1}))]
        four = [DeviceDataset(i, full, frozenset({0, 1})) for i in range(4)]
        r1 = run(mean_config(n_devices=1, per_round=1, T=6), oracle, one, full)
        r4 = run(mean_config(n_devices=4, per_round=4, T=6), oracle, four, full)
        assert np.array_equal(r1.final_params, r4.final_params)

    def test_no_compromised_devices_matches_attack_free_run(self):
        oracle, devices, test, aux = blob_world()
        atk = AttackSpec("targeted_pgd", aux=aux, L_known=1.0, seed=9)
        r_attack = run(mean_config(p_compromised=0.0, attack=atk),
                       oracle, devices, test, aux)
        r_clean = run(mean_config(), oracle, devices, test, aux)
        assert r_attack.to_csv_text() == r_clean.to_csv_text()
        assert r_attack.final_attack_acc == metrics_attack_accuracy(
            oracle.with_params(r_attack.final_params), aux)

    def test_bitwise_determinism_and_worker_invariance(self):
        oracle, devices, test, aux = blob_world(seed=7)
        texts = []
        for workers in (1, 1, 4):
            cfg = mean_config(n_workers=workers)
            texts.append(run(cfg, oracle, devices, test, aux).to_csv_text())
        assert texts[0] == texts[1] == texts[2]

    def test_csv_round_trip(self):
        oracle, devices, test, aux = blob_world(seed=8)
        record = run(mean_config(T=4), oracle, devices, test, aux)
        rows = parse_run_csv(record.to_csv_text())
        assert rows == record.rows

    def test_divergence_marks_dnc(self):
        oracle, devices, test, aux = blob_world(seed=9)
        atk = AttackSpec("byzantine", L_known=1e14, seed=1)
        cfg = mean_config(p_compromised=0.5, attack=atk, T=6,
                          attacker_mode="forced", forced_count=2)
        record = run(cfg, oracle, devices, test, aux)
        assert record.status == "dnc"
        assert record.dnc_reason == "parameter divergence"
        assert len(record.rows) < 6

    def test_defense_precondition_marks_dnc(self):
        oracle, devices, test, aux = blob_world()
        cfg = mean_config(defense=AggregatorSpec("bulyan", f=1, clip=ClipSpec()))
        record = run(cfg, oracle, devices, test, aux)  # per_round=3 < 4f+3
        assert record.status == "dnc"
        assert "precondition" in record.dnc_reason

    def test_sparsefed_rows_carry_memory_and_loss_rate(self):
        oracle, devices, test, aux = blob_world(seed=10)
        cfg = mean_config(defense=SparseFedSpec(k=2, rho=0.5, clip=ClipSpec("fixed", 5.0)))
        record = run(cfg, oracle, devices, test, aux)
        assert any(r.w_l1 > 0 for r in record.rows)
        assert all(0.0 <= r.omega <= 1.0 for r in record.rows)

    def test_participate_once_exhausts_distinct_devices(self):
        oracle, devices, test, aux = blob_world(n=240, n_devices=12, ppd=10)
        cfg = mean_config(n_devices=12, per_round=3, T=4, participate_once=True)
        record = run(cfg, oracle, devices, test, aux)
        assert record.status == "ok"
        with pytest.raises(ParameterError):
            mean_config(n_devices=12, per_round=4, T=4, participate_once=True)


class TestInjection:
    def test_epsilon_has_exact_l1_mass(self):
        inj = InjectionSpec(rho=0.7, seed=3)
        eps = inj.epsilon(5, 40)
        assert np.sum(np.abs(eps)) == pytest.approx(0.7, rel=1e-12)

    def test_injection_shifts_trajectory(self):
        oracle, devices, test, aux = blob_world(seed=11)
        base = mean_config()
        poisoned = mean_config(injection=InjectionSpec(rho=0.5, seed=1))
        r0 = run(base, oracle, devices, test, aux)
        r1 = run(poisoned, oracle, devices, test, aux)
        assert not np.array_equal(r0.final_params, r1.final_params)


class TestPaired:
    def test_zero_delta_attack_gives_zero_drift(self):
        oracle, devices, test, _ = blob_world(seed=12, aux_size=0)
        zero_aux = AuxiliarySet(
            Batch(np.zeros((3, 4)), np.array([1, 1, 2]), 3), np.array([0, 0, 0]))
        atk = AttackSpec("targeted_pgd", aux=zero_aux, L_known=1.0, seed=2)
        cfg = mean_config(p_compromised=0.4, attack=atk)
        benign, poisoned, report = run_paired(cfg, oracle, devices, test, zero_aux)
        assert np.all(report.distances == 0.0)
        assert np.array_equal(benign.final_params, poisoned.final_params)

    def test_trajectories_identical_until_first_attack_round(self):
        oracle, devices, test, aux = blob_world(seed=13)
        atk = AttackSpec("targeted_pgd", aux=aux, L_known=2.0, boost=50.0,
                         active_from=4, seed=3)
        cfg = mean_config(p_compromised=0.5, attack=atk, T=8)
        benign, poisoned, report = run_paired(cfg, oracle, devices, test, aux)
        assert np.all(report.distances[:4] == 0.0)
        assert report.distances[-1] > 0.0

    def test_paired_requires_adversary(self):
        oracle, devices, test, aux = blob_world(seed=14)
        with pytest.raises(ParameterError):
            run_paired(mean_config(), oracle, devices, test, aux)

    def test_drift_column_filled_on_poisoned_rows(self):
        oracle, devices, test, aux = blob_world(seed=15)
        cfg = mean_config(injection=InjectionSpec(rho=0.3, seed=2))
        _, poisoned, report = run_paired(cfg, oracle, devices, test, aux)
        assert all(r.l1_drift is not None for r in poisoned.rows)
        assert poisoned.rows[-1].l1_drift == pytest.approx(report.final_distance)
