"""Scratch calibration for the acceptance fixtures (not part of the suite)."""

import itertools
import math
import sys
import time

import numpy as np

from fedsim.attacks import AttackSpec
from fedsim.data import PartitionSpec, build_auxiliary, make_blobs, partition, split_train_test
from fedsim.defenses import AggregatorSpec, ClipSpec
from fedsim.models import SoftmaxLinear
from fedsim.schedules import Schedule
from fedsim.simulator import ProtocolConfig, Seeds, run, run_paired
from fedsim.sparsefed import SparseFedSpec


def world(seed, n, m, C, sep, n_devices, ppd, s):
    full = make_blobs(n, m, C, sep, seed)
    train, test = split_train_test(full, 0.25, seed)
    devices = partition(train, PartitionSpec("single_class", n_devices, ppd, seed))
    aux = build_auxiliary(test, s, seed + 1)
    aux_rows = {tuple(r) for r in aux.examples.x}
    keep = np.array([tuple(r) not in aux_rows for r in test.x])
    return SoftmaxLinear(m, C), devices, test.subset(np.flatnonzero(keep)), aux


def cfg(defense, aux, seed, T, w, boost, epochs, ell, l_known, lr, peak,
        atk="targeted_pgd"):
    attack = AttackSpec(atk, aux=aux, pgd_epochs=epochs, attacker_batch=ell,
                        boost=boost, lr=lr, L_known=l_known, seed=seed + 7)
    return ProtocolConfig(
        n_devices=1000, per_round=w, T=T, defense=defense, p_compromised=0.02,
        tau=1, local_batch=0, local_lr=1.0,
        schedule=Schedule("triangular", peak=peak, warmup_frac=0.25),
        attack=attack, seeds=Seeds.from_master(seed))


def scan(seeds=(1, 2, 3), n=4400, m=12, C=4, sep=2.5, T=400, w=50, k=5,
         L=10.0, s=16, boost=20.0, epochs=5, ell=8, lr=0.5, peak=0.2,
         rho=0.9, label=""):
    t0 = time.time()
    print(f"--- {label or 'scan'}: C={C} sep={sep} T={T} k={k} L={L} s={s} "
          f"boost={boost} ep={epochs} ell={ell} w={w}")
    for seed in seeds:
        oracle, devices, test, aux = world(seed, n, m, C, sep, 1000, 3, s)
        clip = ClipSpec("adaptive", L)
        defs = {
            "sparse": SparseFedSpec(k=k, rho=rho, clip=clip),
            "cliponly": AggregatorSpec("mean", clip=clip),
            "undef": AggregatorSpec("mean", clip=ClipSpec()),
            "sparse_noclip": SparseFedSpec(k=k, rho=rho, clip=ClipSpec()),
        }
        out = {}
        for name, d in defs.items():
            lk = L if name in ("sparse", "cliponly") else math.inf
            c = cfg(d, aux, seed, T, w, boost, epochs, ell, lk, lr, peak)
            if name in ("sparse", "cliponly"):
                _, rec, rep = run_paired(c, oracle, devices, test, aux)
                out[name] = (rec.final_attack_acc, rec.final_test_acc,
                             rep.final_distance, rec.status)
            else:
                rec = run(c, oracle, devices, test, aux)
                out[name] = (rec.final_attack_acc, rec.final_test_acc,
                             float("nan"), rec.status)
        msg = " | ".join(
            f"{name} acc={v[0]:.2f} test={v[1]:.2f} drift={v[2]:.2f} {v[3]}"
            for name, v in out.items())
        print(f"seed {seed}: {msg}", flush=True)
    print(f"elapsed {time.time() - t0:.1f}s")


if __name__ == "__main__":
    kw = {}
    for arg in sys.argv[1:]:
        key, val = arg.split("=")
        kw[key] = float(val) if "." in val else int(val)
    scan(**kw)
