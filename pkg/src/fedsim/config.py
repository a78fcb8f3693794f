"""Experiment configuration: an INI file with sections [data], [protocol],
[defense], [attack], [output]. Unknown keys are errors. All seeds are explicit
or derived from the single [protocol] seed. `resolve` normalizes a parsed
config into an Experiment; `canonical_text` re-serializes the normalized form,
and resolving that text again is the identity.
"""

from __future__ import annotations

import configparser
import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .attacks import AttackSpec
from .data import (AuxiliarySet, DeviceDataset, PartitionSpec, build_auxiliary,
                   load_csv, load_idx, make_blobs, partition, split_train_test)
from .defenses import AggregatorSpec, ClipSpec
from .errors import ConfigError
from .models import Batch, make_oracle
from .schedules import Schedule
from .simulator import InjectionSpec, ProtocolConfig, Seeds
from .sparsefed import SparseFedSpec

# section -> key -> (type, default). Types: int, float, bool, str.
SCHEMA: dict[str, dict[str, tuple[type, object]]] = {
    "data": {
        "kind": (str, "blobs"),  # blobs | idx | csv
        "n": (int, 2000),
        "features": (int, 10),
        "classes": (int, 4),
        "separation": (float, 4.0),
        "test_fraction": (float, 0.25),
        "aux_size": (int, 0),
        "images": (str, ""),  # idx kind
        "labels": (str, ""),  # idx kind
        "path": (str, ""),  # csv kind
    },
    "protocol": {
        # Reference populations elsewhere use 1e3 devices cross-silo and 1e5
        # (sometimes quoted as 1e4) cross-device; desk scale stays in the
        # hundreds-to-thousands.
        "n_devices": (int, 100),
        "per_round": (int, 10),
        "p_compromised": (float, 0.0),
        "rounds": (int, 50),
        "tau": (int, 1),
        "local_batch": (int, 0),
        "local_lr": (float, 0.5),
        "model": (str, "softmax_linear"),
        "hidden": (int, 16),
        "partition": (str, "iid"),  # iid | single_class
        "points_per_device": (int, 0),  # 0 = train size // n_devices
        "schedule": (str, "constant"),
        "lambda": (float, 0.1),
        "peak": (float, 0.2),
        "warmup_frac": (float, 0.5),
        "participate_once": (bool, False),
        "attacker_mode": (str, "sampled"),
        "forced_count": (int, 1),
        "n_workers": (int, 1),
        "seed": (int, 1234),
        "seed_data": (int, -1),  # -1 = derive from seed
        "seed_sampling": (int, -1),
        "seed_attack": (int, -1),
        "seed_noise": (int, -1),
    },
    "defense": {
        "kind": (str, "mean"),
        "f": (int, 0),
        "sigma": (float, 0.0),
        "clip": (str, "none"),  # none | fixed | adaptive
        "clip_l": (float, 5.0),
        "k": (int, 8),
        "rho": (float, 0.9),
        "variant": (str, "topk"),
        "momentum_into_memory": (bool, False),
        "sketch_rows": (int, 7),
        "sketch_cols": (int, 0),
        "sketch_seed": (int, 0),
    },
    "attack": {
        "kind": (str, "none"),
        "pgd_epochs": (int, 5),
        "attacker_batch": (int, 0),
        "boost": (float, 20.0),
        "lr": (float, 0.1),
        "l_known": (float, 5.0),
        "collude": (bool, True),
        "active_from": (int, 1),
        "active_to": (int, 0),  # 0 = every round
        "injection_rho": (float, 0.0),
        "injection_seed": (int, 0),
    },
    "output": {
        "dir": (str, ""),
        "name": (str, ""),
    },
}

_BOOL_TRUE = {"true", "yes", "on", "1"}
_BOOL_FALSE = {"false", "no", "off", "0"}


def _convert(section: str, key: str, raw: str):
    typ, _ = SCHEMA[section][key]
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low in _BOOL_TRUE:
                return True
            if low in _BOOL_FALSE:
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if typ is float and raw.lower() in ("inf", "infinity"):
            return math.inf
        return typ(raw)
    except ValueError as e:
        raise ConfigError(f"bad value for {section}.{key}: {e}") from None


def parse_config(text: str, overrides: list[str] | None = None) -> dict[str, dict]:
    """Parse INI text plus `section.key=value` overrides into a settings dict.

    Unknown sections or keys are errors naming the offender; syntax errors
    carry the line number from the parser.
    """
    cp = configparser.ConfigParser(interpolation=None, strict=True,
                                   inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"parse error: {e}") from None
    settings = {sec: {k: default for k, (_, default) in keys.items()}
                for sec, keys in SCHEMA.items()}
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
        for key, raw in cp.items(sec):
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {sec}.{key}")
            settings[sec][key] = _convert(sec, key, raw)
    for ov in overrides or []:
        if "=" not in ov or "." not in ov.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value: {ov!r}")
        target, raw = ov.split("=", 1)
        sec, key = target.split(".", 1)
        if sec not in SCHEMA or key not in SCHEMA[sec]:
            raise ConfigError(f"unknown key {sec}.{key}")
        settings[sec][key] = _convert(sec, key, raw)
    return settings


def canonical_text(settings: dict[str, dict]) -> str:
    """Stable serialization: every key in schema order."""
    lines = []
    for sec in SCHEMA:
        lines.append(f"[{sec}]")
        for key in SCHEMA[sec]:
            v = settings[sec][key]
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{key} = {v}")
        lines.append("")
    return "\n".join(lines)


def config_hash(settings: dict[str, dict]) -> str:
    return hashlib.sha256(canonical_text(settings).encode()).hexdigest()[:12]


@dataclass(frozen=True)
class Experiment:
    """A fully resolved experiment: protocol plus materialized datasets."""

    settings: dict
    protocol: ProtocolConfig
    oracle: object
    devices: list[DeviceDataset]
    test: Batch
    aux: AuxiliarySet | None

    @property
    def run_name(self) -> str:
        name = self.settings["output"]["name"] or config_hash(self.settings)
        return f"{name}-s{self.settings['protocol']['seed']}"


def _load_dataset(d: dict, seed: int) -> tuple[Batch, Batch]:
    if d["kind"] == "blobs":
        full = make_blobs(d["n"], d["features"], d["classes"], d["separation"], seed)
    elif d["kind"] == "idx":
        if not d["images"] or not d["labels"]:
            raise ConfigError("data.kind=idx needs data.images and data.labels")
        full = load_idx(d["images"], d["labels"])
    elif d["kind"] == "csv":
        if not d["path"]:
            raise ConfigError("data.kind=csv needs data.path")
        full = load_csv(d["path"])
    else:
        raise ConfigError(f"unknown data.kind {d['kind']!r}")
    return split_train_test(full, d["test_fraction"], seed)


def resolve(settings: dict[str, dict]) -> Experiment:
    """Validate settings and materialize datasets, model, and protocol."""
    p, dfn, att, dat = (settings["protocol"], settings["defense"],
                        settings["attack"], settings["data"])
    seeds = Seeds.from_master(p["seed"])
    seeds = Seeds(
        data=p["seed_data"] if p["seed_data"] >= 0 else seeds.data,
        sampling=p["seed_sampling"] if p["seed_sampling"] >= 0 else seeds.sampling,
        attack=p["seed_attack"] if p["seed_attack"] >= 0 else seeds.attack,
        noise=p["seed_noise"] if p["seed_noise"] >= 0 else seeds.noise,
    )
    try:
        train, test = _load_dataset(dat, seeds.data)
        ppd = p["points_per_device"] or max(1, len(train) // p["n_devices"])
        devices = partition(train, PartitionSpec(
            p["partition"], p["n_devices"], ppd, seeds.data))
        aux = None
        test_for_metrics = test
        if dat["aux_size"] > 0:
            aux = build_auxiliary(test, dat["aux_size"], seeds.attack)
            # Reported test accuracy excludes the auxiliary points.
            aux_rows = {tuple(row) for row in aux.examples.x}
            keep = np.array([tuple(row) not in aux_rows for row in test.x])
            test_for_metrics = test.subset(np.flatnonzero(keep))

        clip = ClipSpec(dfn["clip"], dfn["clip_l"]) if dfn["clip"] != "none" else ClipSpec()
        if dfn["kind"] == "sparsefed":
            defense = SparseFedSpec(
                k=dfn["k"], clip=clip, rho=dfn["rho"], variant=dfn["variant"],
                momentum_into_memory=dfn["momentum_into_memory"],
                sketch_rows=dfn["sketch_rows"], sketch_cols=dfn["sketch_cols"],
                sketch_seed=dfn["sketch_seed"])
        else:
            defense = AggregatorSpec(dfn["kind"], f=dfn["f"], sigma=dfn["sigma"], clip=clip)

        attack = None
        if att["kind"] != "none":
            attack = AttackSpec(
                kind=att["kind"], aux=aux, pgd_epochs=att["pgd_epochs"],
                attacker_batch=att["attacker_batch"], boost=att["boost"],
                lr=att["lr"], L_known=att["l_known"], collude=att["collude"],
                active_from=att["active_from"],
                active_to=att["active_to"] or None, seed=seeds.attack)
        injection = None
        if att["injection_rho"] > 0:
            injection = InjectionSpec(att["injection_rho"], att["injection_seed"])

        schedule = (Schedule("constant", value=p["lambda"])
                    if p["schedule"] == "constant"
                    else Schedule("triangular", peak=p["peak"], warmup_frac=p["warmup_frac"]))
        oracle = make_oracle(p["model"], train.n_features, train.n_classes, p["hidden"])
        if p["model"] == "mlp_1hidden":
            # All-zero MLP weights sit on a symmetric saddle with zero gradient.
            init = np.random.default_rng(seeds.data).normal(scale=0.1, size=oracle.d)
            oracle = oracle.with_params(init)
        protocol = ProtocolConfig(
            n_devices=p["n_devices"], per_round=p["per_round"], T=p["rounds"],
            defense=defense, p_compromised=p["p_compromised"], tau=p["tau"],
            local_batch=p["local_batch"], local_lr=p["local_lr"],
            schedule=schedule, attack=attack, injection=injection, seeds=seeds,
            attacker_mode=p["attacker_mode"], forced_count=p["forced_count"],
            participate_once=p["participate_once"], n_workers=p["n_workers"])
    except ConfigError:
        raise
    except Exception as e:
        raise ConfigError(str(e)) from e
    return Experiment(settings=settings, protocol=protocol, oracle=oracle,
                      devices=devices, test=test_for_metrics, aux=aux)
