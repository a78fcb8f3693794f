"""The federated round loop: device sampling, schedules, benign and adversarial
update collection, defense invocation, model updates, paired execution, and
metric logging.

Sign convention: devices report parameter deltas (theta_local - theta_global),
so the server applies aggregates additively, theta <- theta + lambda(t) * A(u).
With the mean defense, one device, and tau = 1 this reproduces plain minibatch
SGD exactly.

Compromised devices never contribute local training: they submit the crafted
attack update when the attack is active and a zero update otherwise (also in
the benign twin of a paired run, which disables the attack but keeps seeds).
This makes the per-round corruption exactly the attack's averaged mass, so a
clip bound L and compromised fraction p give the p*L poisoning budget, and a
zero-delta attack coincides with the benign protocol.

Determinism: every source of randomness is an explicit seed, device updates
are reduced in device-id order regardless of the worker count, and runs with
identical configs produce bit-identical records.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import certify
from .attacks import AttackSpec, RoundView, byzantine_update, craft_update
from .data import AuxiliarySet, DeviceDataset
from .defenses import AggregatorSpec, ClipSpec, aggregate
from .errors import AttackInfeasibleError, ParameterError, UndefinedMetricError
from .models import Batch, local_update
from .numkit import l1_distance, l2_clip, sketch, top_k
from .schedules import Schedule, lambda_at
from .sparsefed import RoundState, SparseFedSpec, fetchsgd_step, init_state, sparsefed_step

DIVERGENCE_NORM = 1e8

CSV_HEADER_TAG = "# format: rounds-v1"
CSV_COLUMNS = (
    "round", "lambda_t", "clip_eff", "test_acc", "attack_acc",
    "upd_l2_min", "upd_l2_mean", "upd_l2_max", "w_l1", "omega", "l1_drift",
)


@dataclass(frozen=True)
class Seeds:
    data: int = 0
    sampling: int = 1
    attack: int = 2
    noise: int = 3

    @classmethod
    def from_master(cls, master: int) -> "Seeds":
        ss = np.random.SeedSequence(master).spawn(4)
        return cls(*(int(s.generate_state(1)[0]) for s in ss))


@dataclass(frozen=True)
class InjectionSpec:
    """Definitional rho-corruption: a seeded vector of l1 mass exactly rho is
    added to the aggregated update each round (before the update algorithm)."""

    rho: float
    seed: int = 0

    def epsilon(self, t: int, d: int) -> np.ndarray:
        rng = np.random.default_rng([self.seed, t])
        v = rng.standard_normal(d)
        mass = float(np.sum(np.abs(v)))
        return v * (self.rho / mass) if mass > 0 else v


@dataclass(frozen=True)
class ProtocolConfig:
    n_devices: int
    per_round: int
    T: int
    defense: AggregatorSpec | SparseFedSpec
    p_compromised: float = 0.0
    tau: int = 1
    local_batch: int = 0  # 0 = full device data
    local_lr: float = 0.5
    schedule: Schedule = field(default_factory=Schedule)
    attack: AttackSpec | None = None
    injection: InjectionSpec | None = None
    seeds: Seeds = field(default_factory=Seeds)
    attacker_mode: str = "sampled"  # "sampled" | "forced"
    forced_count: int = 1
    participate_once: bool = False
    n_workers: int = 1
    record_trace: bool = True

    def __post_init__(self):
        if not 1 <= self.per_round <= self.n_devices:
            raise ParameterError("need 1 <= per_round <= n_devices")
        if self.tau < 1 or self.T < 1:
            raise ParameterError("tau and T must be >= 1")
        if not 0.0 <= self.p_compromised <= 1.0:
            raise ParameterError("p_compromised must be in [0, 1]")
        if self.attacker_mode not in ("sampled", "forced"):
            raise ParameterError(f"unknown attacker mode {self.attacker_mode!r}")
        if self.participate_once and self.per_round * self.T > self.n_devices:
            raise ParameterError("participate_once needs per_round * T <= n_devices")

    @property
    def clip(self) -> ClipSpec:
        if isinstance(self.defense, SparseFedSpec):
            return self.defense.clip if self.defense.clip is not None else ClipSpec()
        return self.defense.clip

    @property
    def expected_attackers_per_round(self) -> float:
        return self.p_compromised * self.per_round


@dataclass
class RoundRow:
    round: int
    lambda_t: float
    clip_eff: float
    test_acc: float
    attack_acc: float
    upd_l2_min: float
    upd_l2_mean: float
    upd_l2_max: float
    w_l1: float = 0.0
    omega: float = 0.0
    l1_drift: float | None = None


@dataclass
class RunRecord:
    rows: list[RoundRow]
    status: str  # "ok" | "dnc"
    dnc_reason: str = ""
    final_test_acc: float = 0.0
    final_attack_acc: float = 0.0
    oif: float | None = None
    wall_time: float = 0.0
    expected_attackers: float = 0.0
    trace: list[np.ndarray] = field(default_factory=list)
    final_params: np.ndarray | None = None

    def to_csv_text(self) -> str:
        lines = [CSV_HEADER_TAG, ",".join(CSV_COLUMNS)]
        for r in self.rows:
            drift = "" if r.l1_drift is None else repr(r.l1_drift)
            lines.append(",".join([
                str(r.round), repr(r.lambda_t), repr(r.clip_eff), repr(r.test_acc),
                repr(r.attack_acc), repr(r.upd_l2_min), repr(r.upd_l2_mean),
                repr(r.upd_l2_max), repr(r.w_l1), repr(r.omega), drift,
            ]))
        return "\n".join(lines) + "\n"

    def summary(self) -> dict:
        return {
            "status": self.status,
            "dnc_reason": self.dnc_reason,
            "rounds_completed": len(self.rows),
            "final_test_acc": self.final_test_acc,
            "final_attack_acc": self.final_attack_acc,
            "oif": self.oif,
            "expected_attackers_per_round": self.expected_attackers,
            "wall_time": self.wall_time,
        }


def parse_run_csv(text: str) -> list[RoundRow]:
    """Lossless reader for the per-round CSV emitted by RunRecord."""
    lines = text.strip("\n").split("\n")
    if not lines or lines[0] != CSV_HEADER_TAG:
        raise ParameterError(f"unexpected format tag {lines[0] if lines else ''!r}")
    if lines[1] != ",".join(CSV_COLUMNS):
        raise ParameterError("unexpected CSV columns")
    rows = []
    for line in lines[2:]:
        parts = line.split(",")
        drift = None if parts[10] == "" else float(parts[10])
        rows.append(RoundRow(
            round=int(parts[0]), lambda_t=float(parts[1]), clip_eff=float(parts[2]),
            test_acc=float(parts[3]), attack_acc=float(parts[4]),
            upd_l2_min=float(parts[5]), upd_l2_mean=float(parts[6]),
            upd_l2_max=float(parts[7]), w_l1=float(parts[8]), omega=float(parts[9]),
            l1_drift=drift,
        ))
    return rows


def schedule_lambda(schedule: Schedule, t: int, T: int) -> float:
    return lambda_at(schedule, t, T)


def metrics_attack_accuracy(oracle, aux: AuxiliarySet | None) -> float:
    """Fraction of auxiliary points classified as their flipped label."""
    if aux is None or aux.size == 0:
        return 0.0
    pred = np.argmax(oracle.forward_batch(aux.examples.x), axis=1)
    return float(np.mean(pred == aux.examples.y))


def metrics_test_accuracy(oracle, test: Batch) -> float:
    if len(test) == 0:
        return 0.0
    pred = np.argmax(oracle.forward_batch(test.x), axis=1)
    return float(np.mean(pred == test.y))


def metrics_oif(n_poisoned: int, p_frac: float, n_total_points: int) -> float:
    """Outsized impact factor: points successfully poisoned, relative to the
    attacker's influence times the dataset size."""
    if p_frac <= 0:
        raise UndefinedMetricError("OIF is undefined without compromised agents")
    if n_total_points < 1:
        raise ParameterError("n_total_points must be positive")
    return n_poisoned / (p_frac * n_total_points)


def _compromised_ids(config: ProtocolConfig) -> np.ndarray:
    n_att = int(round(config.p_compromised * config.n_devices))
    if n_att == 0:
        return np.zeros(0, dtype=np.int64)
    rng = np.random.default_rng([config.seeds.attack, 0xC0])
    return np.sort(rng.choice(config.n_devices, size=n_att, replace=False))


class _Sampler:
    """Without-replacement sampling within a round; across rounds either
    recurring (cross-silo) or at most once per device (cross-device)."""

    def __init__(self, config: ProtocolConfig, eligible: np.ndarray):
        self.rng = np.random.default_rng([config.seeds.sampling])
        self.per_round = config.per_round
        self.once = config.participate_once
        self.pool = eligible.copy()

    def draw(self) -> np.ndarray:
        if self.once:
            if len(self.pool) < self.per_round:
                raise ParameterError("device pool exhausted")
            take = self.rng.choice(len(self.pool), size=self.per_round, replace=False)
            chosen = self.pool[np.sort(take)]
            self.pool = np.delete(self.pool, np.sort(take))
            return chosen
        return np.sort(self.rng.choice(self.pool, size=self.per_round, replace=False))


def _adaptive_topk_preview(state: RoundState, benign_updates: list[np.ndarray],
                           per_round: int, spec: SparseFedSpec, d: int) -> np.ndarray:
    """Top-k coordinates of (memory + mean benign update): the oracle knowledge
    granted to the adaptive attacker, computed before the attack is added."""
    acc = np.zeros(d)
    for u in benign_updates:
        acc += u
    preview = state.W + acc / max(per_round, 1)
    return top_k(preview, spec.k).indices


def run(config: ProtocolConfig, oracle, devices: list[DeviceDataset],
        test: Batch, aux: AuxiliarySet | None = None,
        replacement_target: np.ndarray | None = None) -> RunRecord:
    """Execute T federated rounds and log per-round metrics.

    `devices` indexes the full population by device id; empty devices are
    excluded from sampling. `test` must already exclude the auxiliary points.
    """
    t_start = time.perf_counter()
    d = oracle.d
    is_sparse = isinstance(config.defense, SparseFedSpec)
    if config.injection is not None and is_sparse and config.defense.variant == "fetchsgd":
        raise ParameterError("injection is only supported for dense aggregates")
    state = init_state(d, config.defense) if is_sparse else None
    noise_rng = np.random.default_rng([config.seeds.noise])
    compromised = set(int(i) for i in _compromised_ids(config))
    eligible = np.array(
        [dd.device_id for dd in devices if len(dd.examples) > 0], dtype=np.int64
    )
    if len(eligible) < config.per_round:
        raise ParameterError("not enough nonempty devices to sample from")
    sampler = _Sampler(config, eligible)
    theta = oracle.params.copy()
    rows: list[RoundRow] = []
    trace = [theta.copy()] if config.record_trace else []
    status, reason = "ok", ""

    for t in range(1, config.T + 1):
        lam = schedule_lambda(config.schedule, t, config.T)
        clip_eff = config.clip.effective(lam) if lam > 0 else (
            0.0 if config.clip.mode == "adaptive" else config.clip.effective(1.0))
        selected = sampler.draw()
        if config.attacker_mode == "forced" and compromised:
            forced = np.array(sorted(compromised)[: config.forced_count], dtype=np.int64)
            rest = np.array([i for i in selected if i not in compromised], dtype=np.int64)
            selected = np.sort(np.concatenate([forced, rest[: config.per_round - len(forced)]]))
        attack_on = config.attack is not None and config.attack.active(t)
        attacker_sel = [int(i) for i in selected if i in compromised]
        benign_sel = [int(i) for i in selected if i not in compromised]

        cur = oracle.with_params(theta)

        def one_update(dev_id: int) -> np.ndarray:
            bsz = config.local_batch or len(devices[dev_id].examples)
            return local_update(cur, devices[dev_id].examples, config.tau,
                                config.local_lr, bsz, clip_eff)

        if config.n_workers > 1 and len(benign_sel) > 1:
            with ThreadPoolExecutor(max_workers=config.n_workers) as pool:
                benign_updates = list(pool.map(one_update, benign_sel))
        else:
            benign_updates = [one_update(i) for i in benign_sel]

        attack_updates: dict[int, np.ndarray] = {i: np.zeros(d) for i in attacker_sel}
        if attacker_sel and attack_on:
            topk_idx = None
            if config.attack.kind == "adaptive_topk":
                if not is_sparse:
                    raise ParameterError("adaptive_topk needs the sparse defense")
                topk_idx = _adaptive_topk_preview(
                    state, benign_updates, len(selected), config.defense, d)
            view = RoundView(
                global_params=theta, round=t, lambda_t=lam,
                avg_weight=len(attacker_sel) / len(selected), topk_indices=topk_idx)
            try:
                shared = craft_update(cur, view, config.attack, replacement_target)
            except AttackInfeasibleError:
                shared = np.zeros(d)  # infeasible rounds degrade to a no-op attack
            for rank, dev_id in enumerate(attacker_sel):
                if config.attack.collude or config.attack.kind != "byzantine":
                    attack_updates[dev_id] = shared
                else:
                    attack_updates[dev_id] = byzantine_update(view, config.attack, d, salt=rank)

        # Reduce in device-id order; the server re-clips every submission.
        updates = []
        by_id = dict(zip(benign_sel, benign_updates))
        for dev_id in [int(i) for i in selected]:
            u = attack_updates.get(dev_id, by_id.get(dev_id))
            updates.append(l2_clip(u, clip_eff))

        norms = [float(np.linalg.norm(u)) for u in updates]
        w_l1 = 0.0
        omega = 0.0
        if is_sparse and config.defense.variant == "fetchsgd":
            spec = config.defense
            cols = spec.cols_for(d)
            sketches = [sketch(u, spec.sketch_rows, cols, spec.sketch_seed) for u in updates]
            delta, state = fetchsgd_step(state, sketches, spec, lam)
            theta = theta + delta.densify()
        elif is_sparse:
            acc = np.zeros(d)
            for u in updates:
                acc += u
            u_t = acc / len(updates)
            if config.injection is not None:
                u_t = u_t + config.injection.epsilon(t, d)
            pre_mass = float(np.sum(np.abs(state.W + u_t)))
            delta, state = sparsefed_step(state, u_t, config.defense)
            omega = 0.0 if pre_mass == 0.0 else max(0.0, (pre_mass - delta.l1()) / pre_mass)
            w_l1 = float(np.sum(np.abs(state.W)))
            theta = theta + lam * delta.densify()
        else:
            try:
                agg = aggregate(config.defense, updates, rng=noise_rng)
            except ParameterError as e:
                status, reason = "dnc", f"defense precondition: {e}"
                break
            if config.injection is not None:
                agg = agg + config.injection.epsilon(t, d)
            theta = theta + lam * agg

        if not np.all(np.isfinite(theta)) or float(np.linalg.norm(theta)) > DIVERGENCE_NORM:
            status, reason = "dnc", "parameter divergence"
            break

        cur_after = oracle.with_params(theta)
        rows.append(RoundRow(
            round=t, lambda_t=lam, clip_eff=clip_eff,
            test_acc=metrics_test_accuracy(cur_after, test),
            attack_acc=metrics_attack_accuracy(cur_after, aux),
            upd_l2_min=min(norms), upd_l2_mean=sum(norms) / len(norms),
            upd_l2_max=max(norms), w_l1=w_l1, omega=omega,
        ))
        if config.record_trace:
            trace.append(theta.copy())

    final = oracle.with_params(theta)
    oif = None
    if aux is not None and aux.size and config.p_compromised > 0:
        n_poisoned = int(round(metrics_attack_accuracy(final, aux) * aux.size))
        n_total = sum(len(dd.examples) for dd in devices)
        oif = metrics_oif(n_poisoned, config.p_compromised, n_total)
    return RunRecord(
        rows=rows, status=status, dnc_reason=reason,
        final_test_acc=metrics_test_accuracy(final, test),
        final_attack_acc=metrics_attack_accuracy(final, aux),
        oif=oif, wall_time=time.perf_counter() - t_start,
        expected_attackers=config.expected_attackers_per_round,
        trace=trace, final_params=theta,
    )


def run_paired(config: ProtocolConfig, oracle, devices, test, aux,
               radius: certify.RadiusParams | None = None,
               replacement_target: np.ndarray | None = None,
               heuristic_c: bool = False):
    """Run the benign twin (attack and injection disabled, same seeds) and the
    poisoned run with shared randomness; returns (benign, poisoned, report).

    When `radius` is omitted the report carries distances only (bounds NaN).
    """
    if config.attack is None and config.injection is None:
        raise ParameterError("paired execution needs an attack or an injection")
    benign_cfg = replace(config, attack=None, injection=None)
    benign = run(benign_cfg, oracle, devices, test, aux)
    poisoned = run(config, oracle, devices, test, aux, replacement_target)
    n = min(len(benign.trace), len(poisoned.trace))
    distances = np.array([
        l1_distance(benign.trace[i], poisoned.trace[i]) for i in range(n)
    ])
    if radius is not None and benign.status == "ok" and poisoned.status == "ok":
        report = certify.drift_check(benign.trace, poisoned.trace, radius, heuristic_c)
    else:
        report = certify.DriftReport(
            distances=distances, bounds=np.full(n, np.nan), bound_holds=False,
            final_distance=float(distances[-1]) if n else 0.0,
            final_bound=float("nan"), heuristic_c=heuristic_c)
    for i, row in enumerate(poisoned.rows):
        if i + 1 < len(distances):
            row.l1_drift = float(distances[i + 1])
    return benign, poisoned, report
