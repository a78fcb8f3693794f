"""Adversarial update generation.

Every attack is a pure function of (oracle architecture, round view, spec), so
colluding devices submitting the same output are bit-identical and paired
benign/poisoned runs can share randomness. Returned vectors are parameter
deltas (local minus global) and always satisfy ||delta||_2 <= L_known when the
bound is finite: the attacker is assumed to know the defender's clip bound and
pre-projects onto it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import AuxiliarySet
from .errors import AttackInfeasibleError, ParameterError
from .numkit import l2_clip

ATTACK_KINDS = ("targeted_pgd", "byzantine", "model_replacement", "adaptive_topk")


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    aux: AuxiliarySet | None = None
    pgd_epochs: int = 5
    attacker_batch: int = 0  # 0 = full auxiliary set per step
    boost: float = 20.0
    lr: float = 0.1  # base PGD step; the effective step is lr * boost
    L_known: float = math.inf
    collude: bool = True
    active_from: int = 1
    active_to: int | None = None  # None = every round
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ParameterError(f"unknown attack kind {self.kind!r}")
        if self.kind in ("targeted_pgd", "adaptive_topk"):
            if self.aux is None or self.aux.size == 0:
                raise ParameterError(f"{self.kind} needs a nonempty auxiliary set")
            if self.pgd_epochs < 1:
                raise ParameterError("pgd_epochs must be >= 1")
        if not self.L_known > 0:
            raise ParameterError("L_known must be positive")

    def active(self, t: int) -> bool:
        if t < self.active_from:
            return False
        return self.active_to is None or t <= self.active_to


@dataclass(frozen=True)
class RoundView:
    """What the attacker sees this round."""

    global_params: np.ndarray
    round: int
    lambda_t: float
    avg_weight: float = 1.0  # total averaging weight the attack update receives
    topk_indices: np.ndarray | None = field(default=None)


def _pgd_batches(aux: AuxiliarySet, batch: int, rng: np.random.Generator):
    """Seeded shuffle of the auxiliary set, then fixed consecutive slices."""
    n = aux.size
    order = rng.permutation(n)
    b = n if batch <= 0 else min(batch, n)
    return [aux.examples.subset(order[s:s + b]) for s in range(0, n, b)]


def _pgd(oracle, view: RoundView, spec: AttackSpec, mask: np.ndarray | None) -> np.ndarray:
    rng = np.random.default_rng([spec.seed, view.round])
    batches = _pgd_batches(spec.aux, spec.attacker_batch, rng)
    step = spec.lr * spec.boost
    theta0 = view.global_params
    theta = theta0.copy()
    for _ in range(spec.pgd_epochs):
        for b in batches:
            g = oracle.with_params(theta).gradient(b)
            theta = theta - step * g
        delta = theta - theta0
        if mask is not None:
            keep = np.zeros_like(delta)
            keep[mask] = delta[mask]
            delta = keep
        delta = l2_clip(delta, spec.L_known)
        theta = theta0 + delta
    return theta - theta0


def targeted_pgd(oracle, view: RoundView, spec: AttackSpec) -> np.ndarray:
    """Boosted minibatch SGD on the flipped-label auxiliary set, projecting the
    accumulated delta onto the L_known ball after every epoch."""
    return _pgd(oracle, view, spec, mask=None)


def adaptive_topk_attack(oracle, view: RoundView, spec: AttackSpec) -> np.ndarray:
    """targeted_pgd, except each epoch's delta is zeroed outside the
    coordinates the server will update before the l2 projection."""
    if view.topk_indices is None:
        raise ParameterError("adaptive_topk needs the round's top-k coordinates")
    return _pgd(oracle, view, spec, mask=np.asarray(view.topk_indices, dtype=np.int64))


def byzantine_update(view: RoundView, spec: AttackSpec, d: int,
                     salt: int | None = None) -> np.ndarray:
    """A seeded random direction scaled to norm exactly L_known. Colluders
    share the draw; `salt` gives non-colluding attackers independent draws."""
    if not math.isfinite(spec.L_known):
        raise ParameterError("byzantine updates need a finite L_known")
    entropy = [spec.seed, view.round] if salt is None else [spec.seed, view.round, salt]
    rng = np.random.default_rng(entropy)
    while True:
        g = rng.standard_normal(d)
        norm = float(np.linalg.norm(g))
        if norm > 0:
            return g * (spec.L_known / norm)


def model_replacement(view: RoundView, spec: AttackSpec, target_params: np.ndarray) -> np.ndarray:
    """The delta that moves the post-aggregation model to `target_params`,
    given the attack's averaging weight and this round's learning rate,
    projected onto the L_known ball.

    Solves theta + lambda(t) * avg_weight * delta = target."""
    if view.lambda_t == 0.0:
        raise AttackInfeasibleError("learning rate is zero this round")
    if view.avg_weight <= 0.0:
        raise ParameterError("avg_weight must be positive")
    delta = (target_params - view.global_params) / (view.lambda_t * view.avg_weight)
    return l2_clip(delta, spec.L_known)


def craft_update(oracle, view: RoundView, spec: AttackSpec,
                 target_params: np.ndarray | None = None) -> np.ndarray:
    """Dispatch to the configured attack kind."""
    if spec.kind == "targeted_pgd":
        return targeted_pgd(oracle, view, spec)
    if spec.kind == "adaptive_topk":
        return adaptive_topk_attack(oracle, view, spec)
    if spec.kind == "byzantine":
        return byzantine_update(view, spec, oracle.d)
    if spec.kind == "model_replacement":
        if target_params is None:
            raise ParameterError("model_replacement needs target params")
        return model_replacement(view, spec, target_params)
    raise ParameterError(f"unknown attack kind {spec.kind!r}")
