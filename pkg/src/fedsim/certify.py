"""Certified-radius computation and paired-run drift checking.

The sound object is the per-round recurrence r <- r * (1 + w*c*lambda(t)) +
lambda(t) * (rho + 2*gamma) with w = min(d, 2k): it bounds the l1 distance
between the benign and any rho-corrupted trajectory. The closed forms
Lambda(T) * (1 + w*c)^Lambda(T) * (rho + 2*gamma) (and the dense variant with
w = d, gamma = 0) only dominate the recurrence when every per-round step size
is >= 1; for smaller steps the recurrence can exceed them, so every soundness
check here uses the recurrence.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ParameterError
from .numkit import l1_distance
from .schedules import Schedule, cumulative, lambda_at


@dataclass(frozen=True)
class RadiusParams:
    rho: float  # per-round l1 poisoning budget
    c: float  # coordinatewise Lipschitz constant of the update oracle
    gamma: float  # l1 deviation bound of the applied sparse update
    k: int
    d: int
    T: int
    schedule: Schedule

    def __post_init__(self):
        if min(self.rho, self.c, self.gamma) < 0:
            raise ParameterError("rho, c and gamma must be nonnegative")
        if not 1 <= self.k <= self.d:
            raise ParameterError("need 1 <= k <= d")
        if self.T < 1:
            raise ParameterError("T must be >= 1")

    @property
    def w(self) -> int:
        return min(self.d, 2 * self.k)


def radius_recurrence(p: RadiusParams, printed_variant: bool = False,
                      upto: int | None = None) -> float:
    """Iterate the propagation recurrence for T rounds (or a prefix `upto`).

    printed_variant reproduces the alternative printed coefficients
    alpha = 1 + 2*lambda(t)*c*k, beta = rho + gamma instead of the proof's
    alpha = 1 + w*c*lambda(t), beta = rho + 2*gamma.
    """
    T = p.T if upto is None else upto
    if not 0 <= T <= p.T:
        raise ParameterError("prefix outside [0, T]")
    r = 0.0
    for t in range(1, T + 1):
        lam = lambda_at(p.schedule, t, p.T)
        if printed_variant:
            r = r * (1.0 + 2.0 * lam * p.c * p.k) + lam * (p.rho + p.gamma)
        else:
            r = r * (1.0 + p.w * p.c * lam) + lam * (p.rho + 2.0 * p.gamma)
    return r


def radius_closed_form(p: RadiusParams, sparse: bool = True) -> float:
    """Closed-form radius: Lambda(T) * (1 + w*c)^Lambda(T) * (rho + 2*gamma)
    for sparse protocols (w = min(d, 2k)); the dense form replaces w with d
    and drops gamma."""
    lam_total = cumulative(p.schedule, p.T)
    if sparse:
        return lam_total * (1.0 + p.w * p.c) ** lam_total * (p.rho + 2.0 * p.gamma)
    return lam_total * (1.0 + p.d * p.c) ** lam_total * p.rho


class RhoEstimate(NamedTuple):
    l1_worst_case: float  # p * L * sqrt(d): max l1 mass of an l2 ball of radius p*L
    literal: float  # p * L


def rho_from_clipping(p_frac: float, L: float, d: int) -> RhoEstimate:
    """Per-round poisoning budget implied by an l2 clip bound L when a fraction
    p_frac of selected devices is compromised."""
    if not 0.0 <= p_frac <= 1.0:
        raise ParameterError("p_frac must be in [0, 1]")
    if L < 0 or d < 1:
        raise ParameterError("need L >= 0 and d >= 1")
    literal = p_frac * L
    return RhoEstimate(l1_worst_case=literal * float(np.sqrt(d)), literal=literal)


@dataclass(frozen=True)
class DriftReport:
    distances: np.ndarray  # |theta_t - theta_t*|_1 at t = 0..T
    bounds: np.ndarray  # recurrence value at each prefix
    bound_holds: bool
    final_distance: float
    final_bound: float
    heuristic_c: bool = False  # True when c is an empirical lower estimate


def drift_check(benign_trace, poisoned_trace, p: RadiusParams,
                heuristic_c: bool = False) -> DriftReport:
    """Per-round l1 distances between paired trajectories, compared against the
    recurrence at every prefix. Traces are [theta_0, ..., theta_T]."""
    if len(benign_trace) != len(poisoned_trace):
        raise ParameterError("traces differ in length")
    if len(benign_trace) != p.T + 1:
        raise ParameterError(f"expected {p.T + 1} states, got {len(benign_trace)}")
    distances = np.array([
        l1_distance(a, b) for a, b in zip(benign_trace, poisoned_trace)
    ])
    bounds = np.array([radius_recurrence(p, upto=t) for t in range(p.T + 1)])
    # fp slack only; the inequality itself is exact.
    holds = bool(np.all(distances <= bounds * (1.0 + 1e-12) + 1e-12))
    return DriftReport(
        distances=distances,
        bounds=bounds,
        bound_holds=holds,
        final_distance=float(distances[-1]),
        final_bound=float(bounds[-1]),
        heuristic_c=heuristic_c,
    )
