"""Server-side aggregation rules: mean, trimmed mean, coordinate median, Krum,
Bulyan, and mean-plus-Gaussian-noise, plus the clipping schedule.

All rules consume a list of already-clipped update vectors and emit a single
aggregate. Conventions that the printed algorithms leave open, fixed here so
results are deterministic and oracle-checkable:

* Krum never removes the candidate from its own neighbor pool; distance ties
  during removal break toward the highest index (never self). Scores within
  1e-9 relative (1e-12 absolute) of the minimum count as tied, so
  mathematically equal scores that differ only by rounding still group.
  Tied scores resolve by lexicographically smallest update value, then lowest
  index; score ties between distinct updates are structural (mutual nearest
  neighbors share a distance), and a value-based order keeps the selected
  value, and therefore Bulyan, permutation-invariant.
* Inside Bulyan the shrinking pool can drop below Krum's standalone
  precondition, so the shared core removes min(f+2, n-2) farthest others,
  which always leaves at least one non-self survivor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .numkit import as_vector

CLIP_MODES = ("none", "fixed", "adaptive")
AGGREGATOR_RULES = ("mean", "trimmed_mean", "coord_median", "krum", "bulyan", "mean_dp")


@dataclass(frozen=True)
class ClipSpec:
    mode: str = "none"
    L: float = math.inf

    def __post_init__(self):
        if self.mode not in CLIP_MODES:
            raise ParameterError(f"unknown clip mode {self.mode!r}")
        if self.mode != "none" and not self.L > 0:
            raise ParameterError("clip bound must be positive")

    def effective(self, lambda_t: float) -> float:
        if self.mode == "none":
            return math.inf
        return clip_schedule(self.L, lambda_t, self.mode)


def clip_schedule(L: float, lambda_t: float, mode: str) -> float:
    """Effective clip bound: fixed -> L, adaptive -> L * lambda(t)."""
    if not L > 0 or not lambda_t > 0:
        raise ParameterError("L and lambda_t must be positive")
    if mode == "fixed":
        return L
    if mode == "adaptive":
        return L * lambda_t
    raise ParameterError(f"unknown clip mode {mode!r}")


@dataclass(frozen=True)
class AggregatorSpec:
    rule: str = "mean"
    f: int = 0
    sigma: float = 0.0
    clip: ClipSpec = field(default_factory=ClipSpec)

    def __post_init__(self):
        if self.rule not in AGGREGATOR_RULES:
            raise ParameterError(f"unknown aggregation rule {self.rule!r}")
        if self.f < 0 or self.sigma < 0:
            raise ParameterError("f and sigma must be nonnegative")


def _stack(updates) -> np.ndarray:
    if not updates:
        raise ParameterError("no updates to aggregate")
    vs = [as_vector(u) for u in updates]
    d = vs[0].shape[0]
    for v in vs[1:]:
        if v.shape[0] != d:
            raise ParameterError("updates differ in dimension")
    return np.stack(vs)


def mean_aggregate(updates) -> np.ndarray:
    """Arithmetic mean, accumulated left to right for a fixed summation order."""
    mat = _stack(updates)
    acc = np.zeros(mat.shape[1])
    for row in mat:
        acc += row
    return acc / mat.shape[0]


def trimmed_mean(updates, f: int) -> np.ndarray:
    """Per coordinate, drop the f smallest and f largest values and average."""
    mat = _stack(updates)
    n = mat.shape[0]
    if n <= 2 * f:
        raise ParameterError(f"trimmed mean needs n > 2f (n={n}, f={f})")
    kept = np.sort(mat, axis=0)[f:n - f]
    acc = np.zeros(mat.shape[1])
    for row in kept:
        acc += row
    return acc / kept.shape[0]


def coord_median(updates) -> np.ndarray:
    """Per-coordinate median; even counts average the two central values."""
    return np.median(_stack(updates), axis=0)


def _krum_core(mat: np.ndarray, f: int) -> tuple[np.ndarray, int]:
    n = mat.shape[0]
    diffs = mat[:, None, :] - mat[None, :, :]
    dist = np.sqrt(np.sum(diffs * diffs, axis=2))
    n_remove = min(f + 2, n - 2) if n >= 2 else 0
    scores = np.empty(n)
    for i in range(n):
        others = [j for j in range(n) if j != i]
        for _ in range(n_remove):
            # Farthest remaining; ties toward the highest index.
            far = max(others, key=lambda j: (dist[i, j], j))
            others.remove(far)
        scores[i] = dist[i, others].sum() if others else 0.0
    # Among scores tied (up to rounding) with the minimum: smallest value
    # lexicographically, then lowest index.
    s_min = float(scores.min())
    tied = np.flatnonzero(scores <= s_min + 1e-9 * abs(s_min) + 1e-12)
    best = int(min(tied, key=lambda i: (tuple(mat[i]), i)))
    return mat[best].copy(), best


def krum(updates, f: int) -> tuple[np.ndarray, int]:
    """Select the update with the smallest summed distance to its survivors.

    For each candidate, the f+2 farthest other updates are removed (self is
    kept) and the score is the summed l2 distance to the remaining ones.
    Returns (selected update, selected index).
    """
    mat = _stack(updates)
    n = mat.shape[0]
    if n < f + 3:
        raise ParameterError(f"krum needs n >= f + 3 (n={n}, f={f})")
    return _krum_core(mat, f)


def bulyan(updates, f: int) -> np.ndarray:
    """Repeatedly move the Krum winner into a selection set of size n - 2f,
    then return its f-trimmed mean."""
    mat = _stack(updates)
    n = mat.shape[0]
    if n < 4 * f + 3:
        raise ParameterError(f"bulyan needs n >= 4f + 3 (n={n}, f={f})")
    pool = list(range(n))
    selected: list[int] = []
    while len(selected) < n - 2 * f:
        _, local = _krum_core(mat[pool], f)
        selected.append(pool.pop(local))
    return trimmed_mean([mat[i] for i in selected], f)


def mean_dp(updates, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Mean plus iid Gaussian noise of standard deviation sigma per coordinate."""
    if sigma < 0:
        raise ParameterError("sigma must be nonnegative")
    out = mean_aggregate(updates)
    if sigma > 0:
        out = out + rng.normal(scale=sigma, size=out.shape[0])
    return out


def aggregate(spec: AggregatorSpec, updates, rng: np.random.Generator | None = None) -> np.ndarray:
    """Dispatch to the configured rule."""
    if spec.rule == "mean":
        return mean_aggregate(updates)
    if spec.rule == "trimmed_mean":
        return trimmed_mean(updates, spec.f)
    if spec.rule == "coord_median":
        return coord_median(updates)
    if spec.rule == "krum":
        return krum(updates, spec.f)[0]
    if spec.rule == "bulyan":
        return bulyan(updates, spec.f)
    if spec.rule == "mean_dp":
        if rng is None:
            raise ParameterError("mean_dp needs an rng")
        return mean_dp(updates, spec.sigma, rng)
    raise ParameterError(f"unknown aggregation rule {spec.rule!r}")
