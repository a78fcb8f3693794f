"""The sparsified server pipeline: momentum, error feedback, top-k extraction,
momentum factor masking, the sketch-based (FetchSGD-style) variant, and the
adaptive sparsity tuner.

Two printed orderings of the error-feedback line exist; the toggle
`momentum_into_memory` selects between feeding the raw aggregate into the
memory (default) or feeding the momentum buffer into it. The top-k variant
leaves the learning rate to the caller (apply theta <- theta + lambda(t) *
delta); the sketched variant folds the learning rate into its error-sketch
accumulation and returns an already-scaled delta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .defenses import ClipSpec
from .errors import ParameterError
from .numkit import CountSketch, SparseUpdate, as_vector, sketch, top_k, unsketch_topk


@dataclass(frozen=True)
class SparseFedSpec:
    k: int
    clip: ClipSpec | None = None  # device-level clip, enforced by the round loop
    rho: float = 0.9
    variant: str = "topk"  # "topk" | "fetchsgd"
    momentum_into_memory: bool = False
    sketch_rows: int = 7
    sketch_cols: int = 0  # 0 = ceil(d / (10 * rows)), an engineering default
    sketch_seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ParameterError("k must be >= 1")
        if not 0.0 <= self.rho < 1.0:
            raise ParameterError("momentum must be in [0, 1)")
        if self.variant not in ("topk", "fetchsgd"):
            raise ParameterError(f"unknown variant {self.variant!r}")

    def cols_for(self, d: int) -> int:
        if self.sketch_cols > 0:
            return self.sketch_cols
        return max(1, math.ceil(d / (10 * self.sketch_rows)))


@dataclass(frozen=True)
class RoundState:
    """Server-side persistent state: error-feedback memory W, momentum buffer R,
    round index t, and (for the sketched variant) the momentum/error sketches."""

    W: np.ndarray
    R: np.ndarray
    t: int = 0
    sketches: tuple[CountSketch, CountSketch] | None = field(default=None)

    @property
    def d(self) -> int:
        return self.W.shape[0]


def init_state(d: int, spec: SparseFedSpec) -> RoundState:
    W = np.zeros(d)
    R = np.zeros(d)
    if spec.variant == "fetchsgd":
        cols = spec.cols_for(d)
        zero = CountSketch(spec.sketch_rows, cols, spec.sketch_seed)
        return RoundState(W, R, 0, (zero, zero))
    return RoundState(W, R, 0)


def sparsefed_step(state: RoundState, u_t, spec: SparseFedSpec) -> tuple[SparseUpdate, RoundState]:
    """One server round of the top-k pipeline.

    R <- rho*R + u; W <- W + u (or W + R when momentum_into_memory); extract
    delta = top_k(W); zero the extracted coordinates of W exactly; subtract
    delta from R on those coordinates. The caller applies the model update.
    """
    u = as_vector(u_t, d=state.d)
    if spec.k > state.d:
        raise ParameterError(f"k={spec.k} exceeds dimension {state.d}")
    R = spec.rho * state.R + u
    W = state.W + (R if spec.momentum_into_memory else u)
    delta = top_k(W, spec.k)
    W_next = W.copy()
    W_next[delta.indices] = 0.0
    R_next = R.copy()
    R_next[delta.indices] -= delta.values
    return delta, replace(state, W=W_next, R=R_next, t=state.t + 1)


def fetchsgd_step(state: RoundState, device_sketches, spec: SparseFedSpec,
                  lambda_t: float) -> tuple[SparseUpdate, RoundState]:
    """One server round of the sketched pipeline.

    Averages the device sketches, updates the momentum sketch S_u <- rho*S_u +
    S_avg and the error sketch S_e <- lambda_t*S_u + S_e, unsketches, takes the
    top-k, and subtracts the re-sketched delta from the error sketch. The
    returned delta is already learning-rate scaled; apply theta <- theta +
    delta. The momentum sketch is deliberately not masked.
    """
    if state.sketches is None:
        raise ParameterError("state was not initialized for the fetchsgd variant")
    s_u, s_e = state.sketches
    if not device_sketches:
        raise ParameterError("no device sketches")
    for s in device_sketches:
        if (s.rows, s.cols, s.seed) != (s_u.rows, s_u.cols, s_u.seed):
            raise ParameterError("device sketch shape/seed mismatch")
    acc = np.zeros_like(s_u.table)
    for s in device_sketches:
        acc += s.table
    s_avg = CountSketch(s_u.rows, s_u.cols, s_u.seed, acc / len(device_sketches))
    s_u = spec.rho * s_u + s_avg
    s_e = lambda_t * s_u + s_e
    delta = unsketch_topk(s_e, spec.k, state.d)
    s_e = s_e - sketch(delta.densify(), s_e.rows, s_e.cols, s_e.seed)
    return delta, replace(state, t=state.t + 1, sketches=(s_u, s_e))


def gamma_bound(L: float, d: int, omega: float) -> float:
    """Worst-case l1 deviation of the applied sparse update from the raw
    aggregate, given clip bound L and per-round l1 loss rate omega:
    2 * L * sqrt(d) * omega / (1 - omega)."""
    if not 0.0 <= omega < 1.0:
        raise ParameterError("omega must be in [0, 1)")
    if L < 0 or d < 1:
        raise ParameterError("need L >= 0 and d >= 1")
    return 2.0 * L * math.sqrt(d) * omega / (1.0 - omega)


def memory_bound(L: float, d: int, omega: float) -> float:
    """Bound on ||W||_1 maintained by the pipeline under loss rate omega."""
    if not 0.0 <= omega < 1.0:
        raise ParameterError("omega must be in [0, 1)")
    return L * math.sqrt(d) * omega / (1.0 - omega)


@dataclass(frozen=True)
class KSelection:
    k: int
    loss_fraction: float
    attained: bool


def measured_loss_fraction(g: np.ndarray, k: int) -> float:
    """Fraction of l1 mass of g discarded by top-k (0 for a zero vector)."""
    total = float(np.sum(np.abs(g)))
    if total == 0.0:
        return 0.0
    kept = top_k(g, k).l1()
    return (total - kept) / total


def select_k(oracle, data, omega: float, iters_per_epoch: int, n_samples: int,
             batch_size: int, seed: int) -> KSelection:
    """Smallest k on the grid d/r, 2d/r, ... whose average fractional l1 mass
    lost by top-k over n_samples minibatch gradients is <= omega.

    The grid always ends at k = d (where the loss is 0); the `attained` flag
    reports whether the target was met before falling back to d.
    """
    if not 0.0 < omega < 1.0:
        raise ParameterError("omega must be in (0, 1)")
    if iters_per_epoch < 1 or n_samples < 1:
        raise ParameterError("iters_per_epoch and n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    n = len(data)
    grads = []
    for _ in range(n_samples):
        idx = rng.choice(n, size=min(batch_size, n), replace=False)
        grads.append(oracle.gradient(data.subset(idx)))
    d = oracle.d
    step = max(1, math.ceil(d / iters_per_epoch))
    k = step
    while True:
        k = min(k, d)
        loss = sum(measured_loss_fraction(g, k) for g in grads) / n_samples
        if loss <= omega:
            return KSelection(k, loss, True)
        if k == d:
            return KSelection(d, loss, False)
        k += step
