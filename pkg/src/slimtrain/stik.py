"""Sampled (limited-memory) Tikhonov iterations for the final linear layer.

The vectorized weights ``w = vec(W)`` stack the columns of ``W`` and each
mini-batch contributes ``A_k = Z_k^T kron I``.  Because of that Kronecker
structure every row of ``W`` solves an independent least-squares problem
with the same coefficient matrix, so the slimTik step stacks the
transposed feature blocks once, factors them once and solves all rows
together.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from .ridge_core import factorize, ridge_solve, shifted_inverse_apply


@dataclass(frozen=True)
class FeatureBatch:
    """Bias-augmented features ``Z`` (n_feat x batch) with their targets."""

    features: np.ndarray
    targets: np.ndarray
    theta_stamp: int = 0

    def __post_init__(self):
        Z = np.asarray(self.features, dtype=np.float64)
        C = np.asarray(self.targets, dtype=np.float64)
        if C.ndim == 1:
            C = C[None, :]
        if Z.ndim != 2 or C.ndim != 2:
            raise ValueError("features and targets must be 2-D")
        if Z.shape[1] != C.shape[1]:
            raise ValueError(
                f"features have {Z.shape[1]} columns but targets have {C.shape[1]}")
        if not np.all(Z[-1] == 1.0):
            raise ValueError("last feature row must be the constant-1 bias row")
        object.__setattr__(self, "features", Z)
        object.__setattr__(self, "targets", C)

    @classmethod
    def from_raw(cls, raw_features, targets, theta_stamp=0):
        """Append the bias row to raw features ``F`` (n_out x batch)."""
        F = np.asarray(raw_features, dtype=np.float64)
        Z = np.vstack([F, np.ones((1, F.shape[1]))])
        return cls(Z, targets, theta_stamp)

    @property
    def n_feat(self):
        return self.features.shape[0]

    @property
    def n_target(self):
        return self.targets.shape[0]

    @property
    def size(self):
        return self.features.shape[1]


@dataclass(frozen=True)
class MemoryBuffer:
    """The last ``capacity`` feature blocks, oldest first."""

    capacity: int
    blocks: tuple = ()

    def __post_init__(self):
        if self.capacity < 0:
            raise ValueError("memory depth must be >= 0")
        if len(self.blocks) > self.capacity:
            raise ValueError("more blocks than capacity")

    def __len__(self):
        return len(self.blocks)


def push_memory(memory, batch):
    """Append ``batch``; evict the oldest block once capacity is exceeded."""
    if memory.blocks and memory.blocks[-1].n_feat != batch.n_feat:
        raise ValueError(
            f"feature width {batch.n_feat} does not match stored width "
            f"{memory.blocks[-1].n_feat}")
    if memory.capacity == 0:
        return memory
    blocks = memory.blocks + (batch,)
    if len(blocks) > memory.capacity:
        blocks = blocks[len(blocks) - memory.capacity:]
    return MemoryBuffer(memory.capacity, blocks)


@dataclass
class RegHistory:
    """Accepted regularization increments and their running sum."""

    params: list = field(default_factory=list)
    running_sum: float = 0.0

    def feasible(self, lam):
        return np.isfinite(lam) and lam + self.running_sum > 0

    def accept(self, lam):
        lam = float(lam)
        if not self.feasible(lam):
            raise ValueError(
                f"candidate {lam!r} violates lam + running_sum > 0 "
                f"(running_sum={self.running_sum!r})")
        self.params.append(lam)
        self.running_sum = math.fsum(self.params)
        return self

    def __len__(self):
        return len(self.params)


@dataclass(frozen=True)
class LinearWeights:
    """Final-layer matrix ``W`` (n_target x n_feat)."""

    W: np.ndarray

    def __post_init__(self):
        W = np.asarray(self.W, dtype=np.float64)
        if W.ndim == 1:
            W = W[None, :]
        object.__setattr__(self, "W", W)

    def vec(self):
        return self.W.reshape(-1, order="F")

    @classmethod
    def from_vec(cls, w, n_target):
        w = np.asarray(w, dtype=np.float64)
        return cls(w.reshape(n_target, -1, order="F"))

    @classmethod
    def zeros(cls, n_target, n_feat):
        return cls(np.zeros((n_target, n_feat)))

    @property
    def shape(self):
        return self.W.shape


def _as_W(W):
    return W.W if isinstance(W, LinearWeights) else np.atleast_2d(np.asarray(W, dtype=np.float64))


def stacked_features(memory, current):
    """``S = [Z_{k-r}^T; ...; Z_{k-1}^T; Z_k^T]``."""
    widths = {b.n_feat for b in memory.blocks} | {current.n_feat}
    if len(widths) != 1:
        raise ValueError(f"inconsistent feature widths across blocks: {sorted(widths)}")
    return np.vstack([b.features.T for b in memory.blocks] + [current.features.T])


def slimtik_step(W_prev, memory, current, hist, lam, factors=None):
    """One slimTik update of the linear weights.

    Solves, for every row ``x`` of ``W`` simultaneously,

        min ||S x - [Z_mem^T x_prev; c]||^2 + ||sqrt(s) x - (sigma/sqrt(s)) x_prev||^2

    with ``sigma`` the running sum of past increments and
    ``s = lam + sigma``.  ``factors`` may carry a precomputed
    factorization of ``stacked_features(memory, current)``.
    """
    sigma = hist.running_sum
    shift = lam + sigma
    if not shift > 0:
        raise ValueError(f"lam + running_sum must be > 0, got {shift!r}")
    Wp = _as_W(W_prev)
    if Wp.shape != (current.n_target, current.n_feat):
        raise ValueError(
            f"W_prev has shape {Wp.shape}, expected {(current.n_target, current.n_feat)}")
    if factors is None:
        factors = factorize(stacked_features(memory, current))
    elif factors.cols != current.n_feat:
        raise ValueError("factors do not match the feature width")

    rhs = np.vstack([b.features.T @ Wp.T for b in memory.blocks] + [current.targets.T])
    X = ridge_solve(factors, rhs, shift)
    if sigma != 0.0:
        X = X + sigma * shifted_inverse_apply(factors, Wp.T, shift)
    return LinearWeights(X.T)


def kron_operator(batch):
    """Dense ``A = Z^T kron I_{n_target}`` acting on ``vec(W)``."""
    return np.kron(batch.features.T, np.eye(batch.n_target))


def stik_update_form(w_prev, all_blocks, hist, lam):
    """Full-memory sTik iterate written as ``w_prev - B_k g_k``.

    A dense reference implementation over the explicit Kronecker operators;
    ``all_blocks`` holds every batch from iteration 1 through k.
    """
    sigma = hist.running_sum
    shift = lam + sigma
    if not shift > 0:
        raise ValueError(f"lam + running_sum must be > 0, got {shift!r}")
    if not all_blocks:
        raise ValueError("need at least the current block")
    widths = {b.n_feat for b in all_blocks}
    if len(widths) != 1:
        raise ValueError(f"inconsistent feature widths across blocks: {sorted(widths)}")
    w_prev = np.asarray(w_prev, dtype=np.float64)
    current = all_blocks[-1]
    A_k = kron_operator(current)
    b_k = current.targets.reshape(-1, order="F")
    g = A_k.T @ (A_k @ w_prev - b_k) + lam * w_prev
    H = shift * np.eye(w_prev.size)
    for blk in all_blocks:
        A = kron_operator(blk)
        H += A.T @ A
    return w_prev - np.linalg.solve(H, g)
