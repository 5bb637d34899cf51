"""Sampled GCV selection of the per-iteration regularization increment."""
import math
from dataclasses import dataclass

import numpy as np

from .stik import _as_W

# denominators closer to zero than this lose the argmin
DENOM_ATOL = 1e-12
TIE_RTOL = 1e-12
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class SgcvConfig:
    grid_lo: float = -12.0
    grid_hi: float = 2.0
    grid_points: int = 25
    refine_iters: int = 20
    # signed grid: candidates lam = 10**g - running_sum, i.e. log-spaced over
    # (-running_sum, inf); the grid then fixes the total shift lam + running_sum.
    # False restricts candidates to lam = 10**g > 0
    signed: bool = True
    # "entries": |T_k| * n_target, the length of the residual vector;
    # "batch": |T_k| alone (identical when n_target = 1)
    sample_count: str = "entries"

    def __post_init__(self):
        if not self.grid_lo < self.grid_hi:
            raise ValueError("grid_lo must be < grid_hi")
        if self.grid_points < 3:
            raise ValueError("grid_points must be >= 3")
        if self.refine_iters < 0:
            raise ValueError("refine_iters must be >= 0")
        if self.sample_count not in ("batch", "entries"):
            raise ValueError(f"unknown sample_count {self.sample_count!r}")

    def exponents(self):
        return np.linspace(self.grid_lo, self.grid_hi, self.grid_points)

    @property
    def cell_width(self):
        """Width of one coarse grid cell in log10 units."""
        return (self.grid_hi - self.grid_lo) / (self.grid_points - 1)


class SgcvProblem:
    """sGCV function of one slimTik iteration as a function of ``lam``.

    Everything that does not depend on ``lam`` is projected onto the right
    singular vectors of the stacked feature matrix once; each evaluation is
    then a handful of length-p vector operations.
    """

    def __init__(self, factors, current, hist, W_prev, sample_count="entries"):
        Wp = _as_W(W_prev)
        Z = current.features
        C = current.targets
        self.sigma = float(hist.running_sum)
        self.n_samples = current.size
        self.n_target = current.n_target
        self.count = self.n_samples * (self.n_target if sample_count == "entries" else 1)

        V = factors.right_vectors
        s2 = factors.singular_values ** 2
        self.V = V
        self.s2 = s2
        Xp = Wp.T                                   # n_feat x n_target
        VtXp = V.T @ Xp
        # S^T rhs = (S^T S - Z Z^T) X_prev + Z C^T
        StR = V @ (s2[:, None] * VtXp) - Z @ (Z.T @ Xp) + Z @ C.T
        # coefficients of 1/(s2 + shift) in V^T X(lam)
        self.coef = V.T @ StR + self.sigma * VtXp   # p x n_target
        ZtV = Z.T @ V                               # batch x p
        self.ZtV = ZtV
        self.Ct = C.T
        self.trace_w = np.einsum("ij,ij->j", ZtV, ZtV)
        if factors.rank_deficient_cols:
            Pc = Xp - V @ VtXp
            self.Pc = Pc
            Zc = Z - V @ ZtV.T
            self.comp_pred = self.sigma * (Z.T @ Pc)  # divided by shift later
            self.comp_trace = float(np.sum(Zc * Zc))
        else:
            self.comp_pred = None
            self.comp_trace = 0.0

    def feasible(self, lam):
        return np.isfinite(lam) and lam + self.sigma > 0

    def weights(self, lam):
        """``W_k(lam)`` implied by the projected quantities."""
        shift = lam + self.sigma
        X = self.V @ (self.coef / (self.s2 + shift)[:, None])
        if self.comp_pred is not None:
            X = X + self.sigma * self.Pc / shift
        return X.T

    def residual_trace(self, lam):
        shift = lam + self.sigma
        d = 1.0 / (self.s2 + shift)
        pred = self.ZtV @ (d[:, None] * self.coef)
        trace = float(self.trace_w @ d)
        if self.comp_pred is not None:
            pred = pred + self.comp_pred / shift
            trace += self.comp_trace / shift
        res = pred - self.Ct
        return float(np.sum(res * res)), self.n_target * trace

    def value(self, lam):
        if not self.feasible(lam):
            raise ValueError(f"lam + running_sum must be > 0, got {lam + self.sigma!r}")
        rss, trace = self.residual_trace(lam)
        denom = self.count - trace
        if abs(denom) <= DENOM_ATOL:
            return math.inf
        return self.count * rss / (denom * denom)


def sgcv_value(lam, stacked_factors, current, hist, W_prev, sample_count="entries"):
    """sGCV function at increment ``lam``.

    ``count * ||W_k(lam) Z_k - C_k||_F^2 / (count - n_target * tr)^2`` where
    ``tr = trace(Z_k^T (S^T S + (lam + running_sum) I)^{-1} Z_k)`` and
    ``count`` is the batch size times ``n_target`` (or the batch size alone).
    """
    return SgcvProblem(stacked_factors, current, hist, W_prev, sample_count).value(lam)


@dataclass(frozen=True)
class SgcvResult:
    lam: float
    value: float
    grid: tuple           # ((lam, value), ...) for every evaluated candidate
    grid_argmin: float
    grid_bounds: tuple

    @property
    def grid_lams(self):
        return np.array([g[0] for g in self.grid])

    @property
    def grid_values(self):
        return np.array([g[1] for g in self.grid])


def _candidates(config, sigma):
    pos = 10.0 ** config.exponents()
    lams = pos - sigma if config.signed else pos
    return lams[lams + sigma > 0]


def _is_tie(a, b):
    if math.isinf(a) or math.isinf(b):
        return a == b
    return abs(a - b) <= TIE_RTOL * max(abs(a), abs(b))


def _pick(lams, vals):
    """Argmin with ties resolved toward the larger ``lam``."""
    best = int(np.argmin(vals))
    vmin = vals[best]
    for i, v in enumerate(vals):
        if (v < vmin or _is_tie(v, vmin)) and lams[i] > lams[best]:
            best = i
    return best


def _golden(f, a, b, iters):
    """Golden-section search on [a, b]; returns the best evaluated (x, f(x))."""
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    best = (c, fc) if fc <= fd else (d, fd)
    for _ in range(iters):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
            if fc < best[1]:
                best = (c, fc)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
            if fd < best[1]:
                best = (d, fd)
    return best


def sgcv_select(config, stacked_factors, current, hist, W_prev, problem=None):
    """Minimize the sGCV function over a log grid plus golden-section refinement.

    Returns ``None`` when no candidate is feasible; the caller decides the
    fallback.
    """
    if problem is None:
        problem = SgcvProblem(stacked_factors, current, hist, W_prev, config.sample_count)
    sigma = problem.sigma
    lams = _candidates(config, sigma)
    if lams.size == 0:
        return None
    vals = np.array([problem.value(lam) for lam in lams])
    i = _pick(lams, vals)
    grid_lam, grid_val = float(lams[i]), float(vals[i])
    lam, val = grid_lam, grid_val

    if config.refine_iters > 0 and np.isfinite(grid_val):
        # refine in log10 of the quantity the grid is uniform in
        offset = sigma if config.signed else 0.0

        def to_lam(t):
            return 10.0 ** t - offset

        def f(t):
            cand = to_lam(t)
            return problem.value(cand) if problem.feasible(cand) else math.inf

        t0 = math.log10(grid_lam + offset)
        lo = max(t0 - config.cell_width, config.grid_lo)
        hi = min(t0 + config.cell_width, config.grid_hi)
        t_best, v_best = _golden(f, lo, hi, config.refine_iters)
        if v_best < grid_val and not _is_tie(v_best, grid_val):
            lam, val = to_lam(t_best), v_best

    grid = tuple(zip(lams.tolist(), vals.tolist()))
    return SgcvResult(lam, val, grid, grid_lam, (float(lams[0]), float(lams[-1])))
