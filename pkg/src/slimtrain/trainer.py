"""slimTrain training loop, the coupled ADAM baseline and the VarPro oracle."""
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import shuffle_partition
from .optimizers import AdamState, adam_step, coupled_baseline_step, linear_grad, sgd_direction
from .resnet import features, grad_theta, init_params, resnet_forward
from .ridge_core import factorize, limit_solve, numerical_rank, ridge_solve
from .sgcv import SgcvConfig, SgcvProblem, sgcv_select
from .stik import (FeatureBatch, LinearWeights, MemoryBuffer, RegHistory, push_memory,
                   slimtik_step, stacked_features)

log = logging.getLogger(__name__)

MODES = ("slimtrain", "coupled_adam", "slimtrain_fixed_lambda")
OPTIMIZERS = ("sgd", "adam")


@dataclass(frozen=True)
class ModelConfig:
    width: int = 8
    depth: int = 8
    final_time: float = 5.0


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 5
    memory_depth: int = 10
    learning_rate: float = 1e-3
    alpha: float = 0.0
    lambda0: float = 1e-3
    epochs: int = 50
    seed: int = 0
    optimizer: str = "adam"
    mode: str = "slimtrain"
    sgcv: SgcvConfig = field(default_factory=SgcvConfig)
    # wall-clock timings make logs non-reproducible, so they are opt-in
    timing: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.memory_depth < 0:
            raise ValueError("memory_depth must be >= 0")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if not self.alpha >= 0:
            raise ValueError("alpha must be >= 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.mode != "coupled_adam" and not self.lambda0 > 0:
            raise ValueError("lambda0 must be > 0 so the first slimTik step is feasible")
        if self.mode == "coupled_adam" and not self.lambda0 >= 0:
            raise ValueError("lambda0 (weight decay on W) must be >= 0")


@dataclass(frozen=True)
class IterationRecord:
    epoch: int
    iteration: int
    lambda_k: Optional[float]
    lambda_sum: Optional[float]
    batch_loss: float
    grad_norm_theta: float
    wallclock_ms: float = 0.0


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float


@dataclass
class TrainResult:
    W: np.ndarray
    theta: object
    records: list
    epochs: list
    best_W: np.ndarray = None
    best_theta: object = None
    best_epoch: int = 0
    history: RegHistory = None
    sgcv: list = field(default_factory=list)


class NumericalFailure(RuntimeError):
    """Raised when the loss turns non-finite; carries the partial result."""

    def __init__(self, message, partial):
        super().__init__(message)
        self.partial = partial


def data_fit(W, theta, Y, C):
    """Mean of ``0.5 ||W [F(y); 1] - c||^2`` over the columns of ``Y``."""
    R = np.asarray(W) @ features(theta, Y) - C
    return 0.5 * float(np.sum(R * R)) / Y.shape[1]


def batch_objective(W, theta, batch, alpha, lam):
    """Mini-batch objective: mean data fit plus both Tikhonov terms."""
    W = getattr(W, "W", W)
    th = theta.flatten()
    return (data_fit(W, theta, batch.inputs, batch.targets)
            + 0.5 * alpha * float(th @ th) + 0.5 * lam * float(np.sum(W * W)))


@dataclass(frozen=True)
class SgcvDiagnostic:
    iteration: int
    lambda_k: float
    grid_argmin: float
    grid_lo: float
    grid_hi: float


def _select_lambda(config, factors, current, hist, W, last_lam):
    """Returns ``(lam, SgcvResult or None)``."""
    if len(hist) == 0 or config.mode == "slimtrain_fixed_lambda":
        return config.lambda0, None
    res = sgcv_select(config.sgcv, factors, current, hist, W)
    if res is None:
        # feasibility floor: the smallest grid shift on top of a negative running sum
        floor = 10.0 ** config.sgcv.grid_lo - min(hist.running_sum, 0.0)
        lam = max(last_lam, floor)
        log.warning("no feasible sGCV candidate at running sum %g; using %g",
                    hist.running_sum, lam)
        return lam, None
    return res.lam, res


def train(config, dataset, validation=None, model=ModelConfig(), theta0=None):
    """Run slimTrain (or the coupled baseline) for ``config.epochs`` epochs."""
    N = len(dataset)
    if N < config.batch_size:
        raise ValueError(f"dataset of size {N} is smaller than the batch size")
    theta = theta0 if theta0 is not None else init_params(
        model.width, model.depth, dataset.n_in, model.final_time, config.seed)
    n_feat = theta.width + 1
    W = np.zeros((dataset.n_target, n_feat))
    memory = MemoryBuffer(config.memory_depth)
    hist = RegHistory()
    slim = config.mode != "coupled_adam"
    n_opt = theta.size + (0 if slim else W.size)
    opt = AdamState.fresh(n_opt)
    lr = config.learning_rate

    result = TrainResult(W, theta, [], [], W.copy(), theta, 0, hist)
    best_val = math.inf
    k = 0
    last_lam = config.lambda0
    for epoch in range(1, config.epochs + 1):
        for idx in shuffle_partition(N, config.batch_size, [config.seed, epoch]):
            k += 1
            t0 = time.perf_counter()
            Yb = dataset.inputs[:, idx]
            Cb = dataset.targets[:, idx]
            U, tape = resnet_forward(theta, Yb)
            current = FeatureBatch.from_raw(U, Cb, theta_stamp=k - 1)
            lam_k = lam_sum = None
            if slim:
                factors = factorize(stacked_features(memory, current))
                lam_k, sel = _select_lambda(config, factors, current, hist, W, last_lam)
                if sel is not None:
                    result.sgcv.append(SgcvDiagnostic(k, sel.lam, sel.grid_argmin,
                                                      *sel.grid_bounds))
                W = slimtik_step(W, memory, current, hist, lam_k, factors=factors).W
                hist.accept(lam_k)
                memory = push_memory(memory, current)
                last_lam, lam_sum = lam_k, hist.running_sum
                g = grad_theta(theta, tape, W, Cb, config.alpha)
                R = W @ current.features - Cb
                if lr > 0:
                    if config.optimizer == "adam":
                        th, opt = adam_step(opt, theta.flatten(), g, lr)
                    else:
                        th = theta.flatten() + lr * sgd_direction(g)
                    theta = theta.with_flat(th)
            else:
                R = W @ current.features - Cb
                g = grad_theta(theta, tape, W, Cb, config.alpha)
                gW = linear_grad(W, current.features, Cb, config.lambda0)
                if lr > 0:
                    if config.optimizer == "adam":
                        th, W, opt = coupled_baseline_step(theta.flatten(), W, g, gW, opt, lr)
                    else:
                        th = theta.flatten() + lr * sgd_direction(g)
                        W = W + lr * sgd_direction(gW)
                    theta = theta.with_flat(th)
                g = np.concatenate([g, gW.ravel()])
            batch_loss = 0.5 * float(np.sum(R * R)) / len(idx)
            rec = IterationRecord(epoch, k, lam_k, lam_sum, batch_loss, float(np.linalg.norm(g)),
                                  (time.perf_counter() - t0) * 1e3 if config.timing else 0.0)
            result.records.append(rec)
            if not (math.isfinite(batch_loss) and np.all(np.isfinite(W))
                    and np.all(np.isfinite(theta.flatten()))):
                result.W, result.theta = W, theta
                raise NumericalFailure(
                    f"non-finite loss or weights at epoch {epoch}, iteration {k}", result)

        train_loss = data_fit(W, theta, dataset.inputs, dataset.targets)
        val_loss = (data_fit(W, theta, validation.inputs, validation.targets)
                    if validation is not None and len(validation) else math.nan)
        result.epochs.append(EpochRecord(epoch, train_loss, val_loss))
        result.W, result.theta = W, theta
        if not math.isfinite(train_loss):
            raise NumericalFailure(f"non-finite training loss at epoch {epoch}", result)
        score = val_loss if math.isfinite(val_loss) else train_loss
        if score < best_val:
            best_val = score
            result.best_W, result.best_theta, result.best_epoch = W.copy(), theta, epoch

    result.W, result.theta = W, theta
    return result


def empirical_optimal_W(theta, dataset, lam, scale="mean"):
    """Closed-form optimal linear weights over a finite dataset.

    With ``scale="mean"`` expectations are sample means, so the system is
    ``W (sum F F^T + N lam I) = sum c F^T``; ``scale="sum"`` uses ``lam``
    unscaled (plain ridge on the stacked data).
    """
    if scale not in ("mean", "sum"):
        raise ValueError(f"unknown scale {scale!r}")
    Z = features(theta, dataset.inputs)
    N = Z.shape[1]
    shift = N * lam if scale == "mean" else lam
    fac = factorize(Z.T)
    if shift > 0:
        X = ridge_solve(fac, dataset.targets.T, shift)
    elif shift == 0:
        if numerical_rank(fac) < Z.shape[0]:
            raise ValueError("feature second-moment matrix is singular and lam = 0")
        X = limit_solve(fac, dataset.targets.T)
    else:
        raise ValueError("lam must be >= 0")
    return LinearWeights(X.T)


@dataclass(frozen=True)
class VarproBias:
    full_rel: float          # ||D_W Phi(W_hat)|| / ||W_hat||
    batch_mean_rel: float    # ||mean_k D_W Phi_k(W_hat) - D_W Phi(W_hat)|| / ||W_hat||
    batch_rel: np.ndarray    # ||D_W Phi_k(W_hat)|| / ||W_hat|| per batch


def varpro_bias_check(theta, dataset, lam, batch_size=5, seed=0):
    """W-gradients at the empirical optimum: zero overall, nonzero per batch."""
    W_hat = empirical_optimal_W(theta, dataset, lam).W
    Z = features(theta, dataset.inputs)
    C = dataset.targets
    scale = np.linalg.norm(W_hat)
    full = linear_grad(W_hat, Z, C, lam)
    batch_grads = [linear_grad(W_hat, Z[:, idx], C[:, idx], lam)
                   for idx in shuffle_partition(len(dataset), batch_size, seed)]
    mean = np.mean(batch_grads, axis=0)
    return VarproBias(
        float(np.linalg.norm(full) / scale),
        float(np.linalg.norm(mean - full) / scale),
        np.array([np.linalg.norm(g) / scale for g in batch_grads]),
    )


def sgcv_problem_for(W_prev, memory, current, hist, sample_count="entries"):
    """Convenience: build the sGCV problem of one iteration from raw blocks."""
    fac = factorize(stacked_features(memory, current))
    return fac, SgcvProblem(fac, current, hist, W_prev, sample_count)
