"""First-order updates for the nonlinear weights and the coupled ADAM baseline."""
from dataclasses import dataclass

import numpy as np


def sgd_direction(grad):
    return -np.asarray(grad, dtype=np.float64)


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, n, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(np.zeros(n), np.zeros(n), 0, beta1, beta2, eps)


def adam_step(state, theta, grad, lr):
    """One bias-corrected ADAM step; returns ``(theta_new, state_new)``."""
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr!r}")
    g = np.asarray(grad, dtype=np.float64)
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * (g * g)
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    theta_new = np.asarray(theta, dtype=np.float64) - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return theta_new, AdamState(m, v, t, state.beta1, state.beta2, state.eps)


def linear_grad(W, Z, C, lam):
    """``(1/n)(W Z - C) Z^T + lam W``, the W-gradient of the batch objective."""
    n = Z.shape[1]
    return (W @ Z - C) @ Z.T / n + lam * W


def coupled_baseline_step(theta, W, grad_theta, grad_W, state, lr):
    """Joint ADAM step on ``[theta; vec(W)]``; returns ``(theta, W, state)``."""
    W = np.asarray(W, dtype=np.float64)
    x = np.concatenate([theta, W.reshape(-1, order="F")])
    g = np.concatenate([grad_theta, np.asarray(grad_W).reshape(-1, order="F")])
    x_new, state = adam_step(state, x, g, lr)
    n = theta.size
    return x_new[:n], x_new[n:].reshape(W.shape, order="F"), state
