"""tanh ResNet feature extractor with a forward tape and exact backprop.

    u_0     = tanh(K_in y + b_in)
    u_{j+1} = u_j + h tanh(K_j u_j + b_j),   j = 0..d-1

Samples are stored column-wise, so a batch of inputs is ``n_in x n``.
"""
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ResNetParams:
    K_in: np.ndarray           # w x n_in
    b_in: np.ndarray           # w
    layers: tuple              # d pairs (K_j: w x w, b_j: w)
    step_h: float

    @property
    def width(self):
        return self.K_in.shape[0]

    @property
    def n_in(self):
        return self.K_in.shape[1]

    @property
    def depth(self):
        return len(self.layers)

    @property
    def size(self):
        return param_count(self.width, self.depth, self.n_in)

    def flatten(self):
        """Flat array: K_in row-major, b_in, then K_j row-major and b_j per layer."""
        parts = [self.K_in.ravel(), self.b_in]
        for K, b in self.layers:
            parts += [K.ravel(), b]
        return np.concatenate(parts)

    @classmethod
    def from_flat(cls, theta, width, depth, n_in, step_h):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.size != param_count(width, depth, n_in):
            raise ValueError(
                f"expected {param_count(width, depth, n_in)} parameters, got {theta.size}")
        pos = 0

        def take(n, shape=None):
            nonlocal pos
            out = theta[pos:pos + n]
            pos += n
            return out.reshape(shape).copy() if shape else out.copy()

        K_in = take(width * n_in, (width, n_in))
        b_in = take(width)
        layers = tuple((take(width * width, (width, width)), take(width)) for _ in range(depth))
        return cls(K_in, b_in, layers, float(step_h))

    def with_flat(self, theta):
        return ResNetParams.from_flat(theta, self.width, self.depth, self.n_in, self.step_h)

    def check_finite(self):
        if not np.all(np.isfinite(self.flatten())):
            raise ValueError("network parameters contain non-finite values")


def param_count(width, depth, n_in):
    return width * n_in + width + depth * (width * width + width)


def init_params(width, depth, n_in, final_time, seed):
    """Uniform fan-in initialization, zero biases; ``step_h = T / d``."""
    if width < 1 or depth < 0 or n_in < 1:
        raise ValueError("need width >= 1, depth >= 0, n_in >= 1")
    rng = np.random.default_rng(seed)
    step_h = final_time / depth if depth > 0 else float(final_time)

    def uniform(rows, fan_in):
        bound = np.sqrt(1.0 / fan_in)
        return rng.uniform(-bound, bound, size=(rows, fan_in))

    K_in = uniform(width, n_in)
    layers = tuple((uniform(width, width), np.zeros(width)) for _ in range(depth))
    return ResNetParams(K_in, np.zeros(width), layers, float(step_h))


@dataclass(frozen=True)
class ForwardTape:
    """States ``u_0..u_d`` and the layer activations needed for backprop."""

    inputs: np.ndarray          # n_in x n
    states: tuple               # d + 1 arrays, w x n
    activations: tuple          # d arrays tanh(K_j u_j + b_j), w x n

    @property
    def n_layers(self):
        return len(self.states)

    @property
    def batch(self):
        return self.inputs.shape[1]


def resnet_forward(theta, Y):
    """Propagate ``Y`` (n_in x n); returns ``(u_d, tape)``."""
    theta.check_finite()
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2 or Y.shape[0] != theta.n_in:
        raise ValueError(f"inputs must be {theta.n_in} x n, got {Y.shape}")
    if not np.all(np.isfinite(Y)):
        raise ValueError("inputs contain non-finite values")
    u = np.tanh(theta.K_in @ Y + theta.b_in[:, None])
    states = [u]
    acts = []
    h = theta.step_h
    for K, b in theta.layers:
        a = np.tanh(K @ u + b[:, None])
        acts.append(a)
        u = u + h * a
        states.append(u)
    return u, ForwardTape(Y, tuple(states), tuple(acts))


def features(theta, Y):
    """Bias-augmented features ``[F(y, theta); 1]`` for every column of ``Y``."""
    U, _ = resnet_forward(theta, Y)
    return np.vstack([U, np.ones((1, U.shape[1]))])


def backprop(theta, tape, G):
    """Vector-Jacobian product: flat gradient of ``sum(G * u_d)`` w.r.t. theta."""
    h = theta.step_h
    grads = []
    for j in range(theta.depth - 1, -1, -1):
        K, _ = theta.layers[j]
        a = tape.activations[j]
        dA = h * G * (1.0 - a * a)
        grads.append((dA @ tape.states[j].T, dA.sum(axis=1)))
        G = G + K.T @ dA
    u0 = tape.states[0]
    dA0 = G * (1.0 - u0 * u0)
    parts = [(dA0 @ tape.inputs.T).ravel(), dA0.sum(axis=1)]
    for dK, db in reversed(grads):
        parts += [dK.ravel(), db]
    return np.concatenate(parts)


def grad_theta(theta, tape, W, targets, alpha, reg_operator="identity"):
    """Gradient of the mini-batch objective w.r.t. the network weights.

    ``(1/n) sum_i J_i^T W_F^T (W [F_i; 1] - c_i) + alpha * theta`` where
    ``W_F`` drops the bias column of ``W``. The regularizer operator is the
    identity and covers the biases as well.
    """
    if reg_operator != "identity":
        raise ValueError(f"unsupported regularization operator {reg_operator!r}")
    W = getattr(W, "W", W)
    targets = getattr(targets, "targets", targets)
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    C = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if tape.n_layers != theta.depth + 1 or tape.states[0].shape[0] != theta.width:
        raise ValueError("tape does not match the network parameters")
    if W.shape[1] != theta.width + 1:
        raise ValueError(f"W must have {theta.width + 1} columns, got {W.shape[1]}")
    if C.shape[1] != tape.batch:
        raise ValueError("targets do not match the taped batch")
    U = tape.states[-1]
    n = tape.batch
    R = W[:, :-1] @ U + W[:, -1:] - C
    g = backprop(theta, tape, W[:, :-1].T @ R) / n
    if alpha:
        g = g + alpha * theta.flatten()
    return g
