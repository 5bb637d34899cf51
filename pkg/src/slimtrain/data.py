"""Datasets: the peaks surface, a multi-output teacher task, and batching."""
from dataclasses import dataclass, field

import numpy as np

from .resnet import features, init_params


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray    # n_in x N
    targets: np.ndarray   # n_target x N
    name: str = ""
    seed: int = 0
    meta: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        Y = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        C = np.atleast_2d(np.asarray(self.targets, dtype=np.float64))
        if Y.shape[1] != C.shape[1]:
            raise ValueError(f"{Y.shape[1]} inputs but {C.shape[1]} targets")
        if not (np.all(np.isfinite(Y)) and np.all(np.isfinite(C))):
            raise ValueError("dataset contains non-finite entries")
        object.__setattr__(self, "inputs", Y)
        object.__setattr__(self, "targets", C)

    def __len__(self):
        return self.inputs.shape[1]

    @property
    def n_in(self):
        return self.inputs.shape[0]

    @property
    def n_target(self):
        return self.targets.shape[0]

    def subset(self, idx, name=None):
        idx = np.asarray(idx)
        return Dataset(self.inputs[:, idx], self.targets[:, idx],
                       name or self.name, self.seed, self.meta)

    def to_csv(self, path):
        header = ",".join([f"x{i + 1}" for i in range(self.n_in)]
                          + [f"c{i + 1}" for i in range(self.n_target)])
        table = np.vstack([self.inputs, self.targets]).T
        np.savetxt(path, table, delimiter=",", header=header, comments="", fmt="%.17g")


def peaks(x, y):
    """The classic peaks surface, a sum of three Gaussian bumps."""
    return (3.0 * (1.0 - x) ** 2 * np.exp(-x ** 2 - (y + 1.0) ** 2)
            - 10.0 * (x / 5.0 - x ** 3 - y ** 5) * np.exp(-x ** 2 - y ** 2)
            - np.exp(-(x + 1.0) ** 2 - y ** 2) / 3.0)


def peaks_grid(n, domain=(-3.0, 3.0)):
    """``n x n`` lattice over the square, x varying fastest."""
    t = np.linspace(domain[0], domain[1], n)
    X, Yg = np.meshgrid(t, t)
    return np.vstack([X.ravel(), Yg.ravel()])


def make_peaks_dataset(N, domain=(-3.0, 3.0), sampling="uniform", seed=0):
    if N < 1:
        raise ValueError("N must be >= 1")
    if sampling == "uniform":
        rng = np.random.default_rng(seed)
        Y = rng.uniform(domain[0], domain[1], size=(2, N))
    elif sampling == "grid":
        n = int(round(np.sqrt(N)))
        if n * n != N:
            raise ValueError(f"grid sampling needs a perfect square, got N={N}")
        Y = peaks_grid(n, domain)
    else:
        raise ValueError(f"unknown sampling mode {sampling!r}")
    return Dataset(Y, peaks(Y[0], Y[1])[None, :], "peaks", seed)


def teacher_model(n_in, n_target, width, seed, depth=8, final_time=4.0):
    """Frozen random ResNet plus a random readout ``(theta, W)``."""
    ss = np.random.SeedSequence(seed)
    net_seed, readout_seed = ss.spawn(2)
    theta = init_params(width, depth, n_in, final_time, net_seed)
    rng = np.random.default_rng(readout_seed)
    W = rng.standard_normal((n_target, width + 1)) / np.sqrt(width + 1)
    return theta, W


def make_teacher_dataset(n_in, n_target, N, teacher_width, noise_std=0.0, seed=0,
                         depth=8, final_time=4.0):
    """Targets from a frozen teacher network; inputs standardized per feature."""
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(3)[2])
    Y = rng.standard_normal((n_in, N))
    Y = (Y - Y.mean(axis=1, keepdims=True)) / Y.std(axis=1, keepdims=True)
    theta, W = teacher_model(n_in, n_target, teacher_width, seed, depth, final_time)
    C = W @ features(theta, Y)
    if noise_std:
        C = C + noise_std * rng.standard_normal(C.shape)
    return Dataset(Y, C, "teacher", seed, {"theta": theta, "W": W})


def shuffle_partition(N, batch_size, epoch_seed):
    """Seeded permutation cut into ``N // batch_size`` full batches."""
    if batch_size < 1 or N < batch_size:
        raise ValueError(f"need 1 <= batch_size <= N, got batch_size={batch_size}, N={N}")
    perm = np.random.default_rng(epoch_seed).permutation(N)
    n_batches = N // batch_size
    return [perm[i * batch_size:(i + 1) * batch_size] for i in range(n_batches)]


def split_holdout(dataset, fraction, seed):
    """Seeded ``(train, validation)`` split with ``round(fraction * N)`` held out."""
    n = len(dataset)
    n_val = int(round(fraction * n))
    perm = np.random.default_rng(seed).permutation(n)
    return (dataset.subset(np.sort(perm[n_val:]), dataset.name),
            dataset.subset(np.sort(perm[:n_val]), dataset.name + "-val"))
