"""Shared construction helpers for the test suite."""

from __future__ import annotations

import numpy as np

from twoenv.model import LabeledDataset


def random_dataset(
    rng: np.random.Generator, n: int = 12, d: int = 8, balanced_envs: bool = True
) -> LabeledDataset:
    X = rng.standard_normal((n, d))
    y = np.where(rng.random(n) < 0.5, -1, 1)
    if balanced_envs:
        env = np.array([1, 2] * (n // 2) + [1] * (n % 2))
    else:
        env = np.where(rng.random(n) < 0.5, 1, 2)
        env[0], env[1] = 1, 2  # both environments always present
    return LabeledDataset(X, y, env)


def noiseless_pair(mu_c, mu_s, theta_1, theta_2, reps=2):
    """Tiny noise-free per-environment datasets with both labels present."""
    rows_1, ys_1 = [], []
    rows_2, ys_2 = [], []
    for y in (1, -1) * reps:
        rows_1.append(y * (mu_c + theta_1 * mu_s))
        ys_1.append(y)
        rows_2.append(y * (mu_c + theta_2 * mu_s))
        ys_2.append(y)
    d_1 = LabeledDataset(np.array(rows_1), np.array(ys_1), np.ones(len(ys_1), dtype=int))
    d_2 = LabeledDataset(np.array(rows_2), np.array(ys_2), np.full(len(ys_2), 2, dtype=int))
    return d_1, d_2
