"""Generative model: mixture environments, problem instances, sampling.

Data is drawn from a label-balanced Gaussian mixture in ``R^d``.  A point
with label ``y`` in an environment with spurious coefficient ``theta`` has
mean ``y * (mu_c + theta * mu_s)`` and isotropic noise of scale ``sigma``.
The core direction ``mu_c`` and the spurious direction ``mu_s`` are
orthogonal and shared across environments; only ``theta`` differs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import TwoEnvError

ORTHO_RTOL = 1e-9


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class EnvironmentSpec:
    """One mixture distribution: means, noise scale, spurious coefficient."""

    mu_c: np.ndarray
    mu_s: np.ndarray
    sigma: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "mu_c", _freeze(self.mu_c))
        object.__setattr__(self, "mu_s", _freeze(self.mu_s))
        if self.mu_c.ndim != 1 or self.mu_s.ndim != 1 or self.mu_c.shape != self.mu_s.shape:
            raise TwoEnvError("mu_c and mu_s must be 1-d vectors of equal length")
        if self.sigma <= 0:
            raise TwoEnvError(f"sigma must be positive, got {self.sigma}")
        if not -1.0 <= self.theta <= 1.0:
            raise TwoEnvError(f"theta must lie in [-1, 1], got {self.theta}")
        r_c = float(np.linalg.norm(self.mu_c))
        r_s = float(np.linalg.norm(self.mu_s))
        if abs(float(self.mu_c @ self.mu_s)) > ORTHO_RTOL * r_c * r_s:
            raise TwoEnvError("mu_c and mu_s must be orthogonal")

    @property
    def d(self) -> int:
        return self.mu_c.shape[0]


@dataclass(frozen=True)
class ProblemInstance:
    """A sampled learning problem: two environments sharing everything but theta."""

    mu_c: np.ndarray
    mu_s: np.ndarray
    theta_1: float
    theta_2: float
    n_1: int
    n_2: int
    sigma: float
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "mu_c", _freeze(self.mu_c))
        object.__setattr__(self, "mu_s", _freeze(self.mu_s))
        if self.n_1 <= 0 or self.n_2 <= 0:
            raise TwoEnvError("sample sizes must be positive")
        if np.linalg.norm(self.mu_c) <= 0 or np.linalg.norm(self.mu_s) <= 0:
            raise TwoEnvError("mean directions must be nonzero")
        # validates orthogonality, sigma and the theta range for both environments
        self.environment(1)
        self.environment(2)

    @property
    def d(self) -> int:
        return self.mu_c.shape[0]

    @property
    def n(self) -> int:
        return self.n_1 + self.n_2

    @property
    def r_c(self) -> float:
        return float(np.linalg.norm(self.mu_c))

    @property
    def r_s(self) -> float:
        return float(np.linalg.norm(self.mu_s))

    def environment(self, env: int) -> EnvironmentSpec:
        theta = {1: self.theta_1, 2: self.theta_2}[env]
        return EnvironmentSpec(self.mu_c, self.mu_s, self.sigma, theta)


@dataclass(frozen=True)
class LabeledDataset:
    """Rows ``X`` with labels in {-1,+1} and environment tags in {1,2}."""

    X: np.ndarray
    y: np.ndarray
    env: np.ndarray

    def __post_init__(self):
        X = _freeze(self.X)
        y = np.asarray(self.y, dtype=np.int64)
        env = np.asarray(self.env, dtype=np.int64)
        y.setflags(write=False)
        env.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "env", env)
        if X.ndim != 2:
            raise TwoEnvError("X must be a 2-d matrix")
        if X.shape[0] != y.shape[0] or X.shape[0] != env.shape[0]:
            raise TwoEnvError("X, y and env must have matching row counts")
        if not np.all(np.isin(y, (-1, 1))):
            raise TwoEnvError("labels must be -1 or +1")
        if not np.all(np.isin(env, (1, 2))):
            raise TwoEnvError("environment tags must be 1 or 2")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def signed(self) -> np.ndarray:
        """Label-signed sample matrix: row i is ``y_i * x_i``."""
        return self.y[:, None] * self.X

    def restrict(self, mask: np.ndarray) -> "LabeledDataset":
        return LabeledDataset(self.X[mask], self.y[mask], self.env[mask])

    def by_env(self, env: int) -> "LabeledDataset":
        return self.restrict(self.env == env)


def pool(*parts: LabeledDataset) -> LabeledDataset:
    """Concatenate datasets, preserving row order within each part."""
    return LabeledDataset(
        np.concatenate([p.X for p in parts]),
        np.concatenate([p.y for p in parts]),
        np.concatenate([p.env for p in parts]),
    )


@dataclass(frozen=True)
class LinearModel:
    """Homogeneous linear classifier ``x -> sign(<w, x>)``; no intercept.

    Derived scalars are computed on first use and cached; the weight
    vector itself is immutable.
    """

    w: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "w", _freeze(self.w))
        if self.w.ndim != 1:
            raise TwoEnvError("w must be a 1-d vector")
        if not np.all(np.isfinite(self.w)):
            raise TwoEnvError("w must be finite")
        if self.norm == 0.0:
            raise TwoEnvError("zero-norm model rejected")

    @property
    def d(self) -> int:
        return self.w.shape[0]

    @cached_property
    def norm(self) -> float:
        return float(np.linalg.norm(self.w))

    def scores(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X) @ self.w

    def predict(self, X: np.ndarray) -> np.ndarray:
        s = self.scores(X)
        out = np.where(s >= 0, 1, -1)
        return out.astype(np.int64)


def sample_orthogonal_means(
    d: int, r_c: float, r_s: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Draw a spherically uniform core direction and an orthogonal spurious one.

    The first vector is a normalized standard Gaussian draw (uniform on the
    sphere); the second is a fresh Gaussian draw with its projection on the
    first removed, then normalized, which makes it uniform on the sphere of
    the orthogonal complement.
    """
    if d < 2:
        raise TwoEnvError("need d >= 2 to place two orthogonal directions")
    if r_c <= 0 or r_s <= 0:
        raise TwoEnvError("radii must be positive")
    g1 = rng.standard_normal(d)
    u1 = g1 / np.linalg.norm(g1)
    g2 = rng.standard_normal(d)
    v = g2 - (g2 @ u1) * u1
    v -= (v @ u1) * u1  # second pass removes the round-off residue
    u2 = v / np.linalg.norm(v)
    return r_c * u1, r_s * u2


def sample_environment(
    spec: EnvironmentSpec, n: int, rng: np.random.Generator, env_tag: int
) -> LabeledDataset:
    if n <= 0:
        raise TwoEnvError("need at least one sample")
    y = np.where(rng.random(n) < 0.5, -1, 1).astype(np.int64)
    mean = spec.mu_c + spec.theta * spec.mu_s
    X = rng.standard_normal((n, spec.d))
    X *= spec.sigma
    X += y[:, None] * mean[None, :]
    return LabeledDataset(X, y, np.full(n, env_tag, dtype=np.int64))


def sample_dataset(instance: ProblemInstance, rng: np.random.Generator) -> LabeledDataset:
    """Sample the pooled dataset: env-1 rows first, env-2 rows after.

    Draw order is fixed (labels then noise, environment 1 then 2), so the
    output is a pure function of ``(instance, rng state)``.
    """
    s1 = sample_environment(instance.environment(1), instance.n_1, rng, env_tag=1)
    s2 = sample_environment(instance.environment(2), instance.n_2, rng, env_tag=2)
    return pool(s1, s2)
