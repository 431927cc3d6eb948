"""Mean estimators and the two-stage invariant learning rule.

Stage 1 fits one signed-sample-mean classifier per environment on half of
that environment's data.  Stage 2 combines the two stage-1 classifiers
with a 2-vector ``v``, constrained so the combined score has equal means
over positive-label rows of the two held-out halves.  That constraint is
a homogeneous linear equation ``a_1 v_1 + a_2 v_2 = 0``, whose solution
ray meets the sup-norm unit sphere in exactly two antipodal points; the
one with the higher held-out score wins.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import rng as rngmod
from .errors import DegenerateConstraintError, DegenerateLabelsError, TwoEnvError
from .model import LabeledDataset, LinearModel, pool

COEFF_FLOOR = 1e-15


def mean_estimator(data: LabeledDataset) -> LinearModel:
    """Signed sample mean ``w = (1/N) sum_i y_i x_i``."""
    if data.n == 0:
        raise TwoEnvError("empty dataset")
    return LinearModel(data.signed().mean(axis=0))


def per_env_mean(data: LabeledDataset, env: int) -> LinearModel:
    """Signed sample mean over the rows tagged with ``env``."""
    mask = data.env == env
    if not mask.any():
        raise TwoEnvError(f"no rows tagged with environment {env}")
    return LinearModel((data.y[mask, None] * data.X[mask]).mean(axis=0))


@dataclass(frozen=True)
class TwoPhaseDiagnostics:
    """Everything stage 2 looked at, for inspection and export."""

    w_1: np.ndarray
    w_2: np.ndarray
    constraint_coeffs: tuple[float, float]
    v_pos: tuple[float, float]
    v_neg: tuple[float, float]
    chosen: str  # "pos" | "neg" | "vrex"
    scores: tuple[float, float]  # (score of v_pos, score of v_neg)
    split_seed: int


def _split_env(
    data: LabeledDataset, frac: float, rng: np.random.Generator
) -> tuple[LabeledDataset, LabeledDataset]:
    n_fit = int(np.floor(data.n * frac))
    perm = rng.permutation(data.n)
    fit_mask = np.zeros(data.n, dtype=bool)
    fit_mask[perm[:n_fit]] = True
    return data.restrict(fit_mask), data.restrict(~fit_mask)


def _positive_mean_score(w: np.ndarray, data: LabeledDataset) -> float:
    mask = data.y == 1
    return float((data.X[mask] @ w).mean())


def two_phase_learn(
    s_1: LabeledDataset,
    s_2: LabeledDataset,
    rng: np.random.Generator,
    train_fraction: float = 0.5,
    stage2: str = "eopp",
    stage2_config: Optional["TrainConfig"] = None,  # noqa: F821 (forward ref)
) -> tuple[LinearModel, TwoPhaseDiagnostics]:
    """Two-stage invariant learning on a pair of per-environment datasets.

    ``stage2`` selects how the 2-d combination is learned: ``"eopp"`` is the
    canonical equal-opportunity constrained score maximization; ``"vrex"``
    instead trains the 2-d combination by logistic descent with a
    between-environment risk-variance penalty (an alternative
    post-processing stage; the returned diagnostics still report the
    equal-opportunity quantities).
    """
    if stage2 not in ("eopp", "vrex"):
        raise TwoEnvError(f"unknown stage2 variant {stage2!r}")
    if not 0.0 < train_fraction < 1.0:
        raise TwoEnvError("train_fraction must be strictly between 0 and 1")
    for name, part in (("1", s_1), ("2", s_2)):
        if part.n < 2:
            raise TwoEnvError(f"environment {name} needs at least 2 rows to split")

    split_seed = rngmod.spawn_seed(rng)
    fit_1, fine_1 = _split_env(s_1, train_fraction, rngmod.stream(split_seed, "split", 1))
    fit_2, fine_2 = _split_env(s_2, train_fraction, rngmod.stream(split_seed, "split", 2))
    for name, fine in (("1", fine_1), ("2", fine_2)):
        if not (fine.y == 1).any():
            raise DegenerateLabelsError(
                f"held-out half of environment {name} has no positive-label rows"
            )

    w_1 = (fit_1.y[:, None] * fit_1.X).mean(axis=0)
    w_2 = (fit_2.y[:, None] * fit_2.X).mean(axis=0)

    # Constraint coefficients: between-environment gap of the mean positive
    # score of each stage-1 classifier on the held-out halves.
    a_1 = _positive_mean_score(w_1, fine_1) - _positive_mean_score(w_1, fine_2)
    a_2 = _positive_mean_score(w_2, fine_1) - _positive_mean_score(w_2, fine_2)
    if abs(a_1) < COEFF_FLOOR and abs(a_2) < COEFF_FLOOR:
        raise DegenerateConstraintError(
            f"constraint coefficients ({a_1!r}, {a_2!r}) are both numerically zero"
        )

    # The constraint a_1 v_1 + a_2 v_2 = 0 is solved exactly by the ray
    # through (-a_2, a_1); dividing by the larger coefficient puts the two
    # candidates on the sup-norm unit sphere.
    scale = max(abs(a_1), abs(a_2))
    base = np.array([-a_2, a_1]) / scale
    v_pos = base if (base[0] + base[1] > 0 or (base[0] + base[1] == 0 and base[0] > 0)) else -base
    v_neg = -v_pos

    fine = pool(fine_1, fine_2)
    fine_signed_scores = fine.y * np.column_stack([fine.X @ w_1, fine.X @ w_2]).T
    per_component = fine_signed_scores.sum(axis=1)  # (sum y<w_1,x>, sum y<w_2,x>)
    score_pos = float(v_pos @ per_component)
    score_neg = float(v_neg @ per_component)

    if stage2 == "vrex":
        from .training import TrainConfig, gd_train  # local import avoids a cycle

        features = LabeledDataset(np.column_stack([fine.X @ w_1, fine.X @ w_2]), fine.y, fine.env)
        cfg = stage2_config or TrainConfig(
            penalty_kind="vrex", penalty_weight=100.0, max_iters=2000
        )
        model_v, _ = gd_train(features, cfg)
        v_star = np.asarray(model_v.w)
        chosen = "vrex"
    elif score_pos > score_neg or (score_pos == score_neg and v_pos[0] + v_pos[1] >= 0):
        v_star, chosen = v_pos, "pos"
    else:
        v_star, chosen = v_neg, "neg"

    w = v_star[0] * w_1 + v_star[1] * w_2
    model = LinearModel(
        w, meta={"v": (float(v_star[0]), float(v_star[1])), "stage2": stage2}
    )
    diag = TwoPhaseDiagnostics(
        w_1=w_1,
        w_2=w_2,
        constraint_coeffs=(float(a_1), float(a_2)),
        v_pos=(float(v_pos[0]), float(v_pos[1])),
        v_neg=(float(v_neg[0]), float(v_neg[1])),
        chosen=chosen,
        scores=(score_pos, score_neg),
        split_seed=split_seed,
    )
    return model, diag
