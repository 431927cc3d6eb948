"""Margin-constrained convex program, its Lagrangian dual, and event checks.

Everything lives in the N-dimensional span of the label-signed samples
``z_i = y_i x_i``: with Gram matrix ``K = Z Z'`` and weight vector
``u = e_1 + theta_2 e_2``, the primal is

    minimize  u' beta
    s.t.      K beta >= gamma * 1      (margin constraints)
              beta' K beta <= 1        (norm constraint)

and its dual, after eliminating the norm multiplier, is

    g(lambda) = gamma * 1'lambda - sqrt((u - K lambda)' K^{-1} (u - K lambda))

over ``lambda >= 0``.  ``g`` lower-bounds the primal for every admissible
``lambda`` (weak duality); the solver certifies optimality by closing the
gap between a feasible primal point and ``g``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import IllConditionedGramError, InfeasibleMarginError, TwoEnvError
from .model import LabeledDataset
from .training import hard_margin_dual

MIN_EIG = 0.25  # half the spectral floor the concentration regime guarantees


@dataclass(frozen=True)
class GramData:
    """Span-space view of a dataset plus the program parameters."""

    Z: np.ndarray
    gram: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    gamma: float
    theta_2: float

    def __post_init__(self):
        n = self.Z.shape[0]
        if self.gram.shape != (n, n):
            raise TwoEnvError("gram shape does not match Z")
        if not np.allclose(self.gram, self.gram.T, rtol=1e-9, atol=1e-12):
            raise TwoEnvError("gram must be symmetric")
        dev = np.abs(self.gram - self.Z @ self.Z.T).max()
        if dev > 1e-9 * max(1.0, float(np.abs(self.gram).max())):
            raise TwoEnvError("gram disagrees with Z Z'")
        if not np.all((self.e1 + self.e2) == 1):
            raise TwoEnvError("e1 and e2 must partition the rows")

    @property
    def n(self) -> int:
        return self.Z.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return self.e1 + self.theta_2 * self.e2


def gram_from_dataset(data: LabeledDataset, gamma: float, theta_2: float) -> GramData:
    Z = data.signed()
    return GramData(
        Z=Z,
        gram=Z @ Z.T,
        e1=(data.env == 1).astype(np.float64),
        e2=(data.env == 2).astype(np.float64),
        gamma=gamma,
        theta_2=theta_2,
    )


def _check_conditioning(K: np.ndarray, min_eig: float = MIN_EIG) -> np.ndarray:
    evals = np.linalg.eigvalsh(K)
    if evals[0] < min_eig:
        raise IllConditionedGramError(
            f"smallest gram eigenvalue {evals[0]:.3e} below threshold {min_eig}"
        )
    return evals


def dual_value(gd: GramData, lam: np.ndarray) -> float:
    """Evaluate the dual function at an admissible multiplier vector."""
    lam = np.asarray(lam, dtype=np.float64)
    if lam.shape != (gd.n,):
        raise TwoEnvError("lambda has wrong length")
    if np.any(lam < 0):
        raise TwoEnvError("lambda must be nonnegative")
    _check_conditioning(gd.gram)
    resid = gd.weights - gd.gram @ lam
    quad = float(resid @ cho_solve(cho_factor(gd.gram), resid))
    return gd.gamma * float(lam.sum()) - math.sqrt(max(quad, 0.0))


def canonical_lambda(gd: GramData, r_c: float, r_s: float) -> np.ndarray:
    """The analysis' dual point: ``alpha * e1`` with
    ``alpha = 1 / (1 + N_1 (r_c^2 + r_s^2))``."""
    n1 = float(gd.e1.sum())
    alpha = 1.0 / (1.0 + n1 * (r_c**2 + r_s**2))
    return alpha * gd.e1


def closed_form_bound(
    n_1: int, n_2: int, gamma: float, theta_2: float, r_c: float, d: int, t: float
) -> float:
    """Arithmetic lower bound on the weighted span coefficients.

    Exactly
    ``((N1 + [th2]+ N2) g - sqrt(2 N2) N1 rc^2 - sqrt(18 N)(sqrt(N)+t)/sqrt(d)
    - sqrt(8 N2) [-th2]+) / 2``.
    """
    n = n_1 + n_2
    pos = max(theta_2, 0.0)
    neg = max(-theta_2, 0.0)
    return 0.5 * (
        (n_1 + pos * n_2) * gamma
        - math.sqrt(2.0 * n_2) * n_1 * r_c**2
        - math.sqrt(18.0 * n) * (math.sqrt(n) + t) / math.sqrt(d)
        - math.sqrt(8.0 * n_2) * neg
    )


# ---------------------------------------------------------------------------
# Primal solver
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MinWeightedBetaResult:
    optimum: float
    beta: np.ndarray
    dual_lambda: np.ndarray
    dual_value: float
    gap: float
    iterations: int
    exact: bool  # active-set polish closed the gap to round-off


def _kkt_norm_active(K, u, gamma, active, solve_full):
    """Exact KKT solve assuming the norm constraint and margins in ``active``.

    Stationarity gives ``beta = (lambda - K^{-1}u)/nu`` with ``lambda``
    supported on the active set and ``K_AA lambda_A = u_A + nu gamma 1``;
    the norm constraint turns into a scalar quadratic in ``nu``.
    """
    idx = np.flatnonzero(active)
    if idx.size == 0:
        p_full = np.zeros(K.shape[0])
        q_full = np.zeros(K.shape[0])
    else:
        sub = K[np.ix_(idx, idx)]
        try:
            p = np.linalg.solve(sub, u[idx])
            q = gamma * np.linalg.solve(sub, np.ones(idx.size))
        except np.linalg.LinAlgError:
            return []
        p_full = np.zeros(K.shape[0])
        q_full = np.zeros(K.shape[0])
        p_full[idx] = p
        q_full[idx] = q
    qu = solve_full(u)
    P = p_full - qu
    Q = q_full
    a = float(Q @ (K @ Q)) - 1.0
    b = 2.0 * float(P @ (K @ Q))
    c = float(P @ (K @ P))
    roots = []
    if abs(a) < 1e-14:
        if abs(b) > 1e-14:
            roots.append(-c / b)
    else:
        disc = b * b - 4.0 * a * c
        if disc >= 0:
            sq = math.sqrt(disc)
            roots.extend([(-b + sq) / (2 * a), (-b - sq) / (2 * a)])
    out = []
    for nu in roots:
        if nu <= 1e-14:
            continue
        lam = p_full + nu * q_full
        beta = (P + nu * Q) / nu
        out.append((lam, beta, nu))
    return out


def min_weighted_beta(
    gd: GramData, tol: float = 1e-9, max_iters: int = 100_000
) -> MinWeightedBetaResult:
    """Solve the margin-constrained program with a certified duality gap.

    Projected gradient ascent on the concave dual, with a primal
    feasibility repair that mixes toward the hard-margin direction, plus
    periodic exact active-set polishing.  The returned ``beta`` is feasible
    and its objective exceeds the true optimum by at most ``gap``.
    """
    K = gd.gram
    u = gd.weights
    gamma = gd.gamma
    n = gd.n
    _check_conditioning(K)
    cho = cho_factor(K)

    def solve_full(v):
        return cho_solve(cho, v)

    # feasibility: the hard-margin direction achieves the largest margin
    mm_alpha, _ = hard_margin_dual(K, tol=1e-12)
    mm_norm = math.sqrt(float(mm_alpha @ (K @ mm_alpha)))
    beta_feas = mm_alpha / mm_norm
    m_feas = K @ beta_feas
    gamma_max = float(m_feas.min())
    if gamma > gamma_max:
        raise InfeasibleMarginError(
            f"target margin {gamma} exceeds achievable margin {gamma_max:.6g}"
        )

    q_u = solve_full(u)

    # norm-inactive exact case: every multiplier from K^{-1}u admissible
    if np.all(q_u >= -1e-12):
        beta_vertex = gamma * solve_full(np.ones(n))
        if float(beta_vertex @ (K @ beta_vertex)) <= 1.0 + 1e-12:
            lam = np.maximum(q_u, 0.0)
            value = gamma * float(lam.sum())
            return MinWeightedBetaResult(
                optimum=value,
                beta=beta_vertex,
                dual_lambda=lam,
                dual_value=value,
                gap=0.0,
                iterations=0,
                exact=True,
            )

    def dual_at(lam):
        resid = u - K @ lam
        h = float(resid @ solve_full(resid))
        return gamma * float(lam.sum()) - math.sqrt(max(h, 0.0)), resid, h

    def repair(beta_hat):
        m_hat = K @ beta_hat
        viol = gamma - m_hat
        if viol.max() <= 0:
            mix = beta_hat
        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                ratios = np.where(viol > 0, viol / (m_feas - m_hat), 0.0)
            tau = min(1.0, float(ratios.max()))
            mix = (1.0 - tau) * beta_hat + tau * beta_feas
        # renormalize into the ellipsoid if round-off pushed us out
        nrm = math.sqrt(float(mix @ (K @ mix)))
        if nrm > 1.0:
            mix = mix / nrm
            if (K @ mix).min() < gamma - 1e-9:
                mix = beta_feas * min(1.0, gamma / gamma_max + 1e-12)
        return mix, float(u @ mix)

    def try_polish(margins):
        for eps in (1e-9, 1e-6, 1e-4, 1e-2):
            active = margins <= gamma + eps * max(1.0, abs(gamma))
            for lam, beta, nu in _kkt_norm_active(K, u, gamma, active, solve_full):
                m = K @ beta
                lam_ok = lam.min() >= -1e-9 * max(1.0, float(np.abs(lam).max()))
                feas_ok = m.min() >= gamma - 1e-9 * max(1.0, abs(gamma))
                norm = float(beta @ (K @ beta))
                if lam_ok and feas_ok and abs(norm - 1.0) <= 1e-7:
                    value = float(u @ beta)
                    dv = gamma * float(np.maximum(lam, 0.0).sum()) - nu
                    gap = value - dv
                    if abs(gap) <= 1e-7 * max(1.0, abs(value)):
                        return value, beta, np.maximum(lam, 0.0), dv, abs(gap)
        return None

    lam = np.zeros(n)
    g_val, resid, h = dual_at(lam)
    best_dual = (g_val, lam.copy())
    step = 1.0 / max(1.0, float(np.linalg.eigvalsh(K)[-1]))
    beta_best, p_best = repair(beta_feas.copy())
    it = 0
    for it in range(1, max_iters + 1):
        if h <= 1e-28:
            break
        grad = gamma * np.ones(n) + resid / math.sqrt(h)
        accepted = False
        s = step
        for _ in range(60):
            cand = np.maximum(0.0, lam + s * grad)
            g_cand, resid_c, h_c = dual_at(cand)
            if g_cand >= g_val - 1e-18:
                accepted = True
                break
            s *= 0.5
        if not accepted:
            break
        lam, g_val, resid, h = cand, g_cand, resid_c, h_c
        step = min(s * 1.5, 1e6)
        if g_val > best_dual[0]:
            best_dual = (g_val, lam.copy())

        if it % 20 == 0 or it == max_iters:
            if h > 1e-28:
                beta_hat = (lam - q_u) / math.sqrt(h)
                beta_try, p_try = repair(beta_hat)
                if p_try < p_best:
                    beta_best, p_best = beta_try, p_try
                gap = p_best - best_dual[0]
                if gap <= tol * max(1.0, abs(p_best)):
                    return MinWeightedBetaResult(
                        p_best, beta_best, best_dual[1], best_dual[0], gap, it, False
                    )
                polished = try_polish(K @ beta_hat)
                if polished is not None:
                    value, beta, plam, dv, gap = polished
                    return MinWeightedBetaResult(value, beta, plam, dv, gap, it, True)

    polished = try_polish(K @ beta_best)
    if polished is not None:
        value, beta, plam, dv, gap = polished
        return MinWeightedBetaResult(value, beta, plam, dv, gap, it, True)
    gap = p_best - best_dual[0]
    if gap <= math.sqrt(tol) * max(1.0, abs(p_best)):
        return MinWeightedBetaResult(p_best, beta_best, best_dual[1], best_dual[0], gap, it, False)
    raise TwoEnvError(f"solver failed to certify a solution (gap {gap:.3e})")


# ---------------------------------------------------------------------------
# Concentration events and span decomposition
# ---------------------------------------------------------------------------


def expected_gram(
    n_1: int, n_2: int, theta_1: float, theta_2: float, r_c: float, r_s: float,
    sigma: float, d: int,
) -> np.ndarray:
    """``E[Z Z'] = sigma^2 d I + r_c^2 11' + r_s^2 vv'`` with v the theta profile."""
    n = n_1 + n_2
    v = np.concatenate([np.full(n_1, theta_1), np.full(n_2, theta_2)])
    ones = np.ones(n)
    return sigma**2 * d * np.eye(n) + r_c**2 * np.outer(ones, ones) + r_s**2 * np.outer(v, v)


@dataclass(frozen=True)
class SpectralEventReport:
    """Measured values and verdicts for the high-probability events.

    All noise-matrix quantities are normalized by ``sigma * sqrt(d)`` so
    the stated bounds apply for any noise scale; at ``sigma^2 = 1/d`` the
    normalization is the identity.
    """

    t: float
    sval_min: float
    sval_max: float
    sval_lo_bound: float
    sval_hi_bound: float
    sval_ok: bool
    g_mu_c: float
    g_mu_c_bound: float
    g_mu_c_ok: bool
    g_mu_s: float
    g_mu_s_bound: float
    g_mu_s_ok: bool
    gram_dev: float
    gram_dev_bound: float
    gram_dev_ok: bool
    gram_eig_min: float
    gram_eig_max: float
    gram_bounds_ok: bool

    @property
    def all_pass(self) -> bool:
        return (
            self.sval_ok
            and self.g_mu_c_ok
            and self.g_mu_s_ok
            and self.gram_dev_ok
            and self.gram_bounds_ok
        )


def check_spectral_events(
    data: LabeledDataset,
    mu_c: np.ndarray,
    mu_s: np.ndarray,
    sigma: float,
    t: float,
    theta_1: float = 1.0,
    theta_2: float = 0.0,
) -> SpectralEventReport:
    """Check the singular-value and alignment events on a sampled dataset.

    The noise matrix is reconstructed from the known means:
    ``G = Z - 1 mu_c' - (theta_1 e_1 + theta_2 e_2) mu_s'``.  With
    ``Z = G + M`` and rank-2 ``M``, the sample gram expands as
    ``GG' + GM' + MG' + MM'``, so a single N-by-d product plus two
    matrix-vector products covers every event.
    """
    Z = data.signed()
    n, d = Z.shape
    theta_vec = np.where(data.env == 1, theta_1, theta_2).astype(np.float64)
    scale = sigma * math.sqrt(d)
    Gn = Z - theta_vec[:, None] * np.asarray(mu_s)[None, :]
    Gn -= np.asarray(mu_c)[None, :]
    Gn /= scale

    gram_noise = Gn @ Gn.T
    sq = np.linalg.eigvalsh(gram_noise)
    sval_min = math.sqrt(max(float(sq[0]), 0.0))
    sval_max = math.sqrt(max(float(sq[-1]), 0.0))
    half_width = (math.sqrt(n) + t) / math.sqrt(d)
    lo, hi = 1.0 - half_width, 1.0 + half_width

    r_c = float(np.linalg.norm(mu_c))
    r_s = float(np.linalg.norm(mu_s))
    gn_mu_c = Gn @ np.asarray(mu_c)
    gn_mu_s = Gn @ np.asarray(mu_s)
    g_mu_c = float(np.linalg.norm(gn_mu_c))
    g_mu_s = float(np.linalg.norm(gn_mu_s))
    mu_bound_c = t * math.sqrt(n / d) * r_c
    mu_bound_s = t * math.sqrt(n / d) * r_s

    # Zn Zn' assembled from the pieces above; mu_c and mu_s are orthogonal
    ones = np.ones(n)
    cross = (
        np.outer(gn_mu_c, ones) + np.outer(gn_mu_s, theta_vec)
    ) / scale
    mean_gram = (
        r_c**2 * np.outer(ones, ones) + r_s**2 * np.outer(theta_vec, theta_vec)
    ) / scale**2
    sample_gram = gram_noise + cross + cross.T + mean_gram
    expected = np.eye(n) + mean_gram
    dev_eigs = np.linalg.eigvalsh(sample_gram - expected)
    gram_dev = float(max(abs(dev_eigs[0]), abs(dev_eigs[-1])))
    gram_dev_bound = 3.0 * (math.sqrt(n) + t) / math.sqrt(d)
    gram_eigs = np.linalg.eigvalsh(sample_gram)

    return SpectralEventReport(
        t=t,
        sval_min=sval_min,
        sval_max=sval_max,
        sval_lo_bound=lo,
        sval_hi_bound=hi,
        sval_ok=bool(lo <= sval_min and sval_max <= hi),
        g_mu_c=g_mu_c,
        g_mu_c_bound=mu_bound_c,
        g_mu_c_ok=bool(g_mu_c <= mu_bound_c),
        g_mu_s=g_mu_s,
        g_mu_s_bound=mu_bound_s,
        g_mu_s_ok=bool(g_mu_s <= mu_bound_s),
        gram_dev=gram_dev,
        gram_dev_bound=gram_dev_bound,
        gram_dev_ok=bool(gram_dev <= gram_dev_bound),
        gram_eig_min=float(gram_eigs[0]),
        gram_eig_max=float(gram_eigs[-1]),
        gram_bounds_ok=bool(0.5 <= gram_eigs[0] and gram_eigs[-1] <= 2.0),
    )


def orthogonal_complement_stats(
    model_w: np.ndarray, data: LabeledDataset, mu: np.ndarray
) -> float:
    """Normalized alignment of the off-span part of ``w`` with ``mu``.

    Projects ``w`` onto span{z_i} through a Gram solve and returns
    ``|<w_perp, mu>| / (||w|| ||mu||)``.  Requires ``d > N`` and a
    full-rank sample matrix.
    """
    w = np.asarray(model_w, dtype=np.float64)
    Z = data.signed()
    n, d = Z.shape
    if d <= n:
        raise TwoEnvError("orthogonal complement is trivial unless d > N")
    K = Z @ Z.T
    evals = np.linalg.eigvalsh(K)
    if evals[0] <= 1e-12 * max(evals[-1], 1.0):
        raise IllConditionedGramError("sample matrix is numerically rank deficient")
    beta = np.linalg.solve(K, Z @ w)
    w_perp = w - Z.T @ beta
    denom = float(np.linalg.norm(w) * np.linalg.norm(mu))
    if denom == 0:
        raise TwoEnvError("zero vector supplied")
    return abs(float(w_perp @ np.asarray(mu))) / denom
