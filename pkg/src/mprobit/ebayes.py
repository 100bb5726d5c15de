"""Posterior-mode subject effects and the probability surfaces built on them.

For each subject the standardized random effect z is estimated as the mode of
its log-posterior given the fitted parameters: the posterior score is

    sum_{t,j} a_tj * pdf(d) (y - cdf(d)) / (cdf(d)(1 - cdf(d))) - z,

with d = delta_star + a_tj z and a_tj the scale loading lambda * sigma of the
cell (first-period cells use the baseline loading and scale). The score is
strictly decreasing in z, so the mode is unique; damped Newton-Raphson with a
bisection fallback finds it per subject.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats as _sstats

from .constraints import ConstraintSolution, solve_constraints
from .data import PanelData
from .fitter import FitResult
from .kernels import clamp_probability, probit_cdf, probit_pdf

__all__ = [
    "SubjectEffects",
    "Surfaces",
    "estimate_effects",
    "estimate_z",
    "probability_surfaces",
    "probit_r2",
    "accuracy_metrics",
]

Z_BRACKET = 8.0


@dataclass(frozen=True)
class SubjectEffects:
    """Posterior modes z_hat and the implied per-time effects b_hat = sigma_t * z_hat."""

    z_hat: np.ndarray  # (N,)
    b_hat: np.ndarray  # (N, T)
    converged: np.ndarray  # (N,) bool


@dataclass(frozen=True)
class Surfaces:
    """Per-cell probability surfaces plus the linear predictors behind them."""

    marginal: np.ndarray  # (N, T, k) first-level probabilities
    conditional: np.ndarray  # (N, T, k) random-effects probabilities at z_hat
    conditional_average: np.ndarray  # (N, T, k) random-effects probabilities at z = 0
    lin_marginal: np.ndarray  # (N, T, k) probit of marginal
    lin_conditional: np.ndarray  # (N, T, k) probit of conditional


def _effect_inputs(fit: FitResult, data: PanelData, solution: ConstraintSolution | None = None):
    """delta_star at the observed lags and the lambda*sigma loading per cell."""
    if solution is None:
        solution = solve_constraints(data, fit.theta1, fit.theta2, coefs=fit.coefficients)
    n, t, k = data.y.shape
    dstar = np.empty((n, t, k))
    dstar[:, 0, :] = solution.delta_star_baseline
    ylag = data.y_lag
    dstar[:, 1:, :] = np.take_along_axis(solution.delta_star, ylag[..., None].astype(int), axis=-1)[..., 0]

    loading = np.empty((t, k))
    loading[0, :] = fit.theta1.lambda_star * fit.theta1.sigma1
    loading[1:, :] = fit.theta2.lambda_[None, :] * fit.theta2.sigma[:, None]
    return dstar, loading, solution


def _posterior_score_terms(dstar, loading, y, z):
    """Score and its z-derivative for a batch of subjects at scalar-per-subject z."""
    d = dstar + loading[None] * z[:, None, None]
    p = clamp_probability(probit_cdf(d))
    r = probit_pdf(d) * (y - p) / (p * (1.0 - p))
    score = np.einsum("ntj,tj->n", r, loading) - z
    # dr/dd = -r (d + r) for both outcomes
    dr = -r * (d + r)
    dscore = np.einsum("ntj,tj->n", dr, np.square(loading)) - 1.0
    return score, dscore


def estimate_effects(
    fit: FitResult,
    data: PanelData,
    solution: ConstraintSolution | None = None,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> SubjectEffects:
    """Posterior-mode z for every subject.

    Newton steps are damped by half whenever they exceed 2 in absolute value;
    subjects that have not met ``tol`` after ``max_iter`` steps fall back to
    bisection on [-8, 8]. Per-subject failures are flagged, never raised.
    """
    dstar, loading, _ = _effect_inputs(fit, data, solution)
    y = data.y.astype(float)
    n = data.n_subjects

    z = np.zeros(n)
    active = np.ones(n, dtype=bool)
    for _ in range(max_iter):
        score, dscore = _posterior_score_terms(dstar, loading, y, z)
        active = np.abs(score) > tol
        if not active.any():
            break
        step = -score / np.where(dscore < 0, dscore, -1.0)
        step = np.where(np.abs(step) > 2.0, 0.5 * step, step)
        z = np.where(active, np.clip(z + step, -Z_BRACKET, Z_BRACKET), z)

    score, _ = _posterior_score_terms(dstar, loading, y, z)
    unresolved = np.abs(score) > tol
    if unresolved.any():
        lo = np.full(n, -Z_BRACKET)
        hi = np.full(n, Z_BRACKET)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            s_mid, _ = _posterior_score_terms(dstar, loading, y, mid)
            # score decreases in z: positive score means the root is above mid
            lo = np.where(unresolved & (s_mid > 0), mid, lo)
            hi = np.where(unresolved & (s_mid <= 0), mid, hi)
            if np.abs(s_mid[unresolved]).max() <= tol:
                break
        z = np.where(unresolved, 0.5 * (lo + hi), z)
        score, _ = _posterior_score_terms(dstar, loading, y, z)

    converged = np.abs(score) <= tol
    sigmas = np.concatenate([[fit.theta1.sigma1], fit.theta2.sigma])
    b_hat = z[:, None] * sigmas[None, :]
    return SubjectEffects(z_hat=z, b_hat=b_hat, converged=converged)


def estimate_z(i: int, fit: FitResult, data: PanelData, **kwargs) -> float:
    """Posterior-mode z for a single subject index."""
    return float(estimate_effects(fit, data, **kwargs).z_hat[i])


def probability_surfaces(
    fit: FitResult, data: PanelData, effects: SubjectEffects, solution: ConstraintSolution | None = None
) -> Surfaces:
    """Marginal, conditional, and average-person probabilities per cell."""
    dstar, loading, solution = _effect_inputs(fit, data, solution)
    lin_marginal = np.empty_like(dstar)
    lin_marginal[:, 0, :] = data.x_baseline @ fit.theta1.beta_star
    lin_marginal[:, 1:, :] = data.x_main @ fit.theta2.beta

    lin_conditional = dstar + loading[None] * effects.z_hat[:, None, None]
    return Surfaces(
        marginal=probit_cdf(lin_marginal),
        conditional=probit_cdf(lin_conditional),
        conditional_average=probit_cdf(dstar),
        lin_marginal=lin_marginal,
        lin_conditional=lin_conditional,
    )


def probit_r2(surfaces: Surfaces) -> dict:
    """Least-squares R-squared of the conditional linear predictor on the
    marginal one, per response, for the first period and pooled later periods.

    Keys are (response index starting at 1, "baseline" | "followup"). A zero
    variance regressor makes the quantity undefined and yields NaN.
    """
    out = {}
    k = surfaces.marginal.shape[2]
    for j in range(k):
        for label, sl in (("baseline", np.s_[:, :1, j]), ("followup", np.s_[:, 1:, j])):
            x = surfaces.lin_marginal[sl].ravel()
            y = surfaces.lin_conditional[sl].ravel()
            if np.ptp(x) == 0.0 or np.ptp(y) == 0.0:
                out[(j + 1, label)] = float("nan")
                continue
            design = np.column_stack([np.ones_like(x), x])
            coef, *_ = np.linalg.lstsq(design, y, rcond=None)
            resid = y - design @ coef
            sst = float(np.sum((y - y.mean()) ** 2))
            out[(j + 1, label)] = 1.0 - float(resid @ resid) / sst
    return out


def accuracy_metrics(y, probabilities) -> dict:
    """Probability- and rank-level accuracy of predicted success probabilities.

    epcp is the mean probability assigned to the observed outcome. auroc is
    the probability that a random positive outranks a random negative with
    ties counted half (midrank form); it is NaN when y has a single class.
    """
    y = np.asarray(y, dtype=float).ravel()
    p = np.asarray(probabilities, dtype=float).ravel()
    if y.shape != p.shape:
        raise ValueError("y and probabilities must have the same length")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("y must be binary 0/1")
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise ValueError("probabilities must lie in [0, 1]")

    epcp = float(np.mean(y * p + (1.0 - y) * (1.0 - p)))
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return {"epcp": epcp, "auroc": float("nan")}
    ranks = _sstats.rankdata(p)
    auroc = (ranks[y == 1.0].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
    return {"epcp": epcp, "auroc": float(auroc)}
