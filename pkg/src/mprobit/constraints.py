"""Linking intercepts between the model levels.

The follow-up model requires, for every (subject, time, response) cell, an
intercept ``delta`` making the transition probabilities average back to the
marginal probability:

    cdf(x_t b) = cdf(delta) * (1 - p_lag) + cdf(delta + a z) * p_lag

with ``p_lag`` the lag-period marginal success probability. The equation has
no closed form in ``delta``; instead of solving it numerically inside the
likelihood, ``delta`` is expanded to first order around an anchor point
(b0, a0, delta0) where the exact equation is solved once by Newton-Raphson.
The expansion coefficients (one vector per cell for the regression and
transition directions) are data-only quantities, computed once per fit and
reused across all optimizer iterations.

At the second period the lag marginal uses the frozen first-period
coefficient estimates, so the lag probability is a constant there and drops
out of the regression-direction derivative.

A second, exact linkage maps transition intercepts to the random-effects
level in closed form: ``delta_star = sqrt(1 + lambda^2 sigma^2) * eta`` where
``eta`` is the transition-scale linear predictor. Exact Newton solutions of
the marginal equation are also provided; they serve the simulator's
exact-intercept mode and the test oracles, never the likelihood itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import probit_cdf, probit_inverse, probit_pdf
from .params import BaselineParams, MainParams

__all__ = [
    "Anchor",
    "ConstraintCoefficients",
    "ConstraintSolution",
    "ConstraintSolverError",
    "constraint_residual",
    "solve_anchor_delta0",
    "ift_coefficients",
    "delta_ift",
    "delta_star_main",
    "delta_star_baseline",
    "build_constraint_coefficients",
    "delta_from_coefficients",
    "solve_constraints",
    "solve_exact_delta",
]

DELTA_BRACKET = 10.0  # exact roots are bracketed in [-10, 10]


class ConstraintSolverError(RuntimeError):
    """Newton-Raphson and the bisection fallback both failed to find a root."""


@dataclass(frozen=True)
class Anchor:
    """Expansion point for the first-order intercept solution.

    Defaults to zero vectors, where the exact anchor intercepts are zero for
    every period and the expansion is exact under null regression and
    transition parameters.
    """

    beta0: np.ndarray  # (p2,)
    alpha0: np.ndarray  # (T-1, l)

    def __post_init__(self):
        object.__setattr__(self, "beta0", np.asarray(self.beta0, dtype=float))
        object.__setattr__(self, "alpha0", np.atleast_2d(np.asarray(self.alpha0, dtype=float)))

    @classmethod
    def zero(cls, n_covariates: int, n_main_times: int, n_transition: int) -> "Anchor":
        return cls(beta0=np.zeros(n_covariates), alpha0=np.zeros((n_main_times, n_transition)))


@dataclass(frozen=True)
class ConstraintCoefficients:
    """Per-cell anchor intercepts and first-order expansion coefficients.

    ``a_coef`` multiplies (beta - beta0) and ``b_coef`` multiplies
    (alpha_t - alpha0_t); both depend only on the data, the anchor, and the
    frozen first-period coefficients, never on the current stage-two
    parameters.
    """

    anchor: Anchor
    delta0: np.ndarray  # (N, T-1, k)
    a_coef: np.ndarray  # (N, T-1, k, p2)
    b_coef: np.ndarray  # (N, T-1, k, l)


@dataclass(frozen=True)
class ConstraintSolution:
    """Intercepts evaluated at a concrete parameter vector.

    ``delta_star`` carries both hypothetical lag values in its trailing axis
    (index 0 for lag response 0, index 1 for lag response 1);
    ``delta_star_baseline`` covers the first period.
    """

    coefficients: ConstraintCoefficients
    delta: np.ndarray  # (N, T-1, k)
    delta_star: np.ndarray  # (N, T-1, k, 2)
    delta_star_baseline: np.ndarray  # (N, k)


def constraint_residual(delta, beta_cur, beta_lag, alpha_t, x_t, x_lag, z):
    """Residual of the marginal constraint at the given intercept.

    Returns cdf(x_t beta_cur) - cdf(delta) (1 - p_lag) - cdf(delta + a z) p_lag
    with p_lag = cdf(x_lag beta_lag). ``beta_lag`` is the frozen first-period
    coefficient vector when t = 2 and the current ``beta_cur`` otherwise.
    Broadcasts over leading axes of ``delta`` and the design rows.
    """
    delta = np.asarray(delta, dtype=float)
    mu_t = np.asarray(x_t, dtype=float) @ np.asarray(beta_cur, dtype=float)
    p_lag = probit_cdf(np.asarray(x_lag, dtype=float) @ np.asarray(beta_lag, dtype=float))
    az = np.asarray(z, dtype=float) @ np.asarray(alpha_t, dtype=float)
    return probit_cdf(mu_t) - probit_cdf(delta) * (1.0 - p_lag) - probit_cdf(delta + az) * p_lag


def _solve_root(target, az, p_lag, tol: float = 1e-12, max_iter: int = 50):
    """Vectorized Newton-Raphson for cdf(d)(1-p) + cdf(d+az)p = target.

    The left side is strictly increasing in d, so the root is unique. Entries
    where Newton leaves [-DELTA_BRACKET, DELTA_BRACKET] or fails to meet the
    tolerance fall back to bisection on that interval.
    """
    target = np.asarray(target, dtype=float)
    az = np.broadcast_to(np.asarray(az, dtype=float), target.shape)
    p_lag = np.broadcast_to(np.asarray(p_lag, dtype=float), target.shape)

    delta = np.array(probit_inverse(np.clip(target, 1e-15, 1.0 - 1e-15)), dtype=float)

    def f_and_fp(d):
        f = probit_cdf(d) * (1.0 - p_lag) + probit_cdf(d + az) * p_lag - target
        fp = probit_pdf(d) * (1.0 - p_lag) + probit_pdf(d + az) * p_lag
        return f, fp

    need_fallback = np.zeros(target.shape, dtype=bool)
    active = np.ones(target.shape, dtype=bool)
    for _ in range(max_iter):
        f, fp = f_and_fp(delta)
        active = np.abs(f) > tol
        if not active.any():
            break
        step = np.where(fp > 0, f / np.where(fp > 0, fp, 1.0), np.inf)
        new = delta - np.where(active, step, 0.0)
        bad = active & (~np.isfinite(new) | (np.abs(new) > DELTA_BRACKET))
        need_fallback |= bad
        delta = np.where(bad, delta, new)
        if need_fallback[active].all():
            break

    f, _ = f_and_fp(delta)
    unresolved = (np.abs(f) > tol) | need_fallback
    if unresolved.any():
        lo = np.full(target.shape, -DELTA_BRACKET)
        hi = np.full(target.shape, DELTA_BRACKET)
        f_lo, _ = f_and_fp(lo)
        f_hi, _ = f_and_fp(hi)
        if (unresolved & ((f_lo > 0) | (f_hi < 0))).any():
            raise ConstraintSolverError(
                "constraint root not bracketed in [-10, 10]; "
                f"max residual {np.abs(f[unresolved]).max():.3e}"
            )
        mid = 0.5 * (lo + hi)
        for _ in range(200):
            f_mid, _ = f_and_fp(mid)
            go_high = f_mid < 0
            lo = np.where(unresolved & go_high, mid, lo)
            hi = np.where(unresolved & ~go_high, mid, hi)
            mid = 0.5 * (lo + hi)
            if np.abs(f_mid[unresolved]).max() <= tol:
                break
        delta = np.where(unresolved, mid, delta)
        f, _ = f_and_fp(delta)
        if np.abs(f).max() > 10 * tol:
            raise ConstraintSolverError(
                f"constraint solve failed; worst residual {np.abs(f).max():.3e}"
            )
    return delta


def solve_anchor_delta0(x_t, z, anchor_beta0, anchor_alpha0_t, lag_prob, tol: float = 1e-12):
    """Exact anchor intercept: root of the marginal constraint at the anchor.

    ``lag_prob`` is the lag-period marginal success probability, evaluated at
    the frozen first-period coefficients when t = 2 and at the anchor
    regression coefficients otherwise. With zero anchors the root is exactly
    zero for every period.
    """
    mu_t = np.asarray(x_t, dtype=float) @ np.asarray(anchor_beta0, dtype=float)
    az = np.asarray(z, dtype=float) @ np.asarray(anchor_alpha0_t, dtype=float)
    return _solve_root(probit_cdf(mu_t), az, lag_prob, tol=tol)


def ift_coefficients(x_t, x_lag, z, anchor_beta0, anchor_alpha0_t, delta0, frozen_lag_prob=None):
    """First-order expansion coefficients of the intercept around the anchor.

    Implicit differentiation of the constraint gives
    A = -(dF/dbeta)/(dF/ddelta) and B = -(dF/dalpha)/(dF/ddelta), all partials
    evaluated at the anchor. When ``frozen_lag_prob`` is given (t = 2), the
    lag marginal does not move with beta, so its contribution to dF/dbeta
    vanishes and ``x_lag`` is ignored.

    The delta-derivative is a negative sum of two density terms, so the
    linearization cannot be singular for finite inputs; a guard raises anyway.
    """
    x_t = np.asarray(x_t, dtype=float)
    z = np.asarray(z, dtype=float)
    beta0 = np.asarray(anchor_beta0, dtype=float)
    alpha0 = np.asarray(anchor_alpha0_t, dtype=float)
    delta0 = np.asarray(delta0, dtype=float)

    mu_t0 = x_t @ beta0
    az0 = z @ alpha0
    if frozen_lag_prob is None:
        mu_lag0 = np.asarray(x_lag, dtype=float) @ beta0
        p_lag = probit_cdf(mu_lag0)
        lag_term = probit_pdf(mu_lag0)[..., None] * np.asarray(x_lag, dtype=float)
    else:
        p_lag = np.asarray(frozen_lag_prob, dtype=float)
        lag_term = 0.0

    df_ddelta = -probit_pdf(delta0) * (1.0 - p_lag) - probit_pdf(delta0 + az0) * p_lag
    if np.any(np.abs(df_ddelta) < 1e-14):
        raise ConstraintSolverError("singular linearization: |dF/ddelta| below 1e-14")

    df_dbeta = x_t * probit_pdf(mu_t0)[..., None]
    if frozen_lag_prob is None:
        df_dbeta = df_dbeta + (probit_cdf(delta0) - probit_cdf(delta0 + az0))[..., None] * lag_term
    df_dalpha = -(probit_pdf(delta0 + az0) * p_lag)[..., None] * z

    a_coef = -df_dbeta / df_ddelta[..., None]
    b_coef = -df_dalpha / df_ddelta[..., None]
    return a_coef, b_coef


def delta_ift(delta0, a_coef, b_coef, beta, alpha_t, anchor_beta0, anchor_alpha0_t):
    """Reconstruct the intercept from the first-order expansion.

    delta = delta0 + A (beta - beta0) + B (alpha_t - alpha0_t). The anchor
    intercept offset is zero under default (all-zero) anchors.
    """
    d_beta = np.asarray(beta, dtype=float) - np.asarray(anchor_beta0, dtype=float)
    d_alpha = np.asarray(alpha_t, dtype=float) - np.asarray(anchor_alpha0_t, dtype=float)
    return (
        np.asarray(delta0, dtype=float)
        + np.asarray(a_coef, dtype=float) @ d_beta
        + np.asarray(b_coef, dtype=float) @ d_alpha
    )


def delta_star_main(delta, alpha_z_y, lambda_j, sigma_t):
    """Random-effects-level intercept for follow-up periods.

    delta_star = sqrt(1 + lambda^2 sigma^2) * (delta + alpha z y_lag); the
    scaling makes the random-effects mixture integrate back to the transition
    probability exactly.
    """
    scale = np.sqrt(1.0 + np.square(lambda_j) * np.square(sigma_t))
    return scale * (np.asarray(delta, dtype=float) + np.asarray(alpha_z_y, dtype=float))


def delta_star_baseline(x_row, beta_star, lambda_star_j, sigma_1):
    """Random-effects-level intercept for the first period:
    sqrt(1 + lambda*^2 sigma_1^2) * (x beta*)."""
    mu = np.asarray(x_row, dtype=float) @ np.asarray(beta_star, dtype=float)
    scale = np.sqrt(1.0 + np.square(lambda_star_j) * np.square(sigma_1))
    return scale * mu


def _lag_designs(x_baseline, x_main):
    """Yield (time index, lag design or None) pairs; None marks the frozen-lag period."""
    n_main = x_main.shape[1]
    for tm in range(n_main):
        yield tm, (None if tm == 0 else x_main[:, tm - 1])


def coefficients_from_designs(x_baseline, x_main, z, beta_star_hat, anchor: Anchor) -> ConstraintCoefficients:
    """Anchor intercepts and expansion coefficients for every (i, t, j) cell.

    Operates on raw design arrays so that the simulator can use it before a
    panel object exists. ``beta_star_hat`` enters only through the frozen
    second-period lag probabilities.
    """
    n, n_main, k, p2 = x_main.shape
    l = z.shape[3]
    delta0 = np.empty((n, n_main, k))
    a_coef = np.empty((n, n_main, k, p2))
    b_coef = np.empty((n, n_main, k, l))
    frozen_lag = probit_cdf(x_baseline @ np.asarray(beta_star_hat, dtype=float))  # (N, k)

    for tm, x_lag in _lag_designs(x_baseline, x_main):
        x_t = x_main[:, tm]
        z_t = z[:, tm]
        if x_lag is None:
            p_lag = frozen_lag
        else:
            p_lag = probit_cdf(x_lag @ anchor.beta0)
        delta0[:, tm] = solve_anchor_delta0(x_t, z_t, anchor.beta0, anchor.alpha0[tm], p_lag)
        a_coef[:, tm], b_coef[:, tm] = ift_coefficients(
            x_t,
            x_lag,
            z_t,
            anchor.beta0,
            anchor.alpha0[tm],
            delta0[:, tm],
            frozen_lag_prob=frozen_lag if x_lag is None else None,
        )
    return ConstraintCoefficients(anchor=anchor, delta0=delta0, a_coef=a_coef, b_coef=b_coef)


def build_constraint_coefficients(data, beta_star_hat, anchor: Anchor | None = None) -> ConstraintCoefficients:
    """Per-fit precomputation of the expansion coefficients for a panel."""
    if anchor is None:
        anchor = Anchor.zero(data.x_main.shape[3], data.n_times - 1, data.z_transition.shape[3])
    return coefficients_from_designs(data.x_baseline, data.x_main, data.z_transition, beta_star_hat, anchor)


def delta_from_coefficients(coefs: ConstraintCoefficients, beta, alpha) -> np.ndarray:
    """Intercepts (N, T-1, k) at the given stage-two parameters."""
    anchor = coefs.anchor
    d_beta = np.asarray(beta, dtype=float) - anchor.beta0
    d_alpha = np.atleast_2d(np.asarray(alpha, dtype=float)) - anchor.alpha0
    out = coefs.delta0 + coefs.a_coef @ d_beta
    out = out + np.einsum("ntjl,tl->ntj", coefs.b_coef, d_alpha)
    return out


def solve_constraints(
    data,
    theta1: BaselineParams,
    theta2: MainParams,
    anchor: Anchor | None = None,
    coefs: ConstraintCoefficients | None = None,
) -> ConstraintSolution:
    """Evaluate every linking intercept at concrete parameter values."""
    if coefs is None:
        coefs = build_constraint_coefficients(data, theta1.beta_star, anchor)
    delta = delta_from_coefficients(coefs, theta2.beta, theta2.alpha)
    az = np.einsum("ntjl,tl->ntj", data.z_transition, theta2.alpha)  # (N, T-1, k)
    scale = np.sqrt(1.0 + np.square(theta2.lambda_)[None, :] * np.exp(2.0 * theta2.c)[:, None])  # (T-1, k)
    dstar = np.stack(
        [scale[None] * delta, scale[None] * (delta + az)],
        axis=-1,
    )
    dstar_base = delta_star_baseline(
        data.x_baseline, theta1.beta_star, theta1.lambda_star[None, :], theta1.sigma1
    )
    return ConstraintSolution(
        coefficients=coefs, delta=delta, delta_star=dstar, delta_star_baseline=dstar_base
    )


def solve_exact_delta(x_baseline, x_main, z, beta, alpha, beta_star, tol: float = 1e-12) -> np.ndarray:
    """Exact Newton roots of the marginal constraint at full parameters.

    Used by the simulator's exact-intercept mode and as the oracle against
    which the first-order reconstruction is checked; the likelihood never
    calls this.
    """
    beta = np.asarray(beta, dtype=float)
    alpha = np.atleast_2d(np.asarray(alpha, dtype=float))
    n, n_main, k, _ = x_main.shape
    out = np.empty((n, n_main, k))
    for tm, x_lag in _lag_designs(x_baseline, x_main):
        if x_lag is None:
            p_lag = probit_cdf(x_baseline @ np.asarray(beta_star, dtype=float))
        else:
            p_lag = probit_cdf(x_lag @ beta)
        target = probit_cdf(x_main[:, tm] @ beta)
        az = z[:, tm] @ alpha[tm]
        out[:, tm] = _solve_root(target, az, p_lag, tol=tol)
    return out
