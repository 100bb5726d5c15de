"""Independence-working probit GLM.

Serves two roles: the initializer for the two-stage maximum-likelihood fit,
and the naive comparison model shown next to the marginalized fit in reports.
Fitting is Fisher scoring (equivalent to IRLS for probit) with step halving.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import clamp_probability, probit_cdf, probit_inverse, probit_pdf

__all__ = ["GlmFit", "fit_glm_probit", "vif"]


@dataclass(frozen=True)
class GlmFit:
    coefficients: np.ndarray
    se: np.ndarray
    loglik: float
    converged: bool
    iterations: int
    message: str = ""


def _bernoulli_loglik(y, eta) -> float:
    p = clamp_probability(probit_cdf(eta))
    return float(np.sum(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def _score_info(y, x, eta):
    p = clamp_probability(probit_cdf(eta))
    phi = probit_pdf(eta)
    denom = p * (1.0 - p)
    score = x.T @ (phi * (y - p) / denom)
    w = phi * phi / denom
    info = (x * w[:, None]).T @ x
    return score, info


def fit_glm_probit(y, x, max_iter: int = 100, tol_loglik: float = 1e-10, tol_score: float = 1e-8) -> GlmFit:
    """Maximum likelihood probit regression of binary ``y`` on design ``x``.

    ``x`` must have full column rank. Starts from the zero vector with the
    intercept (a constant column, if present) set to the probit of the
    clamped success rate. Non-convergence within ``max_iter`` steps is
    reported via the ``converged`` flag, which in practice signals perfect
    or quasi-perfect separation.
    """
    y = np.asarray(y, dtype=float).ravel()
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] != y.size:
        raise ValueError("x must be (n, p) aligned with y")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("y must be binary 0/1")
    n, p = x.shape
    if np.linalg.matrix_rank(x) < p:
        raise ValueError("design matrix is rank deficient")

    beta = np.zeros(p)
    const_cols = np.nonzero(np.ptp(x, axis=0) == 0.0)[0]
    if const_cols.size:
        ybar = float(np.clip(y.mean(), 1.0 / (n + 1.0), n / (n + 1.0)))
        beta[const_cols[0]] = probit_inverse(ybar) / x[0, const_cols[0]]

    ll = _bernoulli_loglik(y, x @ beta)
    converged = False
    message = ""
    it = 0
    for it in range(1, max_iter + 1):
        score, info = _score_info(y, x, x @ beta)
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            message = "singular information matrix"
            break
        frac = 1.0
        for _ in range(30):
            ll_new = _bernoulli_loglik(y, x @ (beta + frac * step))
            if ll_new >= ll:
                break
            frac *= 0.5
        else:
            message = "line search failed"
            break
        beta = beta + frac * step
        rel_change = abs(ll_new - ll) / max(1.0, abs(ll))
        ll = ll_new
        score, _ = _score_info(y, x, x @ beta)
        if np.max(np.abs(score)) <= tol_score and rel_change <= tol_loglik:
            converged = True
            break
    if not converged and not message:
        message = "no convergence after max iterations; possible separation"

    _, info = _score_info(y, x, x @ beta)
    try:
        cov = np.linalg.inv(info)
        se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    except np.linalg.LinAlgError:
        se = np.full(p, np.nan)
    return GlmFit(coefficients=beta, se=se, loglik=ll, converged=converged, iterations=it, message=message)


def vif(x) -> np.ndarray:
    """Variance inflation factors for the non-intercept columns of ``x``.

    VIF_j = 1 / (1 - R^2_j) from the least-squares regression of column j on
    all other columns. Exact collinearity yields +inf rather than an error.
    The design is expected to carry its intercept as a constant column.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ValueError("x must be a 2-d design matrix")
    is_const = np.ptp(x, axis=0) == 0.0
    targets = np.nonzero(~is_const)[0]
    if targets.size < 2:
        raise ValueError("vif needs at least two non-intercept columns")
    out = np.empty(targets.size)
    for pos, j in enumerate(targets):
        others = np.delete(np.arange(x.shape[1]), j)
        design = x[:, others]
        if not is_const.any():
            design = np.column_stack([np.ones(x.shape[0]), design])
        target = x[:, j]
        coef, *_ = np.linalg.lstsq(design, target, rcond=None)
        resid = target - design @ coef
        sst = float(np.sum((target - target.mean()) ** 2))
        r2 = 1.0 - float(resid @ resid) / sst
        out[pos] = np.inf if r2 >= 1.0 - 1e-12 else 1.0 / (1.0 - r2)
    return out
