"""Quadrature log-likelihoods and analytic scores for both model stages.

Each subject-time block contributes one one-dimensional normal integral,
approximated by Gauss-Hermite quadrature after the change of variables
b = sigma * sqrt(2) * node. The integrand at node q is the product over
responses of Bernoulli terms with success probability cdf(d), where

  baseline : d = sqrt(1 + lambda*^2 e^{2 c1}) (x beta*) + lambda* e^{c1} sqrt(2) z_q
  follow-up: d = sqrt(1 + lambda^2 e^{2 c_t}) (delta + a z y_lag) + lambda e^{c_t} sqrt(2) z_q

The integrals carry the 1/sqrt(pi) normalization of the change of variables,
so every block value lies in (0, 1] and the reported log-likelihood is a
proper density approximation; the factor cancels from all score ratios.

Scores are assembled from the derivative of d with respect to each packed
parameter, which always has the form u + v * sqrt(2) z_q with node-free
coefficient arrays u, v. Success probabilities are clamped away from 0 and 1
inside logs and ratio terms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constraints import ConstraintCoefficients, delta_from_coefficients
from .kernels import (
    PROB_FLOOR,
    QuadratureRule,
    clamp_probability,
    probit_cdf,
    probit_pdf,
)
from .params import BaselineParams, MainParams

__all__ = [
    "LikelihoodError",
    "LikelihoodWorkspace",
    "evaluate_baseline",
    "evaluate_main",
    "loglik_baseline",
    "score_baseline",
    "loglik_main",
    "score_main",
]


class LikelihoodError(RuntimeError):
    """Non-finite intermediate inside the likelihood evaluation."""


@dataclass(frozen=True)
class LikelihoodWorkspace:
    """Evaluation byproducts shared by the optimizer and the tests.

    ``block_values`` holds the per-(subject, time) integrals h in (0, 1];
    ``per_subject_scores`` the per-subject score contributions whose sum is
    the stage score and whose outer-product sum is the empirical information.
    """

    loglik: float
    score: np.ndarray  # (P,)
    per_subject_scores: np.ndarray  # (N, P)
    block_values: np.ndarray  # baseline: (N,), follow-up: (N, T-1)
    d: np.ndarray  # quadrature arguments
    ell: np.ndarray  # per-node joint factors in (0, 1]


def _check_finite_d(d, stage: str):
    if np.isfinite(d).all():
        return
    idx = np.argwhere(~np.isfinite(d))[0]
    raise LikelihoodError(f"{stage}: non-finite quadrature argument at index {tuple(int(v) for v in idx)}")


def _node_sums(ell, r, rule: QuadratureRule):
    """Quadrature sums S0 = E_q[ell r] and S1 = E_q[ell r sqrt(2) z_q] per response."""
    w = rule.normalized_weights
    wz = w * rule.scaled_nodes
    s0 = np.einsum("...q,...jq,q->...j", ell, r, w, optimize=True)
    s1 = np.einsum("...q,...jq,q->...j", ell, r, wz, optimize=True)
    return s0, s1


def _bernoulli_parts(d, y, rule: QuadratureRule):
    """Joint factors, block integrals, and residual ratios at each node.

    ``y`` broadcasts against ``d`` without its trailing node axis; responses
    occupy the second-to-last axis of ``d``.
    """
    p = clamp_probability(probit_cdf(d))
    ylift = y[..., None]
    log_terms = ylift * np.log(p) + (1.0 - ylift) * np.log1p(-p)
    ell = np.exp(log_terms.sum(axis=-2))  # response axis collapsed
    h = ell @ rule.normalized_weights
    r = probit_pdf(d) * (ylift - p) / (p * (1.0 - p))
    return p, ell, h, r


def evaluate_baseline(params: BaselineParams, data, rule: QuadratureRule) -> LikelihoodWorkspace:
    """Log-likelihood, score, and per-subject contributions for the first period."""
    x = data.x_baseline  # (N, k, p1)
    y = data.y[:, 0, :].astype(float)  # (N, k)
    k = data.n_responses
    p1 = x.shape[2]

    with np.errstate(over="ignore", invalid="ignore"):
        lam = params.lambda_star  # (k,)
        ec = np.exp(params.c1)
        s = np.sqrt(1.0 + lam * lam * ec * ec)  # (k,)
        mu = x @ params.beta_star  # (N, k)
        d = s[None, :, None] * mu[:, :, None] + (lam * ec)[None, :, None] * rule.scaled_nodes[None, None, :]
    _check_finite_d(d, "baseline")
    _, ell, h, r = _bernoulli_parts(d, y, rule)
    s0, s1 = _node_sums(ell, r, rule)  # (N, k)

    n_par = p1 + (k - 1) + 1
    dh = np.zeros((data.n_subjects, n_par))
    dh[:, :p1] = np.einsum("nj,j,njp->np", s0, s, x, optimize=True)
    # response loadings: d depends on lambda*_j only through response j
    u_lam = (lam * ec * ec / s)[None, :] * mu  # (N, k)
    for j in range(1, k):
        dh[:, p1 + j - 1] = s0[:, j] * u_lam[:, j] + s1[:, j] * ec
    u_c = (lam * lam * ec * ec / s)[None, :] * mu
    dh[:, -1] = (s0 * u_c).sum(axis=1) + (s1 * (lam * ec)[None, :]).sum(axis=1)

    per_subject = dh / h[:, None]
    return LikelihoodWorkspace(
        loglik=float(np.log(h).sum()),
        score=per_subject.sum(axis=0),
        per_subject_scores=per_subject,
        block_values=h,
        d=d,
        ell=ell,
    )


def evaluate_main(
    params: MainParams, data, coefs: ConstraintCoefficients, rule: QuadratureRule
) -> LikelihoodWorkspace:
    """Log-likelihood, score, and per-subject contributions for t >= 2.

    The linking intercepts are reconstructed from the precomputed expansion
    coefficients; the anchor offset enters both the intercept and the
    loading/scale derivative terms exactly as in the expansion.
    """
    n, n_main, k, p2 = data.x_main.shape
    l = data.z_transition.shape[3]
    y = data.y[:, 1:, :].astype(float)  # (N, T-1, k)
    ylag = data.y_lag.astype(float)

    with np.errstate(over="ignore", invalid="ignore"):
        delta = delta_from_coefficients(coefs, params.beta, params.alpha)
        az = np.einsum("ntjl,tl->ntj", data.z_transition, params.alpha, optimize=True)
        eta = delta + az * ylag

        lam = params.lambda_  # (k,)
        ec = np.exp(params.c)  # (T-1,)
        s = np.sqrt(1.0 + np.square(lam)[None, :] * np.square(ec)[:, None])  # (T-1, k)
        m = ec[:, None] * lam[None, :]  # (T-1, k)
        d = s[None, :, :, None] * eta[..., None] + m[None, :, :, None] * rule.scaled_nodes[None, None, None, :]
    _check_finite_d(d, "follow-up")
    _, ell, h, r = _bernoulli_parts(d, y, rule)  # ell (N,T-1,Q), h (N,T-1)
    s0, s1 = _node_sums(ell, r, rule)  # (N, T-1, k)

    n_par = p2 + n_main * l + (k - 1) + n_main
    dh = np.zeros((n, n_main, n_par))
    dh[:, :, :p2] = np.einsum("ntj,tj,ntjp->ntp", s0, s, coefs.a_coef, optimize=True)
    b_plus_zy = coefs.b_coef + data.z_transition * ylag[..., None]
    dh_alpha = np.einsum("ntj,tj,ntjl->ntl", s0, s, b_plus_zy, optimize=True)
    for tm in range(n_main):
        dh[:, tm, p2 + tm * l : p2 + (tm + 1) * l] = dh_alpha[:, tm]
    # anchor-adjusted inner term of the loading/scale derivatives
    g = eta - coefs.delta0
    u_lam = (lam[None, :] * np.square(ec)[:, None] / s)[None] * g  # (N, T-1, k)
    off = p2 + n_main * l
    for j in range(1, k):
        dh[:, :, off + j - 1] = s0[:, :, j] * u_lam[:, :, j] + s1[:, :, j] * ec[None, :]
    u_c = (np.square(lam)[None, :] * np.square(ec)[:, None] / s)[None] * g
    dh_c = (s0 * u_c).sum(axis=2) + (s1 * m[None]).sum(axis=2)  # (N, T-1)
    for tm in range(n_main):
        dh[:, tm, off + (k - 1) + tm] = dh_c[:, tm]

    per_subject = (dh / h[..., None]).sum(axis=1)  # (N, P)
    return LikelihoodWorkspace(
        loglik=float(np.log(h).sum()),
        score=per_subject.sum(axis=0),
        per_subject_scores=per_subject,
        block_values=h,
        d=d,
        ell=ell,
    )


def loglik_baseline(params: BaselineParams, data, rule: QuadratureRule) -> float:
    return evaluate_baseline(params, data, rule).loglik


def score_baseline(params: BaselineParams, data, rule: QuadratureRule) -> np.ndarray:
    return evaluate_baseline(params, data, rule).score


def loglik_main(params: MainParams, data, rule: QuadratureRule, coefs: ConstraintCoefficients) -> float:
    return evaluate_main(params, data, coefs, rule).loglik


def score_main(params: MainParams, data, rule: QuadratureRule, coefs: ConstraintCoefficients) -> np.ndarray:
    return evaluate_main(params, data, coefs, rule).score
