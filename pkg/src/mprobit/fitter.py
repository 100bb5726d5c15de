"""Two-stage Fisher-scoring maximization and post-fit statistics.

Stage one maximizes the first-period likelihood; its coefficient estimates
are then frozen and enter the follow-up stage only through the second-period
lag probabilities inside the precomputed constraint coefficients. Stage-one
sampling uncertainty is not propagated into stage-two standard errors.

The information matrix is the empirical outer product of per-subject score
contributions, which Fisher scoring also uses as its step metric. Steps are
halved until the stage log-likelihood does not decrease.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .constraints import Anchor, ConstraintCoefficients, build_constraint_coefficients
from .data import PanelData
from .glm import fit_glm_probit
from .kernels import QuadratureRule, delta_method_sd, gauss_hermite, probit_cdf
from .likelihood import LikelihoodError, evaluate_baseline, evaluate_main
from .params import BaselineParams, MainParams

__all__ = [
    "FitControls",
    "FitError",
    "LineSearchError",
    "SingularInformationError",
    "StageFit",
    "FitResult",
    "information_baseline",
    "information_main",
    "fisher_scoring",
    "fit_model",
    "wald_tests",
    "lrt",
    "boundary_variance_test",
    "jkb_transform",
]

JKB_CONSTANT = 1.700437  # probit-to-logit coefficient rescaling
CONDITION_LIMIT = 1e12


class FitError(RuntimeError):
    """Base class for optimizer failures."""


class LineSearchError(FitError):
    """Log-likelihood kept decreasing after the maximum number of halvings."""


class SingularInformationError(FitError):
    """Empirical information matrix is numerically singular."""


@dataclass(frozen=True)
class FitControls:
    max_iter: int = 200
    tol_score: float = 1e-6
    tol_loglik: float = 1e-10
    max_halvings: int = 30


@dataclass(frozen=True)
class StageFit:
    """One stage's estimates with uncertainty and convergence trace."""

    estimate: np.ndarray  # packed parameter vector
    se: np.ndarray
    info: np.ndarray
    loglik: float
    converged: bool
    iterations: int
    trace: tuple  # per-iteration (loglik, step_norm, max_score)
    se_pseudo: bool = False  # SEs from a pseudo-inverse of a singular information


@dataclass(frozen=True)
class FitResult:
    """Two-stage fit: estimates, uncertainty, and everything predictions need."""

    theta1: BaselineParams
    theta2: MainParams
    stage1: StageFit
    stage2: StageFit
    coefficients: ConstraintCoefficients
    rule: QuadratureRule
    baseline_names: tuple
    main_names: tuple

    @property
    def loglik1(self) -> float:
        return self.stage1.loglik

    @property
    def loglik2(self) -> float:
        return self.stage2.loglik

    @property
    def loglik_total(self) -> float:
        return self.stage1.loglik + self.stage2.loglik

    @property
    def converged(self) -> bool:
        return self.stage1.converged and self.stage2.converged

    @property
    def se1(self) -> np.ndarray:
        return self.stage1.se

    @property
    def se2(self) -> np.ndarray:
        return self.stage2.se

    def sigma_estimates(self):
        """(label, sigma, se_sigma) rows for every log-scale parameter."""
        rows = []
        c_se1 = self.stage1.se[-1]
        rows.append(("sigma[1]", *delta_method_sd(self.theta1.c1, c_se1)))
        n_c = self.theta2.c.size
        c_se2 = self.stage2.se[-n_c:]
        for tm in range(n_c):
            rows.append((f"sigma[{tm + 2}]", *delta_method_sd(self.theta2.c[tm], c_se2[tm])))
        return rows


def _symmetrize(info: np.ndarray) -> np.ndarray:
    return 0.5 * (info + info.T)


def information_baseline(params: BaselineParams, data: PanelData, rule: QuadratureRule) -> np.ndarray:
    """Empirical information: sum over subjects of score-contribution outer products."""
    g = evaluate_baseline(params, data, rule).per_subject_scores
    return _symmetrize(g.T @ g)


def information_main(
    params: MainParams, data: PanelData, rule: QuadratureRule, coefs: ConstraintCoefficients
) -> np.ndarray:
    """Empirical information for the follow-up stage; the inner sum over times
    happens before the outer product, so contributions are per subject."""
    g = evaluate_main(params, data, coefs, rule).per_subject_scores
    return _symmetrize(g.T @ g)


def _solve_information(info: np.ndarray, score: np.ndarray):
    """Fisher step direction, robust to a rank-deficient information matrix.

    Directions whose eigenvalue falls below max_eig / CONDITION_LIMIT are
    dropped from the step (their score components are numerically zero too,
    e.g. at starting points where equal loadings make two score columns
    exactly proportional). Returns (step, truncated flag); raises only when
    no direction carries information at all.
    """
    eigvals, eigvecs = np.linalg.eigh(info)
    if eigvals[-1] <= 0:
        raise SingularInformationError(
            "information matrix numerically singular (no positive eigenvalue)"
        )
    keep = eigvals > eigvals[-1] / CONDITION_LIMIT
    inv = np.zeros_like(eigvals)
    inv[keep] = 1.0 / eigvals[keep]
    step = eigvecs @ (inv * (eigvecs.T @ score))
    return step, bool(not keep.all())


def _se_from_information(info: np.ndarray):
    eigvals = np.linalg.eigvalsh(info)
    pseudo = eigvals[0] <= 0 or eigvals[-1] / eigvals[0] > CONDITION_LIMIT
    cov = np.linalg.pinv(info) if pseudo else np.linalg.inv(info)
    return np.sqrt(np.clip(np.diag(cov), 0.0, None)), pseudo


def fisher_scoring(evaluate, init: np.ndarray, controls: FitControls | None = None) -> StageFit:
    """Maximize one stage's log-likelihood by Fisher scoring with step halving.

    ``evaluate`` maps a packed parameter vector to a workspace carrying the
    log-likelihood, the score, and per-subject score contributions. Converged
    means the max-norm score tolerance and the relative log-likelihood change
    tolerance hold simultaneously; accepted steps never decrease the
    log-likelihood.
    """
    controls = controls or FitControls()
    theta = np.asarray(init, dtype=float).copy()
    ws = evaluate(theta)
    trace = []
    if np.max(np.abs(ws.score)) <= controls.tol_score:
        g = ws.per_subject_scores
        se, pseudo = _se_from_information(_symmetrize(g.T @ g))
        trace.append((ws.loglik, 0.0, float(np.max(np.abs(ws.score)))))
        return StageFit(theta, se, _symmetrize(g.T @ g), ws.loglik, True, 0, tuple(trace), pseudo)

    converged = False
    iterations = 0
    for iterations in range(1, controls.max_iter + 1):
        g = ws.per_subject_scores
        info = _symmetrize(g.T @ g)
        step, _truncated = _solve_information(info, ws.score)
        frac = 1.0
        for _ in range(controls.max_halvings):
            candidate = theta + frac * step
            try:
                ws_new = evaluate(candidate)
            except (LikelihoodError, ValueError):
                # overflowing trial step; treat as a decrease and shorten
                frac *= 0.5
                continue
            if ws_new.loglik >= ws.loglik:
                break
            frac *= 0.5
        else:
            raise LineSearchError(
                f"log-likelihood decreased after {controls.max_halvings} halvings "
                f"(iteration {iterations})"
            )
        rel_change = abs(ws_new.loglik - ws.loglik) / max(1.0, abs(ws.loglik))
        theta = candidate
        ws = ws_new
        max_score = float(np.max(np.abs(ws.score)))
        trace.append((ws.loglik, float(np.linalg.norm(frac * step)), max_score))
        if max_score <= controls.tol_score and rel_change <= controls.tol_loglik:
            converged = True
            break

    g = ws.per_subject_scores
    info = _symmetrize(g.T @ g)
    se, pseudo = _se_from_information(info)
    return StageFit(theta, se, info, ws.loglik, converged, iterations, tuple(trace), pseudo)


def _baseline_init(data: PanelData) -> BaselineParams:
    x = data.x_baseline.reshape(-1, data.x_baseline.shape[-1])
    y = data.y[:, 0, :].reshape(-1)
    glm = fit_glm_probit(y, x)
    k = data.n_responses
    return BaselineParams(beta_star=glm.coefficients, lambda_star=np.ones(k), c1=math.log(0.5))


def _main_init(data: PanelData) -> MainParams:
    x = data.x_main.reshape(-1, data.x_main.shape[-1])
    y = data.y[:, 1:, :].reshape(-1)
    glm = fit_glm_probit(y, x)
    n_main = data.n_times - 1
    l = data.z_transition.shape[3]
    k = data.n_responses
    return MainParams(
        beta=glm.coefficients,
        alpha=np.zeros((n_main, l)),
        lambda_=np.ones(k),
        c=np.full(n_main, math.log(0.5)),
    )


def fit_model(
    data: PanelData,
    rule: QuadratureRule | None = None,
    controls: FitControls | None = None,
    anchor: Anchor | None = None,
    init1: BaselineParams | None = None,
    init2: MainParams | None = None,
) -> FitResult:
    """Full two-stage maximum-likelihood fit of a panel.

    Initial regression coefficients come from independence probit GLMs on the
    matching period slices; loadings start at one and log-scales at log(0.5).
    """
    rule = rule or gauss_hermite(data.spec.quad_order)
    controls = controls or FitControls()
    k = data.n_responses

    theta1_init = init1 or _baseline_init(data)
    p1 = theta1_init.beta_star.size

    def eval1(vec):
        return evaluate_baseline(BaselineParams.unpack(vec, p1, k), data, rule)

    stage1 = fisher_scoring(eval1, theta1_init.pack(), controls)
    theta1 = BaselineParams.unpack(stage1.estimate, p1, k)

    coefs = build_constraint_coefficients(data, theta1.beta_star, anchor)

    theta2_init = init2 or _main_init(data)
    p2 = theta2_init.beta.size
    n_main = data.n_times - 1
    l = data.z_transition.shape[3]

    def eval2(vec):
        return evaluate_main(MainParams.unpack(vec, p2, n_main, l, k), data, coefs, rule)

    stage2 = fisher_scoring(eval2, theta2_init.pack(), controls)
    theta2 = MainParams.unpack(stage2.estimate, p2, n_main, l, k)

    return FitResult(
        theta1=theta1,
        theta2=theta2,
        stage1=stage1,
        stage2=stage2,
        coefficients=coefs,
        rule=rule,
        baseline_names=tuple(BaselineParams.names(data.baseline_design_names, k)),
        main_names=tuple(
            MainParams.names(data.main_design_names, data.transition_design_names, n_main, k)
        ),
    )


def wald_rows(names, estimates, ses):
    """Per-parameter (name, estimate, se, null, z, p) rows.

    Scale loadings are tested against one, every other parameter against
    zero; p-values are two-sided normal.
    """
    rows = []
    for name, est, se in zip(names, estimates, ses):
        null = 1.0 if name.startswith("lambda") else 0.0
        z = (est - null) / se if se > 0 else math.nan
        p = 2.0 * (1.0 - probit_cdf(abs(z))) if math.isfinite(z) else math.nan
        rows.append((name, float(est), float(se), null, float(z), float(p)))
    return rows


def wald_tests(fit: FitResult):
    """Wald rows for both stages of a fit, keyed by stage label."""
    out = [("baseline", *row) for row in wald_rows(fit.baseline_names, fit.stage1.estimate, fit.se1)]
    out += [("followup", *row) for row in wald_rows(fit.main_names, fit.stage2.estimate, fit.se2)]
    return out


def lrt(loglik_full, loglik_reduced, df: int):
    """Likelihood ratio test of nested fits.

    Accepts raw maximized log-likelihoods or :class:`FitResult` objects (their
    totals are used). Returns (statistic, p); a statistic below -1e-6 signals
    a nesting violation and raises.
    """
    ll_full = loglik_full.loglik_total if isinstance(loglik_full, FitResult) else float(loglik_full)
    ll_red = loglik_reduced.loglik_total if isinstance(loglik_reduced, FitResult) else float(loglik_reduced)
    statistic = -2.0 * (ll_red - ll_full)
    if statistic < -1e-6:
        raise ValueError(f"nesting violation: reduced log-likelihood exceeds full ({statistic:.3e})")
    statistic = max(statistic, 0.0)
    return statistic, float(stats.chi2.sf(statistic, df))


def boundary_variance_test(c_hat: float, se_c: float) -> float:
    """One-sided test of a zero random-effect scale.

    The null puts the scale on its parameter-space boundary, so the p-value
    is half the two-sided Wald p for sigma = exp(c): p = 1 - cdf(sigma/se).
    """
    sigma, se_sigma = delta_method_sd(c_hat, se_c)
    if se_sigma == 0.0:
        return 0.0 if sigma > 0 else 0.5
    z = sigma / se_sigma
    return float(1.0 - probit_cdf(z))


def jkb_transform(beta_probit):
    """Approximate logit-scale coefficients: multiply by 1.700437."""
    return JKB_CONSTANT * np.asarray(beta_probit, dtype=float)
