"""Model-faithful panel simulator and the Monte Carlo study harness.

Panels are generated exactly under the fitted model: one standard-normal
effect per subject, first-period outcomes from the baseline random-effects
probabilities, and follow-up outcomes from the transition random-effects
probabilities with the realized lagged responses. Follow-up linking
intercepts use the same first-order reconstruction the fitter uses, so the
fitted model is correctly specified for the generated data; an exact-root
mode is available to measure the approximation error instead.

Covariate recipe: one Uniform(0, 1) draw per subject reused at all times
("x1"), plus response-indicator columns ("resp1", ..) for all but the last
response. The first-period design is (1, x1); the follow-up design appends
the response indicators; the transition design is intercept-only.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .constraints import (
    Anchor,
    coefficients_from_designs,
    delta_from_coefficients,
    solve_exact_delta,
)
from .data import ModelSpec, PanelData
from .fitter import FitControls, FitResult, fit_model
from .kernels import gauss_hermite, probit_cdf, probit_inverse
from .params import BaselineParams, MainParams

__all__ = ["TruthConfig", "McSummary", "McError", "default_truth", "simulate_panel", "run_monte_carlo"]


class McError(RuntimeError):
    """Systematic problem in the Monte Carlo harness (too many failed fits)."""


@dataclass(frozen=True)
class TruthConfig:
    """True parameter values and dimensions for the simulator."""

    n_subjects: int
    n_times: int
    n_responses: int
    beta_star: tuple  # (2,) intercept and x1
    lambda_star: tuple  # (k,), first entry 1
    sigma1: float
    beta: tuple  # (2 + k - 1,) intercept, x1, response indicators
    alpha: tuple  # (T-1,) intercept-only transition coefficient per time
    lambda_: tuple  # (k,), first entry 1
    sigma: tuple  # (T-1,)
    n_reps: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.lambda_star[0] != 1.0 or self.lambda_[0] != 1.0:
            raise ValueError("first scale loading of each stage must be 1")
        if len(self.sigma) != self.n_times - 1 or len(self.alpha) != self.n_times - 1:
            raise ValueError("alpha and sigma need one entry per follow-up time")
        if self.sigma1 <= 0 or any(s <= 0 for s in self.sigma):
            raise ValueError("scales must be positive")
        if len(self.beta) != 2 + self.n_responses - 1 or len(self.beta_star) != 2:
            raise ValueError("coefficient lengths do not match the covariate recipe")

    @property
    def theta1(self) -> BaselineParams:
        return BaselineParams(
            beta_star=np.asarray(self.beta_star),
            lambda_star=np.asarray(self.lambda_star),
            c1=float(np.log(self.sigma1)),
        )

    @property
    def theta2(self) -> MainParams:
        return MainParams(
            beta=np.asarray(self.beta),
            alpha=np.asarray(self.alpha)[:, None],
            lambda_=np.asarray(self.lambda_),
            c=np.log(np.asarray(self.sigma)),
        )

    @property
    def model_spec(self) -> ModelSpec:
        resp_cols = tuple(f"resp{j}" for j in range(1, self.n_responses))
        return ModelSpec(
            baseline_covariates=("x1",),
            main_covariates=("x1",) + resp_cols,
            transition_covariates=(),
        )

    @classmethod
    def from_json(cls, path) -> "TruthConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(**json.load(fh))

    def to_json(self, path) -> None:
        payload = {
            "n_subjects": self.n_subjects,
            "n_times": self.n_times,
            "n_responses": self.n_responses,
            "beta_star": list(self.beta_star),
            "lambda_star": list(self.lambda_star),
            "sigma1": self.sigma1,
            "beta": list(self.beta),
            "alpha": list(self.alpha),
            "lambda_": list(self.lambda_),
            "sigma": list(self.sigma),
            "n_reps": self.n_reps,
            "seed": self.seed,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")


def default_truth(n_subjects: int = 250, n_reps: int = 200, seed: int = 0) -> TruthConfig:
    """Reference simulation design: bivariate responses over four periods."""
    return TruthConfig(
        n_subjects=n_subjects,
        n_times=4,
        n_responses=2,
        beta_star=(-1.0, 1.9),
        lambda_star=(1.0, 1.07),
        sigma1=0.7,
        beta=(-1.0, 2.0, 0.2),
        alpha=(0.5, 0.7, 0.9),
        lambda_=(1.0, 1.05),
        sigma=(0.66, 0.63, 0.60),
        n_reps=n_reps,
        seed=seed,
    )


def _designs(truth: TruthConfig, x1: np.ndarray):
    """Baseline/main/transition design arrays for the covariate recipe."""
    n, t, k = truth.n_subjects, truth.n_times, truth.n_responses
    resp_ind = np.zeros((k, k - 1))
    for j in range(k - 1):
        resp_ind[j, j] = 1.0
    x_baseline = np.empty((n, k, 2))
    x_baseline[:, :, 0] = 1.0
    x_baseline[:, :, 1] = x1[:, None]
    x_main = np.empty((n, t - 1, k, 2 + k - 1))
    x_main[:, :, :, 0] = 1.0
    x_main[:, :, :, 1] = x1[:, None, None]
    x_main[:, :, :, 2:] = resp_ind[None, None, :, :]
    z = np.ones((n, t - 1, k, 1))
    return x_baseline, x_main, z


def simulate_panel(truth: TruthConfig, seed, exact_delta: bool = False, return_effects: bool = False):
    """Generate one panel under the model; deterministic given the seed.

    ``seed`` may be an integer or a numpy SeedSequence. With ``exact_delta``
    the follow-up intercepts solve the marginal constraint exactly instead of
    using the first-order reconstruction.
    """
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    rng = np.random.default_rng(seed)
    n, t, k = truth.n_subjects, truth.n_times, truth.n_responses

    x1 = rng.uniform(0.0, 1.0, size=n)
    z_i = rng.standard_normal(n)
    x_baseline, x_main, z_design = _designs(truth, x1)

    theta1, theta2 = truth.theta1, truth.theta2
    lam_star = theta1.lambda_star
    scale1 = np.sqrt(1.0 + np.square(lam_star) * truth.sigma1**2)  # (k,)
    dstar1 = scale1[None, :] * (x_baseline @ theta1.beta_star)  # (N, k)
    p1 = probit_cdf(dstar1 + (lam_star * truth.sigma1)[None, :] * z_i[:, None])
    y = np.empty((n, t, k), dtype=np.int8)
    y[:, 0, :] = rng.uniform(size=(n, k)) < p1

    if exact_delta:
        delta = solve_exact_delta(
            x_baseline, x_main, z_design, theta2.beta, theta2.alpha, theta1.beta_star
        )
    else:
        anchor = Anchor.zero(x_main.shape[3], t - 1, z_design.shape[3])
        coefs = coefficients_from_designs(x_baseline, x_main, z_design, theta1.beta_star, anchor)
        delta = delta_from_coefficients(coefs, theta2.beta, theta2.alpha)

    lam = theta2.lambda_
    sig = np.asarray(truth.sigma)
    scale = np.sqrt(1.0 + np.square(lam)[None, :] * np.square(sig)[:, None])  # (T-1, k)
    az = np.einsum("ntjl,tl->ntj", z_design, theta2.alpha)
    for tm in range(t - 1):
        eta = delta[:, tm] + az[:, tm] * y[:, tm, :]
        dstar = scale[tm][None, :] * eta
        p = probit_cdf(dstar + (lam * sig[tm])[None, :] * z_i[:, None])
        y[:, tm + 1, :] = rng.uniform(size=(n, k)) < p

    covariates = {"x1": np.broadcast_to(x1[:, None, None], (n, t, k)).copy()}
    for j in range(1, k):
        ind = np.zeros((n, t, k))
        ind[:, :, j - 1] = 1.0
        covariates[f"resp{j}"] = ind
    panel = PanelData(
        y=y,
        covariates=covariates,
        subject_ids=np.arange(1, n + 1),
        time_labels=np.arange(1, t + 1),
        spec=truth.model_spec,
    )
    return (panel, z_i) if return_effects else panel


@dataclass(frozen=True)
class McSummary:
    """Per-parameter Monte Carlo summary across replications."""

    names: tuple
    true: np.ndarray
    mean: np.ndarray
    bias: np.ndarray
    se: np.ndarray  # SD of the estimates across replications
    mese: np.ndarray  # mean of the estimated standard errors
    cp: np.ndarray  # coverage (%) of 95% Wald intervals
    n_reps: int
    n_failed: int

    def rows(self):
        for i, name in enumerate(self.names):
            yield (
                name,
                float(self.true[i]),
                float(self.mean[i]),
                float(self.bias[i]),
                float(self.se[i]),
                float(self.mese[i]),
                float(self.cp[i]),
            )

    def to_text(self) -> str:
        lines = [f"{'Parameter':<22} {'True':>8} {'Mean':>8} {'Bias':>8} {'SE':>8} {'meSE':>8} {'CP':>6}"]
        for name, true, mean, bias, se, mese, cp in self.rows():
            lines.append(
                f"{name:<22} {true:>8.3f} {mean:>8.3f} {bias:>8.3f} {se:>8.3f} {mese:>8.3f} {cp:>6.1f}"
            )
        lines.append(f"replications: {self.n_reps} ({self.n_failed} failed and excluded)")
        return "\n".join(lines)


def _fit_one_replication(truth: TruthConfig, seed, rep: int, quad_order: int, controls, exact_delta: bool):
    panel = simulate_panel(truth, np.random.SeedSequence(entropy=seed, spawn_key=(rep,)), exact_delta)
    fit = fit_model(panel, rule=gauss_hermite(quad_order), controls=controls)
    if not fit.converged:
        raise McError("fit did not converge")
    est = np.concatenate([fit.stage1.estimate, fit.stage2.estimate])
    se = np.concatenate([fit.se1, fit.se2])
    return est, se


def run_monte_carlo(
    truth: TruthConfig,
    n_reps: int | None = None,
    seed: int | None = None,
    quad_order: int = 20,
    controls: FitControls | None = None,
    threads: int = 1,
    exact_delta: bool = False,
) -> McSummary:
    """Replicate simulate-and-fit and summarize bias, spread, and coverage.

    Replication streams are keyed by (seed, replication index), so results do
    not depend on execution order or thread count. Replications whose fit
    fails are excluded and counted; more than 10% failures aborts.
    """
    n_reps = truth.n_reps if n_reps is None else n_reps
    seed = truth.seed if seed is None else seed
    if n_reps < 1:
        raise ValueError("n_reps must be >= 1")

    results: list = [None] * n_reps
    failures = 0

    def work(rep):
        try:
            return _fit_one_replication(truth, seed, rep, quad_order, controls, exact_delta)
        except Exception as exc:  # noqa: BLE001 - any fit failure is a recorded event
            return exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, range(n_reps)))
    else:
        results = [work(rep) for rep in range(n_reps)]

    estimates, ses = [], []
    for res in results:
        if isinstance(res, Exception):
            failures += 1
        else:
            estimates.append(res[0])
            ses.append(res[1])
    if failures > 0.10 * n_reps:
        raise McError(f"{failures}/{n_reps} replications failed to fit")

    est = np.asarray(estimates)
    mese_mat = np.asarray(ses)
    true = np.concatenate([truth.theta1.pack(), truth.theta2.pack()])
    spec = truth.model_spec
    names = tuple(
        BaselineParams.names(("const",) + spec.baseline_covariates, truth.n_responses)
        + MainParams.names(
            ("const",) + spec.main_covariates,
            ("const",) + spec.transition_covariates,
            truth.n_times - 1,
            truth.n_responses,
        )
    )

    zq = probit_inverse(0.975)
    mean = est.mean(axis=0)
    bias = mean - true
    se = est.std(axis=0, ddof=1) if est.shape[0] > 1 else np.full(true.size, np.nan)
    mese = mese_mat.mean(axis=0)
    covered = np.abs(est - true[None, :]) <= zq * mese_mat
    cp = 100.0 * covered.mean(axis=0)
    return McSummary(
        names=names,
        true=true,
        mean=mean,
        bias=bias,
        se=se,
        mese=mese,
        cp=cp,
        n_reps=n_reps,
        n_failed=failures,
    )
