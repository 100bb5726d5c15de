"""Maximum-likelihood marginalized probit models for multivariate
longitudinal binary panels.

The model has three levels per period: a marginal probit regression, a
first-order transition layer linked to it through per-cell intercepts, and a
probit-normal random-effects layer linked in closed form. A separate
first-period model handles the start of the series. Fitting is two-stage
Fisher scoring under Gauss-Hermite quadrature; the package also provides a
model-faithful simulator, a Monte Carlo harness, and empirical-Bayes subject
effects with the probability surfaces built on them.
"""

from .constraints import (
    Anchor,
    ConstraintCoefficients,
    ConstraintSolution,
    ConstraintSolverError,
    build_constraint_coefficients,
    constraint_residual,
    delta_from_coefficients,
    delta_ift,
    delta_star_baseline,
    delta_star_main,
    ift_coefficients,
    solve_anchor_delta0,
    solve_constraints,
    solve_exact_delta,
)
from .data import (
    DataError,
    InvalidResponseError,
    ModelSpec,
    PanelData,
    SpecMismatchError,
    UnbalancedPanelError,
    ValidationReport,
    export_csv,
    ingest,
    validate,
)
from .ebayes import (
    SubjectEffects,
    Surfaces,
    accuracy_metrics,
    estimate_effects,
    estimate_z,
    probability_surfaces,
    probit_r2,
)
from .fitter import (
    FitControls,
    FitError,
    FitResult,
    LineSearchError,
    SingularInformationError,
    StageFit,
    boundary_variance_test,
    fisher_scoring,
    fit_model,
    information_baseline,
    information_main,
    jkb_transform,
    lrt,
    wald_tests,
)
from .glm import GlmFit, fit_glm_probit, vif
from .kernels import (
    QuadratureRule,
    delta_method_sd,
    gauss_hermite,
    probit_cdf,
    probit_inverse,
    probit_pdf,
)
from .likelihood import (
    LikelihoodError,
    LikelihoodWorkspace,
    evaluate_baseline,
    evaluate_main,
    loglik_baseline,
    loglik_main,
    score_baseline,
    score_main,
)
from .params import BaselineParams, MainParams
from .simulate import McError, McSummary, TruthConfig, default_truth, run_monte_carlo, simulate_panel

__version__ = "0.1.0"
