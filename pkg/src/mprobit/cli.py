"""Command-line interface.

Subcommands
-----------
fit        fit a panel CSV and write a parameter report
simulate   generate a panel under the model and write it as CSV
mc         run the Monte Carlo study and write its summary table
predict    fit, estimate subject effects, and write probability surfaces

Model specs are JSON files with keys: subject_col, time_col, response_col,
y_col, baseline_covariates, main_covariates, transition_covariates,
quad_order. Truth configs for simulate/mc are JSON files mirroring
:class:`mprobit.simulate.TruthConfig`; omitted, the reference study design
is used.

Outputs land in --out: fit_report.csv, run_summary.json (fit/predict),
panel.csv + spec.json (simulate), mc_summary.csv (mc), predictions.csv +
metrics.csv + r2.csv + subjects.csv (predict). Exit codes: 0 success,
2 data or spec errors, 3 non-convergence or harness failure.

Worker threads default to the MPROBIT_THREADS environment variable; the
--threads flag wins. Results are independent of the thread count.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import DataError, ModelSpec, export_csv, ingest, validate
from .ebayes import accuracy_metrics, estimate_effects, probability_surfaces, probit_r2
from .fitter import (
    FitControls,
    FitError,
    boundary_variance_test,
    fit_model,
    wald_rows,
)
from .glm import fit_glm_probit
from .kernels import gauss_hermite
from .simulate import McError, TruthConfig, default_truth, run_monte_carlo, simulate_panel

EXIT_OK = 0
EXIT_DATA_ERROR = 2
EXIT_NO_CONVERGENCE = 3


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _controls(args) -> FitControls:
    return FitControls(
        max_iter=args.max_iter,
        tol_score=args.tol_score,
        tol_loglik=args.tol_loglik,
    )


def _load_inputs(args):
    spec = ModelSpec.from_json(args.spec)
    if args.quad_order is not None:
        spec = ModelSpec(
            subject_col=spec.subject_col,
            time_col=spec.time_col,
            response_col=spec.response_col,
            y_col=spec.y_col,
            baseline_covariates=spec.baseline_covariates,
            main_covariates=spec.main_covariates,
            transition_covariates=spec.transition_covariates,
            quad_order=args.quad_order,
        )
    return ingest(args.input, spec)


def _fit_report_rows(fit, glm1, glm2):
    rows = []
    for stage, names, est, se in (
        ("baseline", fit.baseline_names, fit.stage1.estimate, fit.se1),
        ("followup", fit.main_names, fit.stage2.estimate, fit.se2),
    ):
        for name, estimate, stderr, null, z, p in wald_rows(names, est, se):
            if name.startswith("c["):
                z, p = float("nan"), float("nan")
            rows.append((stage, name, estimate, stderr, null, z, p))
    for label, sigma, se_sigma in fit.sigma_estimates():
        t = int(label[label.index("[") + 1 : label.index("]")])
        c_hat = fit.theta1.c1 if t == 1 else fit.theta2.c[t - 2]
        se_c = fit.se1[-1] if t == 1 else fit.se2[-(fit.theta2.c.size - (t - 2))]
        stage = "baseline" if t == 1 else "followup"
        p_boundary = boundary_variance_test(c_hat, se_c)
        rows.append((stage, label, sigma, se_sigma, 0.0, sigma / se_sigma if se_sigma > 0 else float("nan"), p_boundary))
    for stage, glm, names in (("glm_baseline", glm1, fit.baseline_names), ("glm_followup", glm2, fit.main_names)):
        glm_names = [n for n in names if n.startswith("beta")]
        for name, estimate, stderr, null, z, p in wald_rows(glm_names, glm.coefficients, glm.se):
            rows.append((stage, name, estimate, stderr, null, z, p))
    return rows


def _report_text(rows, fit, glm1, glm2) -> str:
    lines = [f"{'stage':<14} {'parameter':<26} {'estimate':>12} {'se':>10} {'z':>9} {'p':>8}"]
    for stage, name, est, se, _null, z, p in rows:
        z_txt = f"{z:>9.3f}" if np.isfinite(z) else f"{'':>9}"
        p_txt = f"{p:>8.4f}" if np.isfinite(p) else f"{'':>8}"
        lines.append(f"{stage:<14} {name:<26} {est:>12.4f} {se:>10.4f} {z_txt} {p_txt}")
    lines.append("")
    lines.append(
        f"log-likelihood: baseline {fit.loglik1:.4f} + followup {fit.loglik2:.4f} "
        f"= {fit.loglik_total:.4f} (GLM: {glm1.loglik:.4f} / {glm2.loglik:.4f})"
    )
    lines.append(
        f"converged: baseline={fit.stage1.converged} ({fit.stage1.iterations} iter), "
        f"followup={fit.stage2.converged} ({fit.stage2.iterations} iter)"
    )
    return "\n".join(lines)


def _run_fit(args):
    data = _load_inputs(args)
    rule = gauss_hermite(data.spec.quad_order)
    fit = fit_model(data, rule=rule, controls=_controls(args))
    glm1 = fit_glm_probit(data.y[:, 0, :].reshape(-1), data.x_baseline.reshape(-1, data.x_baseline.shape[-1]))
    glm2 = fit_glm_probit(data.y[:, 1:, :].reshape(-1), data.x_main.reshape(-1, data.x_main.shape[-1]))
    return data, fit, glm1, glm2


def _fit_summary_payload(args, data, fit, glm1, glm2) -> dict:
    return {
        "command": "fit",
        "version": __version__,
        "input": str(args.input),
        "quad_order": data.spec.quad_order,
        "n_subjects": data.n_subjects,
        "n_times": data.n_times,
        "n_responses": data.n_responses,
        "loglik_baseline": fit.loglik1,
        "loglik_followup": fit.loglik2,
        "loglik_total": fit.loglik_total,
        "glm_loglik_baseline": glm1.loglik,
        "glm_loglik_followup": glm2.loglik,
        "converged_baseline": bool(fit.stage1.converged),
        "converged_followup": bool(fit.stage2.converged),
        "iterations_baseline": fit.stage1.iterations,
        "iterations_followup": fit.stage2.iterations,
        "trace_baseline": [list(entry) for entry in fit.stage1.trace],
        "trace_followup": [list(entry) for entry in fit.stage2.trace],
    }


def cmd_fit(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data, fit, glm1, glm2 = _run_fit(args)
    rows = _fit_report_rows(fit, glm1, glm2)
    _write_csv(out / "fit_report.csv", ("stage", "parameter", "estimate", "se", "null", "z", "p"), rows)
    _write_json(out / "run_summary.json", _fit_summary_payload(args, data, fit, glm1, glm2))
    print(_report_text(rows, fit, glm1, glm2))
    return EXIT_OK if fit.converged else EXIT_NO_CONVERGENCE


def _truth_from_args(args) -> TruthConfig:
    truth = TruthConfig.from_json(args.truth) if args.truth else default_truth()
    if args.seed is not None:
        truth = TruthConfig(**{**truth.__dict__, "seed": args.seed})
    return truth


def cmd_simulate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    truth = _truth_from_args(args)
    panel = simulate_panel(truth, truth.seed, exact_delta=args.exact_delta)
    export_csv(panel, out / "panel.csv")
    panel.spec.to_json(out / "spec.json")
    report = validate(panel)
    _write_json(
        out / "run_summary.json",
        {
            "command": "simulate",
            "version": __version__,
            "seed": truth.seed,
            "exact_delta": bool(args.exact_delta),
            "n_subjects": panel.n_subjects,
            "n_times": panel.n_times,
            "n_responses": panel.n_responses,
            "rows": panel.n_subjects * panel.n_times * panel.n_responses,
            "validation_flags": list(report.flags),
        },
    )
    print(f"wrote {panel.n_subjects * panel.n_times * panel.n_responses} rows to {out / 'panel.csv'}")
    return EXIT_OK


def cmd_mc(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    truth = _truth_from_args(args)
    summary = run_monte_carlo(
        truth,
        n_reps=args.reps,
        seed=truth.seed,
        quad_order=args.quad_order if args.quad_order is not None else 20,
        controls=_controls(args),
        threads=args.threads,
        exact_delta=args.exact_delta,
    )
    _write_csv(out / "mc_summary.csv", ("Parameter", "True", "Mean", "Bias", "SE", "meSE", "CP"), summary.rows())
    _write_json(
        out / "run_summary.json",
        {
            "command": "mc",
            "version": __version__,
            "seed": truth.seed,
            "n_reps": summary.n_reps,
            "n_failed": summary.n_failed,
            "threads": args.threads,
        },
    )
    print(summary.to_text())
    return EXIT_OK


def cmd_predict(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data, fit, glm1, glm2 = _run_fit(args)
    rows = _fit_report_rows(fit, glm1, glm2)
    _write_csv(out / "fit_report.csv", ("stage", "parameter", "estimate", "se", "null", "z", "p"), rows)

    effects = estimate_effects(fit, data)
    surfaces = probability_surfaces(fit, data, effects)
    n, t, k = data.y.shape
    i_idx, t_idx, j_idx = np.unravel_index(np.arange(n * t * k), (n, t, k))
    pred_rows = zip(
        data.subject_ids[i_idx],
        data.time_labels[t_idx],
        j_idx + 1,
        data.y[i_idx, t_idx, j_idx],
        surfaces.marginal[i_idx, t_idx, j_idx],
        surfaces.conditional[i_idx, t_idx, j_idx],
        surfaces.conditional_average[i_idx, t_idx, j_idx],
    )
    _write_csv(
        out / "predictions.csv",
        ("subject", "time", "response", "observed", "marginal", "conditional", "conditional_average"),
        pred_rows,
    )

    metric_rows = []
    period_slices = {"baseline": np.s_[:, :1, :], "followup": np.s_[:, 1:, :], "all": np.s_[:, :, :]}
    surfaces_by_name = {
        "marginal": surfaces.marginal,
        "conditional": surfaces.conditional,
        "conditional_average": surfaces.conditional_average,
    }
    for period, sl in period_slices.items():
        y_slice = data.y[sl]
        for prob_name, probs in surfaces_by_name.items():
            metrics = accuracy_metrics(y_slice.ravel(), probs[sl].ravel())
            metric_rows.append((period, prob_name, metrics["epcp"], metrics["auroc"]))
    _write_csv(out / "metrics.csv", ("period", "probability", "epcp", "auroc"), metric_rows)

    r2 = probit_r2(surfaces)
    _write_csv(
        out / "r2.csv",
        ("response", "period", "r_squared"),
        [(j, period, value) for (j, period), value in sorted(r2.items())],
    )
    _write_csv(
        out / "subjects.csv",
        ("subject", "z_hat", "converged"),
        zip(data.subject_ids, effects.z_hat, effects.converged),
    )

    payload = _fit_summary_payload(args, data, fit, glm1, glm2)
    payload["command"] = "predict"
    payload["effects_converged"] = int(effects.converged.sum())
    _write_json(out / "run_summary.json", payload)
    print(_report_text(rows, fit, glm1, glm2))
    print(f"\nwrote per-cell probabilities for {n * t * k} cells to {out / 'predictions.csv'}")
    return EXIT_OK if fit.converged else EXIT_NO_CONVERGENCE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mprobit", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"mprobit {__version__}")
    default_threads = int(os.environ.get("MPROBIT_THREADS", "1"))
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, needs_input: bool):
        if needs_input:
            p.add_argument("--input", required=True, help="long-format panel CSV")
            p.add_argument("--spec", required=True, help="model spec JSON")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="random seed")
        p.add_argument("--quad-order", type=int, default=None, help="quadrature order (default 20)")
        p.add_argument("--max-iter", type=int, default=200)
        p.add_argument("--tol-score", type=float, default=1e-6)
        p.add_argument("--tol-loglik", type=float, default=1e-10)
        p.add_argument("--threads", type=int, default=default_threads)

    p_fit = sub.add_parser("fit", help="fit a panel and report estimates")
    add_common(p_fit, needs_input=True)
    p_fit.set_defaults(func=cmd_fit)

    p_sim = sub.add_parser("simulate", help="simulate a panel under the model")
    add_common(p_sim, needs_input=False)
    p_sim.add_argument("--truth", default=None, help="truth config JSON (default: reference design)")
    p_sim.add_argument("--exact-delta", action="store_true", help="solve intercepts exactly")
    p_sim.set_defaults(func=cmd_simulate)

    p_mc = sub.add_parser("mc", help="Monte Carlo study: simulate, fit, summarize")
    add_common(p_mc, needs_input=False)
    p_mc.add_argument("--truth", default=None, help="truth config JSON (default: reference design)")
    p_mc.add_argument("--reps", type=int, default=None, help="replications (default from truth config)")
    p_mc.add_argument("--exact-delta", action="store_true", help="simulate with exact intercepts")
    p_mc.set_defaults(func=cmd_mc)

    p_pred = sub.add_parser("predict", help="fit and write probability surfaces")
    add_common(p_pred, needs_input=True)
    p_pred.set_defaults(func=cmd_predict)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA_ERROR
    except (FitError, McError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
