"""Command-line interface.

Subcommands:

* ``generate``       — simulate a ground-truth matrix and dataset to CSV.
* ``run``            — run an experiment (config file + flag overrides).
* ``diagnose``       — summarize a finished run's samples/trace files.
* ``select-lambda``  — grid-search the prior rate on a train/test split.
* ``compare``        — sign agreement between two samples files.

Flags always override config-file values; ``--seed`` and ``--out-dir`` are
available on every run-producing subcommand.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .diagnostics import DiagnosticsReport, effective_sample_size, recovery_mse, sign_agreement
from .estimators import EstimatorConfig
from .harness import (
    ExperimentConfig,
    _jsonable,
    generate_true_theta,
    load_binary_csv,
    load_theta_csv,
    posterior_mean_from_samples,
    read_samples_csv,
    read_trace_csv,
    run_experiment,
    simulate_dataset,
    write_binary_csv,
    write_theta_csv,
)
from .priors import RateSearchSettings, select_lambda
from .samplers import ProposalSpec


def _add_run_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="INI config file; flags override it")
    sub.add_argument("--seed", type=int)
    sub.add_argument("--out-dir", dest="out_dir")
    sub.add_argument("--kernel", choices=["pm", "noisy", "exchange", "exact"])
    sub.add_argument("--iterations", type=int)
    sub.add_argument("--burn-in", dest="burn_in", type=int)
    sub.add_argument("--replications", type=int)
    sub.add_argument("--workers", type=int)
    sub.add_argument("--inner-sweeps", dest="inner_sweeps", type=int)
    sub.add_argument("--oracle-diagnostics", dest="oracle_diagnostics",
                     action="store_const", const=True)
    sub.add_argument("--prior-rate", dest="prior_rate", type=float)
    sub.add_argument("--p", type=int)
    sub.add_argument("--n", type=int)
    sub.add_argument("--regime", choices=["dense", "sparse"])
    sub.add_argument("--source", choices=["synthetic", "file"])
    sub.add_argument("--data", dest="data_path")
    sub.add_argument("--has-header", dest="has_header", action="store_const", const=True)
    sub.add_argument("--warmup-sweeps", dest="warmup_sweeps", type=int)
    sub.add_argument("--thin-sweeps", dest="thin_sweeps", type=int)
    sub.add_argument("--diag-zero", dest="diag_zero", action="store_const", const=True)
    sub.add_argument("--fix-theta0", dest="fix_theta0", action="store_const", const=True)
    sub.add_argument("--proposal-kind", dest="proposal.kind",
                     choices=["random_walk", "langevin"])
    sub.add_argument("--step-rw", dest="proposal.step_rw", type=float)
    sub.add_argument("--step-langevin", dest="proposal.step_langevin", type=float)
    sub.add_argument("--grad-samples", dest="proposal.grad_samples", type=int)
    sub.add_argument("--n-samples", dest="estimator.n_samples", type=int)
    sub.add_argument("--pilot-replicates", dest="estimator.pilot_replicates", type=int)
    sub.add_argument("--alpha", dest="estimator.alpha", type=float)
    sub.add_argument("--geom-p", dest="estimator.geom_p", type=float)
    sub.add_argument("--enumeration-cap", dest="estimator.enumeration_cap", type=int)


def _cmd_generate(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    theta0 = generate_true_theta(args.p, args.regime, rng, diag_zero=args.diag_zero)
    data = simulate_dataset(theta0, args.n, args.warmup_sweeps, args.thin_sweeps, rng)
    write_theta_csv(out / "theta0.csv", theta0)
    write_binary_csv(out / "data.csv", data)
    print(f"wrote {out/'theta0.csv'} and {out/'data.csv'} "
          f"({args.n} rows, p={args.p}, regime={args.regime})")
    return 0


def _cmd_run(args) -> int:
    overrides = {}
    for key, val in vars(args).items():
        if key in ("command", "config", "func") or val is None:
            continue
        overrides[key] = val
    if args.config:
        cfg = ExperimentConfig.from_file(args.config, overrides)
    else:
        flat = {k: v for k, v in overrides.items() if "." not in k}
        prop = {k.split(".", 1)[1]: v for k, v in overrides.items()
                if k.startswith("proposal.")}
        est = {k.split(".", 1)[1]: v for k, v in overrides.items()
               if k.startswith("estimator.")}
        cfg = ExperimentConfig.from_values(flat, prop, est)
    run_dirs = run_experiment(cfg)
    for d in run_dirs:
        print(d)
    return 0


def _cmd_diagnose(args) -> int:
    _, signs, samples, p = read_samples_csv(args.samples)
    ess = np.array([effective_sample_size(samples[:, j])
                    for j in range(samples.shape[1])])
    acceptance = np.nan
    if args.trace:
        _, _, accepted = read_trace_csv(args.trace)
        acceptance = float(accepted.mean())
    mse = None
    if args.theta0:
        theta0 = load_theta_csv(args.theta0)
        mse = recovery_mse(posterior_mean_from_samples(args.samples), theta0)
    wall_minutes = args.wall_minutes if args.wall_minutes is not None else np.nan
    mean_ess = float(ess.mean())
    report = DiagnosticsReport(
        ess_per_coordinate=ess,
        mean_ess=mean_ess,
        median_ess=float(np.median(ess)),
        mse=mse,
        acceptance_rate=acceptance,
        wall_minutes=wall_minutes,
        ess_per_minute=mean_ess / wall_minutes if wall_minutes > 0 else np.nan,
    )
    text = json.dumps(_jsonable(report.as_dict()), indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def _cmd_select_lambda(args) -> int:
    train = load_binary_csv(args.train, args.has_header)
    test = load_binary_csv(args.test, args.has_header)
    grid = [float(tok) for tok in args.grid.split(",") if tok.strip()]
    settings = RateSearchSettings(
        kernel=args.kernel,
        proposal=ProposalSpec(kind=args.proposal_kind, step_rw=args.step_rw,
                              step_langevin=args.step_langevin),
        estimator=EstimatorConfig(n_samples=args.n_samples),
        iterations=args.iterations,
        burn_in=args.burn_in,
        eval_draws=args.eval_draws,
        inner_sweeps=args.inner_sweeps,
    )
    rng = np.random.default_rng(args.seed)
    rate = select_lambda(grid, train, test, settings, rng)
    print(rate)
    return 0


def _cmd_compare(args) -> int:
    mean_a = posterior_mean_from_samples(args.a)
    mean_b = posterior_mean_from_samples(args.b)
    agreement = sign_agreement(mean_a, mean_b, args.threshold)
    print(f"{agreement:.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="isingpm",
        description="Posterior sampling for intractable binary interaction models",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="simulate a ground truth and dataset")
    gen.add_argument("--p", type=int, required=True)
    gen.add_argument("--n", type=int, required=True)
    gen.add_argument("--regime", choices=["dense", "sparse"], default="dense")
    gen.add_argument("--warmup-sweeps", dest="warmup_sweeps", type=int, default=500)
    gen.add_argument("--thin-sweeps", dest="thin_sweeps", type=int, default=0)
    gen.add_argument("--diag-zero", dest="diag_zero", action="store_true")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out-dir", dest="out_dir", required=True)
    gen.set_defaults(func=_cmd_generate)

    run = sub.add_parser("run", help="run an experiment")
    _add_run_flags(run)
    run.set_defaults(func=_cmd_run)

    diag = sub.add_parser("diagnose", help="summarize a finished run")
    diag.add_argument("--samples", required=True)
    diag.add_argument("--trace")
    diag.add_argument("--theta0")
    diag.add_argument("--wall-minutes", dest="wall_minutes", type=float)
    diag.add_argument("--out")
    diag.set_defaults(func=_cmd_diagnose)

    sel = sub.add_parser("select-lambda", help="grid-search the prior rate")
    sel.add_argument("--train", required=True)
    sel.add_argument("--test", required=True)
    sel.add_argument("--grid", required=True, help="comma-separated rates")
    sel.add_argument("--has-header", dest="has_header", action="store_true")
    sel.add_argument("--kernel", choices=["pm", "noisy", "exchange", "exact"],
                     default="noisy")
    sel.add_argument("--proposal-kind", dest="proposal_kind",
                     choices=["random_walk", "langevin"], default="random_walk")
    sel.add_argument("--step-rw", dest="step_rw", type=float, default=0.04)
    sel.add_argument("--step-langevin", dest="step_langevin", type=float, default=0.01)
    sel.add_argument("--n-samples", dest="n_samples", type=int, default=1000)
    sel.add_argument("--iterations", type=int, default=1500)
    sel.add_argument("--burn-in", dest="burn_in", type=int, default=500)
    sel.add_argument("--eval-draws", dest="eval_draws", type=int, default=100_000)
    sel.add_argument("--inner-sweeps", dest="inner_sweeps", type=int, default=50)
    sel.add_argument("--seed", type=int, default=0)
    sel.set_defaults(func=_cmd_select_lambda)

    cmp_ = sub.add_parser("compare", help="sign agreement between two runs")
    cmp_.add_argument("--a", required=True, help="first samples.csv")
    cmp_.add_argument("--b", required=True, help="second samples.csv")
    cmp_.add_argument("--threshold", type=float, default=0.1)
    cmp_.set_defaults(func=_cmd_compare)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
