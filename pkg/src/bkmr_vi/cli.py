"""Command-line front end: ``fit``, ``gls``, ``simulate`` and ``report``.

Exit codes: 0 on success, 2 for input errors, 3 when a fit diverges.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import time
from dataclasses import asdict

import numpy as np
import scipy

from . import __version__
from .elicitation import elicit_priors
from .engine import FitConfig, FitResult, fit
from .errors import FitError, InputError
from .gls import gls_correct, gls_intervals
from .io import (load_dataset, read_json, write_csv, write_json, write_report_tables,
                 write_timing_csv)
from .kernel import build_kernel
from .model import (ConvergenceTrace, Dataset, PriorSpec, VariationalPosterior,
                    wald_intervals, wald_intervals_diag)
from .simulation import (POLLUTANTS, CoverageReport, ExperimentPlan, PopulationSpec,
                         default_threads, generate_population, run_experiment,
                         run_timing_study)

log = logging.getLogger("bkmr_vi")

EXIT_INPUT = 2
EXIT_FIT = 3

STATE_ARRAYS = ("y", "X", "Z", "mu_beta", "Sigma_beta", "mu_h", "Sigma_h")


def _split(value):
    if value is None:
        return None
    if isinstance(value, str):
        return [v.strip() for v in value.split(",") if v.strip()]
    return list(value)


def _load_config(path):
    if not path:
        return {}
    cfg = read_json(path)
    if not isinstance(cfg, dict):
        raise InputError(f"{path}: top-level JSON value must be an object")
    return cfg


def _pick(args, cfg, flag, key=None, default=None):
    value = getattr(args, flag, None)
    if value is not None:
        return value
    return cfg.get(key or flag, default)


def _fit_config(args, cfg) -> FitConfig:
    fc = dict(cfg.get("fit", {}))
    for flag, key in (("tol", "tolerance"), ("max_iter", "max_iterations"),
                      ("burn_in", "burn_in")):
        if getattr(args, flag, None) is not None:
            fc[key] = getattr(args, flag)
    try:
        return FitConfig(**fc)
    except TypeError as exc:
        raise InputError(f"bad fit configuration: {exc}") from None


# ----------------------------------------------------------------- fit


def cmd_fit(args) -> int:
    cfg = _load_config(args.config)
    path = _pick(args, cfg, "input")
    out = _pick(args, cfg, "out")
    if not path or not out:
        raise InputError("fit needs --input and --out")
    response = _pick(args, cfg, "response")
    covariates = _split(_pick(args, cfg, "covariates", default=[])) or []
    exposures = _split(_pick(args, cfg, "exposures", default=[])) or []
    intercept = cfg.get("intercept", True) if args.no_intercept is None else not args.no_intercept
    flavor = _pick(args, cfg, "prior", default="informative")
    config = _fit_config(args, cfg)
    seed = _pick(args, cfg, "seed", default=0)

    data, names = load_dataset(path, response, covariates, exposures, intercept)
    timings = {}
    t0 = time.perf_counter()
    K = build_kernel(data.Z)
    if flavor == "flat":
        prior = PriorSpec.flat()
    elif flavor == "informative":
        prior = (PriorSpec.from_dict({"flavor": "informative", **cfg["prior_spec"]})
                 if "prior_spec" in cfg else elicit_priors(data))
    else:
        raise InputError(f"unknown prior flavor {flavor!r}")
    timings["elicitation"] = time.perf_counter() - t0

    os.makedirs(out, exist_ok=True)
    t0 = time.perf_counter()
    try:
        res = fit(data, prior, K, config)
    except FitError as exc:
        if exc.trace is not None:
            _write_trace(os.path.join(out, "trace.csv"), exc.trace)
        raise
    timings["fit"] = time.perf_counter() - t0

    _write_fit_outputs(out, data, names, res, config, seed, response, exposures)
    write_json(os.path.join(out, "timings.json"), timings)
    print(f"fit: {res.trace.iterations} iterations, converged={res.trace.converged}, "
          f"sigma2_map={res.sigma2_map:.6g}; outputs in {out}")
    return 0


def _write_trace(path, trace: ConvergenceTrace):
    write_csv(path, ["iteration", "objective"],
              [[i + 1, v] for i, v in enumerate(trace.objective_values)])


def _write_fit_outputs(out, data: Dataset, names, res: FitResult, config: FitConfig,
                       seed, response, exposures):
    post = res.posterior
    iv = wald_intervals(post.mu_beta, post.Sigma_beta)
    write_csv(os.path.join(out, "posterior_beta.csv"),
              ["name", "mean", "sd", "lower", "upper", "half_width"],
              zip(names, post.mu_beta, post.sd_beta(), iv.lower, iv.upper, iv.half_width))
    hv = wald_intervals_diag(post.mu_h, np.diag(post.Sigma_h))
    write_csv(os.path.join(out, "posterior_h.csv"), ["row", "mean", "sd", "lower", "upper"],
              zip(range(1, data.n + 1), post.mu_h, post.sd_h(), hv.lower, hv.upper))
    _write_trace(os.path.join(out, "trace.csv"), res.trace)
    write_json(os.path.join(out, "summary.json"), {
        "n": data.n, "p": data.p, "m": data.m,
        "response": response, "covariate_names": list(names),
        "exposure_names": list(exposures),
        "prior": res.prior_used.to_dict(),
        "fit_config": asdict(config),
        "seed": seed,
        "iterations": res.trace.iterations,
        "converged": res.trace.converged,
        "sigma2_map": res.sigma2_map,
        "nu_sigma_q": post.nu_sigma_q, "scale_sigma_q": post.scale_sigma_q,
        "nu_tau_q": post.nu_tau_q, "scale_tau_q": post.scale_tau_q,
    })
    state_dir = os.path.join(out, "state")
    os.makedirs(state_dir, exist_ok=True)
    arrays = {"y": data.y, "X": data.X, "Z": data.Z, "mu_beta": post.mu_beta,
              "Sigma_beta": post.Sigma_beta, "mu_h": post.mu_h, "Sigma_h": post.Sigma_h}
    for name in STATE_ARRAYS:
        np.save(os.path.join(state_dir, f"{name}.npy"), arrays[name])


def load_fit_dir(fit_dir) -> tuple[Dataset, FitResult, dict]:
    """Rebuild the dataset and fit result saved by ``fit``."""
    summary = read_json(os.path.join(fit_dir, "summary.json"))
    arrays = {}
    for name in STATE_ARRAYS:
        path = os.path.join(fit_dir, "state", f"{name}.npy")
        if not os.path.exists(path):
            raise InputError(f"missing fit artifact {path}")
        arrays[name] = np.load(path)
    data = Dataset(arrays["y"], arrays["X"], arrays["Z"])
    post = VariationalPosterior(
        mu_beta=arrays["mu_beta"], Sigma_beta=arrays["Sigma_beta"], mu_h=arrays["mu_h"],
        Sigma_h=arrays["Sigma_h"], nu_sigma_q=summary["nu_sigma_q"],
        scale_sigma_q=summary["scale_sigma_q"], nu_tau_q=summary["nu_tau_q"],
        scale_tau_q=summary["scale_tau_q"])
    fc = summary["fit_config"]
    trace = ConvergenceTrace(criterion=fc["tolerance"], burn_in=fc["burn_in"],
                             converged=summary["converged"])
    res = FitResult(posterior=post, trace=trace, sigma2_map=summary["sigma2_map"],
                    prior_used=PriorSpec.from_dict(summary["prior"]))
    return data, res, summary


# ----------------------------------------------------------------- gls


def cmd_gls(args) -> int:
    cfg = _load_config(args.config)
    fit_dir = _pick(args, cfg, "input")
    if not fit_dir:
        raise InputError("gls needs --input pointing at a fit output directory")
    if not os.path.isdir(fit_dir):
        raise InputError(f"{fit_dir} is not a directory")
    out = _pick(args, cfg, "out") or fit_dir
    data, res, summary = load_fit_dir(fit_dir)
    t0 = time.perf_counter()
    g = gls_correct(res, data)
    iv = gls_intervals(g)
    elapsed = time.perf_counter() - t0
    vi = wald_intervals(res.posterior.mu_beta, res.posterior.Sigma_beta)
    os.makedirs(out, exist_ok=True)
    write_csv(os.path.join(out, "gls_beta.csv"),
              ["name", "beta_gls", "se_gls", "lower", "upper", "half_width",
               "vi_mean", "vi_lower", "vi_upper", "vi_half_width"],
              zip(summary["covariate_names"], g.beta_gls, g.se(), iv.lower, iv.upper,
                  iv.half_width, res.posterior.mu_beta, vi.lower, vi.upper, vi.half_width))
    write_json(os.path.join(out, "gls_timings.json"), {"gls": elapsed})
    print(f"gls: corrected {data.p} coefficients; outputs in {out}")
    return 0


# ------------------------------------------------------------ simulate


def _config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    out = _pick(args, cfg, "out")
    if not out:
        raise InputError("simulate needs --out")
    try:
        pop_spec = PopulationSpec.from_dict(cfg.get("population", {}))
    except TypeError as exc:
        raise InputError(f"bad population configuration: {exc}") from None
    plan_cfg = dict(cfg.get("plan", {}))
    if args.seed is not None:
        plan_cfg["seed"] = args.seed
    if args.replications is not None:
        plan_cfg["replications"] = args.replications
    if args.sample_sizes is not None:
        plan_cfg["sample_sizes"] = [int(v) for v in _split(args.sample_sizes)]
    if args.methods is not None:
        plan_cfg["methods"] = _split(args.methods)
    fit_config = _fit_config(args, cfg)
    try:
        plan = ExperimentPlan(fit_config=fit_config, **plan_cfg)
    except TypeError as exc:
        raise InputError(f"bad plan configuration: {exc}") from None
    threads = args.threads or cfg.get("threads") or default_threads()

    resolved = {"population": asdict(pop_spec),
                "plan": {k: v for k, v in asdict(plan).items() if k != "fit_config"},
                "fit": asdict(fit_config),
                "timing": cfg.get("timing")}
    os.makedirs(out, exist_ok=True)
    pop = generate_population(pop_spec)

    edges, counts = pop.h_histogram()
    write_csv(os.path.join(out, "figure1_h_histogram.csv"),
              ["bin_left", "bin_right", "count"], zip(edges[:-1], edges[1:], counts))
    if args.export_sample:
        size = int(args.export_sample)
        if not 0 < size <= pop.N:
            raise InputError(f"--export-sample must lie in 1..{pop.N}")
        rng = np.random.default_rng(np.random.SeedSequence([plan.seed, size, 2 ** 31]))
        idx = np.sort(rng.choice(pop.N, size=size, replace=False))
        # The intercept column is left out; ``fit`` prepends it by default.
        cov_names = [f"x{j}" for j in range(1, pop_spec.p)]
        write_csv(os.path.join(out, f"sample_n{size}.csv"), ["y", *cov_names, *POLLUTANTS],
                  np.column_stack([pop.y[idx], pop.X[idx][:, 1:], pop.Z[idx]]))

    def progress(k, total):
        if k % max(1, total // 20) == 0 or k == total:
            log.info("simulate: %d/%d replications", k, total)

    report = run_experiment(pop, plan, threads=threads, progress=progress)
    write_report_tables(report, out)
    write_timing_csv(os.path.join(out, "timing.csv"), report.timing)

    timing_cfg = cfg.get("timing")
    if timing_cfg:
        tfit = FitConfig(**{"tolerance": 1e-6, **timing_cfg.get("fit", {})})
        tr = run_timing_study(pop, n=int(timing_cfg.get("n", 1003)),
                              replications=int(timing_cfg.get("replications", 100)),
                              config=tfit, seed=plan.seed)
        write_timing_csv(os.path.join(out, "table4_timing.csv"), {tr.n: tr.stages})
        write_json(os.path.join(out, "table4_iterations.json"),
                   {"n": tr.n, "iterations": tr.iterations, "converged": tr.converged})

    write_json(os.path.join(out, "manifest.json"), {
        "seed": plan.seed,
        "config": resolved,
        "config_sha256": _config_hash(resolved),
        "population_redraws": pop.n_redrawn,
        "versions": {"bkmr_vi": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__, "python": platform.python_version()},
    })
    print(f"simulate: {len(plan.sample_sizes)} sample sizes x {plan.replications} "
          f"replications; outputs in {out}")
    return 0


# -------------------------------------------------------------- report


def format_report(report: CoverageReport) -> str:
    lines = []
    names = report.coefficient_names
    w = 8
    lines.append("Covariate coverage")
    lines.append(f"{'':<8}" + "".join(f"{c:>{w}}" for c in names) + f"{'ok':>{w}}{'fail':>{w}}")
    for n in report.sample_sizes:
        lines.append(f"n={n}")
        for m in report.methods:
            c = report.cell(m, n)
            cov = c.covariate_coverage
            cells = "".join(f"{v:>{w}.3f}" for v in cov) if cov else "".join(
                f"{'-':>{w}}" for _ in names)
            lines.append(f"{m:<8}{cells}{c.successes:>{w}}{c.failures:>{w}}")
    vi = [m for m in report.methods if m.startswith("VI")]
    if vi:
        lines.append("")
        lines.append("Aggregated pollutant-effect coverage")
        lines.append(f"{'n':<8}" + "".join(f"{m:>{w}}" for m in vi))
        for n in report.sample_sizes:
            vals = [report.cell(m, n).pollutant_coverage for m in vi]
            lines.append(f"{n:<8}" + "".join(
                f"{v:>{w}.3f}" if v is not None else f"{'-':>{w}}" for v in vals))
        lines.append("")
        lines.append("sigma^2 MAP, 100 * estimate / truth (MSE on the raw scale)")
        keys = ["mean", "sd", "p2.5", "median", "p97.5", "mse"]
        lines.append(f"{'':<8}" + "".join(f"{k:>10}" for k in keys))
        for n in report.sample_sizes:
            lines.append(f"n={n}")
            for m in vi:
                s = report.cell(m, n).sigma2
                vals = "".join(f"{s[k]:>10.2f}" for k in keys) if s else ""
                lines.append(f"{m:<8}{vals}")
    return "\n".join(lines)


def cmd_report(args) -> int:
    path = args.input
    if not path:
        raise InputError("report needs --input (a simulate output directory or report.json)")
    if os.path.isdir(path):
        path = os.path.join(path, "report.json")
    report = CoverageReport.from_dict(read_json(path))
    print(format_report(report))
    if args.out:
        write_report_tables(report, args.out)
    return 0


# ---------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bkmr-vi",
        description="Mean-field variational inference for Bayesian kernel machine regression.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--input", help="input file or directory")
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int,
                       help="worker processes (default: $BKMR_VI_THREADS or 1)")

    def loop(p):
        p.add_argument("--tol", type=float, help="convergence tolerance on the objective")
        p.add_argument("--max-iter", type=int, dest="max_iter")
        p.add_argument("--burn-in", type=int, dest="burn_in")

    p = sub.add_parser("fit", help="fit the model to a CSV dataset")
    common(p)
    loop(p)
    p.add_argument("--prior", choices=("informative", "flat"))
    p.add_argument("--response", help="response column")
    p.add_argument("--covariates", help="comma-separated covariate columns")
    p.add_argument("--exposures", help="comma-separated exposure columns")
    p.add_argument("--no-intercept", action="store_const", const=True, default=None,
                   dest="no_intercept", help="do not prepend an intercept column")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("gls", help="GLS-corrected intervals from a fit directory")
    common(p)
    p.set_defaults(func=cmd_gls)

    p = sub.add_parser("simulate", help="run the resampling coverage experiment")
    common(p)
    loop(p)
    p.add_argument("--replications", type=int)
    p.add_argument("--sample-sizes", dest="sample_sizes", help="comma-separated, e.g. 100,300,500")
    p.add_argument("--methods", help="comma-separated subset of VI1,VI2,GLS1,GLS2")
    p.add_argument("--export-sample", dest="export_sample", type=int,
                   help="also write one subsample of this size as CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="print the tables of a simulate run")
    common(p)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except FitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FIT
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
