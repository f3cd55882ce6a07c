"""Synthetic population, resampling experiment and coverage/bias/timing summaries.

The population mimics the pollutant-effect design: four positive exposures
(Se, Cd, Pb, Hg) combined as ``Se/100 + Cd*Pb + 1/Hg - 3`` plus a linear
covariate part and Gaussian noise. Subsamples drawn without replacement are
fitted with each method and interval hits are tallied against the truth.
"""
from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .elicitation import elicit_priors
from .engine import FitConfig, FitResult, fit
from .errors import BkmrError, InputError
from .gls import gls_correct, gls_intervals
from .kernel import KernelMatrix, build_kernel
from .model import Dataset, Intervals, PriorSpec, wald_intervals, wald_intervals_diag

log = logging.getLogger(__name__)

POLLUTANTS = ("Se", "Cd", "Pb", "Hg")
DEFAULT_POLLUTANT_MEANS = (190.0, 0.45, 1.1, 1.2)
# Selenium is tightly regulated in blood; the other three are strongly skewed.
DEFAULT_LOG_SDS = (0.15, 1.0, 1.0, 1.0)
# Harness convention, not data: intercept plus five covariate effects.
DEFAULT_BETA = (120.0, 1.0, -1.0, 0.5, -0.5, 2.0)
# Intercept plus eleven covariates for the timing study.
TIMING_BETA = (120.0, 1.0, -1.0, 0.5, -0.5, 2.0, 1.5, -1.5, 0.25, -0.25, 0.75, -0.75)
DEFAULT_METHODS = ("VI1", "VI2", "GLS1", "GLS2")


def pollutant_effect(Se, Cd, Pb, Hg):
    """``Se/100 + Cd*Pb + 1/Hg - 3`` elementwise."""
    return np.asarray(Se) / 100.0 + np.asarray(Cd) * np.asarray(Pb) + 1.0 / np.asarray(Hg) - 3.0


@dataclass(frozen=True)
class PopulationSpec:
    """Generator parameters.

    Covariates are an intercept plus ``len(beta_true) - 1`` standard normal
    columns. Pollutants are lognormal with per-pollutant log-scales
    ``log_sds`` and locations set so their means equal ``pollutant_means``.
    """

    N: int = 10_000
    beta_true: tuple = DEFAULT_BETA
    sigma_true: float = 18.0
    pollutant_means: tuple = DEFAULT_POLLUTANT_MEANS
    log_sds: tuple = DEFAULT_LOG_SDS
    seed: int = 20151016

    def __post_init__(self):
        object.__setattr__(self, "beta_true", tuple(float(b) for b in self.beta_true))
        object.__setattr__(self, "pollutant_means",
                           tuple(float(m) for m in self.pollutant_means))
        sds = self.log_sds
        if np.ndim(sds) == 0:
            sds = (sds,) * len(POLLUTANTS)
        object.__setattr__(self, "log_sds", tuple(float(v) for v in sds))
        if self.N < 2:
            raise InputError("population size must be at least 2")
        if len(self.beta_true) < 1:
            raise InputError("beta_true must contain at least the intercept")
        if len(self.pollutant_means) != len(POLLUTANTS) or len(self.log_sds) != len(POLLUTANTS):
            raise InputError(f"need one mean and one log-scale per pollutant {POLLUTANTS}")
        if min(self.pollutant_means) <= 0 or min(self.log_sds) <= 0 or self.sigma_true <= 0:
            raise InputError("pollutant means, log_sds and sigma_true must be positive")

    @property
    def p(self) -> int:
        return len(self.beta_true)

    @classmethod
    def from_dict(cls, d: Mapping) -> "PopulationSpec":
        return cls(**d)


@dataclass(frozen=True)
class Population:
    X: np.ndarray
    Z: np.ndarray
    h: np.ndarray
    y: np.ndarray
    spec: PopulationSpec
    n_redrawn: int = 0

    @property
    def N(self) -> int:
        return self.y.shape[0]

    def subset(self, idx) -> Dataset:
        return Dataset(self.y[idx], self.X[idx], self.Z[idx])

    def h_histogram(self, bins: int = 50):
        """Bin edges and counts of the population pollutant effects."""
        counts, edges = np.histogram(self.h, bins=bins)
        return edges, counts


def generate_population(spec: PopulationSpec) -> Population:
    """Draw the full population; identical for identical ``spec``."""
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    N, p = spec.N, spec.p
    X = np.column_stack([np.ones(N), rng.standard_normal((N, p - 1))])
    sds = np.asarray(spec.log_sds)
    loc = np.log(np.asarray(spec.pollutant_means)) - 0.5 * sds ** 2
    Z = np.exp(loc + sds * rng.standard_normal((N, len(POLLUTANTS))))
    redrawn = 0
    # Underflow to zero would make 1/Hg infinite; redraw such rows.
    while True:
        bad = ~np.all(np.isfinite(Z) & (Z > 0), axis=1) | ~np.isfinite(1.0 / Z[:, 3])
        k = int(np.sum(bad))
        if k == 0:
            break
        redrawn += k
        Z[bad] = np.exp(loc + sds * rng.standard_normal((k, len(POLLUTANTS))))
    h = pollutant_effect(*Z.T)
    y = h + X @ np.asarray(spec.beta_true) + spec.sigma_true * rng.standard_normal(N)
    return Population(X=X, Z=Z, h=h, y=y, spec=spec, n_redrawn=redrawn)


# ------------------------------------------------------------- methods


@dataclass(frozen=True)
class MethodOutput:
    beta_intervals: Intervals
    h_intervals: Optional[Intervals] = None
    sigma2: Optional[float] = None


class Replication:
    """Per-subsample context handed to method functions.

    Kernel, elicited priors and fits are computed lazily and shared between
    methods; wall-clock time of each stage is recorded in ``timings``.
    """

    def __init__(self, data: Dataset, config: FitConfig, level: float,
                 rng: np.random.Generator):
        self.data = data
        self.config = config
        self.level = level
        self.rng = rng
        self.timings: dict[str, float] = {}
        self._cache: dict[str, object] = {}

    def _timed(self, key, stage, fn):
        if key not in self._cache:
            t0 = time.perf_counter()
            self._cache[key] = fn()
            self.timings[stage] = self.timings.get(stage, 0.0) + time.perf_counter() - t0
        return self._cache[key]

    @property
    def kernel(self) -> KernelMatrix:
        return self._timed("kernel", "elicitation", lambda: build_kernel(self.data.Z))

    @property
    def informative_prior(self) -> PriorSpec:
        return self._timed("prior", "elicitation", lambda: elicit_priors(self.data))

    def fit_informative(self) -> FitResult:
        prior, K = self.informative_prior, self.kernel
        return self._timed("fit1", "fit_VI1",
                           lambda: fit(self.data, prior, K, self.config))

    def fit_flat(self) -> FitResult:
        K = self.kernel
        return self._timed("fit2", "fit_VI2",
                           lambda: fit(self.data, PriorSpec.flat(), K, self.config))


def _vi_output(res: FitResult, level: float) -> MethodOutput:
    post = res.posterior
    return MethodOutput(
        beta_intervals=wald_intervals(post.mu_beta, post.Sigma_beta, level),
        h_intervals=wald_intervals_diag(post.mu_h, np.diag(post.Sigma_h), level),
        sigma2=res.sigma2_map)


def _gls_output(rep: Replication, res: FitResult, stage: str) -> MethodOutput:
    t0 = time.perf_counter()
    out = gls_correct(res, rep.data)
    iv = gls_intervals(out, rep.level)
    rep.timings[stage] = time.perf_counter() - t0
    return MethodOutput(beta_intervals=iv)


def method_vi1(rep: Replication) -> MethodOutput:
    return _vi_output(rep.fit_informative(), rep.level)


def method_vi2(rep: Replication) -> MethodOutput:
    return _vi_output(rep.fit_flat(), rep.level)


def method_gls1(rep: Replication) -> MethodOutput:
    return _gls_output(rep, rep.fit_informative(), "gls_GLS1")


def method_gls2(rep: Replication) -> MethodOutput:
    return _gls_output(rep, rep.fit_flat(), "gls_GLS2")


BUILTIN_METHODS: dict[str, Callable[[Replication], MethodOutput]] = {
    "VI1": method_vi1,
    "VI2": method_vi2,
    "GLS1": method_gls1,
    "GLS2": method_gls2,
}


# ---------------------------------------------------------- experiment


@dataclass(frozen=True)
class ExperimentPlan:
    sample_sizes: tuple = (100, 200, 300, 400, 500)
    replications: int = 200
    methods: tuple = DEFAULT_METHODS
    fit_config: FitConfig = field(default_factory=FitConfig)
    seed: int = 0
    level: float = 0.95

    def __post_init__(self):
        object.__setattr__(self, "sample_sizes", tuple(int(n) for n in self.sample_sizes))
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.replications < 0:
            raise InputError("replications must be non-negative")
        if not self.methods:
            raise InputError("plan needs at least one method")
        if len(set(self.methods)) != len(self.methods):
            raise InputError("duplicate method names")


def interval_coverage(intervals: Intervals, truth) -> np.ndarray:
    """1 where ``lower <= truth <= upper`` (closed), else 0."""
    truth = np.atleast_1d(np.asarray(truth, dtype=float))
    if truth.shape != intervals.lower.shape:
        raise InputError(
            f"{len(intervals)} intervals but {truth.size} true values")
    return ((intervals.lower <= truth) & (truth <= intervals.upper)).astype(int)


@dataclass
class _MethodRecord:
    ok: bool
    beta_hits: Optional[np.ndarray] = None
    h_hits: int = 0
    h_total: int = 0
    sigma2: Optional[float] = None
    error: Optional[str] = None


@dataclass
class _ReplicationRecord:
    n: int
    index: int
    methods: dict
    timings: dict


def replication_seed(seed: int, n: int, index: int) -> np.random.SeedSequence:
    """Independent stream for one ``(n, replication)`` cell."""
    return np.random.SeedSequence([int(seed), int(n), int(index)])


def run_replication(pop: Population, plan: ExperimentPlan, n: int, index: int,
                    methods: Mapping[str, Callable]) -> _ReplicationRecord:
    rng = np.random.default_rng(replication_seed(plan.seed, n, index))
    idx = np.sort(rng.choice(pop.N, size=n, replace=False))
    beta_true = np.asarray(pop.spec.beta_true)
    records = {}
    try:
        data = pop.subset(idx)
    except BkmrError as exc:
        msg = f"{type(exc).__name__}: {exc}"
        return _ReplicationRecord(n, index, {m: _MethodRecord(False, error=msg)
                                             for m in plan.methods}, {})
    rep = Replication(data, plan.fit_config, plan.level, rng)
    for name in plan.methods:
        try:
            out = methods[name](rep)
        except (BkmrError, np.linalg.LinAlgError) as exc:
            records[name] = _MethodRecord(False, error=f"{type(exc).__name__}: {exc}")
            continue
        rec = _MethodRecord(True, beta_hits=interval_coverage(out.beta_intervals, beta_true),
                            sigma2=out.sigma2)
        if out.h_intervals is not None:
            hits = interval_coverage(out.h_intervals, pop.h[idx])
            rec.h_hits, rec.h_total = int(hits.sum()), int(hits.size)
        records[name] = rec
    return _ReplicationRecord(n, index, records, dict(rep.timings))


# Worker-process globals so the population is shipped once per process.
_WORKER: dict = {}


def _worker_init(pop, plan, methods):
    _WORKER.update(pop=pop, plan=plan, methods=methods)


def _worker_task(task):
    n, index = task
    return run_replication(_WORKER["pop"], _WORKER["plan"], n, index, _WORKER["methods"])


def _summary(values) -> dict:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return {"mean": None, "sd": None, "min": None, "max": None}
    return {"mean": float(v.mean()), "sd": float(v.std(ddof=1)) if v.size > 1 else 0.0,
            "min": float(v.min()), "max": float(v.max())}


@dataclass
class CellStats:
    """Aggregates for one (method, n) cell."""

    replications: int
    successes: int
    failures: int
    covariate_coverage: Optional[list]
    pollutant_coverage: Optional[float]
    pollutant_individuals: int
    sigma2: Optional[dict]
    failure_messages: list = field(default_factory=list)


@dataclass
class CoverageReport:
    sample_sizes: list
    replications: int
    methods: list
    coefficient_names: list
    level: float
    sigma2_true: float
    cells: dict  # method -> {n: CellStats}
    timing: dict = field(default_factory=dict)  # n -> stage -> summary

    def cell(self, method: str, n: int) -> CellStats:
        return self.cells[method][n]

    def to_dict(self, include_timing: bool = False) -> dict:
        d = {
            "sample_sizes": list(self.sample_sizes),
            "replications": self.replications,
            "methods": list(self.methods),
            "coefficient_names": list(self.coefficient_names),
            "level": self.level,
            "sigma2_true": self.sigma2_true,
            "cells": {m: {str(n): asdict(c) for n, c in by_n.items()}
                      for m, by_n in self.cells.items()},
        }
        if include_timing:
            d["timing"] = {str(n): t for n, t in self.timing.items()}
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "CoverageReport":
        cells = {m: {int(n): CellStats(**c) for n, c in by_n.items()}
                 for m, by_n in d["cells"].items()}
        timing = {int(n): t for n, t in d.get("timing", {}).items()}
        return cls(sample_sizes=list(d["sample_sizes"]), replications=d["replications"],
                   methods=list(d["methods"]),
                   coefficient_names=list(d["coefficient_names"]), level=d["level"],
                   sigma2_true=d["sigma2_true"], cells=cells, timing=timing)


def _aggregate(records: Sequence[_ReplicationRecord], n: int, method: str, p: int,
               sigma2_true: float) -> CellStats:
    recs = [r.methods[method] for r in records if r.n == n]
    ok = [r for r in recs if r.ok]
    failed = [r for r in recs if not r.ok]
    cov = None
    if ok:
        cov = [float(c) for c in np.mean([r.beta_hits for r in ok], axis=0)]
    h_total = sum(r.h_total for r in ok)
    poll = float(sum(r.h_hits for r in ok) / h_total) if h_total else None
    s2 = [r.sigma2 for r in ok if r.sigma2 is not None]
    sig = None
    if s2:
        s2 = np.asarray(s2)
        ratio = 100.0 * s2 / sigma2_true
        sig = {
            "mean": float(ratio.mean()),
            "sd": float(ratio.std(ddof=1)) if ratio.size > 1 else 0.0,
            "p2.5": float(np.percentile(ratio, 2.5)),
            "median": float(np.median(ratio)),
            "p97.5": float(np.percentile(ratio, 97.5)),
            "mse": float(np.mean((s2 - sigma2_true) ** 2)),
        }
    return CellStats(replications=len(recs), successes=len(ok), failures=len(failed),
                     covariate_coverage=cov, pollutant_coverage=poll,
                     pollutant_individuals=h_total, sigma2=sig,
                     failure_messages=sorted({r.error for r in failed})[:5])


def coefficient_names(p: int) -> list:
    return [f"beta{j}" for j in range(p)]


def run_experiment(pop: Population, plan: ExperimentPlan, *, threads: int = 1,
                   methods: Optional[Mapping[str, Callable]] = None,
                   progress: Optional[Callable[[int, int], None]] = None) -> CoverageReport:
    """Resample, fit every method and aggregate coverage, bias and timing.

    ``methods`` overrides or extends :data:`BUILTIN_METHODS`. Each
    replication draws from its own seed stream, so the report does not
    depend on ``threads``. Failed fits are excluded and counted per cell.
    """
    registry = dict(BUILTIN_METHODS)
    if methods:
        registry.update(methods)
    unknown = [m for m in plan.methods if m not in registry]
    if unknown:
        raise InputError(f"unknown methods: {unknown}")
    too_big = [n for n in plan.sample_sizes if n > pop.N]
    if too_big:
        raise InputError(f"sample sizes {too_big} exceed the population size {pop.N}")
    p = pop.spec.p
    for n in plan.sample_sizes:
        if n < p + 2:
            raise InputError(f"sample size {n} is too small for {p} covariates")

    tasks = [(n, i) for n in plan.sample_sizes for i in range(plan.replications)]
    records: list[_ReplicationRecord] = []
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads, initializer=_worker_init,
                                 initargs=(pop, plan, registry)) as ex:
            for k, rec in enumerate(ex.map(_worker_task, tasks, chunksize=4), 1):
                records.append(rec)
                if progress:
                    progress(k, len(tasks))
    else:
        for k, (n, i) in enumerate(tasks, 1):
            records.append(run_replication(pop, plan, n, i, registry))
            if progress:
                progress(k, len(tasks))

    sigma2_true = pop.spec.sigma_true ** 2
    cells = {m: {n: _aggregate(records, n, m, p, sigma2_true) for n in plan.sample_sizes}
             for m in plan.methods}
    timing = {}
    for n in plan.sample_sizes:
        stages: dict[str, list] = {}
        for r in records:
            if r.n == n:
                for stage, sec in r.timings.items():
                    stages.setdefault(stage, []).append(sec)
        timing[n] = {stage: _summary(v) for stage, v in sorted(stages.items())}
    return CoverageReport(sample_sizes=list(plan.sample_sizes), replications=plan.replications,
                          methods=list(plan.methods), coefficient_names=coefficient_names(p),
                          level=plan.level, sigma2_true=sigma2_true, cells=cells,
                          timing=timing)


# -------------------------------------------------------------- timing


@dataclass
class TimingReport:
    n: int
    replications: int
    stages: dict  # stage -> summary (seconds)
    iterations: list
    converged: list


def run_timing_study(pop: Population, n: int = 1003, replications: int = 100,
                     config: Optional[FitConfig] = None, seed: int = 0) -> TimingReport:
    """Time elicitation (with kernel build and factorization), the informative
    fit and the GLS correction on repeated subsamples of size ``n``."""
    config = config or FitConfig(tolerance=1e-6)
    stages = {"elicitation": [], "fit_VI1": [], "gls": []}
    iterations, converged = [], []
    for i in range(replications):
        rng = np.random.default_rng(replication_seed(seed, n, i))
        data = pop.subset(np.sort(rng.choice(pop.N, size=n, replace=False)))
        t0 = time.perf_counter()
        K = build_kernel(data.Z)
        prior = elicit_priors(data)
        t1 = time.perf_counter()
        res = fit(data, prior, K, config)
        t2 = time.perf_counter()
        gls_intervals(gls_correct(res, data))
        t3 = time.perf_counter()
        stages["elicitation"].append(t1 - t0)
        stages["fit_VI1"].append(t2 - t1)
        stages["gls"].append(t3 - t2)
        iterations.append(res.trace.iterations)
        converged.append(res.trace.converged)
    return TimingReport(n=n, replications=replications,
                        stages={k: _summary(v) for k, v in stages.items()},
                        iterations=iterations, converged=converged)


def default_threads() -> int:
    """Thread count from ``BKMR_VI_THREADS`` (defaults to 1)."""
    raw = os.environ.get("BKMR_VI_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1
