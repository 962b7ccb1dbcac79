"""Monte Carlo coverage experiments for the cross-fitted AIPW estimator.

A cell is one (n, p) pair. Every replication of a cell draws its data and
estimator randomness from ``SeedSequence(master_seed, spawn_key=(p, n, r,
purpose))``, so results do not depend on worker count or scheduling, and a
run with more replications extends a shorter one. Results are sorted by
replication index before aggregation.

Set ``AIPWLAB_MAX_WORKERS`` to cap the process pool size.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .aipw import DEFAULT_CLIP, estimate_ate, learner_from_dict
from .dgp import DgpSpec, generate, true_ate
from .errors import AipwLabError, InvalidInputError, InvalidParameterError

log = logging.getLogger(__name__)

DATA_STREAM = 0
ESTIMATOR_STREAM = 1
DEFAULT_BINS = 30
WORKERS_ENV = "AIPWLAB_MAX_WORKERS"


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    dgp: DgpSpec
    sample_sizes: tuple
    replications: int
    learner: dict
    dimensions: Optional[tuple] = None
    k_folds: int = 2
    split_fraction: Optional[float] = None
    clip: tuple = DEFAULT_CLIP
    ci_level: float = 0.95
    paper_literal: bool = False
    master_seed: int = 20210601
    parallelism: int = 1
    histogram_bins: int = DEFAULT_BINS
    output_dir: Optional[str] = None
    name: str = "experiment"

    def __post_init__(self):
        if self.replications < 1:
            raise InvalidParameterError(f"replications must be >= 1, got {self.replications}")
        if not self.sample_sizes or any(int(n) < 1 for n in self.sample_sizes):
            raise InvalidParameterError("sample_sizes must be a nonempty list of positive counts")
        if self.dimensions is not None and (not self.dimensions or any(int(p) < 1 for p in self.dimensions)):
            raise InvalidParameterError("dimensions must be a nonempty list of positive counts")
        if not 0.0 < self.ci_level < 1.0:
            raise InvalidParameterError(f"ci_level must lie in (0, 1), got {self.ci_level}")
        lo, hi = self.clip
        if not 0.0 < lo < hi < 1.0:
            raise InvalidParameterError(f"clip must satisfy 0 < lo < hi < 1, got {self.clip}")
        if self.k_folds < 1:
            raise InvalidParameterError(f"k_folds must be >= 1, got {self.k_folds}")
        if self.k_folds == 1 and self.split_fraction is None:
            raise InvalidParameterError("k_folds=1 requires split_fraction")
        if self.parallelism < 1:
            raise InvalidParameterError(f"parallelism must be >= 1, got {self.parallelism}")
        if self.histogram_bins < 1:
            raise InvalidParameterError("histogram_bins must be >= 1")
        learner_from_dict(self.learner, self.dgp)  # validates

    def cells(self) -> list[tuple[int, int]]:
        dims = self.dimensions or (self.dgp.p,)
        return [(int(p), int(n)) for p in dims for n in self.sample_sizes]

    def spec_for(self, p: int) -> DgpSpec:
        return self.dgp if p == self.dgp.p else self.dgp.with_p(p)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "dgp": {k: v for k, v in self.dgp.to_dict().items()
                    if k not in ("covariates", "outcome_params", "propensity_params")},
            "sample_sizes": list(self.sample_sizes),
            "dimensions": None if self.dimensions is None else list(self.dimensions),
            "replications": self.replications,
            "learner": self.learner,
            "k_folds": self.k_folds,
            "split_fraction": self.split_fraction,
            "clip": list(self.clip),
            "ci_level": self.ci_level,
            "paper_literal": self.paper_literal,
            "master_seed": self.master_seed,
            "parallelism": self.parallelism,
            "histogram_bins": self.histogram_bins,
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        valid = set(cls.__dataclass_fields__)
        unknown = set(d) - valid
        if unknown:
            raise InvalidParameterError(
                f"unknown experiment key(s) {sorted(unknown)}; valid keys: {sorted(valid)}")
        for key in ("dgp", "sample_sizes", "replications", "learner"):
            if key not in d:
                raise InvalidParameterError(f"experiment config is missing required field {key!r}")
        kw = dict(d)
        kw["dgp"] = DgpSpec.from_dict(d["dgp"]) if isinstance(d["dgp"], dict) else d["dgp"]
        kw["sample_sizes"] = tuple(int(n) for n in d["sample_sizes"])
        if d.get("dimensions") is not None:
            kw["dimensions"] = tuple(int(p) for p in d["dimensions"])
        if "clip" in d:
            kw["clip"] = tuple(float(c) for c in d["clip"])
        for key in ("replications", "k_folds", "master_seed", "parallelism", "histogram_bins"):
            if key in d:
                kw[key] = int(d[key])
        return cls(**kw)


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class CellResult:
    n: int
    p: int
    truth: float
    replication_index: list
    estimates: list
    std_errors: list
    ci_lo: list
    ci_hi: list
    errors: list
    covered: list
    coverage_pct: float
    median_error: float
    mean_error: float
    sd_error: float
    clip_hits: list
    failures: list
    histogram: dict
    boxplot: dict
    runtime_seconds: float = 0.0

    @property
    def excluded(self) -> int:
        return len(self.failures)

    def to_dict(self) -> dict:
        # runtime is deliberately absent: report.json must be reproducible
        return {
            "n": self.n,
            "p": self.p,
            "truth": self.truth,
            "coverage_pct": self.coverage_pct,
            "median_error": self.median_error,
            "mean_error": self.mean_error,
            "sd_error": self.sd_error,
            "excluded": self.excluded,
            "failures": self.failures,
            "replication_index": self.replication_index,
            "estimates": self.estimates,
            "std_errors": self.std_errors,
            "ci_lo": self.ci_lo,
            "ci_hi": self.ci_hi,
            "errors": self.errors,
            "covered": self.covered,
            "clip_hits": self.clip_hits,
            "histogram": self.histogram,
            "boxplot": self.boxplot,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CellResult":
        d = dict(d)
        d.pop("excluded", None)
        return cls(**d)


@dataclass(eq=False)
class CoverageReport:
    config: dict
    cells: list

    def cell(self, n: int, p: Optional[int] = None) -> CellResult:
        for c in self.cells:
            if c.n == n and (p is None or c.p == p):
                return c
        raise KeyError((n, p))

    def to_dict(self) -> dict:
        return {"config": self.config, "cells": [c.to_dict() for c in self.cells]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "CoverageReport":
        return cls(d["config"], [CellResult.from_dict(c) for c in d["cells"]])

    @classmethod
    def from_json(cls, text: str) -> "CoverageReport":
        return cls.from_dict(json.loads(text))

    def __eq__(self, other):
        return isinstance(other, CoverageReport) and self.to_dict() == other.to_dict()


# ---------------------------------------------------------------------------
# Summaries
# ---------------------------------------------------------------------------


def coverage(ci_list: Sequence[Sequence[float]], truth: float) -> float:
    """Percent of closed intervals ``[lo, hi]`` containing ``truth``."""
    if len(ci_list) == 0:
        raise InvalidInputError("coverage of an empty interval list is undefined")
    hit = sum(1 for lo, hi in ci_list if lo <= truth <= hi)
    return 100.0 * hit / len(ci_list)


def histogram(errors: Sequence[float], num_bins: int = DEFAULT_BINS):
    """Equal-width bins spanning ``[min, max]``; returns ``(edges, counts)``.

    A constant sample, or one whose range is too narrow to hold ``num_bins``
    distinct floating-point edges, gets a unit-wide range centred on its
    midpoint.
    """
    x = np.asarray(errors, dtype=np.float64)
    if x.size == 0:
        raise InvalidInputError("histogram of an empty sample")
    if num_bins < 1:
        raise InvalidParameterError("num_bins must be >= 1")
    lo, hi = float(x.min()), float(x.max())
    if np.any(np.diff(np.linspace(lo, hi, num_bins + 1)) <= 0):
        mid = lo + (hi - lo) / 2
        lo, hi = mid - 0.5, mid + 0.5
    counts, edges = np.histogram(x, bins=num_bins, range=(lo, hi))
    return edges.tolist(), counts.tolist()


def boxplot_stats(errors: Sequence[float]) -> dict:
    """Five-number summary plus Tukey whiskers (1.5 IQR) and outliers.

    Quartiles use linear interpolation between order statistics.
    """
    x = np.sort(np.asarray(errors, dtype=np.float64))
    if x.size == 0:
        raise InvalidInputError("boxplot of an empty sample")
    q1, med, q3 = (float(v) for v in np.percentile(x, [25, 50, 75]))
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = x[(x >= lo_fence) & (x <= hi_fence)]
    return {
        "min": float(x[0]),
        "q1": q1,
        "median": med,
        "q3": q3,
        "max": float(x[-1]),
        "whisker_lo": float(inside[0]),
        "whisker_hi": float(inside[-1]),
        "outliers": [float(v) for v in x[(x < lo_fence) | (x > hi_fence)]],
    }


# ---------------------------------------------------------------------------
# Running
# ---------------------------------------------------------------------------


def substream(master_seed: int, p: int, n: int, r: int, purpose: int) -> np.random.Generator:
    ss = np.random.SeedSequence(master_seed, spawn_key=(p, n, r, purpose))
    return np.random.default_rng(ss)


def run_replication(config: ExperimentConfig, p: int, n: int, r: int) -> dict:
    """One replication of cell (p, n); failures come back as a reason string."""
    spec = config.spec_for(p)
    truth = true_ate(spec)[0]
    try:
        data = generate(spec, n, substream(config.master_seed, p, n, r, DATA_STREAM))
        learner = learner_from_dict(config.learner, spec)
        est = estimate_ate(
            data, learner, k_folds=config.k_folds, clip=config.clip,
            ci_level=config.ci_level,
            rng=substream(config.master_seed, p, n, r, ESTIMATOR_STREAM),
            split_fraction=config.split_fraction, paper_literal=config.paper_literal,
        )
    except (AipwLabError, np.linalg.LinAlgError, FloatingPointError) as exc:
        return {"r": r, "failed": f"{type(exc).__name__}: {exc}"}
    return {
        "r": r,
        "failed": None,
        "tau_hat": est.tau_hat,
        "std_error": est.std_error,
        "ci": est.ci,
        "error": est.tau_hat - truth,
        "covered": est.covers(truth),
        "clip_hits": est.clip_hits,
    }


def _job(args):
    config, p, n, r = args
    return p, n, run_replication(config, p, n, r)


def _workers(config: ExperimentConfig) -> int:
    cap = os.environ.get(WORKERS_ENV)
    workers = config.parallelism
    if cap:
        workers = min(workers, max(1, int(cap)))
    return workers


def summarize_cell(p: int, n: int, truth: float, results: list, bins: int,
                   runtime: float = 0.0) -> CellResult:
    results = sorted(results, key=lambda res: res["r"])
    ok = [res for res in results if res["failed"] is None]
    failures = [{"replication": res["r"], "reason": res["failed"]} for res in results
                if res["failed"] is not None]
    errors = [res["error"] for res in ok]
    if ok:
        cov = coverage([res["ci"] for res in ok], truth)
        err = np.asarray(errors)
        hist = dict(zip(("edges", "counts"), histogram(errors, bins)))
        box = boxplot_stats(errors)
        med, mean = float(np.median(err)), float(err.mean())
        sd = float(err.std(ddof=1)) if len(err) > 1 else 0.0
    else:
        # no successful replication: aggregates are null rather than NaN
        cov, hist, box, med, mean, sd = None, {}, {}, None, None, None
    return CellResult(
        n=n, p=p, truth=truth,
        replication_index=[res["r"] for res in ok],
        estimates=[res["tau_hat"] for res in ok],
        std_errors=[res["std_error"] for res in ok],
        ci_lo=[res["ci"][0] for res in ok],
        ci_hi=[res["ci"][1] for res in ok],
        errors=errors,
        covered=[bool(res["covered"]) for res in ok],
        coverage_pct=cov, median_error=med, mean_error=mean, sd_error=sd,
        clip_hits=[res["clip_hits"] for res in ok],
        failures=failures, histogram=hist, boxplot=box, runtime_seconds=runtime,
    )


# execution settings that cannot change any result
EXECUTION_KEYS = ("parallelism", "output_dir")


def experiment_echo(config: ExperimentConfig) -> dict:
    """Config as stored in a report, without the execution settings."""
    return {k: v for k, v in config.to_dict().items() if k not in EXECUTION_KEYS}


def run_experiment(config: ExperimentConfig) -> CoverageReport:
    """Run every cell of ``config`` and aggregate the replications."""
    workers = _workers(config)
    cells = []
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for p, n in config.cells():
            t0 = time.perf_counter()
            jobs = [(config, p, n, r) for r in range(config.replications)]
            if pool is None:
                results = [_job(j)[2] for j in jobs]
            else:
                chunk = max(1, len(jobs) // (4 * workers))
                results = [res for _, _, res in pool.map(_job, jobs, chunksize=chunk)]
            truth = true_ate(config.spec_for(p))[0]
            cell = summarize_cell(p, n, truth, results, config.histogram_bins,
                                  time.perf_counter() - t0)
            log.info("cell p=%d n=%d coverage=%s%% median error=%s (%d excluded, %.1fs)",
                     p, n, cell.coverage_pct, cell.median_error, cell.excluded,
                     cell.runtime_seconds)
            cells.append(cell)
    finally:
        if pool is not None:
            pool.shutdown()
    return CoverageReport(experiment_echo(config), cells)


# ---------------------------------------------------------------------------
# Output files
# ---------------------------------------------------------------------------

SUMMARY_FIELDS = ["n", "p", "coverage_pct", "median_error", "mean_error", "sd_error", "excluded"]


def _num(value) -> str:
    # repr round-trips floats exactly; a missing aggregate is an empty field
    return "" if value is None else repr(value)


def _write_csv(path: Path, header, rows):
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def write_report(report: CoverageReport, output_dir) -> list[Path]:
    """Write summary.csv, errors_/histogram_ CSVs per cell, report.json and timing.json."""
    out = Path(output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    paths = []
    summary = out / "summary.csv"
    _write_csv(summary, SUMMARY_FIELDS,
               [[c.n, c.p, _num(c.coverage_pct), _num(c.median_error), _num(c.mean_error),
                 _num(c.sd_error), c.excluded] for c in report.cells])
    paths.append(summary)
    for c in report.cells:
        errs = out / f"errors_{c.n}_{c.p}.csv"
        _write_csv(errs, ["replication", "tau_hat", "error", "std_error", "ci_lo", "ci_hi", "covered"],
                   [[r, repr(t), repr(e), repr(s), repr(lo), repr(hi), int(cv)]
                    for r, t, e, s, lo, hi, cv in zip(c.replication_index, c.estimates, c.errors,
                                                      c.std_errors, c.ci_lo, c.ci_hi, c.covered)])
        paths.append(errs)
        if c.histogram:
            hist = out / f"histogram_{c.n}_{c.p}.csv"
            e, k = c.histogram["edges"], c.histogram["counts"]
            _write_csv(hist, ["bin_lo", "bin_hi", "count"],
                       [[repr(e[i]), repr(e[i + 1]), k[i]] for i in range(len(k))])
            paths.append(hist)
    rep = out / "report.json"
    try:
        rep.write_text(report.to_json())
        timing = out / "timing.json"
        timing.write_text(json.dumps(
            [{"n": c.n, "p": c.p, "runtime_seconds": c.runtime_seconds} for c in report.cells],
            indent=1) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write report files in {out}: {exc}") from exc
    return paths + [rep, timing]


def read_report(output_dir) -> CoverageReport:
    return CoverageReport.from_json((Path(output_dir) / "report.json").read_text())


def _fmt(value, width: int, digits: int) -> str:
    return f"{'-':>{width}}" if value is None else f"{value:>{width}.{digits}f}"


def format_summary(report: CoverageReport) -> str:
    lines = [f"{'p':>5} {'n':>7} {'coverage%':>10} {'median err':>11} {'sd err':>9} {'excl':>5}"]
    for c in report.cells:
        lines.append(f"{c.p:>5} {c.n:>7} {_fmt(c.coverage_pct, 10, 1)} {_fmt(c.median_error, 11, 4)} "
                     f"{_fmt(c.sd_error, 9, 4)} {c.excluded:>5}")
    return "\n".join(lines)
