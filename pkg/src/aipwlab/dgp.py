"""Synthetic data-generating processes with known nuisance functions.

Two designs are provided:

* ``example1`` -- heterogeneous confounding. Covariates come from a
  two-component Gaussian mixture (identity covariance with weight 0.7,
  AR(1) Toeplitz covariance with rho = -0.5 with weight 0.3). Outcomes are
  ``X'beta + log|X'delta| + a + noise`` and the propensity is logistic in
  ``alpha X'theta1 + (1 - alpha) X'theta2``.
* ``example2`` -- high-dimensional sparse confounding. Covariates are iid
  standard normal, outcomes are ``X'beta_a + noise`` and the propensity is
  logistic in ``X'gamma``.

Both are exposed through :class:`DgpSpec`, which serializes to JSON and
hands out the true nuisance functions through :func:`oracle_nuisances`.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import InvalidInputError, InvalidParameterError, NotPositiveDefiniteError

EXAMPLE1 = "example1"
EXAMPLE2 = "example2"
KINDS = (EXAMPLE1, EXAMPLE2)

INDEX_MIX = "index_mix"
MODEL_MIX = "model_mix"
PROPENSITY_FORMS = (INDEX_MIX, MODEL_MIX)

IDENTITY = "identity"
TOEPLITZ_AR1 = "toeplitz_ar1"

# |x'delta| below this is treated as a singular row (redrawn when sampling)
LOG_FLOOR = 1e-12
EXAMPLE1_ALPHA = 0.8
EXAMPLE1_RHO = -0.5
EXAMPLE1_IDENTITY_WEIGHT = 0.7


def expit(t):
    """Standard logistic function, stable for large |t|."""
    t = np.asarray(t, dtype=np.float64)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


# ---------------------------------------------------------------------------
# Covariance and covariate laws
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CovarianceKind:
    tag: str = IDENTITY
    rho: float = 0.0

    def __post_init__(self):
        if self.tag not in (IDENTITY, TOEPLITZ_AR1):
            raise InvalidParameterError(f"unknown covariance tag {self.tag!r}")
        if self.tag == TOEPLITZ_AR1 and not abs(self.rho) < 1:
            raise InvalidParameterError(f"rho must satisfy |rho| < 1, got {self.rho}")

    def matrix(self, p: int) -> np.ndarray:
        if self.tag == IDENTITY:
            return np.eye(p)
        return toeplitz_ar1(p, self.rho)

    def to_dict(self) -> dict:
        return {"tag": self.tag, "rho": self.rho}


def toeplitz_ar1(p: int, rho: float) -> np.ndarray:
    """AR(1) Toeplitz matrix with entries ``rho**|i - j|``."""
    if p < 1:
        raise InvalidParameterError(f"p must be >= 1, got {p}")
    if not abs(rho) < 1:
        raise InvalidParameterError(f"rho must satisfy |rho| < 1, got {rho}")
    lags = np.abs(np.subtract.outer(np.arange(p), np.arange(p)))
    return np.power(float(rho), lags)


def sample_mvn(n: int, mean, cov, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` rows ``mean + L z`` with ``L`` the lower Cholesky factor of ``cov``."""
    mean = np.asarray(mean, dtype=np.float64)
    cov = np.asarray(cov, dtype=np.float64)
    p = mean.shape[0]
    if cov.shape != (p, p):
        raise InvalidInputError(f"covariance shape {cov.shape} does not match mean length {p}")
    if not np.allclose(cov, cov.T):
        raise NotPositiveDefiniteError("covariance matrix is not symmetric")
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(f"covariance is not positive definite: {exc}") from None
    z = rng.standard_normal((n, p))
    return mean + z @ L.T


@dataclass(frozen=True)
class CovariateSpec:
    """Finite Gaussian mixture over ``p`` covariates."""

    p: int
    means: tuple
    covariances: tuple
    weights: tuple

    def __post_init__(self):
        if self.p < 1:
            raise InvalidParameterError(f"p must be >= 1, got {self.p}")
        k = len(self.weights)
        if k == 0 or len(self.means) != k or len(self.covariances) != k:
            raise InvalidParameterError("means, covariances and weights must have equal nonzero length")
        w = np.asarray(self.weights, dtype=np.float64)
        if np.any(w < 0) or np.any(w > 1) or abs(w.sum() - 1.0) > 1e-12:
            raise InvalidParameterError(f"mixing weights must be a probability vector, got {self.weights}")
        for m in self.means:
            if len(m) != self.p:
                raise InvalidParameterError(f"component mean has length {len(m)}, expected {self.p}")

    @classmethod
    def standard_normal(cls, p: int) -> "CovariateSpec":
        return cls(p, ((0.0,) * p,), (CovarianceKind(IDENTITY),), (1.0,))

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "means": [list(m) for m in self.means],
            "covariances": [c.to_dict() for c in self.covariances],
            "weights": list(self.weights),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CovariateSpec":
        return cls(
            int(d["p"]),
            tuple(tuple(float(v) for v in m) for m in d["means"]),
            tuple(CovarianceKind(**c) for c in d["covariances"]),
            tuple(float(w) for w in d["weights"]),
        )


def sample_covariates(n: int, spec: CovariateSpec, rng: np.random.Generator,
                      return_labels: bool = False):
    """Draw ``n`` covariate rows from the mixture; optionally return component labels.

    A single-component spec consumes the generator exactly like
    :func:`sample_mvn`.
    """
    k = len(spec.weights)
    if k == 1:
        X = sample_mvn(n, spec.means[0], spec.covariances[0].matrix(spec.p), rng)
        labels = np.zeros(n, dtype=np.int64)
    else:
        labels = rng.choice(k, size=n, p=np.asarray(spec.weights))
        X = np.empty((n, spec.p))
        for c in range(k):
            idx = np.flatnonzero(labels == c)
            X[idx] = sample_mvn(len(idx), spec.means[c], spec.covariances[c].matrix(spec.p), rng)
    return (X, labels) if return_labels else X


# ---------------------------------------------------------------------------
# DGP specification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DgpSpec:
    """Full parameterization of one of the two synthetic designs.

    Build instances with :meth:`example1` / :meth:`example2` (or
    :meth:`from_dict`); the coefficient vectors are fixed by the design and
    checked on construction.
    """

    kind: str
    p: int
    covariates: CovariateSpec
    outcome_params: dict
    propensity_params: dict
    noise_sd: float = 1.0
    propensity_form: str = INDEX_MIX
    independent_noise: bool = False
    add_treatment_shift: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidParameterError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.p < 1:
            raise InvalidParameterError(f"p must be >= 1, got {self.p}")
        if self.kind == EXAMPLE2 and self.p < 4:
            raise InvalidParameterError(f"example2 requires p >= 4 (beta1 uses coordinate 4), got p={self.p}")
        if not self.noise_sd > 0:
            raise InvalidParameterError(f"noise_sd must be positive, got {self.noise_sd}")
        if self.propensity_form not in PROPENSITY_FORMS:
            raise InvalidParameterError(f"propensity_form must be one of {PROPENSITY_FORMS}")
        if self.covariates.p != self.p:
            raise InvalidParameterError("covariate dimension does not match p")
        expected_out, expected_prop = _design_params(self.kind, self.p)
        for name, want in {**expected_out, **expected_prop}.items():
            have = {**self.outcome_params, **self.propensity_params}.get(name)
            if have is None or not np.array_equal(np.asarray(have, dtype=np.float64), np.asarray(want)):
                raise InvalidParameterError(f"{self.kind} parameter {name!r} does not match the design")

    @classmethod
    def example1(cls, p: int, noise_sd: float = 1.0, propensity_form: str = INDEX_MIX,
                 independent_noise: bool = False) -> "DgpSpec":
        cov = CovariateSpec(
            p,
            ((0.0,) * p, (0.0,) * p),
            (CovarianceKind(IDENTITY), CovarianceKind(TOEPLITZ_AR1, EXAMPLE1_RHO)),
            (EXAMPLE1_IDENTITY_WEIGHT, round(1.0 - EXAMPLE1_IDENTITY_WEIGHT, 12)),
        )
        out, prop = _design_params(EXAMPLE1, p)
        return cls(EXAMPLE1, p, cov, out, prop, noise_sd, propensity_form, independent_noise)

    @classmethod
    def example2(cls, p: int, noise_sd: float = 1.0, independent_noise: bool = False,
                 add_treatment_shift: bool = False) -> "DgpSpec":
        if p < 4:
            raise InvalidParameterError(f"example2 requires p >= 4 (beta1 uses coordinate 4), got p={p}")
        out, prop = _design_params(EXAMPLE2, p)
        return cls(EXAMPLE2, p, CovariateSpec.standard_normal(p), out, prop, noise_sd,
                   INDEX_MIX, independent_noise, add_treatment_shift)

    @classmethod
    def make(cls, kind: str, p: int, **kw) -> "DgpSpec":
        if kind == EXAMPLE1:
            return cls.example1(p, **kw)
        if kind == EXAMPLE2:
            return cls.example2(p, **kw)
        raise InvalidParameterError(f"kind must be one of {KINDS}, got {kind!r}")

    def with_p(self, p: int) -> "DgpSpec":
        return DgpSpec.from_dict({**self.to_dict(), "p": p}, rebuild=True)

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "p": self.p,
            "noise_sd": self.noise_sd,
            "propensity_form": self.propensity_form,
            "independent_noise": self.independent_noise,
            "add_treatment_shift": self.add_treatment_shift,
            "covariates": self.covariates.to_dict(),
            "outcome_params": {k: list(map(float, v)) if np.ndim(v) else float(v)
                               for k, v in self.outcome_params.items()},
            "propensity_params": {k: list(map(float, v)) if np.ndim(v) else float(v)
                                  for k, v in self.propensity_params.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict, rebuild: bool = False) -> "DgpSpec":
        """Parse a spec document.

        A short form ``{"kind", "p", ...flags}`` without covariates or
        parameter vectors is accepted (and ``rebuild=True`` forces it), the
        design vectors being regenerated from ``kind`` and ``p``.
        """
        allowed = {"kind", "p", "noise_sd", "propensity_form", "independent_noise",
                   "add_treatment_shift", "covariates", "outcome_params", "propensity_params"}
        unknown = set(d) - allowed
        if unknown:
            raise InvalidParameterError(
                f"unknown dgp key(s) {sorted(unknown)}; valid keys: {sorted(allowed)}")
        for key in ("kind", "p"):
            if key not in d:
                raise InvalidParameterError(f"dgp config is missing required field {key!r}")
        kind, p = d["kind"], int(d["p"])
        flags = dict(noise_sd=float(d.get("noise_sd", 1.0)),
                     independent_noise=bool(d.get("independent_noise", False)))
        if kind == EXAMPLE1:
            if d.get("add_treatment_shift"):
                raise InvalidParameterError("add_treatment_shift applies to example2 only")
            flags["propensity_form"] = d.get("propensity_form", INDEX_MIX)
        elif kind == EXAMPLE2:
            if d.get("propensity_form", INDEX_MIX) != INDEX_MIX:
                raise InvalidParameterError("propensity_form applies to example1 only")
            flags["add_treatment_shift"] = bool(d.get("add_treatment_shift", False))
        spec = cls.make(kind, p, **flags)
        if rebuild or "covariates" not in d:
            return spec
        full = cls(kind, p, CovariateSpec.from_dict(d["covariates"]),
                   {k: np.asarray(v, dtype=np.float64) for k, v in d["outcome_params"].items()},
                   {k: (np.asarray(v, dtype=np.float64) if np.ndim(v) else float(v))
                    for k, v in d["propensity_params"].items()},
                   **{k: getattr(spec, k) for k in ("noise_sd", "propensity_form",
                                                    "independent_noise", "add_treatment_shift")})
        return full

    @classmethod
    def from_json(cls, text: str) -> "DgpSpec":
        return cls.from_dict(json.loads(text))

    def __eq__(self, other):
        return isinstance(other, DgpSpec) and self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash(json.dumps(self.to_dict(), sort_keys=True))


def _design_params(kind: str, p: int):
    if kind == EXAMPLE1:
        beta = np.ones(p)
        theta1 = np.ones(p)
        return ({"beta": beta, "delta": 2.0 * beta},
                {"theta1": theta1, "theta2": theta1 / 2.0, "alpha": EXAMPLE1_ALPHA})
    beta0 = np.zeros(p)
    beta0[[0, 2]] = 1.0
    beta1 = np.zeros(p)
    beta1[[0, 3]] = 1.0
    gamma = np.zeros(p)
    gamma[[0, 1]] = 1.0
    return {"beta0": beta0, "beta1": beta1}, {"gamma": gamma}


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray
    D: np.ndarray
    Y: np.ndarray
    Y0: Optional[np.ndarray] = None
    Y1: Optional[np.ndarray] = None
    seed: Optional[int] = None
    spec: Optional[DgpSpec] = field(default=None, repr=False)

    def __post_init__(self):
        n = self.X.shape[0]
        if self.X.ndim != 2 or self.D.shape != (n,) or self.Y.shape != (n,):
            raise InvalidInputError("X must be n x p with D and Y of length n")
        if not np.all((self.D == 0) | (self.D == 1)):
            raise InvalidInputError("treatment must be binary 0/1")
        for a in (self.X, self.Y, self.Y0, self.Y1):
            if a is not None and not np.all(np.isfinite(a)):
                raise InvalidInputError("dataset contains non-finite values")
        for arr in (self.X, self.D, self.Y, self.Y0, self.Y1):
            if arr is not None:
                arr.setflags(write=False)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def has_potential_outcomes(self) -> bool:
        return self.Y0 is not None and self.Y1 is not None

    def subset(self, idx) -> "Dataset":
        pick = lambda a: None if a is None else a[idx]
        return Dataset(self.X[idx], self.D[idx], self.Y[idx], pick(self.Y0), pick(self.Y1),
                       self.seed, self.spec)

    def equals(self, other: "Dataset") -> bool:
        same = lambda a, b: (a is None and b is None) or (
            a is not None and b is not None and np.array_equal(a, b))
        return all(same(getattr(self, k), getattr(other, k)) for k in ("X", "D", "Y", "Y0", "Y1"))


def _outcome_means(spec: DgpSpec, X: np.ndarray):
    if spec.kind == EXAMPLE1:
        op = spec.outcome_params
        base = X @ op["beta"] + np.log(np.maximum(np.abs(X @ op["delta"]), LOG_FLOOR))
        return base, base + 1.0
    op = spec.outcome_params
    shift = 1.0 if spec.add_treatment_shift else 0.0
    return X @ op["beta0"], X @ op["beta1"] + shift


def _propensity(spec: DgpSpec, X: np.ndarray) -> np.ndarray:
    pp = spec.propensity_params
    if spec.kind == EXAMPLE2:
        return expit(X @ pp["gamma"])
    a = pp["alpha"]
    if spec.propensity_form == INDEX_MIX:
        return expit(a * (X @ pp["theta1"]) + (1 - a) * (X @ pp["theta2"]))
    return a * expit(X @ pp["theta1"]) + (1 - a) * expit(X @ pp["theta2"])


def _treatment(spec: DgpSpec, X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(X.shape[0])
    if spec.kind == EXAMPLE1 and spec.propensity_form == MODEL_MIX:
        pp = spec.propensity_params
        first = rng.random(X.shape[0]) < pp["alpha"]
        prob = np.where(first, expit(X @ pp["theta1"]), expit(X @ pp["theta2"]))
    else:
        prob = _propensity(spec, X)
    return (u < prob).astype(np.float64)


def _covariates(spec: DgpSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    X = sample_covariates(n, spec.covariates, rng)
    if spec.kind == EXAMPLE1:
        delta = spec.outcome_params["delta"]
        while True:
            bad = np.flatnonzero(np.abs(X @ delta) < LOG_FLOOR)
            if len(bad) == 0:
                break
            X[bad] = sample_covariates(len(bad), spec.covariates, rng)
    return X


def generate(spec: DgpSpec, n: int, rng, seed: Optional[int] = None) -> Dataset:
    """Draw a dataset of ``n`` units from ``spec``.

    ``rng`` may be a Generator or an integer seed (recorded on the dataset).
    Covariates, treatment and noise are drawn in that order from one stream.
    """
    if n < 0:
        raise InvalidParameterError(f"n must be >= 0, got {n}")
    if not isinstance(rng, np.random.Generator):
        seed = int(rng)
        rng = np.random.default_rng(seed)
    X = _covariates(spec, n, rng)
    D = _treatment(spec, X, rng)
    mu0, mu1 = _outcome_means(spec, X)
    eps0 = spec.noise_sd * rng.standard_normal(n)
    eps1 = spec.noise_sd * rng.standard_normal(n) if spec.independent_noise else eps0
    Y0 = mu0 + eps0
    Y1 = mu1 + eps1
    Y = np.where(D == 1, Y1, Y0)
    return Dataset(X, D, Y, Y0, Y1, seed, spec)


def gen_example1(n: int, p: int, noise_sd: float, rng, **flags) -> Dataset:
    return generate(DgpSpec.example1(p, noise_sd, **flags), n, rng)


def gen_example2(n: int, p: int, noise_sd: float, rng, **flags) -> Dataset:
    return generate(DgpSpec.example2(p, noise_sd, **flags), n, rng)


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------


def true_ate(spec: DgpSpec, oracle_draws: int = 10**6, rng=None,
             analytic: bool = True) -> tuple[float, float]:
    """True average treatment effect as ``(value, standard_error)``.

    The analytic route returns 1 for example1 (additive unit effect), and
    for example2 ``E[X](beta1 - beta0)`` = 0 under mean-zero covariates, or
    1 with ``add_treatment_shift``; its standard error is 0. With
    ``analytic=False`` the effect is averaged over ``oracle_draws`` fresh
    covariate draws and the Monte Carlo standard error is reported.
    """
    if analytic:
        if spec.kind == EXAMPLE1:
            return 1.0, 0.0
        means = spec.covariates.means
        weights = spec.covariates.weights
        mean_x = sum(w * np.asarray(m) for w, m in zip(weights, means))
        op = spec.outcome_params
        shift = 1.0 if spec.add_treatment_shift else 0.0
        return float(mean_x @ (op["beta1"] - op["beta0"]) + shift), 0.0
    if oracle_draws < 10**5:
        raise InvalidParameterError("Monte Carlo true_ate needs oracle_draws >= 1e5")
    rng = np.random.default_rng() if rng is None else rng
    total = total_sq = 0.0
    chunk = max(1, 2**21 // spec.p)
    for start in range(0, oracle_draws, chunk):
        X = _covariates(spec, min(chunk, oracle_draws - start), rng)
        mu0, mu1 = _outcome_means(spec, X)
        diff = mu1 - mu0
        total += float(diff.sum())
        total_sq += float(diff @ diff)
    mean = total / oracle_draws
    var = max(total_sq - oracle_draws * mean * mean, 0.0) / (oracle_draws - 1)
    return mean, math.sqrt(var / oracle_draws)


def overlap_diagnostics(spec: DgpSpec, X, bounds=(0.01, 0.99)) -> dict:
    """Range of the true propensity on ``X`` and the share outside ``bounds``."""
    prob = _propensity(spec, np.atleast_2d(np.asarray(X, dtype=np.float64)))
    lo, hi = bounds
    return {
        "min": float(prob.min()),
        "max": float(prob.max()),
        "fraction_outside": float(np.mean((prob < lo) | (prob > hi))),
        "bounds": [lo, hi],
    }


@dataclass(frozen=True)
class NuisanceFit:
    """Evaluable outcome regressions and treated-propensity for one design.

    ``mu0``, ``mu1`` and ``pi1`` map an ``(n, p)`` array to a length-``n``
    array.
    """

    mu0: Callable[[np.ndarray], np.ndarray]
    mu1: Callable[[np.ndarray], np.ndarray]
    pi1: Callable[[np.ndarray], np.ndarray]
    provenance: str = ""
    diagnostics: dict = field(default_factory=dict, compare=False)


def oracle_nuisances(spec: DgpSpec) -> NuisanceFit:
    """True ``mu0``, ``mu1`` and ``pi1`` of ``spec``.

    For example1 the log term uses ``max(|x'delta|, 1e-12)``, so rows with
    ``x'delta = 0`` evaluate to a finite value.
    """
    def mu0(X):
        return _outcome_means(spec, np.atleast_2d(np.asarray(X, dtype=np.float64)))[0]

    def mu1(X):
        return _outcome_means(spec, np.atleast_2d(np.asarray(X, dtype=np.float64)))[1]

    def pi1(X):
        return _propensity(spec, np.atleast_2d(np.asarray(X, dtype=np.float64)))

    return NuisanceFit(mu0, mu1, pi1, provenance=f"oracle:{spec.kind}")


# ---------------------------------------------------------------------------
# CSV import/export
# ---------------------------------------------------------------------------


def sidecar_path(csv_path) -> Path:
    csv_path = Path(csv_path)
    return csv_path.with_name(csv_path.stem + ".meta.json")


def write_dataset(dataset: Dataset, path, include_potential: bool = True) -> Path:
    """Write ``x1..xp,d,y[,y0,y1]`` CSV plus a ``<stem>.meta.json`` sidecar.

    Floats use Python's shortest round-trip repr, so reading back is exact.
    """
    path = Path(path)
    with_po = include_potential and dataset.has_potential_outcomes
    header = [f"x{j + 1}" for j in range(dataset.p)] + ["d", "y"] + (["y0", "y1"] if with_po else [])
    cols = [dataset.X, dataset.D[:, None], dataset.Y[:, None]]
    if with_po:
        cols += [dataset.Y0[:, None], dataset.Y1[:, None]]
    table = np.hstack(cols)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in table.tolist():
            w.writerow([repr(v) for v in row])
    spec = dataset.spec
    meta = {
        "kind": spec.kind if spec else None,
        "p": dataset.p,
        "n": dataset.n,
        "seed": dataset.seed,
        "noise_sd": spec.noise_sd if spec else None,
        "propensity_form": spec.propensity_form if spec else None,
        "dgp": spec.to_dict() if spec else None,
    }
    sidecar_path(path).write_text(json.dumps(meta, indent=2) + "\n")
    return path


def read_dataset(path) -> Dataset:
    """Inverse of :func:`write_dataset`; the sidecar is optional.

    Malformed content raises :class:`InvalidInputError` naming the line.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InvalidInputError(f"{path}: line 1: empty file") from None
        p = sum(1 for h in header if h.startswith("x"))
        expected = [f"x{j + 1}" for j in range(p)] + ["d", "y"]
        with_po = header == expected + ["y0", "y1"]
        if header != expected and not with_po:
            raise InvalidInputError(f"{path}: line 1: bad header {header}; expected x1..xp,d,y[,y0,y1]")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise InvalidInputError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise InvalidInputError(f"{path}: line {lineno}: {exc}") from None
    table = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
    if not np.all(np.isfinite(table)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(table), axis=1))[0]) + 2
        raise InvalidInputError(f"{path}: line {bad}: non-finite value")
    D = table[:, p]
    if not np.all((D == 0) | (D == 1)):
        bad = int(np.flatnonzero((D != 0) & (D != 1))[0]) + 2
        raise InvalidInputError(f"{path}: line {bad}: treatment must be 0 or 1")
    spec, seed = None, None
    side = sidecar_path(path)
    if side.exists():
        meta = json.loads(side.read_text())
        seed = meta.get("seed")
        if meta.get("dgp"):
            spec = DgpSpec.from_dict(meta["dgp"])
    return Dataset(
        np.ascontiguousarray(table[:, :p]), D.copy(), table[:, p + 1].copy(),
        table[:, p + 2].copy() if with_po else None,
        table[:, p + 3].copy() if with_po else None,
        seed, spec,
    )
