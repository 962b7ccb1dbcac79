"""Cross-fitted augmented inverse-probability-weighting (AIPW) ATE estimator.

For each fold, the outcome regressions (one per treatment arm) and the
propensity score are fit on the other folds and the doubly robust score

    psi = mu1(x) - mu0(x) + (d - pi(x)) / (pi(x) (1 - pi(x))) * (y - mu_d(x))

is evaluated on the fold itself. The estimate is the mean score and the
standard error is ``sd(psi) / sqrt(n_eval)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence

import numpy as np

from . import glm
from .dgp import Dataset, DgpSpec, NuisanceFit, oracle_nuisances
from .errors import FoldDegeneracyError, InvalidInputError, InvalidParameterError
from .forest import PROBABILITY, REGRESSION, ForestParams, cv_tune, default_grid, fit_forest

DEFAULT_CLIP = (0.01, 0.99)

# ---------------------------------------------------------------------------
# Normal quantile
# ---------------------------------------------------------------------------

# Acklam's rational approximation to the inverse normal CDF (relative error
# about 1.15e-9), polished with one Halley step against math.erfc.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def normal_quantile(prob: float) -> float:
    """Inverse standard normal CDF, absolute error well below 1e-9."""
    if not 0.0 < prob < 1.0:
        raise InvalidParameterError(f"prob must lie in (0, 1), got {prob}")
    if prob < _P_LOW:
        q = math.sqrt(-2.0 * math.log(prob))
        x = ((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
             / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    elif prob <= 1.0 - _P_LOW:
        q = prob - 0.5
        r = q * q
        x = ((((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
             / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0))
    else:
        q = math.sqrt(-2.0 * math.log1p(-prob))
        x = -((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
              / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    # Halley refinement; the tail form keeps precision near 0 and 1
    if prob < 0.5:
        e = 0.5 * math.erfc(-x / math.sqrt(2.0)) - prob
    else:
        e = (1.0 - prob) - 0.5 * math.erfc(x / math.sqrt(2.0))
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


# ---------------------------------------------------------------------------
# Folds and scores
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CrossFitPlan:
    fold_assignment: np.ndarray
    K: int

    def folds(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.fold_assignment == k) for k in range(self.K)]


def make_folds(n: int, K: int, rng) -> CrossFitPlan:
    """Uniformly random partition of ``range(n)`` into ``K`` near-equal folds."""
    if K < 2:
        raise InvalidParameterError(f"K must be >= 2, got {K}")
    if n < 2 * K:
        raise InvalidInputError(f"need n >= 2K rows (n={n}, K={K})")
    rng = _as_rng(rng)
    labels = np.empty(n, dtype=np.int64)
    for k, idx in enumerate(np.array_split(rng.permutation(n), K)):
        labels[idx] = k
    return CrossFitPlan(labels, K)


def aipw_scores(y, d, mu0x, mu1x, pi1x, clip=DEFAULT_CLIP, paper_literal: bool = False):
    """Vectorized doubly robust scores; returns ``(psi, clip_hits)``.

    ``pi1x`` is clipped to ``[clip[0], clip[1]]`` and every clipped entry
    counts as a hit. With ``paper_literal`` the residual uses the propensity
    of the received arm (``pi1`` if treated, ``1 - pi1`` otherwise) in
    place of the outcome regression.
    """
    lo, hi = clip
    if not 0.0 < lo < hi < 1.0:
        raise InvalidParameterError(f"clip must satisfy 0 < lo < hi < 1, got {clip}")
    arrs = [np.asarray(a, dtype=np.float64) for a in (y, d, mu0x, mu1x, pi1x)]
    if not all(np.all(np.isfinite(a)) for a in arrs):
        raise InvalidInputError("aipw score inputs must be finite")
    y, d, mu0x, mu1x, pi1x = arrs
    pi = np.clip(pi1x, lo, hi)
    hits = int(np.count_nonzero((pi1x < lo) | (pi1x > hi)))
    if paper_literal:
        fitted = np.where(d == 1, pi, 1.0 - pi)
    else:
        fitted = np.where(d == 1, mu1x, mu0x)
    psi = (mu1x - mu0x) + (d - pi) / (pi * (1.0 - pi)) * (y - fitted)
    return psi, hits


def aipw_score(y, d, mu0x, mu1x, pi1x, clip=DEFAULT_CLIP, paper_literal: bool = False) -> float:
    """Score of a single unit (see :func:`aipw_scores`)."""
    psi, _ = aipw_scores([y], [d], [mu0x], [mu1x], [pi1x], clip, paper_literal)
    return float(psi[0])


# ---------------------------------------------------------------------------
# Nuisance learners
# ---------------------------------------------------------------------------


class Learner(Protocol):
    def fit(self, X: np.ndarray, d: np.ndarray, y: np.ndarray, seed: int) -> NuisanceFit: ...

    def describe(self) -> dict: ...


@dataclass(frozen=True)
class OracleLearner:
    """Returns the true nuisances of ``spec`` regardless of the data.

    ``outcome=False`` swaps in ``mu0 = mu1 = 0`` and ``propensity=False``
    swaps in ``pi1 = 0.5``, giving the deliberately wrong models used in
    double-robustness checks.
    """

    spec: DgpSpec
    outcome: bool = True
    propensity: bool = True

    def fit(self, X, d, y, seed=0) -> NuisanceFit:
        true = oracle_nuisances(self.spec)
        zero = lambda X: np.zeros(len(np.atleast_2d(X)))
        half = lambda X: np.full(len(np.atleast_2d(X)), 0.5)
        return NuisanceFit(
            true.mu0 if self.outcome else zero,
            true.mu1 if self.outcome else zero,
            true.pi1 if self.propensity else half,
            provenance=self.describe()["kind"],
        )

    def describe(self) -> dict:
        return {"kind": "oracle", "outcome": self.outcome, "propensity": self.propensity}


@dataclass(frozen=True)
class GlmLearner:
    """OLS per treatment arm plus logistic propensity."""

    intercept: bool = True

    def fit(self, X, d, y, seed=0) -> NuisanceFit:
        m0 = glm.fit_ols(X[d == 0], y[d == 0], self.intercept)
        m1 = glm.fit_ols(X[d == 1], y[d == 1], self.intercept)
        ps = glm.fit_logistic(X, d, intercept=self.intercept)
        return NuisanceFit(m0.predict, m1.predict, ps.predict_proba, provenance="glm",
                           diagnostics={"logistic_converged": ps.converged,
                                        "logistic_separated": ps.separated})

    def describe(self) -> dict:
        return {"kind": "glm", "intercept": self.intercept}


@dataclass(frozen=True)
class ForestLearner:
    """Honest forests for ``mu0`` (controls), ``mu1`` (treated) and ``pi1``.

    Each nuisance is tuned by ``cv_folds``-fold cross-validation over
    ``grid`` (default: :func:`default_grid`), using ``cv_num_trees`` trees
    per candidate, then refit on all its rows with ``base.num_trees``.
    """

    base: ForestParams = ForestParams()
    grid: Optional[tuple] = None
    cv_folds: int = 5
    cv_num_trees: Optional[int] = None
    backend: Optional[str] = None

    def _grid(self, p: int) -> list[ForestParams]:
        if self.grid is None:
            points = default_grid(p, self.base)
        else:
            points = [ForestParams.from_dict({**self.base.to_dict(), **g}) for g in self.grid]
        # drop candidates whose mtry cannot apply at this p
        points = [g for g in points if g.mtry is None or g.mtry <= p] or [self.base]
        return points

    def _fit_one(self, X, y, task, seed_seq: np.random.SeedSequence):
        cv_seed, fit_seed = (int(s.generate_state(1, np.uint64)[0]) for s in seed_seq.spawn(2))
        grid = [g for g in self._grid(X.shape[1])]
        if len(grid) > 1:
            trees = self.cv_num_trees or self.base.num_trees
            cv_grid = [_with(g, num_trees=trees, seed=cv_seed) for g in grid]
            k = min(self.cv_folds, len(y))
            chosen = cv_tune(X, y, task, cv_grid, k=k, rng=np.random.default_rng(cv_seed),
                             backend=self.backend)
            best = grid[cv_grid.index(chosen)]
        else:
            best = grid[0]
        best = _with(best, seed=fit_seed)
        return fit_forest(X, y, best, task, backend=self.backend), best

    def fit(self, X, d, y, seed=0) -> NuisanceFit:
        ss = np.random.SeedSequence(seed)
        s0, s1, sp = ss.spawn(3)
        f0, p0 = self._fit_one(X[d == 0], y[d == 0], REGRESSION, s0)
        f1, p1 = self._fit_one(X[d == 1], y[d == 1], REGRESSION, s1)
        fp, pp = self._fit_one(X, d, PROBABILITY, sp)
        return NuisanceFit(
            lambda Z: f0.predict(Z, backend=self.backend),
            lambda Z: f1.predict(Z, backend=self.backend),
            lambda Z: fp.predict(Z, backend=self.backend),
            provenance="forest",
            diagnostics={
                "chosen": {"mu0": _tuned(p0), "mu1": _tuned(p1), "pi1": _tuned(pp)},
                "empty_leaves": f0.empty_leaves + f1.empty_leaves + fp.empty_leaves,
            },
        )

    def describe(self) -> dict:
        return {
            "kind": "forest",
            "base": self.base.to_dict(),
            "grid": None if self.grid is None else [dict(g) for g in self.grid],
            "cv_folds": self.cv_folds,
            "cv_num_trees": self.cv_num_trees,
        }


def _with(params: ForestParams, **kw) -> ForestParams:
    return ForestParams.from_dict({**params.to_dict(), **kw})


def _tuned(params: ForestParams) -> dict:
    return {"mtry": params.mtry, "min_leaf": params.min_leaf}


def learner_from_dict(d: dict, spec: Optional[DgpSpec] = None) -> Learner:
    """Build a learner from its ``describe()`` document."""
    d = dict(d)
    kind = d.pop("kind", None)
    if kind == "oracle":
        if spec is None:
            raise InvalidParameterError("the oracle learner needs the generating DgpSpec")
        return OracleLearner(spec, bool(d.get("outcome", True)), bool(d.get("propensity", True)))
    if kind == "glm":
        return GlmLearner(bool(d.get("intercept", True)))
    if kind == "forest":
        allowed = {"base", "grid", "cv_folds", "cv_num_trees", "backend"}
        unknown = set(d) - allowed
        if unknown:
            raise InvalidParameterError(
                f"unknown forest learner key(s) {sorted(unknown)}; valid keys: {sorted(allowed)}")
        grid = d.get("grid")
        return ForestLearner(
            base=ForestParams.from_dict(d.get("base") or {}),
            grid=None if grid is None else tuple(dict(g) for g in grid),
            cv_folds=int(d.get("cv_folds", 5)),
            cv_num_trees=d.get("cv_num_trees"),
            backend=d.get("backend"),
        )
    raise InvalidParameterError(f"learner kind must be one of oracle, glm, forest; got {kind!r}")


# ---------------------------------------------------------------------------
# Estimator
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class AteEstimate:
    tau_hat: float
    std_error: float
    ci_level: float
    ci: tuple
    influence_values: np.ndarray = field(repr=False)
    n_eval: int
    clip_hits: int
    learner: dict = field(default_factory=dict)
    k_folds: int = 2
    seed: Optional[int] = None
    diagnostics: list = field(default_factory=list, repr=False)

    def covers(self, truth: float) -> bool:
        return self.ci[0] <= truth <= self.ci[1]

    def to_dict(self) -> dict:
        return {
            "tau_hat": self.tau_hat,
            "std_error": self.std_error,
            "ci": [self.ci[0], self.ci[1]],
            "level": self.ci_level,
            "n_eval": self.n_eval,
            "clip_hits": self.clip_hits,
            "learner": self.learner,
            "k_folds": self.k_folds,
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def estimate_ate(
    dataset: Dataset,
    learner: Learner,
    k_folds: int = 2,
    clip: Sequence[float] = DEFAULT_CLIP,
    ci_level: float = 0.95,
    rng=None,
    split_fraction: Optional[float] = None,
    paper_literal: bool = False,
) -> AteEstimate:
    """Cross-fitted AIPW estimate of the ATE with a normal confidence interval.

    ``k_folds >= 2`` evaluates every fold with nuisances fit on the rest and
    pools the scores. ``k_folds == 1`` is the single-split protocol: fit on
    a random ``split_fraction`` of the rows and score only the remainder.
    ``rng`` is a Generator or an integer seed; an integer is echoed in the
    result.
    """
    if not 0.0 < ci_level < 1.0:
        raise InvalidParameterError(f"ci_level must lie in (0, 1), got {ci_level}")
    lo, hi = clip
    if not 0.0 < lo < hi < 1.0:
        raise InvalidParameterError(f"clip must satisfy 0 < lo < hi < 1, got {tuple(clip)}")
    seed = int(rng) if isinstance(rng, (int, np.integer)) else None
    rng = _as_rng(rng)
    n = dataset.n
    X, D, Y = dataset.X, dataset.D, dataset.Y

    if k_folds == 1:
        if split_fraction is None:
            raise InvalidParameterError("k_folds=1 requires split_fraction")
        if not 0.0 < split_fraction < 1.0:
            raise InvalidParameterError(f"split_fraction must lie in (0, 1), got {split_fraction}")
        perm = rng.permutation(n)
        n_fit = int(round(split_fraction * n))
        if not 0 < n_fit < n:
            raise InvalidInputError(f"split_fraction={split_fraction} leaves an empty half at n={n}")
        pairs = [(np.sort(perm[:n_fit]), np.sort(perm[n_fit:]))]
    elif k_folds >= 2:
        plan = make_folds(n, k_folds, rng)
        pairs = []
        for held in plan.folds():
            train = np.ones(n, dtype=bool)
            train[held] = False
            pairs.append((np.flatnonzero(train), held))
    else:
        raise InvalidParameterError(f"k_folds must be >= 1, got {k_folds}")

    for k, (train, _) in enumerate(pairs):
        n_treated = int(D[train].sum())
        if n_treated == 0 or n_treated == len(train):
            raise FoldDegeneracyError(
                f"fold {k}: nuisance training rows contain no "
                f"{'treated' if n_treated == 0 else 'control'} units; use fewer folds")

    # seeds are drawn up front so results do not depend on fit order
    fit_seeds = rng.integers(0, 2**63 - 1, size=len(pairs))
    psi = np.empty(n)
    evaluated = np.zeros(n, dtype=bool)
    hits = 0
    diagnostics = []
    for (train, held), fs in zip(pairs, fit_seeds):
        nuis = learner.fit(X[train], D[train], Y[train], int(fs))
        Xh = X[held]
        scores, h = aipw_scores(Y[held], D[held], nuis.mu0(Xh), nuis.mu1(Xh), nuis.pi1(Xh),
                                (lo, hi), paper_literal)
        psi[held] = scores
        evaluated[held] = True
        hits += h
        diagnostics.append(nuis.diagnostics)

    values = psi[evaluated]
    n_eval = len(values)
    tau = float(values.mean())
    se = float(values.std(ddof=1) / math.sqrt(n_eval))
    z = normal_quantile(0.5 + 0.5 * ci_level)
    return AteEstimate(
        tau_hat=tau,
        std_error=se,
        ci_level=ci_level,
        ci=(tau - z * se, tau + z * se),
        influence_values=values,
        n_eval=n_eval,
        clip_hits=hits,
        learner=learner.describe(),
        k_folds=k_folds,
        seed=seed,
        diagnostics=diagnostics,
    )
