"""Least squares and logistic regression baselines.

Both fitters are deterministic and add an intercept column unless told not
to. Used as correctly specified nuisance learners for the sparse linear
design and as comparators for the forest learner.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .dgp import expit
from .errors import InvalidInputError, SingularDesignError

# coefficient max-norm beyond which a logistic fit is declared separated
SEPARATION_BOUND = 30.0
_RANK_TOL = 1e-10


@dataclass(frozen=True)
class LinearModel:
    coefficients: np.ndarray
    intercept: float = 0.0

    def predict(self, X) -> np.ndarray:
        return predict_linear(self, X)

    def to_dict(self) -> dict:
        return {"type": "linear", "coefficients": self.coefficients.tolist(),
                "intercept": self.intercept}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass(frozen=True)
class LogisticModel:
    coefficients: np.ndarray
    intercept: float = 0.0
    converged: bool = True
    iterations: int = 0
    degenerate: bool = False
    separated: bool = False
    loglik_trace: tuple = ()

    def predict_proba(self, X) -> np.ndarray:
        return predict_proba(self, X)

    def to_dict(self) -> dict:
        return {"type": "logistic", "coefficients": self.coefficients.tolist(),
                "intercept": self.intercept, "converged": self.converged,
                "iterations": self.iterations, "degenerate": self.degenerate,
                "separated": self.separated}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _design(X, intercept: bool):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise InvalidInputError(f"X must be 2-dimensional, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("X contains non-finite values")
    if intercept:
        return np.hstack([np.ones((X.shape[0], 1)), X])
    return X


def _dependent_columns(Z: np.ndarray) -> list[int]:
    """Columns of ``Z`` lying in the span of the columns before them."""
    bad, kept = [], []
    scale = max(1.0, float(np.abs(Z).max()) if Z.size else 1.0)
    for j in range(Z.shape[1]):
        cols = kept + [j]
        s = np.linalg.svd(Z[:, cols], compute_uv=False)
        if s[-1] <= _RANK_TOL * scale * max(Z.shape):
            bad.append(j)
        else:
            kept.append(j)
    return bad


def fit_ols(X, y, intercept: bool = True) -> LinearModel:
    """Least squares via a QR factorization of the design.

    Raises :class:`SingularDesignError` naming the collinear columns when
    the design (with intercept) is rank deficient.
    """
    Z = _design(X, intercept)
    y = np.asarray(y, dtype=np.float64)
    n, k = Z.shape
    if y.shape != (n,):
        raise InvalidInputError(f"y must have shape ({n},)")
    if n <= k:
        raise InvalidInputError(f"need n > p + 1 rows, got n={n} for {k} design columns")
    Q, R = np.linalg.qr(Z)
    diag = np.abs(np.diag(R))
    if diag.min() <= _RANK_TOL * max(diag.max(), 1.0) * max(n, k):
        off = 1 if intercept else 0
        cols = [j - off for j in _dependent_columns(Z)]
        raise SingularDesignError(f"design is rank deficient; dependent columns {cols}", cols)
    beta = np.linalg.solve(R, Q.T @ y)
    if intercept:
        return LinearModel(beta[1:].copy(), float(beta[0]))
    return LinearModel(beta.copy(), 0.0)


def _loglik(Z, d, beta) -> float:
    eta = Z @ beta
    # log(1 + e^eta) computed stably
    return float(d @ eta - np.logaddexp(0.0, eta).sum())


def _sigmoid(t):
    return expit(t)


def fit_logistic(X, d, max_iter: int = 100, tol: float = 1e-8,
                 intercept: bool = True) -> LogisticModel:
    """Maximum-likelihood logistic regression by Newton--Raphson (IRLS).

    Iterates until the max-norm change in the coefficients drops below
    ``tol``. A step that lowers the log-likelihood is halved until it no
    longer does. When the coefficients exceed :data:`SEPARATION_BOUND` in
    max-norm the fit stops and comes back with ``separated=True`` and
    ``converged=False``. A constant ``d`` yields an intercept-only model
    flagged ``degenerate``.
    """
    Z = _design(X, intercept)
    d = np.asarray(d, dtype=np.float64)
    n, k = Z.shape
    if d.shape != (n,):
        raise InvalidInputError(f"d must have shape ({n},)")
    if not np.all((d == 0) | (d == 1)):
        raise InvalidInputError("d must be binary 0/1")
    p = k - (1 if intercept else 0)
    if n == 0:
        raise InvalidInputError("cannot fit on empty data")
    if np.all(d == d[0]):
        b0 = SEPARATION_BOUND if d[0] == 1 else -SEPARATION_BOUND
        return LogisticModel(np.zeros(p), b0 if intercept else 0.0, converged=False,
                             iterations=0, degenerate=True)
    if n <= k:
        raise InvalidInputError(f"need n > p + 1 rows, got n={n} for {k} design columns")

    beta = np.zeros(k)
    ll = _loglik(Z, d, beta)
    trace = [ll]
    converged = separated = False
    it = 0
    for it in range(1, max_iter + 1):
        prob = _sigmoid(Z @ beta)
        w = prob * (1.0 - prob)
        grad = Z.T @ (d - prob)
        H = Z.T @ (Z * w[:, None])
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        t = 1.0
        new = beta + step
        new_ll = _loglik(Z, d, new)
        while new_ll < ll and t > 1e-10:
            t *= 0.5
            new = beta + t * step
            new_ll = _loglik(Z, d, new)
        if new_ll < ll:
            new, new_ll = beta, ll
        change = np.abs(new - beta).max()
        beta, ll = new, new_ll
        trace.append(ll)
        if np.abs(beta).max() > SEPARATION_BOUND:
            separated = True
            break
        if change < tol:
            converged = True
            break
    if intercept:
        coef, b0 = beta[1:].copy(), float(beta[0])
    else:
        coef, b0 = beta.copy(), 0.0
    return LogisticModel(coef, b0, converged=converged, iterations=it,
                         separated=separated, loglik_trace=tuple(trace))


def _check_dims(model, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != len(model.coefficients):
        raise InvalidInputError(
            f"X has shape {X.shape}; model expects {len(model.coefficients)} columns")
    return X


def predict_linear(model: LinearModel, X) -> np.ndarray:
    X = _check_dims(model, X)
    return X @ model.coefficients + model.intercept


def predict_proba(model: LogisticModel, X) -> np.ndarray:
    """Fitted probabilities, clamped to the open interval (0, 1)."""
    X = _check_dims(model, X)
    eta = X @ model.coefficients + model.intercept
    prob = _sigmoid(eta)
    tiny = np.finfo(np.float64).tiny
    return np.clip(prob, tiny, np.nextafter(1.0, 0.0))
