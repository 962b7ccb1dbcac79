"""Honest random forests for regression and class-probability estimation.

Each tree draws a subsample without replacement and splits it in two: the
structure half picks the splits (CART variance reduction over ``mtry``
random candidate features), the estimation half fills the leaf means. The
tree growing kernel lives in the compiled ``_tree`` extension, with a NumPy
fallback in ``_pure`` that produces the same trees.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from ..errors import InvalidInputError, InvalidParameterError
from . import _pure

try:
    from . import _tree as _compiled
except ImportError:  # pragma: no cover - depends on the build
    _compiled = None

REGRESSION = "regression"
PROBABILITY = "probability"
TASKS = (REGRESSION, PROBABILITY)
FORMAT_NAME = "aipwlab.forest"
FORMAT_VERSION = 1
_MASK64 = (1 << 64) - 1


def available_backends() -> list[str]:
    return (["compiled"] if _compiled is not None else []) + ["python"]


def default_backend() -> str:
    if os.environ.get("AIPWLAB_PURE") or _compiled is None:
        return "python"
    return "compiled"


def _kernel(backend: Optional[str]):
    backend = backend or default_backend()
    if backend == "compiled":
        if _compiled is None:
            raise InvalidParameterError("compiled kernel is not built; use backend='python'")
        return _compiled
    if backend == "python":
        return _pure
    raise InvalidParameterError(f"unknown backend {backend!r}; choose from {available_backends()}")


@dataclass(frozen=True)
class ForestParams:
    """Hyperparameters of an honest forest.

    ``mtry=None`` resolves to ``ceil(sqrt(p))`` at fit time and
    ``max_depth=None`` means unlimited depth.
    """

    num_trees: int = 500
    mtry: Optional[int] = None
    min_leaf: int = 5
    subsample_fraction: float = 0.5
    honesty_fraction: float = 0.5
    max_depth: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.num_trees < 1:
            raise InvalidParameterError("num_trees must be >= 1")
        if self.mtry is not None and self.mtry < 1:
            raise InvalidParameterError("mtry must be >= 1")
        if self.min_leaf < 1:
            raise InvalidParameterError("min_leaf must be >= 1")
        if not 0.0 < self.subsample_fraction <= 1.0:
            raise InvalidParameterError("subsample_fraction must lie in (0, 1]")
        if not 0.0 < self.honesty_fraction < 1.0:
            raise InvalidParameterError("honesty_fraction must lie in (0, 1)")
        if self.max_depth is not None and self.max_depth < 0:
            raise InvalidParameterError("max_depth must be >= 0 or None")

    def resolve_mtry(self, p: int) -> int:
        mtry = math.ceil(math.sqrt(p)) if self.mtry is None else self.mtry
        if mtry > p:
            raise InvalidParameterError(f"mtry={mtry} exceeds the number of features p={p}")
        return mtry

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ForestParams":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidParameterError(
                f"unknown forest parameter(s) {sorted(unknown)}; valid keys: "
                f"{sorted(cls.__dataclass_fields__)}"
            )
        return cls(**d)


@dataclass(frozen=True)
class TreeNode:
    """One node of a fitted tree; leaves have ``feature is None``."""

    feature: Optional[int]
    threshold: Optional[float]
    value: float
    count: int
    left: Optional["TreeNode"] = None
    right: Optional["TreeNode"] = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None


@dataclass(eq=False)
class Forest:
    """A fitted honest forest stored as flat node arrays.

    Tree ``t`` owns nodes ``offsets[t]:offsets[t+1]``; child indices are
    local to the tree and ``feature == -1`` marks a leaf.
    """

    params: ForestParams
    task: str
    n_features: int
    offsets: np.ndarray
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    count: np.ndarray
    empty_leaves: int = 0
    provenance: Optional[list] = field(default=None, repr=False)

    @property
    def num_trees(self) -> int:
        return len(self.offsets) - 1

    def predict(self, X, backend: Optional[str] = None) -> np.ndarray:
        return predict(self, X, backend=backend)

    def tree(self, t: int) -> TreeNode:
        """Materialize tree ``t`` as linked :class:`TreeNode` objects."""
        base = int(self.offsets[t])

        def build(i):
            f = int(self.feature[base + i])
            if f < 0:
                return TreeNode(None, None, float(self.value[base + i]), int(self.count[base + i]))
            return TreeNode(
                f,
                float(self.threshold[base + i]),
                float(self.value[base + i]),
                int(self.count[base + i]),
                build(int(self.left[base + i])),
                build(int(self.right[base + i])),
            )

        return build(0)

    def apply(self, X, t: int) -> np.ndarray:
        """Local leaf index reached by each row of ``X`` in tree ``t``."""
        X = _check_X(X, self.n_features)
        a, b = self.offsets[t], self.offsets[t + 1]
        f, th, lf, rt = self.feature[a:b], self.threshold[a:b], self.left[a:b], self.right[a:b]
        node = np.zeros(len(X), dtype=np.int64)
        for i in range(len(X)):
            k = 0
            while f[k] >= 0:
                k = lf[k] if X[i, f[k]] <= th[k] else rt[k]
            node[i] = k
        return node

    def to_dict(self) -> dict:
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "task": self.task,
            "n_features": self.n_features,
            "params": self.params.to_dict(),
            "empty_leaves": self.empty_leaves,
            "offsets": self.offsets.tolist(),
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "count": self.count.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "Forest":
        if d.get("format") != FORMAT_NAME or d.get("version") != FORMAT_VERSION:
            raise InvalidInputError(
                f"not a {FORMAT_NAME} v{FORMAT_VERSION} document "
                f"(got format={d.get('format')!r}, version={d.get('version')!r})"
            )
        ints = lambda k: np.asarray(d[k], dtype=np.int64)
        return cls(
            params=ForestParams.from_dict(d["params"]),
            task=d["task"],
            n_features=int(d["n_features"]),
            offsets=ints("offsets"),
            feature=ints("feature"),
            threshold=np.asarray(d["threshold"], dtype=np.float64),
            left=ints("left"),
            right=ints("right"),
            value=np.asarray(d["value"], dtype=np.float64),
            count=ints("count"),
            empty_leaves=int(d["empty_leaves"]),
        )

    @classmethod
    def from_json(cls, text: str) -> "Forest":
        return cls.from_dict(json.loads(text))


def _check_X(X, p=None) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise InvalidInputError(f"X must be 2-dimensional, got shape {X.shape}")
    if p is not None and X.shape[1] != p:
        raise InvalidInputError(f"X has {X.shape[1]} columns, forest was trained on {p}")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("X contains non-finite values")
    return X


def fit_forest(
    X,
    y,
    params: ForestParams = ForestParams(),
    task: str = REGRESSION,
    backend: Optional[str] = None,
    record_provenance: bool = False,
) -> Forest:
    """Fit an honest forest of ``params.num_trees`` trees.

    With ``record_provenance`` the returned forest carries, per tree, the
    (structure rows, estimation rows) index arrays used to build it.
    """
    if task not in TASKS:
        raise InvalidParameterError(f"task must be one of {TASKS}, got {task!r}")
    X = _check_X(X)
    y = np.ascontiguousarray(y, dtype=np.float64)
    n, p = X.shape
    if n == 0 or p == 0:
        raise InvalidInputError("cannot fit a forest on empty data")
    if y.shape != (n,):
        raise InvalidInputError(f"y must have shape ({n},), got {y.shape}")
    if not np.all(np.isfinite(y)):
        raise InvalidInputError("y contains non-finite values")
    if n < 2:
        raise InvalidInputError("need at least 2 rows to form structure and estimation halves")
    if task == PROBABILITY and not np.all((y == 0) | (y == 1)):
        raise InvalidInputError("probability forests need a 0/1 response")
    mtry = params.resolve_mtry(p)
    max_depth = -1 if params.max_depth is None else params.max_depth
    raw = _kernel(backend).fit_trees(
        X, y, params.num_trees, params.seed & _MASK64, params.subsample_fraction,
        params.honesty_fraction, mtry, params.min_leaf, max_depth, record_provenance,
    )
    return Forest(
        params=params,
        task=task,
        n_features=p,
        offsets=raw["offsets"],
        feature=raw["feature"],
        threshold=raw["threshold"],
        left=raw["left"],
        right=raw["right"],
        value=raw["value"],
        count=raw["count"],
        empty_leaves=int(np.sum(raw["empty_leaves"])),
        provenance=raw["provenance"],
    )


def predict(forest: Forest, X, backend: Optional[str] = None) -> np.ndarray:
    X = _check_X(X, forest.n_features)
    out = _kernel(backend).predict_trees(
        X, forest.offsets, forest.feature, forest.threshold,
        forest.left, forest.right, forest.value,
    )
    if forest.task == PROBABILITY:
        np.clip(out, 0.0, 1.0, out=out)
    return out


def best_split(X, y, features: Optional[Sequence[int]] = None, min_leaf: int = 1,
               backend: Optional[str] = None):
    """Best variance-reduction split of the rows ``(X, y)``.

    Scans midpoints between consecutive distinct values of every feature in
    ``features`` (all by default) and returns ``(feature, threshold, score)``
    where ``score`` is the drop in population variance,
    ``var(y) - (n_l var(y_l) + n_r var(y_r)) / n``. Returns None when no
    admissible split reduces the variance or every split leaves a child with
    fewer than ``min_leaf`` rows. Ties go to the lowest feature index, then
    the lowest threshold.
    """
    X = _check_X(X)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if features is None:
        features = range(X.shape[1])
    feats = np.asarray(list(features), dtype=np.int64)
    if len(feats) and (feats.min() < 0 or feats.max() >= X.shape[1]):
        raise InvalidInputError("feature index out of range")
    return _kernel(backend).best_split(X, y, feats, min_leaf)


def default_grid(p: int, base: ForestParams = ForestParams()) -> list[ForestParams]:
    """mtry in {ceil(sqrt p), ceil(p/3), p} crossed with min_leaf in {5, 20, 50}.

    Duplicate points (small ``p``) are dropped, keeping the first occurrence.
    """
    grid, seen = [], set()
    for mtry in (math.ceil(math.sqrt(p)), math.ceil(p / 3), p):
        for min_leaf in (5, 20, 50):
            if (mtry, min_leaf) not in seen:
                seen.add((mtry, min_leaf))
                grid.append(replace(base, mtry=mtry, min_leaf=min_leaf))
    return grid


def cv_loss(X, y, params: ForestParams, task: str, folds: Sequence[np.ndarray],
            backend: Optional[str] = None) -> float:
    """Mean squared held-out error (Brier score for probability forests)."""
    n = len(y)
    sse = 0.0
    for held in folds:
        train = np.ones(n, dtype=bool)
        train[held] = False
        model = fit_forest(X[train], y[train], params, task, backend=backend)
        resid = y[held] - model.predict(X[held], backend=backend)
        sse += float(resid @ resid)
    return sse / n


def cv_tune(X, y, task: str, grid: Sequence[ForestParams], k: int = 5,
            rng: Optional[np.random.Generator] = None,
            backend: Optional[str] = None) -> ForestParams:
    """Grid point with the lowest k-fold cross-validated loss.

    Ties go to the earlier grid entry. A one-point grid is returned as is,
    without running any cross-validation.
    """
    if not grid:
        raise InvalidParameterError("grid must be nonempty")
    if k < 2:
        raise InvalidParameterError("k must be >= 2")
    X = _check_X(X)
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    if n < k:
        raise InvalidInputError(f"need at least k={k} rows for {k}-fold CV, got {n}")
    if len(grid) == 1:
        return grid[0]
    rng = np.random.default_rng() if rng is None else rng
    folds = np.array_split(rng.permutation(n), k)
    best, best_loss = None, math.inf
    for params in grid:
        loss = cv_loss(X, y, params, task, folds, backend=backend)
        if loss < best_loss:
            best, best_loss = params, loss
    return best
