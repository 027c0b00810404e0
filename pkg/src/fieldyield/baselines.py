"""Comparison models: ordinary least squares (via ridge-stabilized normal
equations) and a CART-style regression tree grown on sum-of-squared-error
splits. Both are deterministic."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataValidationError, NumericalError


@dataclass(frozen=True)
class LinearModel:
    coef: np.ndarray  # (d,)
    intercept: float


def fit_linear(features: np.ndarray, targets: np.ndarray, ridge: float = 1e-8) -> LinearModel:
    """Solve (X'X + ridge*I) beta = X'y with an intercept column appended.

    The default ridge only conditions near-singular systems; pass 0 for
    the exact least-squares solution on full-rank data.
    """
    X = np.asarray(features, dtype=float)
    y = np.asarray(targets, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise DataValidationError(f"bad shapes: features {X.shape}, targets {y.shape}")
    if X.shape[0] < 1:
        raise DataValidationError("no training rows")
    if ridge < 0:
        raise DataValidationError("ridge must be nonnegative")
    Xa = np.column_stack([X, np.ones(X.shape[0])])
    A = Xa.T @ Xa + ridge * np.eye(Xa.shape[1])
    try:
        beta = np.linalg.solve(A, Xa.T @ y)
    except np.linalg.LinAlgError:
        raise NumericalError("normal equations singular beyond ridge rescue")
    if not np.all(np.isfinite(beta)):
        raise NumericalError("non-finite least-squares solution")
    return LinearModel(coef=beta[:-1], intercept=float(beta[-1]))


def predict_linear(model: LinearModel, features: np.ndarray) -> np.ndarray:
    X = np.asarray(features, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.coef.shape[0]:
        raise DataValidationError(
            f"expected {model.coef.shape[0]} features, got matrix of shape {X.shape}"
        )
    return X @ model.coef + model.intercept


@dataclass
class _Node:
    value: float
    feature: int | None = None
    threshold: float = 0.0
    left: "_Node | None" = None
    right: "_Node | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None


@dataclass(frozen=True)
class RegressionTree:
    root: _Node
    n_features: int
    max_depth: int
    min_samples_leaf: int


def _sse(y: np.ndarray) -> float:
    return float(np.sum((y - y.mean()) ** 2)) if y.size else 0.0


def _best_split(X: np.ndarray, y: np.ndarray, min_leaf: int) -> tuple[int, float, float] | None:
    """Lowest-SSE (feature, threshold); ties go to the lowest feature index,
    then the lowest threshold. Thresholds sit midway between consecutive
    distinct sorted values."""
    n = y.size
    best = None
    for f in range(X.shape[1]):
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        ys = y[order]
        csum = np.cumsum(ys)
        csq = np.cumsum(ys * ys)
        total_sum = csum[-1]
        total_sq = csq[-1]
        for i in range(min_leaf, n - min_leaf + 1):
            if i < 1 or i >= n or xs[i - 1] == xs[i]:
                continue
            left_sse = csq[i - 1] - csum[i - 1] ** 2 / i
            r_sum = total_sum - csum[i - 1]
            right_sse = (total_sq - csq[i - 1]) - r_sum**2 / (n - i)
            sse = left_sse + right_sse
            if best is None or sse < best[2]:
                threshold = (xs[i - 1] + xs[i]) / 2.0
                best = (f, threshold, sse)
    return best


def _grow(X: np.ndarray, y: np.ndarray, depth: int, max_depth: int, min_leaf: int) -> _Node:
    node = _Node(value=float(y.mean()))
    parent_sse = _sse(y)
    if depth >= max_depth or y.size < 2 * min_leaf or parent_sse <= 0.0:
        return node
    best = _best_split(X, y, min_leaf)
    if best is None or not best[2] < parent_sse:
        return node
    f, threshold, _ = best
    mask = X[:, f] <= threshold
    node.feature = f
    node.threshold = threshold
    node.left = _grow(X[mask], y[mask], depth + 1, max_depth, min_leaf)
    node.right = _grow(X[~mask], y[~mask], depth + 1, max_depth, min_leaf)
    return node


def fit_tree(
    features: np.ndarray,
    targets: np.ndarray,
    max_depth: int = 8,
    min_samples_leaf: int = 5,
) -> RegressionTree:
    """Greedy recursive splitting minimizing the children's summed SSE."""
    X = np.asarray(features, dtype=float)
    y = np.asarray(targets, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise DataValidationError(f"bad shapes: features {X.shape}, targets {y.shape}")
    if y.size == 0:
        raise DataValidationError("no training rows")
    if y.size < min_samples_leaf:
        raise DataValidationError(
            f"{y.size} rows but min_samples_leaf = {min_samples_leaf}"
        )
    root = _grow(X, y, 0, max_depth, min_samples_leaf)
    return RegressionTree(
        root=root, n_features=X.shape[1], max_depth=max_depth, min_samples_leaf=min_samples_leaf
    )


def predict_tree(tree: RegressionTree, features: np.ndarray) -> np.ndarray:
    X = np.asarray(features, dtype=float)
    if X.ndim != 2 or X.shape[1] != tree.n_features:
        raise DataValidationError(
            f"expected {tree.n_features} features, got matrix of shape {X.shape}"
        )
    out = np.empty(X.shape[0])

    def route(node: _Node, idx: np.ndarray) -> None:
        if node.is_leaf:
            out[idx] = node.value
            return
        mask = X[idx, node.feature] <= node.threshold
        route(node.left, idx[mask])
        route(node.right, idx[~mask])

    route(tree.root, np.arange(X.shape[0]))
    return out
