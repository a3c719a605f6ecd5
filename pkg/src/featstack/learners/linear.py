"""Least squares, ridge and lasso regression."""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

JITTER = 1e-10
# pivots below this fraction of the largest Gram diagonal count as singular
_PIVOT_TOL = 1e-12
LASSO_TOL = 1e-7
LASSO_MAX_SWEEPS = 10_000


@dataclass(frozen=True)
class LinearModel:
    intercept: float
    coef: np.ndarray

    def predict(self, X):
        return X @ self.coef + self.intercept

    def to_dict(self):
        return {"intercept": self.intercept, "coef": self.coef.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["intercept"]), np.array(d["coef"], dtype=np.float64))


def _solve_spd(G, b):
    """Solve ``G x = b`` by Cholesky, adding a relative jitter when ``G`` is singular."""
    scale = max(float(np.max(np.diag(G), initial=0.0)), 1.0)
    try:
        c, lower = cho_factor(G, lower=True)
        if np.min(np.diag(c)) ** 2 > _PIVOT_TOL * scale:
            return cho_solve((c, lower), b)
    except LinAlgError:
        pass
    c, lower = cho_factor(G + JITTER * scale * np.eye(len(G)), lower=True)
    return cho_solve((c, lower), b)


def fit_linear(data, alpha=0.0):
    """Least squares with an unpenalized intercept; ``alpha > 0`` adds a ridge penalty.

    Minimizes ``sum (y - b0 - x'b)^2 + alpha * |b|^2`` through the normal
    equations of the centered problem.
    """
    X, y = data.features, data.target
    x_mean = X.mean(axis=0)
    y_mean = y.mean()
    Xc = X - x_mean
    G = Xc.T @ Xc + alpha * np.eye(X.shape[1])
    coef = _solve_spd(G, Xc.T @ (y - y_mean)) if X.shape[1] else np.zeros(0)
    return LinearModel(float(y_mean - x_mean @ coef), coef)


def soft_threshold(z, t):
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


def lasso_path_max(data):
    """Smallest penalty at which every standardized lasso slope is zero."""
    Z, yc, _, _ = _standardize(data)
    if Z.shape[1] == 0:
        return 0.0
    return float(np.max(np.abs(Z.T @ yc)) / len(yc))


def _standardize(data):
    X, y = data.features, data.target
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    keep = std > 0
    Z = (X[:, keep] - mean[keep]) / std[keep]
    return Z, y - y.mean(), mean, np.where(keep, std, 0.0)


def fit_lasso(data, alpha, tol=LASSO_TOL, max_sweeps=LASSO_MAX_SWEEPS):
    """Cyclic coordinate descent for ``(1/2n)|y - Zb|^2 + alpha |b|_1``.

    ``Z`` is the standardized design; coefficients are mapped back to the
    original feature scale.  Constant columns get a zero coefficient.
    """
    Z, yc, mean, std = _standardize(data)
    n, p = Z.shape
    b = np.zeros(p)
    resid = yc.copy()
    for _ in range(max_sweeps):
        max_change = 0.0
        for j in range(p):
            zj = Z[:, j]
            old = b[j]
            rho = zj @ resid / n + old
            new = soft_threshold(rho, alpha)
            if new != old:
                resid -= zj * (new - old)
                b[j] = new
                max_change = max(max_change, abs(new - old))
        if max_change < tol:
            break
    coef = np.zeros(data.n_features)
    keep = std > 0
    coef[keep] = b / std[keep]
    return LinearModel(float(data.target.mean() - mean @ coef), coef)
