"""Accuracy metrics with standard errors, error correlations and weight summaries."""

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ShapeError

REDUNDANCY_THRESHOLD = 0.99
QUANTILE_KEYS = ("min", "q25", "median", "q75", "max")


@dataclass(frozen=True)
class MetricWithSE:
    value: float
    se: float
    n: int


def _per_row(y, yhat):
    y = np.asarray(y, dtype=np.float64).ravel()
    yhat = np.asarray(yhat, dtype=np.float64).ravel()
    if y.shape != yhat.shape:
        raise ShapeError(f"{len(y)} targets but {len(yhat)} predictions")
    if len(y) < 2:
        raise ShapeError("standard errors need at least 2 rows")
    return y - yhat


def _with_se(losses):
    n = len(losses)
    return MetricWithSE(float(np.mean(losses)), float(np.std(losses, ddof=1) / math.sqrt(n)), n)


def mse_with_se(y, yhat):
    """Mean squared error; SE is the sample sd of squared errors over sqrt(n)."""
    e = _per_row(y, yhat)
    return _with_se(e * e)


def mae_with_se(y, yhat):
    e = _per_row(y, yhat)
    return _with_se(np.abs(e))


def error_correlation(oof, y):
    """Pearson correlation between residual columns ``P[:, j] - y``.

    Entries involving a constant residual column are NaN (undefined), including
    that column's diagonal.
    """
    P = getattr(oof, "P", oof)
    P = np.asarray(P, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if P.shape[0] != len(y):
        raise ShapeError(f"{P.shape[0]} prediction rows but {len(y)} targets")
    E = P - y[:, None]
    E = E - E.mean(axis=0)
    norms = np.sqrt(np.sum(E * E, axis=0))
    k = P.shape[1]
    C = np.full((k, k), np.nan)
    ok = norms > 0
    for i in range(k):
        if not ok[i]:
            continue
        for j in range(i, k):
            if not ok[j]:
                continue
            if i == j:
                C[i, i] = 1.0
            else:
                r = float(E[:, i] @ E[:, j] / (norms[i] * norms[j]))
                C[i, j] = C[j, i] = min(1.0, max(-1.0, r))
    return C


def weight_summary(weights, names=None):
    """Per-learner min/q25/median/q75/max of an ``n x k`` weight matrix.

    Returns a list of dicts in column order, each with a ``name`` key.
    """
    W = np.asarray(weights, dtype=np.float64)
    if W.ndim == 1:
        W = W.reshape(-1, 1)
    if W.shape[0] < 1:
        raise ShapeError("weight summary needs at least one row")
    names = list(names) if names is not None else [f"w{j}" for j in range(W.shape[1])]
    if len(names) != W.shape[1]:
        raise ShapeError(f"{len(names)} names for {W.shape[1]} weight columns")
    q = np.quantile(W, [0.0, 0.25, 0.5, 0.75, 1.0], axis=0)
    return [dict(name=name, **{key: float(q[i, j]) for i, key in enumerate(QUANTILE_KEYS)})
            for j, name in enumerate(names)]


def redundancy_flags(correlation, threshold=REDUNDANCY_THRESHOLD):
    """Unordered pairs ``(i, j, rho)`` with ``rho >= threshold``, most correlated first."""
    C = np.asarray(correlation, dtype=np.float64)
    pairs = []
    k = C.shape[0]
    for i in range(k):
        for j in range(i + 1, k):
            rho = C[i, j]
            if not np.isnan(rho) and rho >= threshold:
                pairs.append((i, j, float(rho)))
    pairs.sort(key=lambda p: (-p[2], p[0], p[1]))
    return pairs


@dataclass
class ModelResult:
    name: str
    group: str  # "stacked", "direct" or "base"
    mse: MetricWithSE
    mae: MetricWithSE
    hidden_layers: int | None = None
    fit_time: float | None = None
    negative_weight_fraction: float | None = None


@dataclass
class EvalReport:
    models: list = field(default_factory=list)
    learner_names: list = field(default_factory=list)
    error_correlation: np.ndarray = None
    weight_quantiles: dict = field(default_factory=dict)  # model name -> weight_summary
    redundancy_pairs: list = field(default_factory=list)

    @property
    def fit_times(self):
        return {m.name: m.fit_time for m in self.models if m.fit_time is not None}

    def model(self, name):
        for m in self.models:
            if m.name == name:
                return m
        raise KeyError(name)

    def to_dict(self):
        return {
            "models": [asdict(m) for m in self.models],
            "learner_names": list(self.learner_names),
            "error_correlation": None if self.error_correlation is None
            else self.error_correlation.tolist(),
            "weight_quantiles": self.weight_quantiles,
            "redundancy_pairs": [list(p) for p in self.redundancy_pairs],
        }

    @classmethod
    def from_dict(cls, d):
        models = []
        for m in d["models"]:
            m = dict(m)
            m["mse"] = MetricWithSE(**m["mse"])
            m["mae"] = MetricWithSE(**m["mae"])
            models.append(ModelResult(**m))
        corr = d["error_correlation"]
        return cls(models, list(d["learner_names"]),
                   None if corr is None else np.array(corr, dtype=np.float64),
                   d["weight_quantiles"],
                   [tuple(p) for p in d["redundancy_pairs"]])

    def to_json(self, include_timings=True):
        d = self.to_dict()
        if not include_timings:
            for m in d["models"]:
                m["fit_time"] = None
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))
