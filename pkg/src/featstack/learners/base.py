"""Dataset container and the uniform fit/predict contract for base learners."""

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidInputError, ShapeError
from .linear import LinearModel, fit_lasso, fit_linear
from .trees import BoostedTrees, Ensemble, Tree, fit_ensemble, fit_gradient_boosting, fit_tree

KINDS = ("ols", "ridge", "lasso", "tree", "bagging", "random_forest", "gradient_boosting")

# hyperparameter name -> default, per kind
DEFAULTS = {
    "ols": {},
    "ridge": {"alpha": 1.0},
    "lasso": {"alpha": 0.01},
    "tree": {"max_depth": None, "min_leaf": 5, "max_features": None},
    "bagging": {"n_trees": 100, "max_depth": None, "min_leaf": 5, "bootstrap": True},
    "random_forest": {"n_trees": 100, "max_depth": None, "min_leaf": 5, "bootstrap": True,
                      "max_features": None},
    "gradient_boosting": {"n_rounds": 100, "shrinkage": 0.1, "max_depth": 3, "min_leaf": 1},
}


@dataclass
class Dataset:
    features: np.ndarray
    target: np.ndarray
    column_names: list = field(default_factory=list)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim == 1:
            self.features = self.features.reshape(-1, 1)
        self.target = np.asarray(self.target, dtype=np.float64).ravel()
        n = self.features.shape[0]
        if n < 1:
            raise InvalidInputError("dataset needs at least one row")
        if self.target.shape[0] != n:
            raise ShapeError(f"{n} feature rows but {self.target.shape[0]} targets")
        if not (np.isfinite(self.features).all() and np.isfinite(self.target).all()):
            raise InvalidInputError("dataset contains NaN or infinite entries")
        if not self.column_names:
            self.column_names = [f"x{j}" for j in range(self.features.shape[1])]
        if len(self.column_names) != self.features.shape[1]:
            raise ShapeError("column_names length does not match feature count")

    def __len__(self):
        return self.features.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]

    def subset(self, rows):
        return Dataset(self.features[rows], self.target[rows], list(self.column_names))


@dataclass
class LearnerSpec:
    """A base learner kind plus validated hyperparameters.

    ``columns`` optionally restricts the learner to a subset of feature
    indices; the fitted model still accepts the full feature matrix.
    """

    kind: str
    hyperparams: dict = field(default_factory=dict)
    seed: int = 0
    name: str | None = None
    columns: list | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown learner kind {self.kind!r}; choose from {KINDS}")
        unknown = set(self.hyperparams) - set(DEFAULTS[self.kind])
        if unknown:
            raise InvalidInputError(f"{self.kind} does not accept {sorted(unknown)}")
        merged = dict(DEFAULTS[self.kind])
        merged.update(self.hyperparams)
        self.hyperparams = merged
        _validate(self.kind, merged)
        if self.name is None:
            self.name = self.kind
        if self.columns is not None:
            self.columns = [int(c) for c in self.columns]

    def fit(self, data):
        view = data if self.columns is None else Dataset(
            data.features[:, self.columns], data.target,
            [data.column_names[c] for c in self.columns])
        hp = self.hyperparams
        rng = np.random.default_rng(self.seed)
        if self.kind == "ols":
            model = fit_linear(view, alpha=0.0)
        elif self.kind == "ridge":
            model = fit_linear(view, alpha=hp["alpha"])
        elif self.kind == "lasso":
            model = fit_lasso(view, hp["alpha"])
        elif self.kind == "tree":
            model = fit_tree(view, hp["max_depth"], hp["min_leaf"], hp["max_features"], rng)
        elif self.kind in ("bagging", "random_forest"):
            model = fit_ensemble(view, self.kind, hp["n_trees"], hp["max_depth"], hp["min_leaf"],
                                 rng, bootstrap=hp["bootstrap"],
                                 max_features=hp.get("max_features"))
        else:
            model = fit_gradient_boosting(view, hp["n_rounds"], hp["shrinkage"],
                                          hp["max_depth"], hp["min_leaf"])
        return FittedLearner(self, model, data.n_features)

    def to_dict(self):
        return {"kind": self.kind, "hyperparams": dict(self.hyperparams), "seed": self.seed,
                "name": self.name, "columns": self.columns}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], dict(d["hyperparams"]), d["seed"], d["name"], d["columns"])


def _validate(kind, hp):
    def positive_int(key, allow_none=False):
        v = hp[key]
        if v is None and allow_none:
            return
        if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
            raise InvalidInputError(f"{kind}.{key} must be a positive integer, got {v!r}")

    if "alpha" in hp and not hp["alpha"] >= 0:
        raise InvalidInputError(f"{kind}.alpha must be >= 0, got {hp['alpha']!r}")
    if "min_leaf" in hp:
        positive_int("min_leaf")
    if "max_depth" in hp:
        v = hp["max_depth"]
        if v is not None and (not isinstance(v, (int, np.integer)) or v < 0):
            raise InvalidInputError(f"{kind}.max_depth must be None or >= 0, got {v!r}")
    if "max_features" in hp:
        positive_int("max_features", allow_none=True)
    if "n_trees" in hp:
        positive_int("n_trees")
    if "n_rounds" in hp:
        positive_int("n_rounds")
    if "shrinkage" in hp and not 0.0 <= hp["shrinkage"] <= 1.0:
        raise InvalidInputError(f"{kind}.shrinkage must lie in [0, 1], got {hp['shrinkage']!r}")


class FittedLearner:
    """A fitted base learner; immutable and pure after construction."""

    def __init__(self, spec, model, n_features):
        self.spec = spec
        self.model = model
        self.n_features = n_features

    @property
    def name(self):
        return self.spec.name

    def predict(self, features):
        X = np.asarray(features, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ShapeError(
                f"{self.name} was fitted on {self.n_features} features, got shape {X.shape}")
        if self.spec.columns is not None:
            X = X[:, self.spec.columns]
        return self.model.predict(X)

    def to_dict(self):
        return {"spec": self.spec.to_dict(), "n_features": self.n_features,
                "model": self.model.to_dict()}

    @classmethod
    def from_dict(cls, d):
        spec = LearnerSpec.from_dict(d["spec"])
        payload = d["model"]
        if spec.kind in ("ols", "ridge", "lasso"):
            model = LinearModel.from_dict(payload)
        elif spec.kind == "tree":
            model = Tree.from_dict(payload)
        elif spec.kind in ("bagging", "random_forest"):
            model = Ensemble.from_dict(payload)
        else:
            model = BoostedTrees.from_dict(payload)
        return cls(spec, model, d["n_features"])


def predict(model, features):
    """Predictions of a fitted learner for an ``n x d`` feature matrix."""
    return model.predict(features)
