"""Stacking meta-learners.

The neural stackers take the raw features as network input and emit either
unconstrained per-row weights over the base learners (``unns``) or the entries
of a lower-triangular matrix ``L(x)`` that is turned into simplex-summing
weights ``A e / (e' A e)`` with ``A = L L' + eps I`` (``cnns``).  Both heads
can carry one extra additive output ``phi(x)``.  The base predictions enter
only through the loss: out-of-fold predictions during training, full-data
refits at prediction time.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from . import autodiff as ad
from .errors import FoldError, InvalidInputError, LearnerError, NotPositiveDefiniteError, ShapeError
from .nn import MLP, TrainConfig, train_loop

EPSILON_PD = 1e-6
HEADS = ("unns", "cnns")
STACKERS = ("unns", "unns_phi", "cnns", "cnns_phi", "breiman", "meta_nn", "direct_nn")


# ---------------------------------------------------------------------------
# out-of-fold predictions

@dataclass(frozen=True)
class FoldPartition:
    n: int
    n_folds: int
    assignment: np.ndarray  # 0-based fold index per row
    seed: int | None = None

    def fold(self, o):
        return np.flatnonzero(self.assignment == o)

    def folds(self):
        return [self.fold(o) for o in range(self.n_folds)]


def kfold_partition(n, n_folds, seed=0):
    """Uniformly shuffled assignment of ``n`` rows to ``n_folds`` balanced folds."""
    if n_folds < 2 or n_folds > n:
        raise FoldError(f"need 2 <= folds <= n, got folds={n_folds}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    assignment[perm] = np.arange(n) % n_folds
    return FoldPartition(n, n_folds, assignment, seed)


@dataclass
class OofMatrix:
    P: np.ndarray
    learner_names: list
    partition: FoldPartition


def build_oof_matrix(learners, data, n_folds=10, seed=0, partition=None):
    """Column ``j`` holds learner ``j``'s predictions for each row from a fit
    that never saw that row's fold.

    ``learners`` are objects with ``name`` and ``fit(dataset) -> predictor``;
    :class:`~featstack.learners.LearnerSpec` satisfies this.
    """
    if len(data) == 0:
        raise InvalidInputError("cannot build an out-of-fold matrix from an empty dataset")
    if partition is None:
        partition = kfold_partition(len(data), n_folds, seed)
    elif partition.n != len(data):
        raise FoldError(f"partition covers {partition.n} rows, data has {len(data)}")
    P = np.empty((len(data), len(learners)))
    for o, held_out in enumerate(partition.folds()):
        train = np.setdiff1d(np.arange(len(data)), held_out)
        fit_part = data.subset(train)
        for j, learner in enumerate(learners):
            name = getattr(learner, "name", str(j))
            try:
                model = learner.fit(fit_part)
                P[held_out, j] = model.predict(data.features[held_out])
            except Exception as exc:
                raise LearnerError(f"learner {name!r} failed on fold {o}: {exc}",
                                   fold=o, learner=name) from exc
    if not np.isfinite(P).all():
        raise LearnerError("out-of-fold predictions contain non-finite values")
    names = [getattr(learner, "name", str(j)) for j, learner in enumerate(learners)]
    return OofMatrix(P, names, partition)


# ---------------------------------------------------------------------------
# simplex weights

def theorem_weights(M):
    """``M^-1 e / (e' M^-1 e)`` for a symmetric positive-definite ``M``.

    This minimizes ``t' M t`` subject to ``sum(t) = 1``; it coincides with the
    simplex-constrained minimizer only when every entry comes out
    non-negative.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {M.shape}")
    if not np.allclose(M, M.T, rtol=1e-10, atol=1e-12):
        raise NotPositiveDefiniteError("matrix is not symmetric")
    try:
        factor = cho_factor(M, lower=True)
    except LinAlgError as exc:
        raise NotPositiveDefiniteError(f"Cholesky factorization failed: {exc}") from exc
    z = cho_solve(factor, np.ones(len(M)))
    return z / z.sum()


def n_tril(k):
    return k * (k + 1) // 2


def tril_k(m):
    """Matrix size ``k`` with ``k (k + 1) / 2 == m``."""
    k = int(round((math.sqrt(8 * m + 1) - 1) / 2))
    if n_tril(k) != m or k < 1:
        raise ShapeError(f"{m} entries do not form a lower-triangular matrix")
    return k


def tril_indices(k):
    """(row, col) pairs, row-major over ``row >= col``."""
    return [(r, c) for r in range(k) for c in range(r + 1)]


def assemble_tril(entries, k):
    L = np.zeros((k, k))
    for value, (r, c) in zip(entries, tril_indices(k)):
        L[r, c] = value
    return L


_HEAD_CACHE = {}


def _head_operators(k):
    """Constant 0/1 matrices that express ``L L' e`` with flat-entry algebra.

    With flat entries ``l`` (one row per sample), ``u = l @ S`` is ``L' e``,
    ``u @ S.T`` spreads ``u[c]`` onto entry ``(r, c)`` and ``@ R`` sums entries
    into their row, giving ``L (L' e)``.
    """
    if k not in _HEAD_CACHE:
        idx = tril_indices(k)
        S = np.zeros((len(idx), k))
        R = np.zeros((len(idx), k))
        for i, (r, c) in enumerate(idx):
            S[i, c] = 1.0
            R[i, r] = 1.0
        _HEAD_CACHE[k] = (ad.Tensor(S), ad.Tensor(S.T.copy()), ad.Tensor(R))
    return _HEAD_CACHE[k]


def cnns_head(entries, epsilon_pd=EPSILON_PD):
    """Differentiable map from flat lower-triangular entries to weights.

    ``entries`` is an ``n x k(k+1)/2`` tensor; the result is ``n x k`` with
    each row equal to ``A e / (e' A e)`` for ``A = L L' + epsilon_pd I``.
    The denominator is at least ``k * epsilon_pd``.
    """
    entries = ad.lift(entries)
    k = tril_k(entries.shape[1])
    S, St, R = _head_operators(k)
    u = ad.matmul(entries, S)
    v = ad.matmul(ad.mul(entries, ad.matmul(u, St)), R)
    a = ad.add_scalar(v, epsilon_pd)
    return ad.div_rows(a, ad.sum_rows(a))


def cnns_weights(entries, epsilon_pd=EPSILON_PD):
    """Numpy convenience wrapper around :func:`cnns_head` (1-D or 2-D input)."""
    arr = np.asarray(entries, dtype=np.float64)
    single = arr.ndim == 1
    out = cnns_head(ad.Tensor(arr.reshape(1, -1) if single else arr), epsilon_pd).value
    return out[0] if single else out


def simplex_project(v):
    """Euclidean projection onto ``{w : w >= 0, sum(w) = 1}`` (sort and threshold)."""
    v = np.asarray(v, dtype=np.float64).ravel()
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, len(v) + 1)
    rho = np.count_nonzero(u - css / ind > 0)
    tau = css[rho - 1] / rho
    return np.maximum(v - tau, 0.0)


@dataclass
class ConstantWeights:
    theta: np.ndarray
    objective: float = math.nan
    iterations: int = 0

    @property
    def k(self):
        return len(self.theta)

    def to_dict(self):
        return {"theta": self.theta.tolist(), "objective": self.objective,
                "iterations": self.iterations}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["theta"], dtype=np.float64), d["objective"], d["iterations"])


def breiman_objective(P, y, theta):
    r = y - P @ theta
    return float(r @ r)


def fit_breiman(oof, y, max_iter=10_000, rtol=1e-10):
    """Constant simplex weights minimizing ``sum_i (y_i - theta' P_i)^2``.

    Accelerated projected gradient with step ``1 / Lipschitz`` and a restart
    whenever the objective increases; stops after ``max_iter`` iterations or
    when the relative objective change drops below ``rtol``.
    """
    P = oof.P if isinstance(oof, OofMatrix) else np.asarray(oof, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if P.shape[0] != len(y):
        raise ShapeError(f"{P.shape[0]} prediction rows but {len(y)} targets")
    k = P.shape[1]
    if k == 1:
        theta = np.ones(1)
        return ConstantWeights(theta, breiman_objective(P, y, theta), 0)
    G = P.T @ P
    b = P.T @ y
    yy = float(y @ y)
    lipschitz = 2.0 * float(np.linalg.eigvalsh(G)[-1])
    if lipschitz <= 0:
        theta = np.full(k, 1.0 / k)
        return ConstantWeights(theta, breiman_objective(P, y, theta), 0)
    step = 1.0 / lipschitz

    def objective(t):
        return float(t @ G @ t - 2.0 * b @ t + yy)

    theta = np.full(k, 1.0 / k)
    z = theta.copy()
    t_mom = 1.0
    f = objective(theta)
    it = 0
    for it in range(1, max_iter + 1):
        new = simplex_project(z - step * 2.0 * (G @ z - b))
        f_new = objective(new)
        if f_new > f:
            # restart momentum from the last iterate
            z = theta.copy()
            t_mom = 1.0
            new = simplex_project(z - step * 2.0 * (G @ z - b))
            f_new = objective(new)
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_mom * t_mom))
        z = new + ((t_mom - 1.0) / t_next) * (new - theta)
        t_mom = t_next
        change = abs(f - f_new)
        theta, f = new, f_new
        if change <= rtol * max(abs(f), 1e-300):
            break
    theta = simplex_project(theta)
    return ConstantWeights(theta, breiman_objective(P, y, theta), it)


# ---------------------------------------------------------------------------
# neural stackers

def _standardizer(X):
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    return mean, np.where(std > 0, std, 1.0)


def _root_mean_square(y):
    s = float(np.sqrt(np.mean(np.square(y))))
    return s if s > 0 else 1.0


class StackNet:
    """Feature-to-weights network for the ``unns`` and ``cnns`` stackers.

    Targets and base predictions are divided by one common scale during
    training, which leaves the optimal weights unchanged; ``phi`` is mapped
    back to target units on output.
    """

    def __init__(self, head, k, n_features, config, with_phi=False,
                 epsilon_pd=EPSILON_PD, clip_negative=False):
        if head not in HEADS:
            raise InvalidInputError(f"unknown head {head!r}")
        self.head = head
        self.k = k
        self.n_features = n_features
        self.config = config
        self.with_phi = with_phi
        self.epsilon_pd = epsilon_pd
        self.clip_negative = clip_negative
        self.x_mean = np.zeros(n_features)
        self.x_std = np.ones(n_features)
        self.y_scale = 1.0
        self.history = None
        self.negative_weight_fraction = math.nan
        rng = np.random.default_rng([config.seed, 1])
        self.net = MLP.from_config(n_features, self.output_width, config, rng)
        bias = self.net.out_bias.value
        if head == "unns":
            bias[0, :k] = 1.0 / k
        else:
            for i, (r, c) in enumerate(tril_indices(k)):
                bias[0, i] = 1.0 if r == c else 0.0

    @property
    def output_width(self):
        base = self.k if self.head == "unns" else n_tril(self.k)
        return base + (1 if self.with_phi else 0)

    @property
    def hidden_layers(self):
        return len(self.net.layers)

    def outputs(self, Xs, training=False, rng=None):
        """Weights tensor (n x k) and optional phi tensor (n x 1), scaled units."""
        out = self.net(Xs, training, rng)
        width = self.k if self.head == "unns" else n_tril(self.k)
        head_cols = np.eye(self.output_width)[:, :width]
        raw = ad.matmul(out, ad.Tensor(head_cols))
        theta = raw if self.head == "unns" else cnns_head(raw, self.epsilon_pd)
        phi = None
        if self.with_phi:
            phi = ad.matmul(out, ad.Tensor(np.eye(self.output_width)[:, width:]))
        return theta, phi

    def loss(self, batch, training, rng):
        Xs, Ps, ys = batch
        theta, phi = self.outputs(Xs, training, rng)
        pred = ad.sum_rows(ad.mul(theta, ad.Tensor(Ps)))
        if phi is not None:
            pred = ad.add(pred, phi)
        return ad.mse_loss(pred, ys)

    def parameters(self):
        return self.net.parameters()

    def state_dict(self):
        return self.net.state_dict()

    def load_state_dict(self, state):
        self.net.load_state_dict(state)

    def standardize(self, X):
        return (np.asarray(X, dtype=np.float64) - self.x_mean) / self.x_std

    def weights(self, X):
        """Eval-mode weights (n x k) and phi (n,) or ``None``, target units."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ShapeError(f"stacker expects {self.n_features} features, got shape {X.shape}")
        theta, phi = self.outputs(self.standardize(X))
        theta = theta.value.copy()
        if self.clip_negative:
            theta = _clip_renormalize(theta)
        phi = None if phi is None else phi.value[:, 0] * self.y_scale
        return theta, phi

    def to_dict(self):
        return {
            "head": self.head, "k": self.k, "n_features": self.n_features,
            "with_phi": self.with_phi, "epsilon_pd": self.epsilon_pd,
            "clip_negative": self.clip_negative, "config": self.config.to_dict(),
            "x_mean": self.x_mean.tolist(), "x_std": self.x_std.tolist(),
            "y_scale": self.y_scale,
            "negative_weight_fraction": self.negative_weight_fraction,
            "net": self.net.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        obj = cls.__new__(cls)
        obj.head = d["head"]
        obj.k = d["k"]
        obj.n_features = d["n_features"]
        obj.with_phi = d["with_phi"]
        obj.epsilon_pd = d["epsilon_pd"]
        obj.clip_negative = d["clip_negative"]
        obj.config = TrainConfig.from_dict(d["config"])
        obj.x_mean = np.array(d["x_mean"], dtype=np.float64)
        obj.x_std = np.array(d["x_std"], dtype=np.float64)
        obj.y_scale = d["y_scale"]
        obj.negative_weight_fraction = d["negative_weight_fraction"]
        obj.history = None
        obj.net = MLP.from_dict(d["net"])
        return obj


def _clip_renormalize(theta):
    clipped = np.maximum(theta, 0.0)
    s = clipped.sum(axis=1, keepdims=True)
    ok = s[:, 0] > 0
    out = theta.copy()
    out[ok] = clipped[ok] / s[ok]
    return out


def _check_alignment(oof, data):
    P = oof.P if isinstance(oof, OofMatrix) else np.asarray(oof, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] != len(data):
        raise ShapeError(f"out-of-fold matrix has {P.shape[0]} rows, data has {len(data)}")
    return P


def train_stack_net(head, oof, data, config=None, with_phi=False,
                    epsilon_pd=EPSILON_PD, clip_negative=False):
    """Fit a :class:`StackNet` on out-of-fold predictions ``oof`` for ``data``."""
    config = TrainConfig() if config is None else config
    P = _check_alignment(oof, data)
    net = StackNet(head, P.shape[1], data.n_features, config, with_phi, epsilon_pd,
                   clip_negative)
    net.x_mean, net.x_std = _standardizer(data.features)
    net.y_scale = _root_mean_square(data.target)
    arrays = (net.standardize(data.features), P / net.y_scale,
              (data.target / net.y_scale).reshape(-1, 1))
    _, net.history = train_loop(net, arrays, lambda m, b, tr, r: m.loss(b, tr, r), config)
    theta, _ = net.outputs(arrays[0])
    net.negative_weight_fraction = float(np.mean(theta.value < 0))
    return net


def train_unns(oof, data, config=None, with_phi=False):
    return train_stack_net("unns", oof, data, config, with_phi)


def train_cnns(oof, data, config=None, with_phi=False, epsilon_pd=EPSILON_PD,
               clip_negative=False):
    return train_stack_net("cnns", oof, data, config, with_phi, epsilon_pd, clip_negative)


class BaselineNet:
    """Plain regression network: base predictions (``meta_regression``) or raw
    features (``direct``) in, target out."""

    def __init__(self, kind, n_inputs, config):
        if kind not in ("meta_regression", "direct"):
            raise InvalidInputError(f"unknown baseline kind {kind!r}")
        self.kind = kind
        self.n_inputs = n_inputs
        self.config = config
        self.in_mean = np.zeros(n_inputs)
        self.in_std = np.ones(n_inputs)
        self.y_mean = 0.0
        self.y_std = 1.0
        self.history = None
        self.net = MLP.from_config(n_inputs, 1, config, np.random.default_rng([config.seed, 2]))

    @property
    def hidden_layers(self):
        return len(self.net.layers)

    def parameters(self):
        return self.net.parameters()

    def state_dict(self):
        return self.net.state_dict()

    def load_state_dict(self, state):
        self.net.load_state_dict(state)

    def loss(self, batch, training, rng):
        Xs, ys = batch
        return ad.mse_loss(self.net(Xs, training, rng), ys)

    def predict(self, inputs):
        Z = np.asarray(inputs, dtype=np.float64)
        if Z.ndim != 2 or Z.shape[1] != self.n_inputs:
            raise ShapeError(f"baseline expects {self.n_inputs} inputs, got shape {Z.shape}")
        out = self.net((Z - self.in_mean) / self.in_std).value[:, 0]
        return out * self.y_std + self.y_mean

    def to_dict(self):
        return {"kind": self.kind, "n_inputs": self.n_inputs, "config": self.config.to_dict(),
                "in_mean": self.in_mean.tolist(), "in_std": self.in_std.tolist(),
                "y_mean": self.y_mean, "y_std": self.y_std, "net": self.net.to_dict()}

    @classmethod
    def from_dict(cls, d):
        obj = cls.__new__(cls)
        obj.kind = d["kind"]
        obj.n_inputs = d["n_inputs"]
        obj.config = TrainConfig.from_dict(d["config"])
        obj.in_mean = np.array(d["in_mean"], dtype=np.float64)
        obj.in_std = np.array(d["in_std"], dtype=np.float64)
        obj.y_mean = d["y_mean"]
        obj.y_std = d["y_std"]
        obj.history = None
        obj.net = MLP.from_dict(d["net"])
        return obj


def train_baseline_nn(inputs, y, config=None, kind="direct"):
    config = TrainConfig() if config is None else config
    Z = np.asarray(inputs, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if Z.ndim != 2 or Z.shape[0] != len(y):
        raise ShapeError(f"inputs of shape {Z.shape} do not align with {len(y)} targets")
    model = BaselineNet(kind, Z.shape[1], config)
    model.in_mean, model.in_std = _standardizer(Z)
    model.y_mean = float(y.mean())
    std = float(y.std())
    model.y_std = std if std > 0 else 1.0
    arrays = ((Z - model.in_mean) / model.in_std,
              ((y - model.y_mean) / model.y_std).reshape(-1, 1))
    _, model.history = train_loop(model, arrays, lambda m, b, tr, r: m.loss(b, tr, r), config)
    return model


def validation_mse(model):
    """Best early-stopping validation MSE in target units."""
    if isinstance(model, StackNet):
        return model.history.best_val_loss * model.y_scale ** 2
    return model.history.best_val_loss * model.y_std ** 2


@dataclass
class SweepResult:
    model: object
    hidden_layers: int
    validation: dict = field(default_factory=dict)  # hidden layers -> validation MSE


def sweep_architectures(train_fn, config, sweep=(1, 3, 10)):
    """Train once per hidden-layer count and keep the lowest validation MSE.

    ``train_fn(config)`` returns a trained model; ties keep the shallower net.
    """
    best, best_layers, scores = None, None, {}
    for layers in sweep:
        model = train_fn(replace(config, hidden_layers=int(layers)))
        scores[int(layers)] = validation_mse(model)
        if best is None or scores[int(layers)] < scores[best_layers]:
            best, best_layers = model, int(layers)
    return SweepResult(best, best_layers, scores)


# ---------------------------------------------------------------------------
# assembled models

@dataclass
class StackedModel:
    """A meta-learner plus the base learners refit on the full training set."""

    kind: str
    meta: object
    base_models: list
    feature_names: list | None = None

    def __post_init__(self):
        k = _meta_k(self.meta)
        if k is not None and k != len(self.base_models):
            raise ShapeError(f"meta-learner combines {k} learners, got {len(self.base_models)}")

    @property
    def learner_names(self):
        return [m.name for m in self.base_models]


def _meta_k(meta):
    if isinstance(meta, (StackNet, ConstantWeights)):
        return meta.k
    if isinstance(meta, BaselineNet) and meta.kind == "meta_regression":
        return meta.n_inputs
    return None


def base_predictions(model, features):
    X = np.asarray(features, dtype=np.float64)
    if not model.base_models:
        return np.empty((X.shape[0], 0))
    return np.column_stack([m.predict(X) for m in model.base_models])


def predict_stacked(model, features):
    """Return ``(predictions, weights, phi)`` for a feature matrix.

    ``weights`` is the per-row ``n x k`` weight matrix (``None`` for the plain
    network baselines) and ``phi`` the additive term when the stacker has one.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    meta = model.meta
    if isinstance(meta, BaselineNet) and meta.kind == "direct":
        return meta.predict(X), None, None
    G = base_predictions(model, X)
    if isinstance(meta, ConstantWeights):
        weights = np.tile(meta.theta, (X.shape[0], 1))
        return G @ meta.theta, weights, None
    if isinstance(meta, BaselineNet):
        return meta.predict(G), None, None
    weights, phi = meta.weights(X)
    pred = np.sum(weights * G, axis=1)
    if phi is not None:
        pred = pred + phi
    return pred, weights, phi


def stacker_config(kind):
    """(head, with_phi) for the neural stacker names."""
    return {"unns": ("unns", False), "unns_phi": ("unns", True),
            "cnns": ("cnns", False), "cnns_phi": ("cnns", True)}[kind]


def fit_stacker(kind, oof, data, base_models, config=None, sweep=None, clip_negative=False):
    """Fit one named stacker on training data and wrap it as a :class:`StackedModel`.

    ``base_models`` are the full-training-set refits in ``oof`` column order.
    Neural stackers are swept over ``sweep`` hidden-layer counts when given.
    Returns ``(model, sweep_result_or_None)``.
    """
    if kind not in STACKERS:
        raise InvalidInputError(f"unknown stacker {kind!r}; choose from {STACKERS}")
    config = TrainConfig() if config is None else config
    if kind == "breiman":
        return StackedModel(kind, fit_breiman(oof, data.target), list(base_models)), None
    if kind in ("meta_nn", "direct_nn"):
        inputs = oof.P if kind == "meta_nn" else data.features
        base_kind = "meta_regression" if kind == "meta_nn" else "direct"

        def train_fn(cfg):
            return train_baseline_nn(inputs, data.target, cfg, base_kind)
    else:
        head, with_phi = stacker_config(kind)

        def train_fn(cfg):
            return train_stack_net(head, oof, data, cfg, with_phi, clip_negative=clip_negative)

    if sweep:
        result = sweep_architectures(train_fn, config, sweep)
        meta = result.model
    else:
        meta = train_fn(config)
        result = SweepResult(meta, meta.hidden_layers, {meta.hidden_layers: validation_mse(meta)})
    bases = [] if kind == "direct_nn" else list(base_models)
    return StackedModel(kind, meta, bases), result
