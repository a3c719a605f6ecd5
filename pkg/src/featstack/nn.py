"""Feed-forward networks and the training loop used by every neural meta-learner.

Hidden layers are ``linear -> batch norm -> ELU -> dropout``; the output layer
is a bare linear map.  Weights are drawn with Xavier Gaussian initialization,
biases start at zero unless the caller overrides the output bias.
"""

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import InvalidInputError, ShapeError


def xavier_init(fan_in, fan_out, rng):
    """Gaussian weights with variance ``2 / (fan_in + fan_out)``."""
    if fan_in < 1 or fan_out < 1:
        raise ShapeError(f"xavier_init needs positive fan sizes, got ({fan_in}, {fan_out})")
    std = math.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, std, size=(fan_in, fan_out))


@dataclass
class TrainConfig:
    hidden_layers: int = 3
    hidden_size: int = 100
    batch_size: int = 128
    patience: int = 10
    val_fraction: float = 0.1
    max_epochs: int = 500
    seed: int = 0
    lr: float = 1e-3
    lr_reduce_factor: float = 0.5
    # None means ceil(patience / 2)
    lr_reduce_patience: int | None = None
    dropout: float = 0.5
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 1.0:
            raise InvalidInputError(f"val_fraction must lie in (0, 1), got {self.val_fraction}")
        if self.patience < 1:
            raise InvalidInputError("patience must be at least 1")
        if self.hidden_size < 1:
            raise InvalidInputError("hidden_size must be at least 1")
        if self.hidden_layers < 0:
            raise InvalidInputError("hidden_layers must be non-negative")
        if self.batch_size < 2:
            raise InvalidInputError("batch_size must be at least 2 (batch norm)")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidInputError(f"dropout must lie in [0, 1), got {self.dropout}")
        if not 0.0 < self.lr_reduce_factor <= 1.0:
            raise InvalidInputError("lr_reduce_factor must lie in (0, 1]")

    @property
    def reduce_patience(self):
        if self.lr_reduce_patience is not None:
            return self.lr_reduce_patience
        return math.ceil(self.patience / 2)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class HiddenLayer:
    def __init__(self, fan_in, fan_out, rng, dropout_rate=0.5, bn_momentum=0.1, bn_eps=1e-5):
        if not 0.0 <= dropout_rate <= 1.0:
            raise InvalidInputError(f"dropout rate must lie in [0, 1], got {dropout_rate}")
        self.weight = ad.parameter(xavier_init(fan_in, fan_out, rng))
        self.bias = ad.parameter(np.zeros((1, fan_out)))
        self.bn = ad.BatchNormState(fan_out, momentum=bn_momentum, eps=bn_eps)
        self.dropout_rate = dropout_rate

    def __call__(self, x, training, rng):
        h = ad.add_bias(ad.matmul(x, self.weight), self.bias)
        h = ad.batch_norm(h, self.bn, training)
        h = ad.elu(h)
        return ad.dropout(h, self.dropout_rate, training, rng)

    def parameters(self):
        return [self.weight, self.bias, self.bn.gamma, self.bn.beta]


class MLP:
    """Multilayer perceptron mapping ``n x input_dim`` to ``n x output_dim``."""

    def __init__(self, input_dim, output_dim, hidden_layers, hidden_size, rng,
                 dropout=0.5, bn_momentum=0.1, bn_eps=1e-5):
        self.input_dim = input_dim
        self.output_dim = output_dim
        self.layers = []
        width = input_dim
        for _ in range(hidden_layers):
            self.layers.append(
                HiddenLayer(width, hidden_size, rng, dropout, bn_momentum, bn_eps)
            )
            width = hidden_size
        self.out_weight = ad.parameter(xavier_init(width, output_dim, rng))
        self.out_bias = ad.parameter(np.zeros((1, output_dim)))

    @classmethod
    def from_config(cls, input_dim, output_dim, config, rng):
        return cls(input_dim, output_dim, config.hidden_layers, config.hidden_size, rng,
                   dropout=config.dropout, bn_momentum=config.bn_momentum,
                   bn_eps=config.bn_eps)

    def __call__(self, x, training=False, rng=None):
        h = ad.lift(x)
        if h.shape[1] != self.input_dim:
            raise ShapeError(f"network expects {self.input_dim} inputs, got {h.shape[1]}")
        for layer in self.layers:
            h = layer(h, training, rng)
        return ad.add_bias(ad.matmul(h, self.out_weight), self.out_bias)

    def parameters(self):
        params = []
        for layer in self.layers:
            params.extend(layer.parameters())
        params.extend([self.out_weight, self.out_bias])
        return params

    def state_dict(self):
        """Copies of every trainable array plus batch-norm running statistics."""
        state = {"params": [p.value.copy() for p in self.parameters()],
                 "running": []}
        for layer in self.layers:
            state["running"].append((layer.bn.running_mean.copy(), layer.bn.running_var.copy()))
        return state

    def load_state_dict(self, state):
        params = self.parameters()
        if len(params) != len(state["params"]):
            raise ShapeError("state does not match network architecture")
        for p, v in zip(params, state["params"]):
            if p.value.shape != np.shape(v):
                raise ShapeError(f"parameter shape {np.shape(v)} does not match {p.value.shape}")
            p.value = np.array(v, dtype=np.float64)
        for layer, (rm, rv) in zip(self.layers, state["running"]):
            layer.bn.running_mean = np.array(rm, dtype=np.float64)
            layer.bn.running_var = np.array(rv, dtype=np.float64)

    def to_dict(self):
        return {
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "hidden": [
                {
                    "weight": layer.weight.value.tolist(),
                    "bias": layer.bias.value.ravel().tolist(),
                    "gamma": layer.bn.gamma.value.ravel().tolist(),
                    "beta": layer.bn.beta.value.ravel().tolist(),
                    "running_mean": layer.bn.running_mean.tolist(),
                    "running_var": layer.bn.running_var.tolist(),
                    "momentum": layer.bn.momentum,
                    "eps": layer.bn.eps,
                    "dropout": layer.dropout_rate,
                }
                for layer in self.layers
            ],
            "out_weight": self.out_weight.value.tolist(),
            "out_bias": self.out_bias.value.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        net = cls.__new__(cls)
        net.input_dim = d["input_dim"]
        net.output_dim = d["output_dim"]
        net.layers = []
        for h in d["hidden"]:
            layer = HiddenLayer.__new__(HiddenLayer)
            layer.weight = ad.parameter(np.array(h["weight"], dtype=np.float64))
            layer.bias = ad.parameter(np.array(h["bias"], dtype=np.float64).reshape(1, -1))
            width = layer.weight.shape[1]
            layer.bn = ad.BatchNormState(width, momentum=h["momentum"], eps=h["eps"])
            layer.bn.gamma.value = np.array(h["gamma"], dtype=np.float64).reshape(1, -1)
            layer.bn.beta.value = np.array(h["beta"], dtype=np.float64).reshape(1, -1)
            layer.bn.running_mean = np.array(h["running_mean"], dtype=np.float64)
            layer.bn.running_var = np.array(h["running_var"], dtype=np.float64)
            layer.dropout_rate = h["dropout"]
            net.layers.append(layer)
        net.out_weight = ad.parameter(np.array(d["out_weight"], dtype=np.float64))
        net.out_bias = ad.parameter(np.array(d["out_bias"], dtype=np.float64).reshape(1, -1))
        return net


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state):
    """One bias-corrected Adam update, in place on ``params`` (numpy arrays).

    Returns ``(params, state)``.  Moment buffers are created on first use.
    """
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameters but {len(grads)} gradients")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(state.m) != len(params):
        raise ShapeError("Adam state was built for a different parameter list")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(
                f"parameter {p.shape} / gradient {g.shape} / moment {m.shape} mismatch")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
    return params, state


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)
    initial_train_loss: float = math.nan
    initial_val_loss: float = math.nan
    best_epoch: int = 0
    best_val_loss: float = math.inf
    final_train_loss: float = math.nan
    stopped_early: bool = False


def _eval_loss(net, loss_fn, arrays, idx):
    batch = tuple(a[idx] for a in arrays)
    return float(loss_fn(net, batch, False, None).value[0, 0])


def _batches(order, batch_size):
    """Split ``order`` into chunks, folding a trailing singleton into its neighbour."""
    chunks = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        tail = chunks.pop()
        chunks[-1] = np.concatenate([chunks[-1], tail])
    return chunks


def train_loop(net, arrays, loss_fn, config):
    """Mini-batch Adam with validation early stopping.

    ``arrays`` is a tuple of row-aligned numpy arrays; ``loss_fn(net, batch,
    training, rng)`` must return a ``1 x 1`` tensor for a tuple of row slices.
    A ``val_fraction`` share of the rows is held out; the learning rate is
    multiplied by ``lr_reduce_factor`` after every ``reduce_patience``
    consecutive epochs without validation improvement, training stops after
    ``patience`` such epochs, and the parameters of the best validation epoch
    are restored before returning ``(net, history)``.
    """
    n = len(arrays[0]) if arrays else 0
    if n == 0:
        raise InvalidInputError("train_loop received an empty dataset")
    if any(len(a) != n for a in arrays):
        raise ShapeError("train_loop arrays are not row-aligned")
    rng = np.random.default_rng(config.seed)
    perm = rng.permutation(n)
    n_val = max(1, int(round(n * config.val_fraction)))
    val_idx, train_idx = np.sort(perm[:n_val]), perm[n_val:]
    if len(train_idx) < 2:
        raise InvalidInputError(
            f"need at least 2 training rows after the split, got {len(train_idx)}")

    params = net.parameters()
    state = AdamState(lr=config.lr)
    history = TrainHistory()
    history.initial_train_loss = _eval_loss(net, loss_fn, arrays, np.sort(train_idx))
    history.initial_val_loss = _eval_loss(net, loss_fn, arrays, val_idx)

    best_state = net.state_dict()
    best_val = math.inf
    bad_epochs = 0
    for epoch in range(1, config.max_epochs + 1):
        order = train_idx[rng.permutation(len(train_idx))]
        batch_losses = []
        for idx in _batches(order, config.batch_size):
            batch = tuple(a[idx] for a in arrays)
            loss = loss_fn(net, batch, True, rng)
            lval = float(loss.value[0, 0])
            if not math.isfinite(lval):
                raise FloatingPointError(f"non-finite training loss at epoch {epoch}")
            ad.backward(loss)
            adam_step([p.value for p in params], [p.grad for p in params], state)
            batch_losses.append(lval)
        val_loss = _eval_loss(net, loss_fn, arrays, val_idx)
        history.epochs.append({
            "epoch": epoch,
            "train_loss": float(np.mean(batch_losses)),
            "val_loss": val_loss,
            "lr": state.lr,
        })
        if val_loss < best_val:
            best_val = val_loss
            best_state = net.state_dict()
            history.best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                history.stopped_early = True
                break
            if bad_epochs % config.reduce_patience == 0:
                state.lr *= config.lr_reduce_factor

    net.load_state_dict(best_state)
    history.best_val_loss = best_val
    history.final_train_loss = _eval_loss(net, loss_fn, arrays, np.sort(train_idx))
    return net, history
