"""Dense feed-forward classifiers with a softmax head.

Parameters are kept as lists of numpy arrays. For the optimizer they are
flattened layer by layer: each layer contributes its weight matrix in
row-major order followed by its bias vector.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

LOG_EPS = 1e-12
ACTIVATIONS = ("relu", "sigmoid")


class ShapeError(ValueError):
    pass


class OptimizationError(RuntimeError):
    """Raised when the objective is not finite at the starting point."""


@dataclass(frozen=True)
class Architecture:
    input_dim: int
    hidden_widths: tuple[int, ...]
    num_classes: int

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be positive, got {self.input_dim}")
        if any(w < 1 for w in self.hidden_widths):
            raise ValueError(f"hidden widths must be >= 1, got {self.hidden_widths}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")

    @property
    def depth(self) -> int:
        return len(self.hidden_widths)

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_widths, self.num_classes)

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_widths": list(self.hidden_widths),
            "num_classes": self.num_classes,
        }


@dataclass(eq=False)
class DnnModel:
    """Weights, biases and activation kind of one network.

    ``weights[l]`` has shape ``(fan_in, fan_out)``; the last entry is the
    softmax layer. ``approximate`` is set by transforms that could not
    preserve the teacher's function exactly.
    """

    arch: Architecture
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "relu"
    approximate: bool = False
    provenance: tuple[str, ...] = ()

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        sizes = self.arch.layer_sizes
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ShapeError(
                f"expected {len(sizes) - 1} layers, got {len(self.weights)} weights "
                f"and {len(self.biases)} biases"
            )
        self.weights = [np.asarray(w, dtype=float) for w in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[l], sizes[l + 1]) or b.shape != (sizes[l + 1],):
                raise ShapeError(
                    f"layer {l}: weight {w.shape} / bias {b.shape} do not chain "
                    f"{sizes[l]} -> {sizes[l + 1]}"
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {l} has non-finite parameters")

    def copy(self, **changes) -> "DnnModel":
        kwargs = dict(
            arch=self.arch,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            activation=self.activation,
            approximate=self.approximate,
            provenance=self.provenance,
        )
        kwargs.update(changes)
        return DnnModel(**kwargs)

    def flat_params(self) -> np.ndarray:
        return flatten(self.weights, self.biases)

    def with_params(self, theta: np.ndarray) -> "DnnModel":
        weights, biases = unflatten(theta, self.arch)
        return self.copy(weights=weights, biases=biases)


@dataclass
class TrainConfig:
    max_iterations: int = 200
    gradient_tolerance: float = 1e-6
    history_size: int = 10
    pretrain_epochs: int = 20
    pretrain_noise: float = 0.0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.history_size < 1:
            raise ValueError("history_size must be >= 1")
        if self.gradient_tolerance < 0:
            raise ValueError("gradient_tolerance must be >= 0")
        if self.pretrain_epochs < 0:
            raise ValueError("pretrain_epochs must be >= 0")
        if not 0.0 <= self.pretrain_noise < 1.0:
            raise ValueError("pretrain_noise must lie in [0, 1)")


@dataclass
class OptimResult:
    params: np.ndarray
    loss_history: list[float]
    grad_norm: float
    converged: bool = False
    line_search_failed: bool = False
    n_evals: int = 0

    @property
    def n_steps(self) -> int:
        return len(self.loss_history) - 1


# -- parameter layout -------------------------------------------------------


def param_count(arch: Architecture) -> int:
    sizes = arch.layer_sizes
    return sum(sizes[l] * sizes[l + 1] + sizes[l + 1] for l in range(len(sizes) - 1))


def flatten(weights: Sequence[np.ndarray], biases: Sequence[np.ndarray]) -> np.ndarray:
    parts = []
    for w, b in zip(weights, biases):
        parts.append(np.ravel(w))
        parts.append(np.ravel(b))
    return np.concatenate(parts)


def unflatten(theta: np.ndarray, arch: Architecture) -> tuple[list[np.ndarray], list[np.ndarray]]:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (param_count(arch),):
        raise ShapeError(f"parameter vector has shape {theta.shape}, expected ({param_count(arch)},)")
    sizes = arch.layer_sizes
    weights, biases = [], []
    pos = 0
    for l in range(len(sizes) - 1):
        n_in, n_out = sizes[l], sizes[l + 1]
        weights.append(theta[pos:pos + n_in * n_out].reshape(n_in, n_out).copy())
        pos += n_in * n_out
        biases.append(theta[pos:pos + n_out].copy())
        pos += n_out
    return weights, biases


# -- initialization ---------------------------------------------------------


def glorot_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_model(arch: Architecture, rng: np.random.Generator, activation: str = "relu") -> DnnModel:
    sizes = arch.layer_sizes
    weights = [glorot_uniform(sizes[l], sizes[l + 1], rng) for l in range(len(sizes) - 1)]
    biases = [np.zeros(sizes[l + 1]) for l in range(len(sizes) - 1)]
    return DnnModel(arch, weights, biases, activation=activation)


# -- forward / backward -----------------------------------------------------


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    # split on sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _act_grad(z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (z > 0).astype(float)
    return a * (1.0 - a)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _check_input(model: DnnModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.arch.input_dim:
        raise ShapeError(f"input has shape {X.shape}, model expects {model.arch.input_dim} columns")
    return X


def _forward_cache(weights, biases, activation, X):
    zs, acts = [], [X]
    a = X
    for w, b in zip(weights[:-1], biases[:-1]):
        z = a @ w + b
        a = _act(z, activation)
        zs.append(z)
        acts.append(a)
    probs = softmax(a @ weights[-1] + biases[-1])
    return zs, acts, probs


def forward(model: DnnModel, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(hidden_features, class_probs)`` for a batch.

    ``hidden_features`` are the activations of the deepest hidden layer, or
    the input itself when the model has no hidden layers.
    """
    X = _check_input(model, X)
    _, acts, probs = _forward_cache(model.weights, model.biases, model.activation, X)
    return acts[-1], probs


def predict(model: DnnModel, X: np.ndarray) -> np.ndarray:
    # argmax returns the lowest index on ties
    return np.argmax(forward(model, X)[1], axis=1)


def backward(weights, biases, activation, zs, acts, d_logits, d_features=None):
    """Backpropagate logit (and optional feature) gradients to all parameters.

    ``d_features`` is an extra gradient on the deepest hidden activations; it
    therefore never reaches the softmax layer.
    """
    n_layers = len(weights)
    gw = [None] * n_layers
    gb = [None] * n_layers
    gw[-1] = acts[-1].T @ d_logits
    gb[-1] = d_logits.sum(axis=0)
    delta_a = d_logits @ weights[-1].T
    if d_features is not None:
        delta_a = delta_a + d_features
    for l in range(n_layers - 2, -1, -1):
        delta_z = delta_a * _act_grad(zs[l], acts[l + 1], activation)
        gw[l] = acts[l].T @ delta_z
        gb[l] = delta_z.sum(axis=0)
        if l > 0:
            delta_a = delta_z @ weights[l].T
    return gw, gb


def cross_entropy(class_probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-likelihood of the true classes."""
    class_probs = np.asarray(class_probs, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if class_probs.shape[0] == 0:
        raise ValueError("cross_entropy on an empty batch")
    if class_probs.shape[0] != labels.shape[0]:
        raise ShapeError("class_probs and labels disagree on the number of rows")
    if labels.min() < 0 or labels.max() >= class_probs.shape[1]:
        raise ValueError("labels out of range")
    p = class_probs[np.arange(labels.size), labels]
    return float(-np.mean(np.log(np.maximum(p, LOG_EPS))))


def classification_accuracy(model: DnnModel, X: np.ndarray, y: np.ndarray) -> float:
    y = np.asarray(y, dtype=int)
    if y.size == 0:
        raise ValueError("classification accuracy of an empty dataset")
    pred = predict(model, X)
    if pred.shape != y.shape:
        raise ShapeError("features and labels disagree on the number of rows")
    return 100.0 * float(np.count_nonzero(pred == y)) / y.size


def cross_entropy_objective(
    arch: Architecture, activation: str, X: np.ndarray, y: np.ndarray
) -> Callable[[np.ndarray], tuple[float, np.ndarray]]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    onehot = np.eye(arch.num_classes)[y]
    n = X.shape[0]

    def objective(theta):
        weights, biases = unflatten(theta, arch)
        zs, acts, probs = _forward_cache(weights, biases, activation, X)
        value = cross_entropy(probs, y)
        gw, gb = backward(weights, biases, activation, zs, acts, (probs - onehot) / n)
        return value, flatten(gw, gb)

    return objective


# -- optimizer --------------------------------------------------------------


def _backtracking(objective, x, f, g, d, alpha, c1=1e-4, max_steps=40):
    """Armijo backtracking with safeguarded quadratic interpolation."""
    slope = float(g @ d)
    n_evals = 0
    for _ in range(max_steps):
        x_new = x + alpha * d
        f_new, g_new = objective(x_new)
        n_evals += 1
        if np.isfinite(f_new) and f_new <= f + c1 * alpha * slope and f_new < f:
            return alpha, x_new, float(f_new), np.asarray(g_new, dtype=float), n_evals
        if np.isfinite(f_new):
            denom = 2.0 * (f_new - f - slope * alpha)
            trial = -slope * alpha * alpha / denom if denom > 0 else 0.5 * alpha
            alpha = float(np.clip(trial, 0.1 * alpha, 0.5 * alpha))
        else:
            alpha *= 0.1
    return None, x, f, g, n_evals


def quasi_newton_minimize(
    objective: Callable[[np.ndarray], tuple[float, np.ndarray]],
    init_params: np.ndarray,
    cfg: TrainConfig,
) -> OptimResult:
    """Minimize ``objective`` with L-BFGS and an Armijo line search.

    ``loss_history[0]`` is the initial loss and every later entry belongs to
    an accepted step, so the history is strictly decreasing. Iteration stops
    after ``cfg.max_iterations`` steps, once the gradient norm drops to
    ``cfg.gradient_tolerance``, or when the line search cannot make progress
    (``line_search_failed`` is then set and the best point is returned).
    """
    x = np.array(init_params, dtype=float)
    f, g = objective(x)
    g = np.asarray(g, dtype=float)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise OptimizationError("objective or gradient is not finite at the initial point")
    f = float(f)
    history = [f]
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    n_evals = 1
    gnorm = float(np.linalg.norm(g))
    result = OptimResult(x, history, gnorm)

    for _ in range(cfg.max_iterations):
        if gnorm <= cfg.gradient_tolerance:
            result.converged = True
            break
        d = _two_loop(g, s_hist, y_hist)
        if not s_hist or g @ d >= 0:
            d = -g
            alpha = min(1.0, 1.0 / gnorm)
            s_hist.clear()
            y_hist.clear()
        else:
            alpha = 1.0
        alpha, x_new, f_new, g_new, evals = _backtracking(objective, x, f, g, d, alpha)
        n_evals += evals
        if alpha is None:
            if s_hist:
                # retry once along steepest descent before giving up
                s_hist.clear()
                y_hist.clear()
                d = -g
                alpha, x_new, f_new, g_new, evals = _backtracking(
                    objective, x, f, g, d, min(1.0, 1.0 / gnorm)
                )
                n_evals += evals
            if alpha is None:
                result.line_search_failed = True
                break
        if not np.all(np.isfinite(g_new)):
            result.line_search_failed = True
            break
        s = x_new - x
        yv = g_new - g
        sy = float(s @ yv)
        if sy > 1e-10 * float(np.linalg.norm(s) * np.linalg.norm(yv)):
            s_hist.append(s)
            y_hist.append(yv)
            if len(s_hist) > cfg.history_size:
                s_hist.pop(0)
                y_hist.pop(0)
        x, f, g = x_new, f_new, g_new
        gnorm = float(np.linalg.norm(g))
        history.append(f)
    else:
        result.converged = gnorm <= cfg.gradient_tolerance

    result.params = x
    result.grad_norm = gnorm
    result.n_evals = n_evals
    return result


def _two_loop(g, s_hist, y_hist):
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(s_hist), reversed(y_hist)):
        rho = 1.0 / (y @ s)
        a = rho * (s @ q)
        alphas.append((rho, a))
        q -= a * y
    if s_hist:
        q *= (s_hist[-1] @ y_hist[-1]) / (y_hist[-1] @ y_hist[-1])
    for (s, y), (rho, a) in zip(zip(s_hist, y_hist), reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return -q


# -- training ---------------------------------------------------------------


def _autoencoder_objective(X, n_in, n_hidden, activation, X_corrupt):
    """Tied-weight autoencoder with a linear decoder and mean-squared loss."""
    n = X.shape[0]

    def unpack(theta):
        w = theta[: n_in * n_hidden].reshape(n_in, n_hidden)
        b = theta[n_in * n_hidden: n_in * n_hidden + n_hidden]
        c = theta[n_in * n_hidden + n_hidden:]
        return w, b, c

    def objective(theta):
        w, b, c = unpack(theta)
        z = X_corrupt @ w + b
        h = _act(z, activation)
        err = h @ w.T + c - X
        value = float(np.sum(err * err) / n)
        d_err = 2.0 * err / n
        gc = d_err.sum(axis=0)
        d_h = d_err @ w
        d_z = d_h * _act_grad(z, h, activation)
        gw = X_corrupt.T @ d_z + d_err.T @ h
        gb = d_z.sum(axis=0)
        return value, np.concatenate([gw.ravel(), gb, gc])

    return objective, unpack


def pretrain_stack(
    X: np.ndarray,
    arch: Architecture,
    cfg: TrainConfig,
    rng: np.random.Generator,
    activation: str = "relu",
) -> DnnModel:
    """Greedy layer-wise autoencoder pretraining of the hidden stack.

    Each hidden layer is fitted as a tied-weight autoencoder on the codes of
    the layer below, one full-batch quasi-Newton step per epoch. The softmax
    layer keeps its random initialization.
    """
    X = np.asarray(X, dtype=float)
    if X.shape[0] == 0:
        raise ValueError("pretraining needs at least one sample")
    model = init_model(arch, rng, activation)
    if cfg.pretrain_epochs == 0 or arch.depth == 0:
        return model
    if X.shape[1] != arch.input_dim:
        raise ShapeError(f"input has {X.shape[1]} columns, architecture expects {arch.input_dim}")
    ae_cfg = TrainConfig(
        max_iterations=cfg.pretrain_epochs,
        gradient_tolerance=cfg.gradient_tolerance,
        history_size=cfg.history_size,
    )
    codes = X
    for l in range(arch.depth):
        n_in, n_hidden = model.weights[l].shape
        if cfg.pretrain_noise > 0:
            corrupt = codes * (rng.random(codes.shape) >= cfg.pretrain_noise)
        else:
            corrupt = codes
        objective, unpack = _autoencoder_objective(codes, n_in, n_hidden, activation, corrupt)
        theta0 = np.concatenate([model.weights[l].ravel(), model.biases[l], np.zeros(n_in)])
        res = quasi_newton_minimize(objective, theta0, ae_cfg)
        logger.debug("pretrain layer %d: mse %.4g -> %.4g", l, res.loss_history[0], res.loss_history[-1])
        w, b, _ = unpack(res.params)
        model.weights[l] = w.copy()
        model.biases[l] = b.copy()
        codes = _act(codes @ w + b, activation)
    return model


def train_source_model(
    D_s,
    arch: Architecture,
    cfg: TrainConfig,
    rng: np.random.Generator,
    activation: str = "relu",
) -> DnnModel:
    """Pretrain then fine-tune a teacher on labeled source data."""
    y = np.asarray(D_s.labels, dtype=int)
    if np.unique(y).size < 2:
        raise ValueError("source data must contain at least two classes")
    if arch.num_classes < int(y.max()) + 1:
        raise ValueError("architecture has fewer classes than the labels require")
    model = pretrain_stack(D_s.features, arch, cfg, rng, activation)
    objective = cross_entropy_objective(arch, activation, D_s.features, y)
    res = quasi_newton_minimize(objective, model.flat_params(), cfg)
    logger.info(
        "teacher %s: loss %.4g -> %.4g in %d steps",
        arch.hidden_widths, res.loss_history[0], res.loss_history[-1], res.n_steps,
    )
    return model.with_params(res.params)


# -- serialization ----------------------------------------------------------


def model_to_dict(model: DnnModel) -> dict:
    # floats go through repr, which round-trips float64 exactly
    return {
        "arch": model.arch.to_dict(),
        "activation": model.activation,
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
    }


def model_from_dict(data: dict) -> DnnModel:
    arch = Architecture(
        int(data["arch"]["input_dim"]),
        tuple(data["arch"]["hidden_widths"]),
        int(data["arch"]["num_classes"]),
    )
    sizes = arch.layer_sizes
    weights = [
        np.array(w, dtype=float).reshape(sizes[l], sizes[l + 1])
        for l, w in enumerate(data["weights"])
    ]
    biases = [np.array(b, dtype=float) for b in data["biases"]]
    return DnnModel(arch, weights, biases, activation=data.get("activation", "relu"))


def dumps_model(model: DnnModel) -> str:
    return json.dumps(model_to_dict(model))


def loads_model(text: str) -> DnnModel:
    return model_from_dict(json.loads(text))


def save_model(model: DnnModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_model(model))


def load_model(path) -> DnnModel:
    with open(path, encoding="utf-8") as fh:
        return loads_model(fh.read())
