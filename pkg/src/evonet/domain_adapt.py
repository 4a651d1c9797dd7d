"""Class-conditional MMD and the adaptation objective used for fine-tuning."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_nn import (
    DnnModel,
    OptimResult,
    TrainConfig,
    _forward_cache,
    backward,
    cross_entropy,
    flatten,
    quasi_newton_minimize,
    unflatten,
)

SCOPES = ("source_only", "target_only", "both")


@dataclass
class AdaptConfig:
    """``gamma`` weights the MMD term; 0 turns adaptation off."""

    gamma: float = 0.5
    classification_scope: str = "both"
    finetune_iters: int = 50

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.classification_scope not in SCOPES:
            raise ValueError(f"classification_scope must be one of {SCOPES}")
        if self.finetune_iters < 1:
            raise ValueError("finetune_iters must be >= 1")


def _class_means(F, labels, C):
    means = np.zeros((C, F.shape[1]))
    counts = np.bincount(labels, minlength=C)[:C]
    np.add.at(means, labels, F)
    present = counts > 0
    means[present] /= counts[present, None]
    return means, counts


def _mmd_terms(src_features, src_labels, tgt_features, tgt_labels, C):
    src_labels = np.asarray(src_labels, dtype=int)
    tgt_labels = np.asarray(tgt_labels, dtype=int)
    ms, ns = _class_means(src_features, src_labels, C)
    mt, nt = _class_means(tgt_features, tgt_labels, C)
    both = (ns > 0) & (nt > 0)
    diff = np.where(both[:, None], ms - mt, 0.0)
    return diff, ns, nt


def classwise_mmd(src_features, src_labels, tgt_features, tgt_labels, C: int) -> float:
    """Sum over classes of the squared distance between class-mean features.

    A class missing from either side contributes nothing.
    """
    src_features = np.asarray(src_features, dtype=float)
    tgt_features = np.asarray(tgt_features, dtype=float)
    if src_features.shape[1] != tgt_features.shape[1]:
        raise ValueError(
            f"feature dimension mismatch: {src_features.shape[1]} vs {tgt_features.shape[1]}"
        )
    diff, _, _ = _mmd_terms(src_features, src_labels, tgt_features, tgt_labels, C)
    return float(np.sum(diff * diff))


def _scope_mask(n_src, n_tgt, scope):
    mask = np.zeros(n_src + n_tgt, dtype=bool)
    if scope in ("source_only", "both"):
        mask[:n_src] = True
    if scope in ("target_only", "both"):
        mask[n_src:] = True
    return mask


def make_objective(model: DnnModel, D_s, D_tr, cfg: AdaptConfig):
    """Build ``theta -> (cost, gradient)`` for fine-tuning ``model``'s architecture.

    cost = cross-entropy over the scoped samples + gamma * class-wise MMD of
    the deepest hidden features between source and target samples. The MMD
    part only reaches the feature-extractor layers.
    """
    arch = model.arch
    C = arch.num_classes
    if D_s.dim != arch.input_dim or D_tr.dim != arch.input_dim:
        raise ValueError("datasets and model disagree on the feature dimension")
    if max(D_s.num_classes, D_tr.num_classes) > C:
        raise ValueError(f"labels exceed the model's {C} classes")
    n_s, n_t = len(D_s), len(D_tr)
    X = np.vstack([D_s.features, D_tr.features])
    y = np.concatenate([D_s.labels, D_tr.labels])
    mask = _scope_mask(n_s, n_t, cfg.classification_scope)
    y_ce = y[mask]
    n_ce = y_ce.size
    if n_ce == 0:
        raise ValueError("no samples in the configured classification scope")
    onehot = np.eye(C)[y_ce]
    activation = model.activation
    gamma = cfg.gamma
    use_mmd = gamma > 0 and arch.depth > 0

    def objective(theta):
        weights, biases = unflatten(theta, arch)
        zs, acts, probs = _forward_cache(weights, biases, activation, X)
        value = cross_entropy(probs[mask], y_ce)
        d_logits = np.zeros_like(probs)
        d_logits[mask] = (probs[mask] - onehot) / n_ce
        d_features = None
        if use_mmd:
            F = acts[-1]
            diff, ns, nt = _mmd_terms(F[:n_s], D_s.labels, F[n_s:], D_tr.labels, C)
            value += gamma * float(np.sum(diff * diff))
            d_features = np.empty_like(F)
            d_features[:n_s] = 2.0 * gamma * diff[D_s.labels] / np.maximum(ns, 1)[D_s.labels, None]
            d_features[n_s:] = -2.0 * gamma * diff[D_tr.labels] / np.maximum(nt, 1)[D_tr.labels, None]
        gw, gb = backward(weights, biases, activation, zs, acts, d_logits, d_features)
        return value, flatten(gw, gb)

    return objective


def combined_cost(model: DnnModel, D_s, D_tr, cfg: AdaptConfig) -> tuple[float, np.ndarray]:
    return make_objective(model, D_s, D_tr, cfg)(model.flat_params())


def finetune(
    model: DnnModel,
    D_s,
    D_tr,
    cfg: AdaptConfig,
    iterations: int | None = None,
    history_size: int = 10,
    gradient_tolerance: float = 1e-8,
) -> tuple[DnnModel, list[float]]:
    """Fine-tune on the combined cost; returns the model and loss history.

    The history starts with the initial cost and adds one entry per
    optimizer step.
    """
    res = finetune_result(model, D_s, D_tr, cfg, iterations, history_size, gradient_tolerance)
    return model.with_params(res.params), res.loss_history


def finetune_result(
    model, D_s, D_tr, cfg: AdaptConfig, iterations=None, history_size=10, gradient_tolerance=1e-8
) -> OptimResult:
    train_cfg = TrainConfig(
        max_iterations=iterations or cfg.finetune_iters,
        gradient_tolerance=gradient_tolerance,
        history_size=history_size,
    )
    objective = make_objective(model, D_s, D_tr, cfg)
    return quasi_newton_minimize(objective, model.flat_params(), train_cfg)
