"""Teacher-to-student transforms that keep the network's input/output map.

Widening replicates hidden units and splits their outgoing weights between
the copies. Deepening inserts identity layers, which is exact for rectifier
networks because rectified activations are already nonnegative. Shrinking
is supported for completeness but only approximates the teacher.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_nn import Architecture, DnnModel, glorot_uniform

DEFAULT_SPLIT_NOISE = 1e-5


@dataclass
class TransformPlan:
    width_map: tuple[int, ...]
    identity_layers: int = 0
    truncate_to: int | None = None

    @property
    def is_exact(self) -> bool:
        return self.truncate_to is None


def replication_map(old_width: int, new_width: int, rng: np.random.Generator) -> np.ndarray:
    """Map each new unit to the teacher unit it copies; original units map to themselves."""
    extra = rng.integers(0, old_width, size=new_width - old_width)
    return np.concatenate([np.arange(old_width), extra])


def widen_layer(
    model: DnnModel,
    layer: int,
    new_width: int,
    rng: np.random.Generator,
    split_noise: float = DEFAULT_SPLIT_NOISE,
) -> DnnModel:
    """Resize hidden layer ``layer`` to ``new_width`` units.

    Growing is function preserving. Each replication class shares its
    teacher unit's outgoing weights; with ``split_noise > 0`` the shares are
    jittered by zero-sum noise so the copies stop receiving identical
    gradients while the per-class sum stays equal to the teacher weight.

    Shrinking keeps a uniformly sampled subset of units and is flagged as
    approximate.
    """
    depth = model.arch.depth
    if not 0 <= layer < depth:
        raise IndexError(f"layer {layer} out of range for depth {depth}")
    if new_width < 1:
        raise ValueError("new_width must be >= 1")
    old_width = model.arch.hidden_widths[layer]
    if new_width == old_width:
        return model.copy()

    weights = [w.copy() for w in model.weights]
    biases = [b.copy() for b in model.biases]
    w_in, b_in, w_out = weights[layer], biases[layer], weights[layer + 1]
    approximate = model.approximate

    if new_width > old_width:
        g = replication_map(old_width, new_width, rng)
        counts = np.bincount(g, minlength=old_width)
        new_out = w_out[g] / counts[g][:, None]
        if split_noise > 0:
            noise = rng.normal(scale=split_noise, size=new_out.shape)
            # remove the per-class mean so each class keeps its exact sum
            class_mean = np.zeros((old_width, noise.shape[1]))
            np.add.at(class_mean, g, noise)
            class_mean /= counts[:, None]
            new_out = new_out + noise - class_mean[g]
        weights[layer] = w_in[:, g]
        biases[layer] = b_in[g]
        weights[layer + 1] = new_out
        op = f"widen[{layer}]:{old_width}->{new_width}"
    else:
        keep = np.sort(rng.choice(old_width, size=new_width, replace=False))
        weights[layer] = w_in[:, keep]
        biases[layer] = b_in[keep]
        weights[layer + 1] = w_out[keep]
        approximate = True
        op = f"shrink[{layer}]:{old_width}->{new_width}"

    widths = list(model.arch.hidden_widths)
    widths[layer] = new_width
    arch = Architecture(model.arch.input_dim, tuple(widths), model.arch.num_classes)
    return DnnModel(
        arch, weights, biases, model.activation,
        approximate=approximate, provenance=model.provenance + (op,),
    )


def deepen(model: DnnModel, position: int) -> DnnModel:
    """Insert an identity layer after hidden layer ``position``.

    ``position = -1`` inserts directly after the input. Only a rectifier
    network fed from nonnegative activations is preserved exactly; every
    other case returns a model flagged ``approximate``.
    """
    depth = model.arch.depth
    if not -1 <= position < depth:
        raise IndexError(f"position {position} out of range for depth {depth}")
    width = model.arch.layer_sizes[position + 1]
    weights = list(w.copy() for w in model.weights)
    biases = list(b.copy() for b in model.biases)
    weights.insert(position + 1, np.eye(width))
    biases.insert(position + 1, np.zeros(width))
    widths = list(model.arch.hidden_widths)
    widths.insert(position + 1, width)
    arch = Architecture(model.arch.input_dim, tuple(widths), model.arch.num_classes)
    exact = model.activation == "relu" and position >= 0
    return DnnModel(
        arch, weights, biases, model.activation,
        approximate=model.approximate or not exact,
        provenance=model.provenance + (f"deepen[{position}]",),
    )


def plan_transform(teacher: Architecture, target: Architecture) -> TransformPlan:
    if teacher.depth < target.depth:
        return TransformPlan(target.hidden_widths, identity_layers=target.depth - teacher.depth)
    if teacher.depth > target.depth:
        return TransformPlan(target.hidden_widths, truncate_to=target.depth)
    return TransformPlan(target.hidden_widths)


def truncate(model: DnnModel, depth: int, rng: np.random.Generator) -> DnnModel:
    """Keep the first ``depth`` hidden layers and attach a fresh softmax layer."""
    if not 0 <= depth <= model.arch.depth:
        raise ValueError(f"cannot truncate depth {model.arch.depth} to {depth}")
    if depth == model.arch.depth:
        return model.copy()
    widths = model.arch.hidden_widths[:depth]
    arch = Architecture(model.arch.input_dim, widths, model.arch.num_classes)
    fan_in = arch.layer_sizes[-2]
    weights = [w.copy() for w in model.weights[:depth]]
    biases = [b.copy() for b in model.biases[:depth]]
    weights.append(glorot_uniform(fan_in, arch.num_classes, rng))
    biases.append(np.zeros(arch.num_classes))
    return DnnModel(
        arch, weights, biases, model.activation, approximate=True,
        provenance=model.provenance + (f"truncate:{model.arch.depth}->{depth}",),
    )


def transform_to_architecture(
    teacher: DnnModel,
    target: Architecture,
    rng: np.random.Generator,
    split_noise: float = DEFAULT_SPLIT_NOISE,
) -> DnnModel:
    """Map a teacher onto ``target``.

    Extra depth is added as identity layers at the end of the hidden stack
    (width of the deepest teacher layer); surplus depth is cut off and the
    softmax layer re-initialized. Widths are then adjusted layer by layer.
    """
    if teacher.arch.input_dim != target.input_dim:
        raise ValueError(
            f"input_dim mismatch: teacher {teacher.arch.input_dim}, target {target.input_dim}"
        )
    if teacher.arch.num_classes != target.num_classes:
        raise ValueError(
            f"num_classes mismatch: teacher {teacher.arch.num_classes}, target {target.num_classes}"
        )
    plan = plan_transform(teacher.arch, target)
    student = teacher.copy(provenance=())
    if plan.truncate_to is not None:
        student = truncate(student, plan.truncate_to, rng)
    for _ in range(plan.identity_layers):
        student = deepen(student, student.arch.depth - 1)
    for l, width in enumerate(plan.width_map):
        student = widen_layer(student, l, width, rng, split_noise=split_noise)
    assert student.arch == target
    return student
