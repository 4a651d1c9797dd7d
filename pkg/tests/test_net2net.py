import numpy as np
import pytest

from evonet.core_nn import Architecture, DnnModel, forward, init_model, param_count
from evonet.net2net import (
    deepen,
    plan_transform,
    replication_map,
    transform_to_architecture,
    widen_layer,
)


def trained_like(arch, seed, activation="relu"):
    rng = np.random.default_rng(seed)
    m = init_model(arch, rng, activation)
    return m.with_params(m.flat_params() + rng.normal(scale=0.3, size=param_count(arch)))


def max_dev(a, b, X):
    pa, pb = forward(a, X)[1], forward(b, X)[1]
    return np.abs(pa - pb).max(), np.abs(pa).max()


def test_widen_worked_example():
    arch = Architecture(2, (2,), 2)
    w_out = np.array([[1.0, 1.0], [1.0, 1.0]])
    m = DnnModel(arch, [np.array([[1.0, 2.0], [3.0, 4.0]]), w_out], [np.zeros(2), np.zeros(2)])

    class FixedRng:
        def integers(self, lo, hi, size):
            return np.zeros(size, dtype=int)

    wide = widen_layer(m, 0, 3, FixedRng(), split_noise=0.0)
    np.testing.assert_array_equal(wide.weights[0][:, 2], wide.weights[0][:, 0])
    np.testing.assert_array_equal(wide.weights[1][[0, 2]], 0.5)
    np.testing.assert_array_equal(wide.weights[1][1], 1.0)
    X = np.random.default_rng(0).normal(size=(100, 2))
    np.testing.assert_allclose(forward(wide, X)[1], forward(m, X)[1], atol=1e-15)


def test_widen_same_width_unchanged():
    m = trained_like(Architecture(4, (5, 3), 2), 0)
    out = widen_layer(m, 1, 3, np.random.default_rng(0))
    assert out.flat_params().tobytes() == m.flat_params().tobytes()
    assert not out.approximate


def test_shrink_shape_and_flag():
    m = trained_like(Architecture(4, (4, 3), 2), 0)
    out = widen_layer(m, 0, 2, np.random.default_rng(0))
    assert out.arch.hidden_widths == (2, 3)
    assert out.approximate


def test_widen_bad_layer():
    m = trained_like(Architecture(4, (4,), 2), 0)
    with pytest.raises(IndexError):
        widen_layer(m, 1, 6, np.random.default_rng(0))


def test_replication_map_keeps_originals():
    g = replication_map(5, 12, np.random.default_rng(0))
    np.testing.assert_array_equal(g[:5], np.arange(5))
    assert g.max() < 5 and g.size == 12


@pytest.mark.parametrize("noise", [0.0, 1e-5, 1e-2])
def test_split_conserves_outgoing_sums(noise):
    m = trained_like(Architecture(6, (4, 5), 3), 2)
    rng = np.random.default_rng(3)
    wide = widen_layer(m, 0, 11, rng, split_noise=noise)
    g = replication_map(4, 11, np.random.default_rng(3))
    sums = np.zeros((4, 5))
    np.add.at(sums, g, wide.weights[1])
    np.testing.assert_allclose(sums, m.weights[1], atol=1e-14)


def test_widen_noise_breaks_symmetry():
    m = trained_like(Architecture(6, (4, 5), 3), 2)
    wide = widen_layer(m, 0, 8, np.random.default_rng(0))
    g = replication_map(4, 8, np.random.default_rng(0))
    j = 4
    assert not np.array_equal(wide.weights[1][j], wide.weights[1][g[j]])


def test_deepen_preserves_relu():
    m = trained_like(Architecture(5, (7, 4), 3), 4)
    X = np.random.default_rng(1).normal(size=(500, 5))
    d1 = deepen(m, 0)
    d2 = deepen(d1, 2)
    assert d2.arch.hidden_widths == (7, 7, 4, 4)
    assert not d2.approximate
    for d in (d1, d2):
        dev, _ = max_dev(m, d, X)
        assert dev <= 1e-12


def test_deepen_sigmoid_is_flagged():
    m = trained_like(Architecture(5, (6,), 3), 4, "sigmoid")
    d = deepen(m, 0)
    assert d.approximate
    X = np.random.default_rng(1).normal(size=(50, 5))
    dev, _ = max_dev(m, d, X)
    assert dev > 1e-6


def test_transform_identity_plan():
    m = trained_like(Architecture(10, (8, 6), 3), 0)
    s = transform_to_architecture(m, m.arch, np.random.default_rng(0))
    assert s.flat_params().tobytes() == m.flat_params().tobytes()
    again = transform_to_architecture(s, s.arch, np.random.default_rng(1))
    assert again.flat_params().tobytes() == s.flat_params().tobytes()


def test_transform_grow_preserves():
    teacher = trained_like(Architecture(100, (80, 40, 20), 4), 1)
    target = Architecture(100, (100, 60, 30, 30), 4)
    s = transform_to_architecture(teacher, target, np.random.default_rng(2))
    assert s.arch == target and not s.approximate
    X = np.random.default_rng(3).normal(size=(1000, 100))
    dev, scale = max_dev(teacher, s, X)
    assert dev <= 1e-6 * (1 + scale)


def test_transform_shrink_approximate():
    teacher = trained_like(Architecture(100, (80, 40, 20), 4), 1)
    s = transform_to_architecture(teacher, Architecture(100, (10,), 4), np.random.default_rng(2))
    assert s.arch.hidden_widths == (10,)
    assert s.approximate


def test_transform_mismatch():
    teacher = trained_like(Architecture(10, (8,), 3), 1)
    with pytest.raises(ValueError):
        transform_to_architecture(teacher, Architecture(11, (8,), 3), np.random.default_rng(0))
    with pytest.raises(ValueError):
        transform_to_architecture(teacher, Architecture(10, (8,), 4), np.random.default_rng(0))


def test_plan_appends_identity_layers():
    plan = plan_transform(Architecture(5, (8,), 2), Architecture(5, (9, 12, 10), 2))
    assert plan.identity_layers == 2 and plan.is_exact
    plan = plan_transform(Architecture(5, (8, 4, 4), 2), Architecture(5, (9,), 2))
    assert plan.truncate_to == 1 and not plan.is_exact
