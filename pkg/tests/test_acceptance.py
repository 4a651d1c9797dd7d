"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line through the ``criterion`` fixture; the
full list is printed in pytest's terminal summary.
"""

import json
import time

import numpy as np
import pytest
from scipy.stats import binomtest

from evonet.bench import BenchmarkSettings, calibrated_benchmark
from evonet.core_nn import Architecture, TrainConfig, classification_accuracy, forward, init_model, param_count, train_source_model
from evonet.data import LabeledDataset, split, write_signal
from evonet.domain_adapt import AdaptConfig, classwise_mmd, finetune, make_objective
from evonet.evo import (
    EvoConfig,
    FitnessRecord,
    crossover_mutation,
    crowding_distance,
    depth_crossover,
    evolve,
    in_bounds,
    init_population,
    nondominated_sort,
    sbx_common,
    sbx_pair,
    select_indices,
)
from evonet.net2net import transform_to_architecture
from evonet.report import generations_json


def perturbed(arch, rng, activation="relu"):
    m = init_model(arch, rng, activation)
    return m.with_params(m.flat_params() + rng.normal(scale=0.3, size=param_count(arch)))


# -- preservation -----------------------------------------------------------


def random_growth(arch, rng):
    widths = [int(h + rng.integers(0, h + 1)) for h in arch.hidden_widths]
    for _ in range(int(rng.integers(0, 3))):
        widths.append(int(widths[-1] + rng.integers(0, 8)))
    return Architecture(arch.input_dim, tuple(widths), arch.num_classes)


def test_function_preservation(criterion):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        d_in = int(rng.integers(10, 51))
        depth = int(rng.integers(1, 4))
        arch = Architecture(d_in, tuple(int(w) for w in rng.integers(4, 41, depth)), int(rng.integers(2, 8)))
        teacher = perturbed(arch, rng)
        student = transform_to_architecture(teacher, random_growth(arch, rng), rng)
        assert not student.approximate
        X = rng.normal(size=(1000, d_in))
        pa, pb = forward(teacher, X)[1], forward(student, X)[1]
        worst = max(worst, float(np.abs(pa - pb).max() / (1 + np.abs(pa).max())))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and elapsed < 60
    criterion("function preservation", ok, f"max rel deviation {worst:.2e} (<= 1e-6), {elapsed:.1f} s (< 60)")
    assert ok


# -- gradient ---------------------------------------------------------------


def test_gradient_oracle(criterion):
    rng = np.random.default_rng(7)
    arch = Architecture(5, (8, 6), 3)
    h = 1e-5
    t0 = time.perf_counter()
    worst = 0.0
    for point in range(100):
        m = perturbed(arch, rng)
        Ds = LabeledDataset(rng.normal(size=(12, 5)), rng.integers(0, 3, 12))
        Dt = LabeledDataset(rng.normal(size=(9, 5)) + 0.5, rng.integers(0, 3, 9), "target")
        scope = ("source_only", "target_only", "both")[point % 3]
        for gamma in (0.0, 0.5):
            obj = make_objective(m, Ds, Dt, AdaptConfig(gamma, scope))
            theta = m.flat_params()
            g = obj(theta)[1]
            fd = np.empty_like(theta)
            for i in range(theta.size):
                e = np.zeros_like(theta)
                e[i] = h
                fd[i] = (obj(theta + e)[0] - obj(theta - e)[0]) / (2 * h)
            worst = max(worst, float(np.linalg.norm(g - fd) / np.linalg.norm(fd)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-4 and elapsed < 60
    criterion("gradient oracle", ok, f"max rel error {worst:.2e} (<= 1e-4), {elapsed:.1f} s (< 60)")
    assert ok


# -- sorting, crowding, selection -------------------------------------------


def peel(ca, params):
    """Dominance-matrix peeling, independent of the library's sort."""
    ge = (ca[:, None] >= ca[None, :]) & (params[:, None] <= params[None, :])
    gt = (ca[:, None] > ca[None, :]) | (params[:, None] < params[None, :])
    dom = ge & gt  # dom[i, j]: i dominates j
    ranks = np.zeros(ca.size, dtype=int)
    alive = np.ones(ca.size, dtype=bool)
    rank = 1
    while alive.any():
        front = alive & ~(dom & alive[:, None]).any(axis=0)
        ranks[front] = rank
        alive &= ~front
        rank += 1
    return ranks.tolist()


def test_sorting_oracle(criterion):
    rng = np.random.default_rng(11)
    pops = []
    for k in range(50):
        if k % 2:
            ca, params = rng.uniform(0, 100, 200), rng.integers(100, 100000, 200)
        else:  # coarse grid, many ties
            ca, params = rng.integers(80, 90, 200).astype(float), rng.integers(1, 12, 200)
        pops.append((ca, params, [FitnessRecord(float(a), int(b)) for a, b in zip(ca, params)]))
    t0 = time.perf_counter()
    ranks = [nondominated_sort(recs) for _, _, recs in pops]
    elapsed = time.perf_counter() - t0
    mismatches = sum(r != peel(ca, p) for r, (ca, p, _) in zip(ranks, pops))
    ok = mismatches == 0 and elapsed < 10
    criterion("sorting oracle", ok, f"{mismatches} mismatching populations of 50, {elapsed:.2f} s (< 10)")
    assert ok


def test_crowding_and_selection(criterion):
    d = crowding_distance([FitnessRecord(70, 300), FitnessRecord(80, 200), FitnessRecord(90, 100)], [1, 1, 1])
    three_point = d == [np.inf, 2.0, np.inf]
    R = FitnessRecord
    recs = [R(75, 80), R(90, 100), R(60, 25), R(80, 50), R(65, 30), R(70, 20), R(85, 150)]
    ranks = nondominated_sort(recs)
    chosen = select_indices(ranks, crowding_distance(recs, ranks), 5)
    traced = chosen == [1, 3, 5, 2, 6]
    ok = three_point and traced
    criterion("crowding and selection", ok, f"3-point distances {d}, selected {chosen} (expected [1, 3, 5, 2, 6])")
    assert ok


# -- MMD --------------------------------------------------------------------


def test_mmd_properties(criterion):
    rng = np.random.default_rng(5)
    worst_zero = worst_sym = worst_scale = 0.0
    negative = 0
    for _ in range(200):
        n_a, n_b = rng.integers(3, 30, 2)
        Fa, Fb = rng.normal(size=(n_a, 4)) * 10, rng.normal(size=(n_b, 4)) * 10
        ya, yb = rng.integers(0, 3, n_a), rng.integers(0, 3, n_b)
        ab = classwise_mmd(Fa, ya, Fb, yb, 3)
        worst_zero = max(worst_zero, classwise_mmd(Fa, ya, Fa, ya, 3))
        worst_sym = max(worst_sym, abs(ab - classwise_mmd(Fb, yb, Fa, ya, 3)))
        negative += ab < 0
        s = rng.uniform(0.1, 10)
        scaled = classwise_mmd(s * Fa, ya, s * Fb, yb, 3)
        worst_scale = max(worst_scale, abs(scaled - s * s * ab) / max(1.0, s * s * ab))
    example = classwise_mmd(np.array([[0.0, 0.0], [5.0, 5.0]]), [0, 1], np.array([[1.0, 0.0], [5.0, 6.0]]), [0, 1], 2)
    ok = worst_zero <= 1e-12 and worst_sym <= 1e-9 and negative == 0 and worst_scale <= 1e-9 and example == 2.0
    criterion(
        "MMD properties", ok,
        f"identical {worst_zero:.1e}, asymmetry {worst_sym:.1e}, negatives {negative}, "
        f"scaling error {worst_scale:.1e}, two-class example {example}",
    )
    assert ok


# -- operators --------------------------------------------------------------


def test_operator_laws(criterion):
    cfg0 = EvoConfig(population_size=10, crossover_prob=0.0, mutation_prob=0.0)
    P = init_population(cfg0, np.random.default_rng(0))
    identity = crossover_mutation(P, cfg0, np.random.default_rng(1)) == P
    fixed_point = sbx_pair(100, 20, 1.0) == (100.0, 20.0)
    worked = depth_crossover((100, 80, 60, 40, 20), (90, 50, 10), None, cuts=(2, 1)) == (
        (100, 80, 50, 10), (90, 60, 40, 20),
    )
    cfg = EvoConfig(population_size=2, depth_range=(2, 6), width_range=(4, 50), sbx_eta=1.0)
    rng = np.random.default_rng(9)
    violations = 0
    for _ in range(10000):
        p1, p2 = init_population(cfg, rng)
        a, b = depth_crossover(p1, p2, rng, cfg)
        a, b = sbx_common(a, b, rng, cfg.sbx_eta, cfg.width_range)
        violations += (not in_bounds(a, cfg)) + (not in_bounds(b, cfg))
    ok = identity and fixed_point and worked and violations == 0
    criterion(
        "operator laws", ok,
        f"identity {identity}, SBX fixed point {fixed_point}, worked crossover {worked}, "
        f"{violations} bound violations in 10000 applications",
    )
    assert ok


# -- end to end -------------------------------------------------------------


@pytest.fixture(scope="module")
def benchmark_task():
    bench = calibrated_benchmark(BenchmarkSettings())
    rng = np.random.default_rng([0, 1])
    teacher = train_source_model(bench.source, Architecture(20, (80, 40, 20), 4), TrainConfig(), rng)
    splits = split(bench.target, (0.64, 0.16, 0.2), np.random.default_rng([0, 2]))
    return bench, teacher, splits


@pytest.mark.slow
def test_end_to_end_desk_run(criterion, benchmark_task):
    bench, teacher, splits = benchmark_task
    cfg = EvoConfig(population_size=12, max_generations=8, adapt=AdaptConfig(finetune_iters=50), seed=0)
    t0 = time.perf_counter()
    best, reports = evolve(teacher, bench.source, splits, cfg)
    elapsed = time.perf_counter() - t0
    test = splits[2]
    ca = classification_accuracy(best, test.features, test.labels)
    curve = [r.best_so_far_ca for r in reports]
    monotone = all(b >= a for a, b in zip(curve, curve[1:]))
    ok = bench.drop >= 5.0 and ca >= 95.0 and monotone and elapsed <= 300
    criterion(
        "end-to-end desk run", ok,
        f"source-only drop {bench.drop:.1f} (>= 5), final test CA {ca:.2f} (>= 95) with widths "
        f"{best.arch.hidden_widths}, best-so-far monotone {monotone}, {elapsed:.0f} s (<= 300)",
    )
    assert ok


def test_transfer_speedup(criterion, benchmark_task):
    bench, teacher, (D_tr, _, _) = benchmark_task
    rng = np.random.default_rng(77)
    adapt = AdaptConfig(finetune_iters=10)  # N_I / 5 with N_I = 50
    wins, gaps = 0, []
    trials = 20
    for _ in range(trials):
        target = random_growth(teacher.arch, rng)
        warm = transform_to_architecture(teacher, target, rng)
        cold = init_model(target, rng)
        warm_loss = finetune(warm, bench.source, D_tr, adapt)[1][-1]
        cold_loss = finetune(cold, bench.source, D_tr, adapt)[1][-1]
        wins += warm_loss < cold_loss
        gaps.append(cold_loss - warm_loss)
    p = binomtest(wins, trials, 0.5, alternative="greater").pvalue
    ok = p < 0.05 and np.mean(gaps) > 0
    criterion(
        "knowledge-transfer speedup", ok,
        f"Net2Net lower loss in {wins}/{trials} pairs, mean gap {np.mean(gaps):.3f}, sign test p = {p:.2e} (< 0.05)",
    )
    assert ok


def test_determinism(criterion, benchmark_task):
    bench, teacher, splits = benchmark_task
    cfg = EvoConfig(population_size=4, max_generations=2, depth_range=(1, 3), width_range=(4, 40),
                    adapt=AdaptConfig(finetune_iters=10), final_finetune_iters=0, seed=13, worker_count=1)
    a = generations_json(evolve(teacher, bench.source, splits, cfg)[1]).encode()
    b = generations_json(evolve(teacher, bench.source, splits, cfg)[1]).encode()
    ok = a == b
    criterion("determinism", ok, f"generations.json byte-identical: {ok} ({len(a)} bytes)")
    assert ok


def test_bearing_shaped_manifests(criterion, tmp_path):
    """Source load 0 and target loads 1-3 as raw signals cut into 100-point segments."""
    from evonet import cli

    rng = np.random.default_rng(3)
    freqs = {0: 0.05, 1: 0.11, 2: 0.17}
    t = np.arange(100 * 60)
    for load in range(4):
        block = []
        for label, f in freqs.items():
            sig = np.sin(2 * np.pi * f * (1 + 0.02 * load) * t) + 0.3 * rng.normal(size=t.size)
            write_signal(tmp_path / f"L{load}_c{label}.txt", sig)
            block += ["[[class]]", f"label = {label}", f'files = ["L{load}_c{label}.txt"]']
        (tmp_path / f"load{load}.toml").write_text("segment_length = 100\n" + "\n".join(block) + "\n")
    targets = "".join(f'[[target]]\nname = "{k}hp"\nmanifest = "load{k}.toml"\n' for k in (1, 2, 3))
    (tmp_path / "run.toml").write_text(
        '[run]\noutput_dir = "out"\n[source]\nmanifest = "load0.toml"\n' + targets
        + "[teacher]\nhidden_widths = [16]\n[train]\nmax_iterations = 50\n"
        + "[evo]\npopulation_size = 2\nmax_generations = 1\ndepth_max = 2\nwidth_max = 24\n"
        + "final_finetune_iters = 10\n[adapt]\nfinetune_iters = 10\n"
    )
    code = cli.main(["run", str(tmp_path / "run.toml")])
    summary = json.loads((tmp_path / "out" / "summary.json").read_text()) if code == 0 else {}
    rows = [line.split(",")[0] for line in (tmp_path / "out" / "summary.csv").read_text().splitlines()] if code == 0 else []
    ok = code == 0 and rows == ["case", "1hp", "2hp", "3hp", "mean", "std"]
    per_load = {c["name"]: round(c["test_ca"], 2) for c in summary.get("cases", [])}
    criterion("bearing-shaped manifests (optional)", ok, f"exit {code}, per-load CA {per_load}, rows {rows}")
    assert ok
